#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mevo/types.hpp"

namespace mevo {

// 8-bit RGB PNG codec (color types 2 and 6 on read; alpha is dropped).
// Values quantize to 8 bits on write, so save/load round-trips within 1/255.
void write_png(const std::filesystem::path& path, const Frame& frame);
Frame read_png(const std::filesystem::path& path);

// A clip is a directory of zero-padded frame_%05d.png files, ordered
// lexicographically. Loading rejects empty directories and frames whose
// dimensions disagree, naming the offending file.
void save_frames(const VideoClip& clip, const std::filesystem::path& dir);
VideoClip load_frames(const std::filesystem::path& dir);

}  // namespace mevo
