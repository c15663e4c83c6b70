#pragma once

#include <filesystem>

namespace mevo {

class Trainer;

namespace checkpoint {

// Versioned single-file binary: magic + version, a JSON manifest describing
// the run (config, iteration, optimizer step) and every named weight array
// (name, shape, dtype, byte offset), then the raw little-endian doubles.
// save(load(f)) writes byte-identical files.
void save(const std::filesystem::path& path, const Trainer& trainer);
Trainer load(const std::filesystem::path& path);

}  // namespace checkpoint
}  // namespace mevo
