#include "mevo/image_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace mevo {

namespace {

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  out.push_back(static_cast<unsigned char>(v >> 24));
  out.push_back(static_cast<unsigned char>(v >> 16));
  out.push_back(static_cast<unsigned char>(v >> 8));
  out.push_back(static_cast<unsigned char>(v));
}

std::uint32_t get_u32(const unsigned char* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) |
         std::uint32_t(p[3]);
}

void write_chunk(std::vector<unsigned char>& out, const char type[4],
                 const std::vector<unsigned char>& data) {
  put_u32(out, static_cast<std::uint32_t>(data.size()));
  const std::size_t crc_start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  const uLong crc = crc32(crc32(0L, Z_NULL, 0), out.data() + crc_start,
                          static_cast<uInt>(out.size() - crc_start));
  put_u32(out, static_cast<std::uint32_t>(crc));
}

constexpr unsigned char kSignature[8] = {137, 80, 78, 71, 13, 10, 26, 10};

unsigned char paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return static_cast<unsigned char>(a);
  if (pb <= pc) return static_cast<unsigned char>(b);
  return static_cast<unsigned char>(c);
}

}  // namespace

void write_png(const std::filesystem::path& path, const Frame& frame) {
  const int h = frame.height(), w = frame.width();

  // raw scanlines, filter 0
  std::vector<unsigned char> raw(static_cast<std::size_t>(h) * (1 + 3 * static_cast<std::size_t>(w)));
  std::size_t idx = 0;
  for (int y = 0; y < h; ++y) {
    raw[idx++] = 0;
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(frame.data.at(c, y, x), 0.0, 1.0);
        raw[idx++] = static_cast<unsigned char>(std::lround(v * 255.0));
      }
  }

  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<unsigned char> compressed(bound);
  if (compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw std::runtime_error("write_png: deflate failed for " + path.string());
  compressed.resize(bound);

  std::vector<unsigned char> ihdr;
  put_u32(ihdr, static_cast<std::uint32_t>(w));
  put_u32(ihdr, static_cast<std::uint32_t>(h));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(2);  // RGB
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);

  std::vector<unsigned char> out(kSignature, kSignature + 8);
  write_chunk(out, "IHDR", ihdr);
  write_chunk(out, "IDAT", compressed);
  write_chunk(out, "IEND", {});

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_png: cannot open " + path.string());
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("write_png: write failed for " + path.string());
}

Frame read_png(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_png: cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kSignature, 8) != 0)
    throw std::runtime_error("read_png: not a PNG file: " + path.string());

  std::size_t pos = 8;
  int w = 0, h = 0, bit_depth = 0, color_type = 0;
  std::vector<unsigned char> idat;
  while (pos + 8 <= bytes.size()) {
    const std::uint32_t len = get_u32(&bytes[pos]);
    if (pos + 12 + len > bytes.size())
      throw std::runtime_error("read_png: truncated chunk in " + path.string());
    const char* type = reinterpret_cast<const char*>(&bytes[pos + 4]);
    const unsigned char* data = &bytes[pos + 8];
    if (std::memcmp(type, "IHDR", 4) == 0) {
      w = static_cast<int>(get_u32(data));
      h = static_cast<int>(get_u32(data + 4));
      bit_depth = data[8];
      color_type = data[9];
      if (bit_depth != 8 || (color_type != 2 && color_type != 6))
        throw std::runtime_error("read_png: only 8-bit RGB/RGBA supported: " + path.string());
      if (data[12] != 0) throw std::runtime_error("read_png: interlacing unsupported: " + path.string());
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), data, data + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      break;
    }
    pos += 12 + len;
  }
  if (w <= 0 || h <= 0 || idat.empty())
    throw std::runtime_error("read_png: missing image data in " + path.string());

  const int bpp = color_type == 2 ? 3 : 4;
  const std::size_t stride = 1 + static_cast<std::size_t>(w) * bpp;
  std::vector<unsigned char> raw(static_cast<std::size_t>(h) * stride);
  uLongf raw_len = static_cast<uLongf>(raw.size());
  if (uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
      raw_len != raw.size())
    throw std::runtime_error("read_png: inflate failed for " + path.string());

  // undo scanline filters in place (output pixels, no filter bytes)
  std::vector<unsigned char> px(static_cast<std::size_t>(h) * w * bpp);
  for (int y = 0; y < h; ++y) {
    const unsigned char filter = raw[static_cast<std::size_t>(y) * stride];
    const unsigned char* src = &raw[static_cast<std::size_t>(y) * stride + 1];
    unsigned char* dst = &px[static_cast<std::size_t>(y) * w * bpp];
    const unsigned char* up = y > 0 ? &px[static_cast<std::size_t>(y - 1) * w * bpp] : nullptr;
    for (int i = 0; i < w * bpp; ++i) {
      const int left = i >= bpp ? dst[i - bpp] : 0;
      const int above = up ? up[i] : 0;
      const int corner = (up && i >= bpp) ? up[i - bpp] : 0;
      int v = src[i];
      switch (filter) {
        case 0: break;
        case 1: v += left; break;
        case 2: v += above; break;
        case 3: v += (left + above) / 2; break;
        case 4: v += paeth(left, above, corner); break;
        default:
          throw std::runtime_error("read_png: bad filter type in " + path.string());
      }
      dst[i] = static_cast<unsigned char>(v & 0xFF);
    }
  }

  Frame out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        out.data.at(c, y, x) = px[(static_cast<std::size_t>(y) * w + x) * bpp + c] / 255.0;
  return out;
}

void save_frames(const VideoClip& clip, const std::filesystem::path& dir) {
  if (clip.empty()) throw std::invalid_argument("save_frames: empty clip");
  std::filesystem::create_directories(dir);
  char name[32];
  for (std::size_t i = 0; i < clip.size(); ++i) {
    std::snprintf(name, sizeof(name), "frame_%05zu.png", i);
    write_png(dir / name, clip[i]);
  }
}

VideoClip load_frames(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir))
    throw std::runtime_error("load_frames: not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  if (files.empty()) throw std::runtime_error("load_frames: no PNG frames in " + dir.string());
  std::sort(files.begin(), files.end());

  VideoClip clip;
  clip.reserve(files.size());
  for (const auto& p : files) {
    Frame f = read_png(p);
    if (!clip.empty() && (f.height() != clip[0].height() || f.width() != clip[0].width()))
      throw std::runtime_error("load_frames: frame size mismatch at " + p.string());
    clip.push_back(std::move(f));
  }
  return clip;
}

}  // namespace mevo
