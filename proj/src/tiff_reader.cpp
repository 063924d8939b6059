// Minimal baseline-TIFF reader: 8-bit chunky RGB(A) strips, compression none
// or deflate (zip), horizontal-differencing predictor supported. Tiled files,
// planar layout and other bit depths are rejected as unsupported.

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "stainkit/error.hpp"
#include "stainkit/image.hpp"

namespace stainkit::detail {

namespace {

constexpr std::uint16_t kTagImageWidth = 256;
constexpr std::uint16_t kTagImageLength = 257;
constexpr std::uint16_t kTagBitsPerSample = 258;
constexpr std::uint16_t kTagCompression = 259;
constexpr std::uint16_t kTagPhotometric = 262;
constexpr std::uint16_t kTagStripOffsets = 273;
constexpr std::uint16_t kTagSamplesPerPixel = 277;
constexpr std::uint16_t kTagRowsPerStrip = 278;
constexpr std::uint16_t kTagStripByteCounts = 279;
constexpr std::uint16_t kTagPlanarConfig = 284;
constexpr std::uint16_t kTagPredictor = 317;
constexpr std::uint16_t kTagTileWidth = 322;

constexpr std::uint16_t kCompressionNone = 1;
constexpr std::uint16_t kCompressionDeflate = 8;
constexpr std::uint16_t kCompressionDeflateOld = 32946;

struct Reader {
  const std::vector<std::uint8_t>& data;
  bool big_endian = false;
  std::string name;

  std::uint16_t u16(std::size_t off) const {
    if (off + 2 > data.size()) raise(Errc::CorruptFile, "truncated TIFF " + name);
    return big_endian ? static_cast<std::uint16_t>(data[off] << 8 | data[off + 1])
                      : static_cast<std::uint16_t>(data[off + 1] << 8 | data[off]);
  }

  std::uint32_t u32(std::size_t off) const {
    if (off + 4 > data.size()) raise(Errc::CorruptFile, "truncated TIFF " + name);
    if (big_endian)
      return static_cast<std::uint32_t>(data[off]) << 24 |
             static_cast<std::uint32_t>(data[off + 1]) << 16 |
             static_cast<std::uint32_t>(data[off + 2]) << 8 | data[off + 3];
    return static_cast<std::uint32_t>(data[off + 3]) << 24 |
           static_cast<std::uint32_t>(data[off + 2]) << 16 |
           static_cast<std::uint32_t>(data[off + 1]) << 8 | data[off];
  }
};

struct IfdEntry {
  std::uint16_t type = 0;
  std::uint32_t count = 0;
  std::size_t value_offset = 0;  // offset of the inline value field
};

// SHORT/LONG/BYTE arrays; value is inline when it fits in 4 bytes.
std::vector<std::uint32_t> read_values(const Reader& r, const IfdEntry& e) {
  std::size_t elem_size = 0;
  switch (e.type) {
    case 1: elem_size = 1; break;  // BYTE
    case 3: elem_size = 2; break;  // SHORT
    case 4: elem_size = 4; break;  // LONG
    default:
      raise(Errc::UnsupportedFormat, "TIFF tag value type " + std::to_string(e.type));
  }
  const std::size_t total = elem_size * e.count;
  std::size_t base = e.value_offset;
  if (total > 4) base = r.u32(e.value_offset);

  std::vector<std::uint32_t> out(e.count);
  for (std::uint32_t i = 0; i < e.count; ++i) {
    const std::size_t off = base + i * elem_size;
    if (elem_size == 1) {
      if (off >= r.data.size()) raise(Errc::CorruptFile, "truncated TIFF " + r.name);
      out[i] = r.data[off];
    } else if (elem_size == 2) {
      out[i] = r.u16(off);
    } else {
      out[i] = r.u32(off);
    }
  }
  return out;
}

std::vector<std::uint8_t> inflate_strip(const std::uint8_t* src, std::size_t src_len,
                                        std::size_t expected, const std::string& name) {
  std::vector<std::uint8_t> out(expected);
  uLongf dest_len = static_cast<uLongf>(expected);
  const int rc = uncompress(out.data(), &dest_len, src, static_cast<uLong>(src_len));
  if (rc != Z_OK || dest_len != expected)
    raise(Errc::CorruptFile, "bad deflate strip in TIFF " + name);
  return out;
}

}  // namespace

RgbImage load_tiff(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(Errc::FileNotFound, "cannot open " + path.string());
  std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  const std::string name = path.string();
  if (data.size() < 8) raise(Errc::CorruptFile, "truncated TIFF " + name);

  Reader r{data, false, name};
  if (data[0] == 'I' && data[1] == 'I')
    r.big_endian = false;
  else if (data[0] == 'M' && data[1] == 'M')
    r.big_endian = true;
  else
    raise(Errc::CorruptFile, "bad TIFF byte-order mark in " + name);
  if (r.u16(2) != 42) raise(Errc::CorruptFile, "bad TIFF magic in " + name);

  const std::uint32_t ifd_off = r.u32(4);
  const std::uint16_t entry_count = r.u16(ifd_off);

  std::uint32_t width = 0, height = 0, rows_per_strip = 0xFFFFFFFFu;
  std::uint32_t compression = kCompressionNone, photometric = 0xFFFFFFFFu;
  std::uint32_t samples_per_pixel = 1, planar = 1, predictor = 1;
  std::vector<std::uint32_t> bits_per_sample{1};
  std::vector<std::uint32_t> strip_offsets, strip_counts;
  bool tiled = false;

  for (std::uint16_t i = 0; i < entry_count; ++i) {
    const std::size_t off = ifd_off + 2 + i * 12u;
    const std::uint16_t tag = r.u16(off);
    IfdEntry e{r.u16(off + 2), r.u32(off + 4), off + 8};
    switch (tag) {
      case kTagImageWidth: width = read_values(r, e).at(0); break;
      case kTagImageLength: height = read_values(r, e).at(0); break;
      case kTagBitsPerSample: bits_per_sample = read_values(r, e); break;
      case kTagCompression: compression = read_values(r, e).at(0); break;
      case kTagPhotometric: photometric = read_values(r, e).at(0); break;
      case kTagStripOffsets: strip_offsets = read_values(r, e); break;
      case kTagSamplesPerPixel: samples_per_pixel = read_values(r, e).at(0); break;
      case kTagRowsPerStrip: rows_per_strip = read_values(r, e).at(0); break;
      case kTagStripByteCounts: strip_counts = read_values(r, e); break;
      case kTagPlanarConfig: planar = read_values(r, e).at(0); break;
      case kTagPredictor: predictor = read_values(r, e).at(0); break;
      case kTagTileWidth: tiled = true; break;
      default: break;  // unknown tags ignored
    }
  }

  if (tiled) raise(Errc::UnsupportedFormat, "tiled TIFF not supported: " + name);
  if (width == 0 || height == 0) raise(Errc::CorruptFile, "missing dimensions in TIFF " + name);
  if (samples_per_pixel < 3)
    raise(Errc::UnsupportedFormat, "TIFF must have 3 color channels: " + name);
  for (std::uint32_t b : bits_per_sample)
    if (b != 8)
      raise(Errc::UnsupportedFormat,
            "TIFF bit depth " + std::to_string(b) + " (expected 8) in " + name);
  if (photometric != 2) raise(Errc::UnsupportedFormat, "TIFF must be RGB: " + name);
  if (planar != 1) raise(Errc::UnsupportedFormat, "planar TIFF not supported: " + name);
  if (predictor != 1 && predictor != 2)
    raise(Errc::UnsupportedFormat, "TIFF predictor " + std::to_string(predictor) + ": " + name);
  if (compression != kCompressionNone && compression != kCompressionDeflate &&
      compression != kCompressionDeflateOld)
    raise(Errc::UnsupportedFormat,
          "TIFF compression " + std::to_string(compression) + ": " + name);
  if (strip_offsets.empty() || strip_offsets.size() != strip_counts.size())
    raise(Errc::CorruptFile, "bad strip layout in TIFF " + name);

  const std::size_t row_bytes = static_cast<std::size_t>(width) * samples_per_pixel;
  std::vector<Rgb8> pixels(static_cast<std::size_t>(width) * height);

  std::uint32_t row = 0;
  for (std::size_t s = 0; s < strip_offsets.size(); ++s) {
    const std::uint32_t strip_rows =
        std::min<std::uint32_t>(rows_per_strip, height - row);
    const std::size_t expected = row_bytes * strip_rows;
    const std::size_t src_off = strip_offsets[s];
    const std::size_t src_len = strip_counts[s];
    if (src_off + src_len > data.size())
      raise(Errc::CorruptFile, "strip out of bounds in TIFF " + name);

    std::vector<std::uint8_t> decoded;
    const std::uint8_t* bytes = nullptr;
    if (compression == kCompressionNone) {
      if (src_len < expected) raise(Errc::CorruptFile, "short strip in TIFF " + name);
      bytes = data.data() + src_off;
    } else {
      decoded = inflate_strip(data.data() + src_off, src_len, expected, name);
      bytes = decoded.data();
    }

    for (std::uint32_t y = 0; y < strip_rows; ++y, ++row) {
      std::vector<std::uint8_t> line(bytes + y * row_bytes, bytes + (y + 1) * row_bytes);
      if (predictor == 2)
        for (std::size_t i = samples_per_pixel; i < line.size(); ++i)
          line[i] = static_cast<std::uint8_t>(line[i] + line[i - samples_per_pixel]);
      Rgb8* dst = pixels.data() + static_cast<std::size_t>(row) * width;
      for (std::uint32_t x = 0; x < width; ++x) {
        const std::uint8_t* px = line.data() + static_cast<std::size_t>(x) * samples_per_pixel;
        dst[x] = Rgb8{px[0], px[1], px[2]};  // extra samples (alpha) dropped
      }
    }
  }
  if (row != height) raise(Errc::CorruptFile, "missing rows in TIFF " + name);

  return RgbImage(static_cast<int>(width), static_cast<int>(height), std::move(pixels));
}

}  // namespace stainkit::detail
