#include "stainkit/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <memory>

#include "stainkit/error.hpp"

namespace stainkit {

namespace detail {
// tiff_reader.cpp
RgbImage load_tiff(const std::filesystem::path& path);
}  // namespace detail

const char* errc_name(Errc code) {
  switch (code) {
    case Errc::FileNotFound: return "FileNotFound";
    case Errc::UnsupportedFormat: return "UnsupportedFormat";
    case Errc::CorruptFile: return "CorruptFile";
    case Errc::IoError: return "IoError";
    case Errc::EmptyMask: return "EmptyMask";
    case Errc::InsufficientTissue: return "InsufficientTissue";
    case Errc::DegenerateInput: return "DegenerateInput";
    case Errc::DegenerateSample: return "DegenerateSample";
    case Errc::NoUsableImages: return "NoUsableImages";
    case Errc::ParseError: return "ParseError";
    case Errc::MissingColumn: return "MissingColumn";
    case Errc::SchemaError: return "SchemaError";
    case Errc::InvalidArgument: return "InvalidArgument";
  }
  return "UnknownError";
}

RgbImage::RgbImage(int width, int height, std::vector<Rgb8> pixels)
    : width_(width), height_(height), pixels_(std::move(pixels)) {
  if (width_ < 1 || height_ < 1)
    raise(Errc::InvalidArgument, "image dimensions must be at least 1x1");
  if (pixels_.size() != static_cast<std::size_t>(width_) * height_)
    raise(Errc::InvalidArgument, "pixel array length must equal width*height");
}

RgbImage RgbImage::filled(int width, int height, Rgb8 color) {
  if (width < 1 || height < 1)
    raise(Errc::InvalidArgument, "image dimensions must be at least 1x1");
  return RgbImage(width, height,
                  std::vector<Rgb8>(static_cast<std::size_t>(width) * height, color));
}

OdImage::OdImage(int width, int height, std::vector<std::array<double, 3>> values)
    : width_(width), height_(height), values_(std::move(values)) {
  if (width_ < 1 || height_ < 1)
    raise(Errc::InvalidArgument, "image dimensions must be at least 1x1");
  if (values_.size() != static_cast<std::size_t>(width_) * height_)
    raise(Errc::InvalidArgument, "value array length must equal width*height");
  for (const auto& v : values_)
    for (double c : v)
      if (!(c >= 0.0) || !std::isfinite(c))
        raise(Errc::InvalidArgument, "optical density values must be finite and nonnegative");
}

TissueMask::TissueMask(int width, int height, std::vector<std::uint8_t> bits)
    : width_(width), height_(height), bits_(std::move(bits)), tissue_count_(0) {
  if (width_ < 1 || height_ < 1)
    raise(Errc::InvalidArgument, "mask dimensions must be at least 1x1");
  if (bits_.size() != static_cast<std::size_t>(width_) * height_)
    raise(Errc::InvalidArgument, "mask length must equal width*height");
  for (std::uint8_t b : bits_) tissue_count_ += b != 0;
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

constexpr unsigned char kPngSig[8] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};

RgbImage load_png(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.string().c_str(), "rb"));
  if (!file) raise(Errc::FileNotFound, "cannot open " + path.string());

  unsigned char header[8] = {};
  if (std::fread(header, 1, 8, file.get()) != 8 || std::memcmp(header, kPngSig, 8) != 0)
    raise(Errc::CorruptFile, "bad PNG signature in " + path.string());

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) raise(Errc::IoError, "png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    raise(Errc::IoError, "png_create_info_struct failed");
  }

  std::vector<Rgb8> pixels;
  png_uint_32 width = 0, height = 0;
  int bit_depth = 0, color_type = 0;

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    raise(Errc::CorruptFile, "failed to decode PNG " + path.string());
  }

  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  png_get_IHDR(png, info, &width, &height, &bit_depth, &color_type, nullptr, nullptr, nullptr);

  if (bit_depth != 8) {
    png_destroy_read_struct(&png, &info, nullptr);
    raise(Errc::UnsupportedFormat,
          "PNG bit depth " + std::to_string(bit_depth) + " (expected 8) in " + path.string());
  }
  if (color_type != PNG_COLOR_TYPE_RGB && color_type != PNG_COLOR_TYPE_RGB_ALPHA) {
    png_destroy_read_struct(&png, &info, nullptr);
    raise(Errc::UnsupportedFormat, "PNG must have 3 color channels in " + path.string());
  }
  if (color_type == PNG_COLOR_TYPE_RGB_ALPHA) png_set_strip_alpha(png);

  const int passes = png_set_interlace_handling(png);
  png_read_update_info(png, info);

  pixels.resize(static_cast<std::size_t>(width) * height);
  std::vector<png_bytep> rows(height);
  for (png_uint_32 y = 0; y < height; ++y)
    rows[y] = reinterpret_cast<png_bytep>(pixels.data() + static_cast<std::size_t>(y) * width);
  for (int p = 0; p < passes; ++p) png_read_rows(png, rows.data(), nullptr, height);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  return RgbImage(static_cast<int>(width), static_cast<int>(height), std::move(pixels));
}

}  // namespace

RgbImage load_image(const std::filesystem::path& path) {
  std::error_code ec;
  if (!std::filesystem::exists(path, ec))
    raise(Errc::FileNotFound, path.string() + " does not exist");

  FilePtr file(std::fopen(path.string().c_str(), "rb"));
  if (!file) raise(Errc::FileNotFound, "cannot open " + path.string());
  unsigned char magic[4] = {};
  const std::size_t got = std::fread(magic, 1, 4, file.get());
  file.reset();

  if (got >= 4 && std::memcmp(magic, kPngSig, 4) == 0) return load_png(path);
  if (got >= 4 && ((magic[0] == 'I' && magic[1] == 'I' && magic[2] == 42 && magic[3] == 0) ||
                   (magic[0] == 'M' && magic[1] == 'M' && magic[2] == 0 && magic[3] == 42)))
    return detail::load_tiff(path);
  raise(Errc::UnsupportedFormat, path.string() + " is neither PNG nor TIFF");
}

void save_image(const RgbImage& image, const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.string().c_str(), "wb"));
  if (!file) raise(Errc::IoError, "cannot open " + path.string() + " for writing");

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) raise(Errc::IoError, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    raise(Errc::IoError, "png_create_info_struct failed");
  }

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    raise(Errc::IoError, "failed to write PNG " + path.string());
  }

  png_init_io(png, file.get());
  // Fixed settings keep output bytes reproducible across runs.
  png_set_compression_level(png, 6);
  png_set_IHDR(png, info, image.width(), image.height(), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<png_const_bytep> rows(image.height());
  const Rgb8* base = image.pixels().data();
  for (int y = 0; y < image.height(); ++y)
    rows[y] =
        reinterpret_cast<png_const_bytep>(base + static_cast<std::size_t>(y) * image.width());
  png_write_rows(png, const_cast<png_bytepp>(rows.data()), image.height());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);

  if (std::fflush(file.get()) != 0)
    raise(Errc::IoError, "failed to flush " + path.string());
}

OdImage rgb_to_od(const RgbImage& image, double i0, double eps) {
  if (!(i0 > 0.0)) raise(Errc::InvalidArgument, "i0 must be positive");
  if (!(eps > 0.0)) raise(Errc::InvalidArgument, "eps must be positive");

  std::vector<std::array<double, 3>> values(image.pixel_count());
  auto pixels = image.pixels();
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const Rgb8 p = pixels[i];
    const double ch[3] = {static_cast<double>(p.r), static_cast<double>(p.g),
                          static_cast<double>(p.b)};
    for (int c = 0; c < 3; ++c)
      values[i][c] = std::max(0.0, -std::log10(std::max(ch[c], eps) / i0));
  }
  return OdImage(image.width(), image.height(), std::move(values));
}

RgbImage od_to_rgb(const OdImage& od, double i0) {
  if (!(i0 > 0.0)) raise(Errc::InvalidArgument, "i0 must be positive");

  std::vector<Rgb8> pixels(od.values().size());
  auto values = od.values();
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint8_t out[3];
    for (int c = 0; c < 3; ++c) {
      const double v = std::round(i0 * std::pow(10.0, -values[i][c]));
      out[c] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
    }
    pixels[i] = Rgb8{out[0], out[1], out[2]};
  }
  return RgbImage(od.width(), od.height(), std::move(pixels));
}

TissueMask tissue_mask(const RgbImage& image, double od_threshold) {
  if (!(od_threshold >= 0.0)) raise(Errc::InvalidArgument, "od_threshold must be >= 0");

  std::vector<std::uint8_t> bits(image.pixel_count());
  auto pixels = image.pixels();
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const Rgb8 p = pixels[i];
    double mean_od = 0.0;
    const double ch[3] = {static_cast<double>(p.r), static_cast<double>(p.g),
                          static_cast<double>(p.b)};
    for (int c = 0; c < 3; ++c)
      mean_od += std::max(0.0, -std::log10(std::max(ch[c], kDefaultOdEps) / kMaxIntensity));
    mean_od /= 3.0;
    bits[i] = mean_od > od_threshold ? 1 : 0;
  }
  return TissueMask(image.width(), image.height(), std::move(bits));
}

}  // namespace stainkit
