#pragma once

// File formats: PNG (8-bit colour, 16-bit depth), PFM depth, a text sidecar
// for intrinsics/pose/brightness, and a density volume container.

#include <png.h>

#include <algorithm>
#include <bit>
#include <csetjmp>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "voldepth/geometry.hpp"
#include "voldepth/grid.hpp"
#include "voldepth/losses.hpp"
#include "voldepth/rendering.hpp"

namespace voldepth {

/// Malformed or unreadable input. The message names the file and, where it
/// applies, the byte offset.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& path, const std::string& msg,
              std::optional<std::size_t> offset = {})
      : std::runtime_error(path +
                           (offset ? ": offset " + std::to_string(*offset) : "") +
                           ": " + msg) {}
};

namespace detail {

inline std::uint32_t byteswap(std::uint32_t v) { return __builtin_bswap32(v); }
inline std::uint64_t byteswap(std::uint64_t v) { return __builtin_bswap64(v); }

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline FilePtr open_file(const std::string& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw FormatError(path, std::string("cannot open (") + std::strerror(errno) + ")");
  return f;
}

struct PngImage {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1 or 3
  int depth = 8;     // bits per sample
  std::vector<std::uint16_t> samples;  // row-major, interleaved
};

struct PngError {
  std::string message;
};

inline void png_fail(png_structp png, png_const_charp msg) {
  static_cast<PngError*>(png_get_error_ptr(png))->message = msg;
  png_longjmp(png, 1);
}

inline void png_warn(png_structp, png_const_charp) {}

// libpng reports errors by longjmp; every object with a destructor is created
// before setjmp so nothing is skipped, and the error becomes an exception
// once control is back in this frame.
inline PngImage read_png_raw(const std::string& path) {
  auto f = open_file(path, "rb");
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw FormatError(path, "not a PNG file", 0);
  }
  PngError err;
  PngImage img;
  std::vector<unsigned char> buf;
  std::vector<png_bytep> rows;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err,
                                           png_fail, png_warn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw FormatError(path, "out of memory");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError(path, err.message);
  }
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int bits = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && bits < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (bits == 16 && std::endian::native == std::endian::little) png_set_swap(png);
  png_read_update_info(png, info);
  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  img.channels = png_get_channels(png, info);
  img.depth = png_get_bit_depth(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  buf.resize(rowbytes * img.height);
  rows.resize(img.height);
  for (int y = 0; y < img.height; ++y) rows[y] = buf.data() + y * rowbytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  const std::size_t n = static_cast<std::size_t>(img.width) * img.height * img.channels;
  img.samples.resize(n);
  if (img.depth == 16) {
    for (std::size_t i = 0; i < n; ++i) {
      std::uint16_t v;
      std::memcpy(&v, buf.data() + 2 * i, 2);
      img.samples[i] = v;
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) img.samples[i] = buf[i];
  }
  return img;
}

inline void write_png_raw(const std::string& path, const PngImage& img) {
  auto f = open_file(path, "wb");
  PngError err;
  const int bps = img.depth / 8;
  const std::size_t rowlen = static_cast<std::size_t>(img.width) * img.channels;
  std::vector<unsigned char> buf(rowlen * bps * img.height);
  for (std::size_t i = 0; i < rowlen * img.height; ++i) {
    const std::uint16_t v = img.samples[i];
    if (bps == 2) {
      std::memcpy(buf.data() + 2 * i, &v, 2);
    } else {
      buf[i] = static_cast<unsigned char>(v);
    }
  }
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err,
                                            png_fail, png_warn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw FormatError(path, "out of memory");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw FormatError(path, err.message);
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, img.width, img.height, img.depth,
               img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (img.depth == 16 && std::endian::native == std::endian::little) {
    png_set_swap(png);
  }
  for (int y = 0; y < img.height; ++y) {
    png_write_row(png, buf.data() + y * rowlen * bps);
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// PNG
// ---------------------------------------------------------------------------

/// Reads an 8- or 16-bit colour or grey PNG into a 3-channel image in [0, 1].
[[nodiscard]] inline Image read_png_rgb(const std::string& path) {
  const auto raw = detail::read_png_raw(path);
  const double maxv = raw.depth == 16 ? 65535.0 : 255.0;
  Image out(3, raw.height, raw.width);
  for (int y = 0; y < raw.height; ++y) {
    for (int x = 0; x < raw.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        const int src = raw.channels == 3 ? c : 0;
        out(c, y, x) =
            raw.samples[(static_cast<std::size_t>(y) * raw.width + x) *
                            raw.channels + src] / maxv;
      }
    }
  }
  return out;
}

/// Writes a 3-channel image as 8-bit RGB, rounding after clamping to [0, 1].
inline void write_png_rgb(const std::string& path, const Image& img) {
  if (img.channels() != 3) throw std::invalid_argument("write_png_rgb: need 3 channels");
  detail::PngImage raw{img.width(), img.height(), 3, 8, {}};
  raw.samples.resize(img.size());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(img(c, y, x), 0.0, 1.0);
        raw.samples[(static_cast<std::size_t>(y) * img.width() + x) * 3 + c] =
            static_cast<std::uint16_t>(std::lround(v * 255.0));
      }
    }
  }
  detail::write_png_raw(path, raw);
}

/// Writes a single-channel field in [0, 1] as 8-bit grey.
inline void write_png_gray(const std::string& path, const Field& f) {
  detail::PngImage raw{f.width(), f.height(), 1, 8, {}};
  raw.samples.resize(f.plane_size());
  for (std::size_t i = 0; i < raw.samples.size(); ++i) {
    raw.samples[i] = static_cast<std::uint16_t>(
        std::lround(std::clamp(f[i], 0.0, 1.0) * 255.0));
  }
  detail::write_png_raw(path, raw);
}

inline void write_png_mask(const std::string& path, const Mask& m) {
  Field f(1, m.height(), m.width());
  for (std::size_t i = 0; i < m.size(); ++i) f[i] = m[i] ? 1.0 : 0.0;
  write_png_gray(path, f);
}

/// Depth preview: depth divided by its 95th percentile over valid pixels.
inline void write_depth_preview(const std::string& path, const DepthMap& d) {
  std::vector<double> v;
  for (std::size_t i = 0; i < d.z.size(); ++i) {
    if (d.valid[i]) v.push_back(d.z[i]);
  }
  double norm = 1.0;
  if (!v.empty()) {
    const std::size_t k = std::min(v.size() - 1, static_cast<std::size_t>(0.95 * v.size()));
    std::nth_element(v.begin(), v.begin() + k, v.end());
    if (v[k] > 0.0) norm = v[k];
  }
  Field f(1, d.height(), d.width());
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = d.valid[i] ? d.z[i] / norm : 0.0;
  write_png_gray(path, f);
}

/// 16-bit grey depth: stored value = depth * scale, 0 marks invalid pixels.
[[nodiscard]] inline DepthMap read_png_depth(const std::string& path,
                                             double scale) {
  if (!(scale > 0.0)) throw std::invalid_argument("read_png_depth: scale must be > 0");
  const auto raw = detail::read_png_raw(path);
  if (raw.channels != 1 || raw.depth != 16) {
    throw FormatError(path, "depth PNG must be 16-bit greyscale");
  }
  DepthMap out(raw.height, raw.width);
  for (std::size_t i = 0; i < out.z.size(); ++i) {
    if (raw.samples[i] == 0) continue;
    out.z[i] = raw.samples[i] / scale;
    out.valid[i] = 1;
  }
  return out;
}

inline void write_png_depth(const std::string& path, const DepthMap& d,
                            double scale) {
  detail::PngImage raw{d.width(), d.height(), 1, 16, {}};
  raw.samples.resize(d.z.size());
  for (std::size_t i = 0; i < d.z.size(); ++i) {
    if (!d.valid[i]) continue;
    raw.samples[i] = static_cast<std::uint16_t>(
        std::clamp(std::lround(d.z[i] * scale), 1L, 65535L));
  }
  detail::write_png_raw(path, raw);
}

// ---------------------------------------------------------------------------
// PFM
// ---------------------------------------------------------------------------

/// Greyscale little-endian PFM; rows are stored bottom to top. Invalid
/// pixels are written as 0 and read back as invalid.
inline void write_pfm(const std::string& path, const DepthMap& d) {
  auto f = detail::open_file(path, "wb");
  std::fprintf(f.get(), "Pf\n%d %d\n-1.0\n", d.width(), d.height());
  std::vector<float> row(d.width());
  for (int y = d.height() - 1; y >= 0; --y) {
    for (int x = 0; x < d.width(); ++x) {
      const float v = d.valid(y, x) ? static_cast<float>(d.z(y, x)) : 0.0f;
      row[x] = std::endian::native == std::endian::little
                   ? v
                   : std::bit_cast<float>(detail::byteswap(std::bit_cast<std::uint32_t>(v)));
    }
    if (std::fwrite(row.data(), sizeof(float), row.size(), f.get()) != row.size()) {
      throw FormatError(path, "write failed");
    }
  }
}

[[nodiscard]] inline DepthMap read_pfm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path, "cannot open");
  std::string magic;
  int w = 0, h = 0;
  double scale = 0.0;
  in >> magic;
  if (magic != "Pf") {
    throw FormatError(path, magic == "PF" ? "colour PFM is not a depth map"
                                          : "bad PFM magic '" + magic + "'", 0);
  }
  if (!(in >> w >> h) || w <= 0 || h <= 0) {
    throw FormatError(path, "bad PFM dimensions", static_cast<std::size_t>(std::max<std::streamoff>(in.tellg(), 0)));
  }
  if (!(in >> scale) || scale == 0.0) {
    throw FormatError(path, "bad PFM scale", static_cast<std::size_t>(std::max<std::streamoff>(in.tellg(), 0)));
  }
  in.get();  // single whitespace before the raster
  const bool little = scale < 0.0;
  const auto data_start = static_cast<std::size_t>(in.tellg());
  DepthMap out(h, w);
  std::vector<std::uint32_t> row(w);
  for (int r = 0; r < h; ++r) {
    in.read(reinterpret_cast<char*>(row.data()), 4 * static_cast<std::streamsize>(w));
    if (!in) {
      throw FormatError(path, "truncated raster",
                        data_start + static_cast<std::size_t>(r) * w * 4);
    }
    const int y = h - 1 - r;
    for (int x = 0; x < w; ++x) {
      std::uint32_t bits = row[x];
      if (little != (std::endian::native == std::endian::little)) bits = detail::byteswap(bits);
      const double v = std::bit_cast<float>(bits);
      if (std::isfinite(v) && v > 0.0) {
        out.z(y, x) = v;
        out.valid(y, x) = 1;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sidecar
// ---------------------------------------------------------------------------

/// Camera and ground truth that travel with an exported pair.
struct Sidecar {
  Intrinsics intrinsics;
  std::optional<RigidTransform> T_ts;
  std::optional<BrightnessParams> brightness;
};

/// Plain text, one `key values...` entry per line:
///   size W H / intrinsics fx fy cx cy / rotation r00 .. r22 (row-major) /
///   translation tx ty tz / brightness a b
inline void write_sidecar(const std::string& path, const Sidecar& s) {
  std::ofstream out(path);
  if (!out) throw FormatError(path, "cannot open for writing");
  out << std::setprecision(17);
  const auto& k = s.intrinsics;
  out << "size " << k.width << ' ' << k.height << '\n';
  out << "intrinsics " << k.fx << ' ' << k.fy << ' ' << k.cx << ' ' << k.cy << '\n';
  if (s.T_ts) {
    out << "rotation";
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) out << ' ' << s.T_ts->rotation(r, c);
    }
    out << "\ntranslation " << s.T_ts->translation.x() << ' '
        << s.T_ts->translation.y() << ' ' << s.T_ts->translation.z() << '\n';
  }
  if (s.brightness) out << "brightness " << s.brightness->a << ' ' << s.brightness->b << '\n';
}

[[nodiscard]] inline Sidecar read_sidecar(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(path, "cannot open");
  Sidecar s;
  bool have_size = false, have_k = false, have_r = false, have_t = false;
  RigidTransform pose;
  std::string line;
  std::size_t offset = 0;
  while (std::getline(in, line)) {
    const std::size_t here = offset;
    offset += line.size() + 1;
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key) || key[0] == '#') continue;
    auto fail = [&](const std::string& msg) { throw FormatError(path, msg, here); };
    auto read = [&](double& v) {
      if (!(ls >> v)) fail("'" + key + "' needs more numbers");
    };
    if (key == "size") {
      if (!(ls >> s.intrinsics.width >> s.intrinsics.height)) fail("bad size");
      have_size = true;
    } else if (key == "intrinsics") {
      read(s.intrinsics.fx);
      read(s.intrinsics.fy);
      read(s.intrinsics.cx);
      read(s.intrinsics.cy);
      have_k = true;
    } else if (key == "rotation") {
      for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) read(pose.rotation(r, c));
      }
      have_r = true;
    } else if (key == "translation") {
      for (int i = 0; i < 3; ++i) read(pose.translation[i]);
      have_t = true;
    } else if (key == "brightness") {
      BrightnessParams b;
      read(b.a);
      read(b.b);
      s.brightness = b;
    } else {
      fail("unknown sidecar key '" + key + "'");
    }
    std::string extra;
    if (ls >> extra) fail("trailing text after '" + key + "'");
  }
  if (!have_size || !have_k) throw FormatError(path, "missing size or intrinsics");
  if (have_r != have_t) throw FormatError(path, "rotation and translation must come together");
  if (have_r) s.T_ts = pose;
  s.intrinsics.validate();
  return s;
}

// ---------------------------------------------------------------------------
// Density volumes
// ---------------------------------------------------------------------------

/// Text header followed by raw little-endian float64 parameters:
///   DVOL 1
///   K H W
///   z_min z_max
///   K lines "depth delta"
///   DATA
///   K*H*W doubles in (plane, y, x) order
inline void write_density(const std::string& path, const DensityVolume& v) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(path, "cannot open for writing");
  out << std::setprecision(17);
  out << "DVOL 1\n"
      << v.raw.channels() << ' ' << v.raw.height() << ' ' << v.raw.width() << '\n'
      << v.planes.z_min << ' ' << v.planes.z_max << '\n';
  for (int k = 0; k < v.planes.size(); ++k) {
    out << v.planes.depths[k] << ' ' << v.planes.deltas[k] << '\n';
  }
  out << "DATA\n";
  for (double d : v.raw.values()) {
    auto bits = std::bit_cast<std::uint64_t>(d);
    if (std::endian::native != std::endian::little) bits = detail::byteswap(bits);
    out.write(reinterpret_cast<const char*>(&bits), 8);
  }
  if (!out) throw FormatError(path, "write failed");
}

[[nodiscard]] inline DensityVolume read_density(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path, "cannot open");
  auto at = [&]() { return static_cast<std::size_t>(std::max<std::streamoff>(in.tellg(), 0)); };
  std::string magic;
  int version = 0;
  if (!(in >> magic >> version) || magic != "DVOL" || version != 1) {
    throw FormatError(path, "not a DVOL 1 file", 0);
  }
  int kk = 0, h = 0, w = 0;
  if (!(in >> kk >> h >> w) || kk < 1 || h < 1 || w < 1) {
    throw FormatError(path, "bad dimensions", at());
  }
  DensityVolume v;
  if (!(in >> v.planes.z_min >> v.planes.z_max)) throw FormatError(path, "bad depth range", at());
  v.planes.depths.resize(kk);
  v.planes.deltas.resize(kk);
  for (int k = 0; k < kk; ++k) {
    if (!(in >> v.planes.depths[k] >> v.planes.deltas[k])) {
      throw FormatError(path, "bad plane line " + std::to_string(k), at());
    }
  }
  std::string tag;
  if (!(in >> tag) || tag != "DATA") throw FormatError(path, "expected DATA", at());
  in.get();
  try {
    v.planes.validate();
  } catch (const std::exception& e) {
    throw FormatError(path, e.what());
  }
  v.raw = Volume(kk, h, w);
  for (std::size_t i = 0; i < v.raw.size(); ++i) {
    std::uint64_t bits = 0;
    const std::size_t here = at();
    in.read(reinterpret_cast<char*>(&bits), 8);
    if (!in) throw FormatError(path, "truncated data", here);
    if (std::endian::native != std::endian::little) bits = detail::byteswap(bits);
    v.raw[i] = std::bit_cast<double>(bits);
  }
  return v;
}

}  // namespace voldepth
