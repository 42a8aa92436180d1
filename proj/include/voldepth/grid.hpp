#pragma once

// Dense planar storage shared by images, depth maps, masks and density volumes.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace voldepth {

/// Channel-major (C, H, W) grid. Images are 3-channel grids, density volumes
/// use one channel per frustum plane.
template <typename T>
class Grid {
 public:
  Grid() = default;
  Grid(int channels, int height, int width, T fill = T{})
      : channels_(channels), height_(height), width_(width) {
    if (channels < 0 || height < 0 || width < 0) {
      throw std::invalid_argument("Grid: negative dimension");
    }
    data_.assign(static_cast<std::size_t>(channels) * height * width, fill);
  }

  [[nodiscard]] int channels() const { return channels_; }
  [[nodiscard]] int height() const { return height_; }
  [[nodiscard]] int width() const { return width_; }
  [[nodiscard]] std::size_t size() const { return data_.size(); }
  [[nodiscard]] std::size_t plane_size() const {
    return static_cast<std::size_t>(height_) * width_;
  }
  [[nodiscard]] bool empty() const { return data_.empty(); }

  [[nodiscard]] std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * height_ + y) * width_ + x;
  }

  T& operator()(int c, int y, int x) { return data_[index(c, y, x)]; }
  const T& operator()(int c, int y, int x) const {
    return data_[index(c, y, x)];
  }
  // Single-channel shorthand.
  T& operator()(int y, int x) { return data_[index(0, y, x)]; }
  const T& operator()(int y, int x) const { return data_[index(0, y, x)]; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  [[nodiscard]] std::span<T> values() { return data_; }
  [[nodiscard]] std::span<const T> values() const { return data_; }
  [[nodiscard]] std::span<T> channel(int c) {
    return std::span<T>(data_).subspan(c * plane_size(), plane_size());
  }
  [[nodiscard]] std::span<const T> channel(int c) const {
    return std::span<const T>(data_).subspan(c * plane_size(), plane_size());
  }

  template <typename U>
  [[nodiscard]] bool same_shape(const Grid<U>& other) const {
    return channels_ == other.channels() && height_ == other.height() &&
           width_ == other.width();
  }
  template <typename U>
  [[nodiscard]] bool same_extent(const Grid<U>& other) const {
    return height_ == other.height() && width_ == other.width();
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  bool operator==(const Grid& other) const = default;

 private:
  int channels_ = 0;
  int height_ = 0;
  int width_ = 0;
  std::vector<T> data_;
};

using Field = Grid<double>;        // one channel of reals
using Image = Grid<double>;        // three channels in [0, 1]
using Volume = Grid<double>;       // K plane channels
using Mask = Grid<std::uint8_t>;   // one channel, 0 or 1

template <typename A, typename B>
void require_same_extent(const Grid<A>& a, const Grid<B>& b,
                         const char* what) {
  if (!a.same_extent(b)) {
    throw std::invalid_argument(std::string(what) + ": size mismatch (" +
                                std::to_string(a.height()) + "x" +
                                std::to_string(a.width()) + " vs " +
                                std::to_string(b.height()) + "x" +
                                std::to_string(b.width()) + ")");
  }
}

inline std::size_t count_set(const Mask& m) {
  std::size_t n = 0;
  for (auto v : m.values()) n += v != 0;
  return n;
}

inline Mask mask_and(const Mask& a, const Mask& b) {
  require_same_extent(a, b, "mask_and");
  Mask out(1, a.height(), a.width());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] && b[i];
  return out;
}

}  // namespace voldepth
