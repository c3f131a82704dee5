#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace sigmap {

/// Dense row-major 2-D array. Row `iy` holds pixels with local y in
/// [iy*r, (iy+1)*r); column `ix` likewise for x.
template <typename T>
class Grid {
 public:
  Grid() = default;
  Grid(int width, int height, T fill = T{})
      : width_(width), height_(height), data_(checked_size(width, height), fill) {}

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(int ix, int iy) { return data_[index(ix, iy)]; }
  const T& operator()(int ix, int iy) const { return data_[index(ix, iy)]; }

  T& at(int ix, int iy) {
    if (!contains(ix, iy)) throw std::out_of_range("grid index out of range");
    return data_[index(ix, iy)];
  }
  const T& at(int ix, int iy) const {
    if (!contains(ix, iy)) throw std::out_of_range("grid index out of range");
    return data_[index(ix, iy)];
  }

  bool contains(int ix, int iy) const noexcept {
    return ix >= 0 && iy >= 0 && ix < width_ && iy < height_;
  }
  std::size_t index(int ix, int iy) const noexcept {
    return static_cast<std::size_t>(iy) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(ix);
  }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool operator==(const Grid&) const = default;

 private:
  static std::size_t checked_size(int w, int h) {
    if (w < 0 || h < 0) throw std::invalid_argument("negative grid dimension");
    return static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<T> data_;
};

using FloatGrid = Grid<float>;
using MaskGrid = Grid<std::uint8_t>;  // 1 = masked (building / no data)

}  // namespace sigmap
