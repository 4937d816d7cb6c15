#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "emasam/error.hpp"

namespace emasam {

template <class T>
struct Grid {
  int height = 0;
  int width = 0;
  std::vector<T> data;

  Grid() = default;
  Grid(int h, int w, T fill = T{})
      : height(h), width(w), data(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), fill) {
    if (h < 0 || w < 0) throw ShapeError("grid: negative size");
  }

  std::size_t size() const noexcept { return data.size(); }
  T& at(int r, int c) noexcept { return data[static_cast<std::size_t>(r) * width + c]; }
  const T& at(int r, int c) const noexcept { return data[static_cast<std::size_t>(r) * width + c]; }
  bool same_shape(const Grid& o) const noexcept { return height == o.height && width == o.width; }

  bool operator==(const Grid&) const = default;
};

using Image = Grid<double>;             // intensities in [0, 1]
using BinaryMask = Grid<std::uint8_t>;  // 0 or 1

struct Frame {
  Image pixels;
  int index = 0;  // 1-based frame number within its sequence

  bool operator==(const Frame&) const = default;
};

inline std::size_t count_nonzero(const BinaryMask& m) {
  std::size_t n = 0;
  for (auto v : m.data) n += v != 0;
  return n;
}

}  // namespace emasam
