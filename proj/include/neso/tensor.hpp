#pragma once

// Row-major dense tensor helpers shared by the spline surface, the spectral
// layers and the grid resampler.

#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <vector>

namespace neso {

inline std::size_t product(std::span<const int> shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
}

inline std::vector<std::size_t> row_major_strides(std::span<const int> shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

/// out[..., r, ...] = sum_c matrix[r * cols + c] * in[..., c, ...] along `axis`.
/// `in` has shape `shape` with shape[axis] == cols; `out` must hold the same
/// shape with shape[axis] replaced by rows.
template <typename Out, typename In, typename M>
void apply_along_axis(std::span<const In> in, std::span<const int> shape, std::size_t axis,
                      std::span<const M> matrix, int rows, std::span<Out> out) {
  const int cols = shape[axis];
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];

  for (std::size_t o = 0; o < outer; ++o) {
    const In* src = in.data() + o * cols * inner;
    Out* dst = out.data() + o * rows * inner;
    for (int r = 0; r < rows; ++r) {
      Out* drow = dst + r * inner;
      for (std::size_t k = 0; k < inner; ++k) drow[k] = Out{};
      const M* mrow = matrix.data() + static_cast<std::size_t>(r) * cols;
      for (int c = 0; c < cols; ++c) {
        const M m = mrow[c];
        if (m == M{}) continue;
        const In* srow = src + c * inner;
        for (std::size_t k = 0; k < inner; ++k) drow[k] += m * srow[k];
      }
    }
  }
}

/// Visits every multi-index of `shape` in row-major order.
inline void for_each_index(std::span<const int> shape,
                           const std::function<void(std::span<const int>)>& fn) {
  std::vector<int> idx(shape.size(), 0);
  const std::size_t total = product(shape);
  for (std::size_t n = 0; n < total; ++n) {
    fn(idx);
    for (std::size_t a = shape.size(); a-- > 0;) {
      if (++idx[a] < shape[a]) break;
      idx[a] = 0;
    }
  }
}

}  // namespace neso
