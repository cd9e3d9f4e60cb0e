#include "lf2/kernels.hpp"

#include <algorithm>
#include <vector>

namespace lf2::kernels {
namespace {

constexpr std::size_t kRowTile = 4;
constexpr std::size_t kColTile = 32;

// Row-major copy of op(X) with shape rows x cols.
std::vector<double> materialize(Op op, std::size_t rows, std::size_t cols, const double* x) {
  std::vector<double> out(rows * cols);
  if (op == Op::kNone) {
    std::copy(x, x + rows * cols, out.begin());
  } else {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = x[c * rows + r];
  }
  return out;
}

// C rows [i0, i0+kRowTile) x cols [j0, j0+kColTile), full tile.
inline void micro_tile(std::size_t n, std::size_t k, const double* a, const double* b,
                       double* c, std::size_t i0, std::size_t j0) {
  double acc[kRowTile][kColTile];
  for (std::size_t r = 0; r < kRowTile; ++r)
    for (std::size_t q = 0; q < kColTile; ++q) acc[r][q] = c[(i0 + r) * n + j0 + q];
  for (std::size_t p = 0; p < k; ++p) {
    const double* brow = b + p * n + j0;
    for (std::size_t r = 0; r < kRowTile; ++r) {
      const double av = a[(i0 + r) * k + p];
      for (std::size_t q = 0; q < kColTile; ++q) acc[r][q] += av * brow[q];
    }
  }
  for (std::size_t r = 0; r < kRowTile; ++r)
    for (std::size_t q = 0; q < kColTile; ++q) c[(i0 + r) * n + j0 + q] = acc[r][q];
}

inline void edge_tile(std::size_t n, std::size_t k, const double* a, const double* b, double* c,
                      std::size_t i0, std::size_t rows, std::size_t j0, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    double* crow = c + (i0 + r) * n + j0;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[(i0 + r) * k + p];
      const double* brow = b + p * n + j0;
      for (std::size_t q = 0; q < cols; ++q) crow[q] += av * brow[q];
    }
  }
}

}  // namespace

void gemm(Op op_a, Op op_b, std::size_t m, std::size_t n, std::size_t k, const double* a,
          const double* b, double* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  if (m == 0 || n == 0 || k == 0) return;

  std::vector<double> a_buf, b_buf;
  if (op_a == Op::kTranspose) {
    a_buf = materialize(op_a, m, k, a);
    a = a_buf.data();
  }
  if (op_b == Op::kTranspose) {
    b_buf = materialize(op_b, k, n, b);
    b = b_buf.data();
  }

  const auto row_blocks = static_cast<long long>((m + kRowTile - 1) / kRowTile);
#pragma omp parallel for schedule(static)
  for (long long blk = 0; blk < row_blocks; ++blk) {
    const std::size_t i0 = static_cast<std::size_t>(blk) * kRowTile;
    const std::size_t rows = std::min(kRowTile, m - i0);
    for (std::size_t j0 = 0; j0 < n; j0 += kColTile) {
      const std::size_t cols = std::min(kColTile, n - j0);
      if (rows == kRowTile && cols == kColTile)
        micro_tile(n, k, a, b, c, i0, j0);
      else
        edge_tile(n, k, a, b, c, i0, rows, j0, cols);
    }
  }
}

void im2col(const ConvGeometry& g, std::size_t batch, const double* x, double* col) {
  const std::size_t ho = g.out_height(), wo = g.out_width();
  const std::size_t plane = ho * wo;
  const std::size_t ncols = batch * plane;
  const auto rows = static_cast<long long>(g.patch_size());
#pragma omp parallel for schedule(static)
  for (long long row = 0; row < rows; ++row) {
    const std::size_t ch = static_cast<std::size_t>(row) / (g.kernel * g.kernel);
    const std::size_t ky = (static_cast<std::size_t>(row) / g.kernel) % g.kernel;
    const std::size_t kx = static_cast<std::size_t>(row) % g.kernel;
    double* dst = col + static_cast<std::size_t>(row) * ncols;
    for (std::size_t img = 0; img < batch; ++img) {
      const double* src = x + (img * g.channels + ch) * g.height * g.width;
      for (std::size_t oy = 0; oy < ho; ++oy) {
        const long long iy = static_cast<long long>(oy * g.stride + ky) - static_cast<long long>(g.pad);
        double* out = dst + img * plane + oy * wo;
        if (iy < 0 || iy >= static_cast<long long>(g.height)) {
          std::fill(out, out + wo, 0.0);
          continue;
        }
        const double* line = src + static_cast<std::size_t>(iy) * g.width;
        for (std::size_t ox = 0; ox < wo; ++ox) {
          const long long ix = static_cast<long long>(ox * g.stride + kx) - static_cast<long long>(g.pad);
          out[ox] = (ix < 0 || ix >= static_cast<long long>(g.width)) ? 0.0 : line[ix];
        }
      }
    }
  }
}

void col2im(const ConvGeometry& g, std::size_t batch, const double* col, double* x) {
  const std::size_t ho = g.out_height(), wo = g.out_width();
  const std::size_t plane = ho * wo;
  const std::size_t ncols = batch * plane;
  const std::size_t kk = g.kernel * g.kernel;
  std::fill(x, x + batch * g.channels * g.height * g.width, 0.0);
  // Each (image, channel) plane is written by one thread; rows of that channel
  // are visited in a fixed order.
  const auto planes = static_cast<long long>(batch * g.channels);
#pragma omp parallel for schedule(static)
  for (long long pi = 0; pi < planes; ++pi) {
    const std::size_t img = static_cast<std::size_t>(pi) / g.channels;
    const std::size_t ch = static_cast<std::size_t>(pi) % g.channels;
    double* dst = x + static_cast<std::size_t>(pi) * g.height * g.width;
    for (std::size_t kidx = 0; kidx < kk; ++kidx) {
      const std::size_t ky = kidx / g.kernel, kx = kidx % g.kernel;
      const double* src = col + (ch * kk + kidx) * ncols + img * plane;
      for (std::size_t oy = 0; oy < ho; ++oy) {
        const long long iy = static_cast<long long>(oy * g.stride + ky) - static_cast<long long>(g.pad);
        if (iy < 0 || iy >= static_cast<long long>(g.height)) continue;
        double* line = dst + static_cast<std::size_t>(iy) * g.width;
        for (std::size_t ox = 0; ox < wo; ++ox) {
          const long long ix = static_cast<long long>(ox * g.stride + kx) - static_cast<long long>(g.pad);
          if (ix >= 0 && ix < static_cast<long long>(g.width)) line[ix] += src[oy * wo + ox];
        }
      }
    }
  }
}

Tensor pairwise_sq_distances(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
    throw InputError("pairwise_sq_distances: expected (n x d) and (m x d), got " +
                     shape_string(a.shape()) + " and " + shape_string(b.shape()));
  const std::size_t n = a.dim(0), m = b.dim(0), d = a.dim(1);
  Tensor out({n, m});
#pragma omp parallel for schedule(static)
  for (long long ii = 0; ii < static_cast<long long>(n); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    const double* ai = a.data() + i * d;
    for (std::size_t j = 0; j < m; ++j) {
      const double* bj = b.data() + j * d;
      double s = 0.0;
      for (std::size_t t = 0; t < d; ++t) {
        const double diff = ai[t] - bj[t];
        s += diff * diff;
      }
      out[i * m + j] = s;
    }
  }
  return out;
}

namespace reference {

void gemm(Op op_a, Op op_b, std::size_t m, std::size_t n, std::size_t k, const double* a,
          const double* b, double* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = accumulate ? c[i * n + j] : 0.0;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = op_a == Op::kNone ? a[i * k + p] : a[p * m + i];
        const double bv = op_b == Op::kNone ? b[p * n + j] : b[j * k + p];
        s += av * bv;
      }
      c[i * n + j] = s;
    }
  }
}

void im2col(const ConvGeometry& g, std::size_t batch, const double* x, double* col) {
  const std::size_t ho = g.out_height(), wo = g.out_width();
  const std::size_t ncols = batch * ho * wo;
  for (std::size_t ch = 0; ch < g.channels; ++ch)
    for (std::size_t ky = 0; ky < g.kernel; ++ky)
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        const std::size_t row = (ch * g.kernel + ky) * g.kernel + kx;
        for (std::size_t img = 0; img < batch; ++img)
          for (std::size_t oy = 0; oy < ho; ++oy)
            for (std::size_t ox = 0; ox < wo; ++ox) {
              const long long iy = static_cast<long long>(oy * g.stride + ky) - static_cast<long long>(g.pad);
              const long long ix = static_cast<long long>(ox * g.stride + kx) - static_cast<long long>(g.pad);
              const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long long>(g.height) &&
                                  ix < static_cast<long long>(g.width);
              col[row * ncols + (img * ho + oy) * wo + ox] =
                  inside ? x[((img * g.channels + ch) * g.height + static_cast<std::size_t>(iy)) * g.width +
                             static_cast<std::size_t>(ix)]
                         : 0.0;
            }
      }
}

void col2im(const ConvGeometry& g, std::size_t batch, const double* col, double* x) {
  const std::size_t ho = g.out_height(), wo = g.out_width();
  const std::size_t ncols = batch * ho * wo;
  std::fill(x, x + batch * g.channels * g.height * g.width, 0.0);
  for (std::size_t ch = 0; ch < g.channels; ++ch)
    for (std::size_t ky = 0; ky < g.kernel; ++ky)
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        const std::size_t row = (ch * g.kernel + ky) * g.kernel + kx;
        for (std::size_t img = 0; img < batch; ++img)
          for (std::size_t oy = 0; oy < ho; ++oy)
            for (std::size_t ox = 0; ox < wo; ++ox) {
              const long long iy = static_cast<long long>(oy * g.stride + ky) - static_cast<long long>(g.pad);
              const long long ix = static_cast<long long>(ox * g.stride + kx) - static_cast<long long>(g.pad);
              if (iy < 0 || ix < 0 || iy >= static_cast<long long>(g.height) ||
                  ix >= static_cast<long long>(g.width))
                continue;
              x[((img * g.channels + ch) * g.height + static_cast<std::size_t>(iy)) * g.width +
                static_cast<std::size_t>(ix)] += col[row * ncols + (img * ho + oy) * wo + ox];
            }
      }
}

Tensor pairwise_sq_distances(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.dim(0), m = b.dim(0), d = a.dim(1);
  Tensor out({n, m});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < d; ++t) {
        const double diff = a.at(i, t) - b.at(j, t);
        s += diff * diff;
      }
      out.at(i, j) = s;
    }
  return out;
}

}  // namespace reference
}  // namespace lf2::kernels
