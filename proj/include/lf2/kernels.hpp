#pragma once

// Dense numeric kernels used by the model and the clustering/evaluation code.
//
// Every kernel exists twice: the OpenMP-parallel blocked version in
// `lf2::kernels`, and a plain serial loop nest in `lf2::kernels::reference`
// that is kept for tests and benchmarks. The parallel versions split work over
// output rows only, so each output element is produced by exactly one thread
// with a fixed summation order and results do not depend on the thread count.

#include <cstddef>

#include "lf2/tensor.hpp"

namespace lf2::kernels {

enum class Op { kNone, kTranspose };

// C(MxN) = op(A)(MxK) * op(B)(KxN), or C += ... when `accumulate` is set.
// A is stored row-major as MxK (kNone) or KxM (kTranspose); likewise B.
void gemm(Op op_a, Op op_b, std::size_t m, std::size_t n, std::size_t k, const double* a,
          const double* b, double* c, bool accumulate = false);

struct ConvGeometry {
  std::size_t channels = 0, height = 0, width = 0;
  std::size_t kernel = 3, stride = 1, pad = 1;

  std::size_t out_height() const { return (height + 2 * pad - kernel) / stride + 1; }
  std::size_t out_width() const { return (width + 2 * pad - kernel) / stride + 1; }
  std::size_t patch_size() const { return channels * kernel * kernel; }
};

// Unfolds a batch (N x C x H x W) into columns of shape
// (C*k*k) x (N*Ho*Wo); column index is n*Ho*Wo + oy*Wo + ox.
void im2col(const ConvGeometry& g, std::size_t batch, const double* x, double* col);
// Adjoint of im2col: scatters columns back (overwrites `x`).
void col2im(const ConvGeometry& g, std::size_t batch, const double* col, double* x);

// out(i,j) = ||a_i - b_j||^2 for rows of a (n x d) and b (m x d).
Tensor pairwise_sq_distances(const Tensor& a, const Tensor& b);

namespace reference {

void gemm(Op op_a, Op op_b, std::size_t m, std::size_t n, std::size_t k, const double* a,
          const double* b, double* c, bool accumulate = false);
void im2col(const ConvGeometry& g, std::size_t batch, const double* x, double* col);
void col2im(const ConvGeometry& g, std::size_t batch, const double* col, double* x);
Tensor pairwise_sq_distances(const Tensor& a, const Tensor& b);

}  // namespace reference

}  // namespace lf2::kernels
