#pragma once

// Dense linear-algebra kernels used by the network. Each kernel has a serial
// reference and an OpenMP variant. The OpenMP variants split work over output
// rows (or batch items) only, so every output element is summed in the same
// order as the serial version and results are bit-identical.

#include <cstddef>
#include <span>

namespace gradcf::kernels {

// Row-major weight matrix view, rows x cols.
struct MatrixView {
  std::span<const double> data;
  std::size_t rows = 0;
  std::size_t cols = 0;

  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

namespace serial {

// y = W x + b
void gemv(MatrixView w, std::span<const double> x, std::span<const double> b,
          std::span<double> y);

// x_grad = W^T y_grad
void gemv_transposed(MatrixView w, std::span<const double> y_grad, std::span<double> x_grad);

// W_grad += scale * y_grad x^T ; b_grad += scale * y_grad
void accumulate_outer(std::span<const double> y_grad, std::span<const double> x, double scale,
                      std::span<double> w_grad, std::span<double> b_grad);

}  // namespace serial

namespace parallel {

void gemv(MatrixView w, std::span<const double> x, std::span<const double> b,
          std::span<double> y);

void gemv_transposed(MatrixView w, std::span<const double> y_grad, std::span<double> x_grad);

void accumulate_outer(std::span<const double> y_grad, std::span<const double> x, double scale,
                      std::span<double> w_grad, std::span<double> b_grad);

}  // namespace parallel

// Work size (rows * cols) from which the dispatching helpers below pick the
// OpenMP variant. Calls made from inside an active parallel region always run
// serially.
inline constexpr std::size_t kParallelThreshold = 1u << 15;

void gemv(MatrixView w, std::span<const double> x, std::span<const double> b,
          std::span<double> y);
void gemv_transposed(MatrixView w, std::span<const double> y_grad, std::span<double> x_grad);
void accumulate_outer(std::span<const double> y_grad, std::span<const double> x, double scale,
                      std::span<double> w_grad, std::span<double> b_grad);

// Number of worker threads for batch loops: GRADCF_THREADS if set and
// positive, otherwise the OpenMP default.
int max_threads();

}  // namespace gradcf::kernels
