#include "gradcf/kernels.hpp"

#include <cstdlib>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace gradcf::kernels {

namespace serial {

void gemv(MatrixView w, std::span<const double> x, std::span<const double> b,
          std::span<double> y) {
  for (std::size_t r = 0; r < w.rows; ++r) {
    const double* row = w.data.data() + r * w.cols;
    double acc = b[r];
    for (std::size_t c = 0; c < w.cols; ++c) acc += row[c] * x[c];
    y[r] = acc;
  }
}

void gemv_transposed(MatrixView w, std::span<const double> y_grad, std::span<double> x_grad) {
  for (std::size_t c = 0; c < w.cols; ++c) {
    double acc = 0.0;
    for (std::size_t r = 0; r < w.rows; ++r) acc += w(r, c) * y_grad[r];
    x_grad[c] = acc;
  }
}

void accumulate_outer(std::span<const double> y_grad, std::span<const double> x, double scale,
                      std::span<double> w_grad, std::span<double> b_grad) {
  const std::size_t cols = x.size();
  for (std::size_t r = 0; r < y_grad.size(); ++r) {
    const double g = scale * y_grad[r];
    b_grad[r] += g;
    if (g == 0.0) continue;
    double* row = w_grad.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) row[c] += g * x[c];
  }
}

}  // namespace serial

namespace parallel {

void gemv(MatrixView w, std::span<const double> x, std::span<const double> b,
          std::span<double> y) {
  const auto rows = static_cast<std::ptrdiff_t>(w.rows);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < rows; ++r) {
    const double* row = w.data.data() + static_cast<std::size_t>(r) * w.cols;
    double acc = b[static_cast<std::size_t>(r)];
    for (std::size_t c = 0; c < w.cols; ++c) acc += row[c] * x[c];
    y[static_cast<std::size_t>(r)] = acc;
  }
}

void gemv_transposed(MatrixView w, std::span<const double> y_grad, std::span<double> x_grad) {
  const auto cols = static_cast<std::ptrdiff_t>(w.cols);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t c = 0; c < cols; ++c) {
    double acc = 0.0;
    for (std::size_t r = 0; r < w.rows; ++r) acc += w(r, static_cast<std::size_t>(c)) * y_grad[r];
    x_grad[static_cast<std::size_t>(c)] = acc;
  }
}

void accumulate_outer(std::span<const double> y_grad, std::span<const double> x, double scale,
                      std::span<double> w_grad, std::span<double> b_grad) {
  const std::size_t cols = x.size();
  const auto rows = static_cast<std::ptrdiff_t>(y_grad.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < rows; ++r) {
    const auto ur = static_cast<std::size_t>(r);
    const double g = scale * y_grad[ur];
    b_grad[ur] += g;
    if (g == 0.0) continue;
    double* row = w_grad.data() + ur * cols;
    for (std::size_t c = 0; c < cols; ++c) row[c] += g * x[c];
  }
}

}  // namespace parallel

namespace {

bool use_parallel(std::size_t work) {
#ifdef _OPENMP
  return work >= kParallelThreshold && !omp_in_parallel() && omp_get_max_threads() > 1;
#else
  (void)work;
  return false;
#endif
}

}  // namespace

void gemv(MatrixView w, std::span<const double> x, std::span<const double> b,
          std::span<double> y) {
  if (use_parallel(w.rows * w.cols)) {
    parallel::gemv(w, x, b, y);
  } else {
    serial::gemv(w, x, b, y);
  }
}

void gemv_transposed(MatrixView w, std::span<const double> y_grad, std::span<double> x_grad) {
  if (use_parallel(w.rows * w.cols)) {
    parallel::gemv_transposed(w, y_grad, x_grad);
  } else {
    serial::gemv_transposed(w, y_grad, x_grad);
  }
}

void accumulate_outer(std::span<const double> y_grad, std::span<const double> x, double scale,
                      std::span<double> w_grad, std::span<double> b_grad) {
  if (use_parallel(y_grad.size() * x.size())) {
    parallel::accumulate_outer(y_grad, x, scale, w_grad, b_grad);
  } else {
    serial::accumulate_outer(y_grad, x, scale, w_grad, b_grad);
  }
}

int max_threads() {
  int threads = 1;
#ifdef _OPENMP
  threads = omp_get_max_threads();
#endif
  if (const char* env = std::getenv("GRADCF_THREADS")) {
    try {
      const int requested = std::stoi(env);
      if (requested > 0) threads = requested;
    } catch (const std::exception&) {
      // unparsable value: keep the default
    }
  }
  return threads;
}

}  // namespace gradcf::kernels
