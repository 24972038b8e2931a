#include "mtta/kernels.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <limits>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mtta::kernels {

namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1u << 15;

inline double squared_distance(const double* q, const double* c, std::size_t dim) {
  double s = 0.0;
  for (std::size_t j = 0; j < dim; ++j) {
    const double d = c[j] - q[j];
    s += d * d;
  }
  return s;
}

}  // namespace

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_threads(int n) {
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

namespace {
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using MMap = Eigen::Map<RowMat>;
auto as_index(std::size_t v) { return static_cast<Eigen::Index>(v); }
}  // namespace

// Blocked GEMM from Eigen; the reference versions below are plain triple loops.
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
            std::size_t k, std::size_t n) {
  MMap(c.data(), as_index(m), as_index(n)).noalias() =
      CMap(a.data(), as_index(m), as_index(k)) * CMap(b.data(), as_index(k), as_index(n));
}

void matmul_at_b_acc(std::span<const double> a, std::span<const double> g, std::span<double> c,
                     std::size_t m, std::size_t k, std::size_t n) {
  MMap(c.data(), as_index(k), as_index(n)).noalias() +=
      CMap(a.data(), as_index(m), as_index(k)).transpose() * CMap(g.data(), as_index(m), as_index(n));
}

void matmul_a_bt_acc(std::span<const double> g, std::span<const double> b, std::span<double> c,
                     std::size_t m, std::size_t k, std::size_t n) {
  MMap(c.data(), as_index(m), as_index(k)).noalias() +=
      CMap(g.data(), as_index(m), as_index(n)) * CMap(b.data(), as_index(k), as_index(n)).transpose();
}

// Convolution as one wide matrix product: the input is unfolded into
// col[(c,k), (b,l)] so the inner loops run over batch*length columns.
namespace {

std::vector<double> im2col(std::span<const double> x, const Conv1dDims& d) {
  const std::size_t L = d.out_length(), cols = d.batch * L;
  std::vector<double> col(d.in_channels * d.kernel * cols, 0.0);
  const long rows = static_cast<long>(d.in_channels * d.kernel);
#pragma omp parallel for schedule(static) if (col.size() > kParallelWork)
  for (long r = 0; r < rows; ++r) {
    const std::size_t c = static_cast<std::size_t>(r) / d.kernel, k = static_cast<std::size_t>(r) % d.kernel;
    double* dst = col.data() + static_cast<std::size_t>(r) * cols;
    for (std::size_t b = 0; b < d.batch; ++b) {
      const double* xc = x.data() + (b * d.in_channels + c) * d.length;
      for (std::size_t l = 0; l < L; ++l) {
        const long t = static_cast<long>(l * d.stride + k) - static_cast<long>(d.pad);
        if (t >= 0 && t < static_cast<long>(d.length)) dst[b * L + l] = xc[t];
      }
    }
  }
  return col;
}

}  // namespace

void conv1d_forward(std::span<const double> x, std::span<const double> w, std::span<const double> bias,
                    std::span<double> y, const Conv1dDims& d) {
  const std::size_t L = d.out_length(), cols = d.batch * L, ck = d.in_channels * d.kernel;
  const std::vector<double> col = im2col(x, d);
  std::vector<double> out(d.out_channels * cols);
  matmul(w, col, out, d.out_channels, ck, cols);
  for (std::size_t b = 0; b < d.batch; ++b) {
    for (std::size_t o = 0; o < d.out_channels; ++o) {
      const double bo = bias.empty() ? 0.0 : bias[o];
      const double* src = out.data() + o * cols + b * L;
      double* dst = y.data() + (b * d.out_channels + o) * L;
      for (std::size_t l = 0; l < L; ++l) dst[l] = src[l] + bo;
    }
  }
}

void conv1d_backward(std::span<const double> x, std::span<const double> w, std::span<const double> gy,
                     std::span<double> gx, std::span<double> gw, std::span<double> gb,
                     const Conv1dDims& d) {
  const std::size_t L = d.out_length(), cols = d.batch * L, ck = d.in_channels * d.kernel;
  std::vector<double> g(d.out_channels * cols);
  for (std::size_t b = 0; b < d.batch; ++b) {
    for (std::size_t o = 0; o < d.out_channels; ++o) {
      std::copy_n(gy.data() + (b * d.out_channels + o) * L, L, g.data() + o * cols + b * L);
    }
  }
  if (!gb.empty()) {
    for (std::size_t o = 0; o < d.out_channels; ++o) {
      double s = 0.0;
      for (std::size_t j = 0; j < cols; ++j) s += g[o * cols + j];
      gb[o] += s;
    }
  }
  if (!gw.empty()) matmul_a_bt_acc(g, im2col(x, d), gw, d.out_channels, ck, cols);
  if (!gx.empty()) {
    std::vector<double> gcol(ck * cols, 0.0);
    matmul_at_b_acc(w, g, gcol, d.out_channels, ck, cols);
    // col2im: each input position sums the unfolded entries that read it.
    const long jobs = static_cast<long>(d.in_channels);
#pragma omp parallel for schedule(static) if (gcol.size() > kParallelWork)
    for (long cj = 0; cj < jobs; ++cj) {
      const std::size_t c = static_cast<std::size_t>(cj);
      for (std::size_t k = 0; k < d.kernel; ++k) {
        const double* src = gcol.data() + (c * d.kernel + k) * cols;
        for (std::size_t b = 0; b < d.batch; ++b) {
          double* gxc = gx.data() + (b * d.in_channels + c) * d.length;
          for (std::size_t l = 0; l < L; ++l) {
            const long t = static_cast<long>(l * d.stride + k) - static_cast<long>(d.pad);
            if (t >= 0 && t < static_cast<long>(d.length)) gxc[t] += src[b * L + l];
          }
        }
      }
    }
  }
}

void nearest_codes(std::span<const double> queries, std::span<const double> codes, std::span<std::size_t> out,
                   std::size_t n_queries, std::size_t n_codes, std::size_t dim) {
  const long nq = static_cast<long>(n_queries);
#pragma omp parallel for schedule(static) if (n_queries * n_codes * dim > kParallelWork)
  for (long q = 0; q < nq; ++q) {
    const double* qv = queries.data() + q * dim;
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_idx = 0;
    for (std::size_t c = 0; c < n_codes; ++c) {
      const double dist = squared_distance(qv, codes.data() + c * dim, dim);
      if (dist < best) {
        best = dist;
        best_idx = c;
      }
    }
    out[q] = best_idx;
  }
}

namespace reference {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
            std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = s;
    }
  }
}

void matmul_at_b_acc(std::span<const double> a, std::span<const double> g, std::span<double> c,
                     std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < m; ++i) s += a[i * k + p] * g[i * n + j];
      c[p * n + j] += s;
    }
  }
}

void matmul_a_bt_acc(std::span<const double> g, std::span<const double> b, std::span<double> c,
                     std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * b[p * n + j];
      c[i * k + p] += s;
    }
  }
}

void conv1d_forward(std::span<const double> x, std::span<const double> w, std::span<const double> bias,
                    std::span<double> y, const Conv1dDims& d) {
  const std::size_t L = d.out_length();
  for (std::size_t b = 0; b < d.batch; ++b) {
    for (std::size_t o = 0; o < d.out_channels; ++o) {
      for (std::size_t l = 0; l < L; ++l) {
        double s = bias.empty() ? 0.0 : bias[o];
        for (std::size_t c = 0; c < d.in_channels; ++c) {
          for (std::size_t k = 0; k < d.kernel; ++k) {
            const long t = static_cast<long>(l * d.stride + k) - static_cast<long>(d.pad);
            if (t < 0 || t >= static_cast<long>(d.length)) continue;
            s += w[(o * d.in_channels + c) * d.kernel + k] * x[(b * d.in_channels + c) * d.length + t];
          }
        }
        y[(b * d.out_channels + o) * L + l] = s;
      }
    }
  }
}

void conv1d_backward(std::span<const double> x, std::span<const double> w, std::span<const double> gy,
                     std::span<double> gx, std::span<double> gw, std::span<double> gb,
                     const Conv1dDims& d) {
  const std::size_t L = d.out_length();
  for (std::size_t b = 0; b < d.batch; ++b) {
    for (std::size_t o = 0; o < d.out_channels; ++o) {
      for (std::size_t l = 0; l < L; ++l) {
        const double g = gy[(b * d.out_channels + o) * L + l];
        if (!gb.empty()) gb[o] += g;
        for (std::size_t c = 0; c < d.in_channels; ++c) {
          for (std::size_t k = 0; k < d.kernel; ++k) {
            const long t = static_cast<long>(l * d.stride + k) - static_cast<long>(d.pad);
            if (t < 0 || t >= static_cast<long>(d.length)) continue;
            const std::size_t xi = (b * d.in_channels + c) * d.length + t;
            const std::size_t wi = (o * d.in_channels + c) * d.kernel + k;
            if (!gx.empty()) gx[xi] += w[wi] * g;
            if (!gw.empty()) gw[wi] += x[xi] * g;
          }
        }
      }
    }
  }
}

void nearest_codes(std::span<const double> queries, std::span<const double> codes, std::span<std::size_t> out,
                   std::size_t n_queries, std::size_t n_codes, std::size_t dim) {
  for (std::size_t q = 0; q < n_queries; ++q) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_idx = 0;
    for (std::size_t c = 0; c < n_codes; ++c) {
      const double dist = squared_distance(queries.data() + q * dim, codes.data() + c * dim, dim);
      if (dist < best) {
        best = dist;
        best_idx = c;
      }
    }
    out[q] = best_idx;
  }
}

}  // namespace reference
}  // namespace mtta::kernels
