#pragma once

// Dense inner loops shared by the autodiff ops and the codebook search.
//
// The functions in `mtta::kernels` are OpenMP-parallel (parallel over
// independent output rows, so results do not depend on the thread count).
// `mtta::kernels::reference` holds plain serial versions that the tests and
// the benchmark compare against.

#include <cstddef>
#include <span>

namespace mtta::kernels {

struct Conv1dDims {
  std::size_t batch = 1;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t length = 0;  // input time steps
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t pad = 0;

  std::size_t out_length() const { return (length + 2 * pad - kernel) / stride + 1; }
};

// c[m,n] = a[m,k] * b[k,n]  (c is overwritten)
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
            std::size_t k, std::size_t n);
// c[k,n] += a[m,k]^T * g[m,n]
void matmul_at_b_acc(std::span<const double> a, std::span<const double> g, std::span<double> c,
                     std::size_t m, std::size_t k, std::size_t n);
// c[m,k] += g[m,n] * b[k,n]^T
void matmul_a_bt_acc(std::span<const double> g, std::span<const double> b, std::span<double> c,
                     std::size_t m, std::size_t k, std::size_t n);

// x: [B,C,T], w: [O,C,K], bias: [O] or empty, y: [B,O,L] (overwritten)
void conv1d_forward(std::span<const double> x, std::span<const double> w, std::span<const double> bias,
                    std::span<double> y, const Conv1dDims& dims);
// Accumulates input, weight and bias gradients. Any output span may be empty to skip it.
void conv1d_backward(std::span<const double> x, std::span<const double> w, std::span<const double> gy,
                     std::span<double> gx, std::span<double> gw, std::span<double> gb,
                     const Conv1dDims& dims);

// For each query row, index of the nearest code (squared Euclidean, ties -> lowest index).
void nearest_codes(std::span<const double> queries, std::span<const double> codes, std::span<std::size_t> out,
                   std::size_t n_queries, std::size_t n_codes, std::size_t dim);

int max_threads();
void set_threads(int n);

namespace reference {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
            std::size_t k, std::size_t n);
void matmul_at_b_acc(std::span<const double> a, std::span<const double> g, std::span<double> c,
                     std::size_t m, std::size_t k, std::size_t n);
void matmul_a_bt_acc(std::span<const double> g, std::span<const double> b, std::span<double> c,
                     std::size_t m, std::size_t k, std::size_t n);
void conv1d_forward(std::span<const double> x, std::span<const double> w, std::span<const double> bias,
                    std::span<double> y, const Conv1dDims& dims);
void conv1d_backward(std::span<const double> x, std::span<const double> w, std::span<const double> gy,
                     std::span<double> gx, std::span<double> gw, std::span<double> gb,
                     const Conv1dDims& dims);
void nearest_codes(std::span<const double> queries, std::span<const double> codes, std::span<std::size_t> out,
                   std::size_t n_queries, std::size_t n_codes, std::size_t dim);

}  // namespace reference
}  // namespace mtta::kernels
