#include <random>

#include "doctest.h"
#include "fd_check.hpp"
#include "mtta/kernels.hpp"

using namespace mtta;

namespace {

std::vector<double> rand_vec(std::mt19937_64& rng, std::size_t n) {
  std::normal_distribution<double> nd;
  std::vector<double> v(n);
  for (auto& x : v) x = nd(rng);
  return v;
}

void check_close(const std::vector<double>& a, const std::vector<double>& b) {
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12).scale(1.0));
}

}  // namespace

TEST_CASE("parallel matmul kernels agree with the serial reference") {
  std::mt19937_64 rng(1);
  for (auto [m, k, n] : {std::tuple{1ul, 1ul, 1ul}, {7ul, 5ul, 3ul}, {64ul, 74ul, 128ul}, {33ul, 128ul, 156ul}}) {
    auto a = rand_vec(rng, m * k), b = rand_vec(rng, k * n), g = rand_vec(rng, m * n);
    std::vector<double> c1(m * n), c2(m * n);
    kernels::matmul(a, b, c1, m, k, n);
    kernels::reference::matmul(a, b, c2, m, k, n);
    check_close(c1, c2);
    std::vector<double> ga1(m * k, 0.5), ga2(m * k, 0.5), gb1(k * n), gb2(k * n);
    kernels::matmul_a_bt_acc(g, b, ga1, m, k, n);
    kernels::reference::matmul_a_bt_acc(g, b, ga2, m, k, n);
    check_close(ga1, ga2);
    kernels::matmul_at_b_acc(a, g, gb1, m, k, n);
    kernels::reference::matmul_at_b_acc(a, g, gb2, m, k, n);
    check_close(gb1, gb2);
  }
}

TEST_CASE("parallel conv1d agrees with the serial reference") {
  std::mt19937_64 rng(2);
  for (std::size_t stride : {1ul, 2ul}) {
    kernels::Conv1dDims d{3, 5, 4, 16, 3, stride, 1};
    const std::size_t L = d.out_length();
    auto x = rand_vec(rng, d.batch * d.in_channels * d.length);
    auto w = rand_vec(rng, d.out_channels * d.in_channels * d.kernel);
    auto bias = rand_vec(rng, d.out_channels);
    auto gy = rand_vec(rng, d.batch * d.out_channels * L);
    std::vector<double> y1(gy.size()), y2(gy.size());
    kernels::conv1d_forward(x, w, bias, y1, d);
    kernels::reference::conv1d_forward(x, w, bias, y2, d);
    check_close(y1, y2);
    std::vector<double> gx1(x.size()), gx2(x.size()), gw1(w.size()), gw2(w.size()), gb1(bias.size()), gb2(bias.size());
    kernels::conv1d_backward(x, w, gy, gx1, gw1, gb1, d);
    kernels::reference::conv1d_backward(x, w, gy, gx2, gw2, gb2, d);
    check_close(gx1, gx2);
    check_close(gw1, gw2);
    check_close(gb1, gb2);
  }
}

TEST_CASE("nearest code search is identical to the serial reference, ties to lowest index") {
  std::mt19937_64 rng(3);
  auto q = rand_vec(rng, 200 * 8), c = rand_vec(rng, 32 * 8);
  std::vector<std::size_t> i1(200), i2(200);
  kernels::nearest_codes(q, c, i1, 200, 32, 8);
  kernels::reference::nearest_codes(q, c, i2, 200, 32, 8);
  CHECK(i1 == i2);
  std::vector<double> dup{1, 1, 1, 1};
  std::vector<double> query{1, 1};
  std::vector<std::size_t> out(1);
  kernels::nearest_codes(query, dup, out, 1, 2, 2);
  CHECK(out[0] == 0);
}
