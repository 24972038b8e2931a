// Times the OpenMP kernels against their serial references on the shapes the
// models actually use, plus one full denoiser training step.

#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mtta/kernels.hpp"
#include "mtta/networks.hpp"
#include "mtta/ops.hpp"

using namespace mtta;
namespace k = mtta::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

double seconds_per_call(const std::function<void()>& fn, int reps) {
  fn();  // warm-up
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < reps; ++i) fn();
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double>(t1 - t0).count() / reps;
}

void report(const std::string& name, double flops, const std::function<void()>& fast, const std::function<void()>& ref, int reps) {
  const double tf = seconds_per_call(fast, reps), tr = seconds_per_call(ref, reps);
  std::printf("%-34s %10.1f us %8.2f GFLOP/s | reference %10.1f us %8.2f GFLOP/s | speedup %.2fx\n", name.c_str(), tf * 1e6,
              flops / tf * 1e-9, tr * 1e6, flops / tr * 1e-9, tr / tf);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kernel benchmark"};
  int reps = 50, threads = 0;
  std::size_t hidden = 64, batch = 32;
  app.add_option("--reps", reps, "repetitions per measurement")->check(CLI::PositiveNumber);
  app.add_option("--threads", threads, "OpenMP threads (0 = runtime default)");
  app.add_option("--hidden", hidden, "denoiser hidden width");
  app.add_option("--batch", batch, "windows per denoiser batch");
  CLI11_PARSE(app, argc, argv);
  if (threads > 0) k::set_threads(threads);
  std::printf("threads: %d\n", k::max_threads());

  std::mt19937_64 rng(1);
  {
    const std::size_t m = 160, kk = 128, n = 128;
    const auto a = random_vec(m * kk, rng), b = random_vec(kk * n, rng);
    std::vector<double> c(m * n);
    report("matmul 160x128x128", 2.0 * m * kk * n, [&] { k::matmul(a, b, c, m, kk, n); },
           [&] { k::reference::matmul(a, b, c, m, kk, n); }, reps);
    std::vector<double> gw(kk * n);
    report("matmul_at_b_acc 160x128x128", 2.0 * m * kk * n, [&] { k::matmul_at_b_acc(a, c, gw, m, kk, n); },
           [&] { k::reference::matmul_at_b_acc(a, c, gw, m, kk, n); }, reps);
  }
  {
    k::Conv1dDims d{batch, hidden, hidden, 16, 3, 1, 1};
    const auto x = random_vec(d.batch * d.in_channels * d.length, rng);
    const auto w = random_vec(d.out_channels * d.in_channels * d.kernel, rng);
    const auto bias = random_vec(d.out_channels, rng);
    std::vector<double> y(d.batch * d.out_channels * d.out_length());
    const double flops = 2.0 * d.batch * d.out_channels * d.out_length() * d.in_channels * d.kernel;
    const std::string tag = " B" + std::to_string(batch) + " C" + std::to_string(hidden) + " T16 K3";
    report("conv1d fwd" + tag, flops, [&] { k::conv1d_forward(x, w, bias, y, d); },
           [&] { k::reference::conv1d_forward(x, w, bias, y, d); }, reps);
    std::vector<double> gx(x.size()), gw(w.size()), gb(bias.size());
    report("conv1d bwd" + tag, 2.0 * flops, [&] { k::conv1d_backward(x, w, y, gx, gw, gb, d); },
           [&] { k::reference::conv1d_backward(x, w, y, gx, gw, gb, d); }, reps);
  }
  {
    const std::size_t q = 4 * batch, codes = 32, dim = 32;
    const auto zs = random_vec(q * dim, rng), cb = random_vec(codes * dim, rng);
    std::vector<std::size_t> idx(q);
    report("nearest_codes 128x32x32", 3.0 * q * codes * dim, [&] { k::nearest_codes(zs, cb, idx, q, codes, dim); },
           [&] { k::reference::nearest_codes(zs, cb, idx, q, codes, dim); }, reps);
  }
  {
    MotionDenoiser m({hidden, 32}, rng);
    Adam opt(m.params, {2e-4, 1e-5, 1000, 0.9, 0.99});
    const auto xs = random_vec(batch * kWindowFrames * kPhiDim, rng);
    const Array x({batch, kWindowFrames, kPhiDim}, xs);
    const double t = seconds_per_call(
        [&] {
          ad::Graph g;
          const Bound b = bind(g, m.params);
          const ad::Var in = g.constant(x);
          g.backward(ad::mean(ad::smooth_l1(m_decode(b, m_encode(b, in)) - in)));
          opt.step(m.params, gradients(g, b));
        },
        std::max(1, reps / 5));
    std::printf("denoiser train step (B%zu, h%zu)      %10.1f ms\n", batch, hidden, t * 1e3);
  }
  return 0;
}
