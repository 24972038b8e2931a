#include "mtta/checks.hpp"

#include <Eigen/Geometry>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <random>

#include "mtta/adapt.hpp"
#include "mtta/fd.hpp"
#include "mtta/motion_repr.hpp"
#include "mtta/ops.hpp"

namespace mtta::checks {

using namespace ad;
using fd::away_from_zero;
using fd::max_fd_error;
using fd::random_array;

bool all_pass(const std::vector<Result>& results) {
  return std::all_of(results.begin(), results.end(), [](const Result& r) { return r.pass; });
}

namespace {

std::string sci(const char* label, double v) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%s %.2e", label, v);
  return buf;
}

Shape random_shape(std::mt19937_64& rng, std::size_t max_rank = 3) {
  std::uniform_int_distribution<std::size_t> rank(1, max_rank), dim(1, 4);
  Shape s(rank(rng));
  for (auto& d : s) d = dim(rng);
  return s;
}

// Worst FD error over `instances` cases produced by `make`, which returns the
// inputs and the objective.
Result fd_case(const std::string& name, int instances, std::mt19937_64& rng,
               const std::function<std::pair<std::vector<Array>, fd::Builder>(std::mt19937_64&)>& make) {
  double worst = 0.0;
  for (int i = 0; i < instances; ++i) {
    auto [inputs, build] = make(rng);
    worst = std::max(worst, max_fd_error(inputs, build));
  }
  return {"grad " + name, worst < 1e-4, sci("worst relative error", worst) + " over " + std::to_string(instances) + " instances"};
}

Eigen::Matrix3d random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> ang(0.0, M_PI);
  const Eigen::Vector3d axis(nd(rng), nd(rng), nd(rng));
  return Eigen::AngleAxisd(ang(rng), axis.normalized()).toRotationMatrix();
}

PoseFrame random_pose(std::mt19937_64& rng, double spread = 0.6) {
  std::normal_distribution<double> nd(0.0, spread);
  std::uniform_real_distribution<double> b(0.8, 1.3);
  PoseFrame p = PoseFrame::rest(Eigen::Vector3d(0.1, 0.2, 4.0));
  for (std::size_t j = 0; j < kJoints; ++j) {
    const auto r6 = matrix_to_rot6d(axis_angle(Eigen::Vector3d(nd(rng), nd(rng), nd(rng))));
    std::copy(r6.begin(), r6.end(), p.theta.begin() + 6 * j);
  }
  for (auto& x : p.beta) x = b(rng);
  return p;
}

// Parameter values with jittered biases so no pre-activation sits on a ReLU kink.
std::vector<Array> jittered(const ParamSet& params, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  std::vector<Array> out;
  for (std::size_t i = 0; i < params.count(); ++i) {
    Array v = params.value(i);
    if (params.name(i).ends_with(".b")) {
      for (auto& x : v.mutable_data()) x += u(rng);
    }
    out.push_back(std::move(v));
  }
  return out;
}

PretrainedModels tiny_models(std::uint64_t seed, std::size_t f_hidden) {
  std::mt19937_64 rng(seed);
  PretrainedModels pre{PoseEstimator({f_hidden}, rng), MotionDenoiser({8, 8}, rng), ResidualCodebook({3, 8, 8})};
  Array x({6, kWindowFrames, kPhiDim});
  std::normal_distribution<double> n(0.0, 0.3);
  for (auto& v : x.mutable_data()) v = n(rng);
  Graph g;
  const Bound b = bind(g, pre.m.params, false);
  init_kmeanspp(pre.codebook, m_encode(b, g.constant(x)).value().reshaped({6 * kLatentSteps, 8}), rng);
  return pre;
}

DomainShift check_shift() {
  DomainShift s;
  s.keypoint_bias = {5.0, -3.0};
  s.noise_scale = 1.5;
  s.dropout_prob = 0.05;
  return s;
}

// A random pose and a perturbed copy, as joint positions (pred, gt).
std::pair<Joints, Joints> random_joint_pair(std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 0.3);
  const PoseFrame a = random_pose(rng);
  PoseFrame b = a;
  for (auto& v : b.theta) v += nd(rng);
  return {forward_kinematics(Skeleton::standard(), b), forward_kinematics(Skeleton::standard(), a)};
}

double root_squared_error(const Joints& pred, const Joints& gt) {
  double s = 0.0;
  for (std::size_t j = 0; j < kJoints; ++j) s += ((pred.row(j) - pred.row(0)) - (gt.row(j) - gt.row(0))).squaredNorm();
  return s;
}

// Summed squared distance after the optimal similarity transform (same solver as mpjpe_pa).
double pa_squared_error(const Joints& pred, const Joints& gt) {
  Eigen::Matrix<double, kJoints, 3> p = pred, g = gt;
  p.rowwise() -= p.colwise().mean();
  g.rowwise() -= g.colwise().mean();
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(p.transpose() * g, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  if ((svd.matrixV() * svd.matrixU().transpose()).determinant() < 0) d(2, 2) = -1.0;
  const Eigen::Matrix3d r = svd.matrixV() * d * svd.matrixU().transpose();
  const double s = (svd.singularValues().asDiagonal() * d).trace() / p.squaredNorm();
  double total = 0.0;
  for (int j = 0; j < static_cast<int>(kJoints); ++j) total += (s * r * p.row(j).transpose() - g.row(j).transpose()).squaredNorm();
  return total;
}

ObservedBatch first_batch(std::uint64_t seed) {
  PersonStream st(PersonProfile::random(1, seed), check_shift(), Camera{}, 1.0, seed);
  return st.next()->observed;
}

}  // namespace

// ------------------------------------------------------------ gradients

std::vector<Result> gradient_suite(std::uint64_t seed, int instances) {
  std::mt19937_64 rng(seed);
  std::vector<Result> out;
  using Inputs = std::pair<std::vector<Array>, fd::Builder>;

  out.push_back(fd_case("add", instances, rng, [](auto& r) -> Inputs {
    const Shape s = random_shape(r);
    const Array w = random_array(r, s);
    return {{random_array(r, s), random_array(r, s)}, [w](Graph& g, auto& v) { return sum(mul(add(v[0], v[1]), g.constant(w))); }};
  }));
  out.push_back(fd_case("sub (broadcast)", instances, rng, [](auto& r) -> Inputs {
    const Shape s = random_shape(r);
    Shape tail(s.begin() + 1, s.end());
    if (tail.empty()) tail = s;
    const Array w = random_array(r, s);
    return {{random_array(r, s), random_array(r, tail)}, [w](Graph& g, auto& v) { return sum(mul(sub(v[0], v[1]), g.constant(w))); }};
  }));
  out.push_back(fd_case("mul", instances, rng, [](auto& r) -> Inputs {
    const Shape s = random_shape(r);
    return {{random_array(r, s), random_array(r, s)}, [](Graph&, auto& v) { return sum(mul(v[0], v[1])); }};
  }));
  out.push_back(fd_case("div", instances, rng, [](auto& r) -> Inputs {
    const Shape s = random_shape(r);
    return {{random_array(r, s), random_array(r, s, 0.5, 2.0)}, [](Graph&, auto& v) { return sum(div(v[0], v[1])); }};
  }));
  out.push_back(fd_case("scale, add_scalar", instances, rng, [](auto& r) -> Inputs {
    const Shape s = random_shape(r);
    const Array w = random_array(r, s);
    return {{random_array(r, s)}, [w](Graph& g, auto& v) { return sum(mul(add_scalar(scale(v[0], -1.7), 0.3), g.constant(w))); }};
  }));
  out.push_back(fd_case("matmul", instances, rng, [](auto& r) -> Inputs {
    std::uniform_int_distribution<std::size_t> d(1, 5);
    const std::size_t m = d(r), k = d(r), n = d(r);
    const Array w = random_array(r, Shape{m, n});
    return {{random_array(r, Shape{m, k}), random_array(r, Shape{k, n})},
            [w](Graph& g, auto& v) { return sum(mul(matmul(v[0], v[1]), g.constant(w))); }};
  }));
  out.push_back(fd_case("conv1d", instances, rng, [](auto& r) -> Inputs {
    std::uniform_int_distribution<std::size_t> d(1, 3), stride(1, 2);
    const std::size_t b = d(r), c = d(r), o = d(r), t = 4 + d(r), s = stride(r);
    const std::size_t len = (t + 2 - 3) / s + 1;
    const Array w = random_array(r, Shape{b, o, len});
    return {{random_array(r, Shape{b, c, t}), random_array(r, Shape{o, c, 3}), random_array(r, Shape{o})},
            [w, s](Graph& g, auto& v) { return sum(mul(conv1d(v[0], v[1], v[2], s, 1), g.constant(w))); }};
  }));
  out.push_back(fd_case("relu", instances, rng, [](auto& r) -> Inputs {
    const Shape s = random_shape(r);
    const Array w = random_array(r, s);
    return {{away_from_zero(r, s)}, [w](Graph& g, auto& v) { return sum(mul(relu(v[0]), g.constant(w))); }};
  }));
  out.push_back(fd_case("abs", instances, rng, [](auto& r) -> Inputs {
    const Shape s = random_shape(r);
    const Array w = random_array(r, s);
    return {{away_from_zero(r, s)}, [w](Graph& g, auto& v) { return sum(mul(abs(v[0]), g.constant(w))); }};
  }));
  out.push_back(fd_case("square, sqrt", instances, rng, [](auto& r) -> Inputs {
    const Shape s = random_shape(r);
    return {{random_array(r, s, 0.3, 2.0)}, [](Graph&, auto& v) { return sum(sqrt(square(v[0]))); }};
  }));
  out.push_back(fd_case("sigmoid, softplus", instances, rng, [](auto& r) -> Inputs {
    const Shape s = random_shape(r);
    const Array w = random_array(r, s);
    return {{random_array(r, s, -3, 3)}, [w](Graph& g, auto& v) { return sum(mul(add(sigmoid(v[0]), softplus(v[0])), g.constant(w))); }};
  }));
  out.push_back(fd_case("smooth_l1, mean", instances, rng, [](auto& r) -> Inputs {
    const Shape s = random_shape(r);
    return {{random_array(r, s, -2.5, 2.5)}, [](Graph&, auto& v) { return mean(smooth_l1(v[0])); }};
  }));
  out.push_back(fd_case("minimum", instances, rng, [](auto& r) -> Inputs {
    const Shape s = random_shape(r);
    Array a = random_array(r, s), b = random_array(r, s);
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (std::fabs(a[i] - b[i]) < 0.05) b.at(i) = a[i] + 0.2;
    }
    const Array w = random_array(r, s);
    return {{a, b}, [w](Graph& g, auto& v) { return sum(mul(minimum(v[0], v[1]), g.constant(w))); }};
  }));
  out.push_back(fd_case("concat, slice", instances, rng, [](auto& r) -> Inputs {
    const Shape s = random_shape(r, 2);
    Shape s2 = s;
    s2[0] += 1;
    return {{random_array(r, s), random_array(r, s2)}, [](Graph&, auto& v) {
              auto c = concat({v[0], v[1]}, 0);
              return add(sum(square(slice(c, 0, 1, c.shape()[0]))), mean(c));
            }};
  }));
  out.push_back(fd_case("reshape, transpose, broadcast", instances, rng, [](auto& r) -> Inputs {
    std::uniform_int_distribution<std::size_t> d(1, 4);
    const std::size_t a = d(r), b = d(r), n = d(r);
    const Array w = random_array(r, Shape{n, b, a});
    return {{random_array(r, Shape{a * b})},
            [=](Graph& g, auto& v) { return sum(mul(broadcast(transpose(reshape(v[0], Shape{a, b})), n), g.constant(w))); }};
  }));
  out.push_back(fd_case("upsample_nearest", instances, rng, [](auto& r) -> Inputs {
    const Shape s = random_shape(r);
    Shape up = s;
    up.back() *= 2;
    const Array w = random_array(r, up);
    return {{random_array(r, s)}, [w](Graph& g, auto& v) { return sum(mul(upsample_nearest(v[0], 2), g.constant(w))); }};
  }));
  out.push_back(fd_case("rot6d_to_matrix", instances, rng, [](auto& r) -> Inputs {
    const Array w = random_array(r, Shape{3, 3, 3});
    return {{random_array(r, Shape{3, 6})}, [w](Graph& g, auto& v) { return sum(mul(kin_ops::rot6d_to_matrix(v[0]), g.constant(w))); }};
  }));
  out.push_back(fd_case("forward_kinematics", instances, rng, [](auto& r) -> Inputs {
    const PoseFrame p = random_pose(r);
    const Array w = random_array(r, Shape{1, kJoints, 3});
    return {{Array(Shape{1, kThetaDim}, std::vector<double>(p.theta.begin(), p.theta.end())),
             Array(Shape{1, kBones}, std::vector<double>(p.beta.begin(), p.beta.end())),
             Array(Shape{1, 3}, std::vector<double>(p.psi.begin(), p.psi.end()))},
            [w](Graph& g, auto& v) {
              return sum(mul(kin_ops::forward_kinematics(Skeleton::standard(), v[0], v[1], v[2]), g.constant(w)));
            }};
  }));
  out.push_back(fd_case("project", instances, rng, [](auto& r) -> Inputs {
    Array pts = random_array(r, Shape{2, 4, 3});
    for (std::size_t k = 0; k < 8; ++k) pts.at(k * 3 + 2) = 2.0 + std::fabs(pts[k * 3 + 2]);
    const Array w = random_array(r, Shape{2, 4, 2});
    return {{pts}, [w](Graph& g, auto& v) { return sum(mul(scale(kin_ops::project(Camera{}, v[0]), 1e-3), g.constant(w))); }};
  }));
  out.push_back(fd_case("L_2D (reprojection)", instances, rng, [](auto& r) -> Inputs {
    const PersonProfile prof = PersonProfile::random(3, r());
    const auto frames = generate_motion(prof, 2, kStreamFps, r);
    DomainShift shift;
    shift.dropout_prob = 0.2;
    const auto obs = observe(frames, Camera{}, shift, r);
    const KeypointTargets targets = keypoint_targets(obs);
    Array th({2, kThetaDim}), be({2, kBetaDim}), ps({2, 3});
    std::normal_distribution<double> nz(0.0, 0.05);
    for (std::size_t i = 0; i < 2; ++i) {
      for (std::size_t k = 0; k < kThetaDim; ++k) th.at(i * kThetaDim + k) = frames[i].theta[k] + nz(r);
      for (std::size_t k = 0; k < kBetaDim; ++k) be.at(i * kBetaDim + k) = frames[i].beta[k] * (1.0 + nz(r));
      for (std::size_t k = 0; k < 3; ++k) ps.at(i * 3 + k) = frames[i].psi[k] + nz(r);
    }
    return {{th, be, ps}, [targets](Graph&, auto& v) {
              return reprojection_loss(Camera{}, Skeleton::standard(), PoseOutputs{v[0], v[1], v[2]}, targets);
            }};
  }));

  // L_F: small F, real observations, targets from the denoiser and codebook.
  {
    AdaptConfig cfg;
    cfg.cycles = 3;
    cfg.deterministic = true;
    double worst = 0.0;
    for (int trial = 0; trial < instances; ++trial) {
      const PretrainedModels pre = tiny_models(seed * 131 + 100 + static_cast<std::uint64_t>(trial), 4);
      AdaptState s(pre, cfg);
      const BatchInputs in = prepare_batch(first_batch(seed * 131 + 200 + static_cast<std::uint64_t>(trial)), cfg.camera);
      const CycleTargets cyc = refresh_targets(s, in, test_windows(s.f, in), cfg);
      const std::vector<std::size_t> frames{static_cast<std::size_t>(trial) % kBatchFrames, 40, 77};
      worst = std::max(worst, max_fd_error(jittered(s.f.params, rng), [&](Graph&, const std::vector<Var>& v) {
                         return f_loss(Bound{v}, in, cyc, frames, cfg);
                       }));
    }
    out.push_back({"grad L_F", worst < 1e-4, sci("worst relative error", worst) + " over " + std::to_string(instances) + " instances"});
  }
  // L_M: small denoiser, masked windows, two test windows plus one replay window.
  {
    double worst = 0.0;
    for (int trial = 0; trial < instances; ++trial) {
      const MotionDenoiser m({3, 2}, rng);
      const Array clean = random_array(rng, {3, kWindowFrames, kPhiDim});
      Array masked = clean;
      std::bernoulli_distribution drop(0.25);
      for (std::size_t w = 0; w < 3 * kWindowFrames; ++w) {
        if (!drop(rng)) continue;
        for (std::size_t c = 0; c < kPhiDim; ++c) masked.at(w * kPhiDim + c) = 0.0;
      }
      worst = std::max(worst, max_fd_error(jittered(m.params, rng), [&](Graph&, const std::vector<Var>& v) {
                         return m_loss(Bound{v}, masked, clean, 2);
                       }));
    }
    out.push_back({"grad L_M", worst < 1e-4, sci("worst relative error", worst) + " over " + std::to_string(instances) + " instances"});
  }
  // stop_gradient: the forward value passes through, the gradient does not.
  {
    bool ok = true;
    for (int trial = 0; trial < instances; ++trial) {
      const Shape s = random_shape(rng);
      const Array x = random_array(rng, s);
      Graph g;
      const Var v = g.input(x);
      const Var sg = stop_gradient(v);
      ok = ok && bit_equal(sg.value(), x);
      g.backward(sum(mul(sg, v)));
      const Array grad = g.grad(v);
      for (std::size_t i = 0; i < x.size(); ++i) ok = ok && grad[i] == x[i];
    }
    out.push_back({"stop_gradient contract", ok, "d/dx sum(sg(x) * x) == x exactly"});
  }
  return out;
}

// ------------------------------------------------------------ quantization

std::vector<Result> quantization_suite(std::uint64_t seed, int instances) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> k_d(1, 3), nc_d(1, 8), d_d(1, 6);
  std::size_t mismatches = 0;
  double worst_identity = 0.0;
  for (int trial = 0; trial < instances; ++trial) {
    ResidualCodebook cb({k_d(rng), nc_d(rng), d_d(rng)});
    for (auto& l : cb.layers) l = random_array(rng, l.shape());
    const Array zs = random_array(rng, {1, cb.config.dim}, -2.0, 2.0);
    const std::vector<double> z(zs.data().begin(), zs.data().end());
    const Quantized q = quantize(cb, z);
    std::vector<double> r = z;
    for (std::size_t layer = 0; layer < cb.depth(); ++layer) {
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < cb.config.codes; ++c) {
        double s = 0.0;
        for (std::size_t j = 0; j < r.size(); ++j) {
          const double e = r[j] - cb.layers[layer][c * r.size() + j];
          s += e * e;
        }
        if (s < best_d) {
          best_d = s;
          best = c;
        }
      }
      if (q.codes[layer] != best) ++mismatches;
      for (std::size_t j = 0; j < r.size(); ++j) r[j] -= cb.layers[layer][best * r.size() + j];
    }
    for (std::size_t j = 0; j < z.size(); ++j) worst_identity = std::max(worst_identity, std::fabs(q.c_sum[j] + q.residual[j] - z[j]));
  }
  return {
      {"quantize vs exhaustive search", mismatches == 0,
       std::to_string(mismatches) + " code mismatches over " + std::to_string(instances) + " instances"},
      {"reconstruction identity", worst_identity <= 1e-12, sci("max |sum c + r - z|", worst_identity)},
  };
}

// ------------------------------------------------------------ EMA

std::vector<Result> ema_suite(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Result> out;
  for (double mu : {0.99, 0.999}) {
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
      ResidualCodebook cb({2, 4, 3});
      for (auto& l : cb.layers) l = random_array(rng, l.shape());
      const ResidualCodebook before = cb;
      std::vector<Assignment> as;
      std::uniform_int_distribution<std::size_t> layer_d(0, 1), code_d(0, 3), count_d(1, 6);
      const std::size_t n = count_d(rng);
      for (std::size_t i = 0; i < n; ++i) {
        const Array res = random_array(rng, {3}, -2.0, 2.0);
        as.push_back({layer_d(rng), code_d(rng), std::vector<double>(res.data().begin(), res.data().end())});
      }
      ema_update(cb, as, mu);
      for (std::size_t l = 0; l < 2; ++l) {
        for (std::size_t c = 0; c < 4; ++c) {
          std::vector<double> mean(3, 0.0);
          std::size_t cnt = 0;
          for (const auto& a : as) {
            if (a.layer != l || a.code != c) continue;
            for (std::size_t j = 0; j < 3; ++j) mean[j] += a.residual[j];
            ++cnt;
          }
          for (std::size_t j = 0; j < 3; ++j) {
            const double old = before.layers[l][c * 3 + j];
            const double want = cnt ? mu * old + (1 - mu) * mean[j] / static_cast<double>(cnt) : old;
            worst = std::max(worst, std::fabs(cb.layers[l][c * 3 + j] - want));
          }
        }
      }
    }
    char name[64];
    std::snprintf(name, sizeof name, "ema_update closed form (mu=%g)", mu);
    out.push_back({name, worst <= 1e-12, sci("max deviation", worst) + " over 50 updates"});
  }
  return out;
}

// ------------------------------------------------------------ soft reset

std::vector<Result> soft_reset_suite(std::uint64_t seed) {
  const PretrainedModels pre = tiny_models(seed + 16, 16);
  const ObservedBatch batch = first_batch(seed + 17);
  auto after = [&](bool soft, double mu) {
    AdaptConfig cfg;
    cfg.cycles = 3;
    cfg.deterministic = true;
    cfg.use_soft_reset = soft;
    cfg.mu_f = mu;
    AdaptState s(pre, cfg);
    std::mt19937_64 rng(seed + 18);
    adapt_batch(s, batch, cfg, rng);
    return snapshot(s.f.params);
  };
  const WeightSnapshot f_pre = snapshot(pre.f.params);
  const WeightSnapshot adapted = after(false, 0.0);
  const bool moved = !bit_equal(adapted, f_pre);

  double worst = 0.0;
  const WeightSnapshot blend = after(true, 0.95);
  for (std::size_t i = 0; i < blend.values.size(); ++i) {
    const double want = 0.95 * f_pre.values[i] + 0.05 * adapted.values[i];
    worst = std::max(worst, std::fabs(blend.values[i] - want) / std::max(1.0, std::fabs(want)));
  }
  return {
      {"soft reset mu_F=1 restores F_pre", moved && bit_equal(after(true, 1.0), f_pre), "bit-identical to the batch-start weights"},
      {"soft reset mu_F=0 keeps adapted F", moved && bit_equal(after(true, 0.0), adapted), "bit-identical to the adapted weights"},
      {"soft reset mu_F=0.95 blend", worst <= 1e-15 && bit_equal(blend, ema_blend(f_pre, adapted, 0.95)),
       sci("max relative deviation from 0.95*F_pre + 0.05*F", worst)},
  };
}

// ------------------------------------------------------------ geometry

std::vector<Result> geometry_suite(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Result> out;
  const auto& skel = Skeleton::standard();

  double worst_rot = 0.0;
  for (int i = 0; i < 100; ++i) {
    const Eigen::Matrix3d r = random_rotation(rng);
    worst_rot = std::max(worst_rot, (rot6d_to_matrix(matrix_to_rot6d(r)) - r).cwiseAbs().maxCoeff());
  }
  out.push_back({"6D rotation round trip", worst_rot < 1e-9, sci("max entry error", worst_rot) + " over 100 rotations"});

  double worst_phi = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const PersonProfile prof = PersonProfile::random(static_cast<std::uint32_t>(trial), rng());
    const MotionGenerator gen(prof);
    std::uniform_int_distribution<std::size_t> start(0, 20000);
    const std::size_t s0 = start(rng);
    MotionWindow w;
    for (std::size_t i = 0; i < kWindowFrames; ++i) w.frames.push_back(gen.frame(s0 + 2 * i));
    const PhiSequence p = to_phi(w, skel);
    const double yaw0 = yaw_of(rot6d_to_matrix(std::span<const double, 6>(w.frames[0].theta.data(), 6)));
    const auto thetas = from_phi(p, yaw0);
    for (std::size_t i = 0; i < kWindowFrames; ++i) {
      for (std::size_t k = 0; k < kThetaDim; ++k) worst_phi = std::max(worst_phi, std::fabs(thetas[i][k] - w.frames[i].theta[k]));
    }
  }
  out.push_back({"to_phi/from_phi round trip", worst_phi < 1e-5, sci("max theta error", worst_phi) + " over 20 windows"});

  // Procrustes minimises summed squared distance over similarity transforms,
  // and root alignment is one such transform, so this ordering always holds.
  std::size_t sq_violations = 0;
  double worst_sim = 0.0;
  std::uniform_real_distribution<double> sc(0.5, 2.0);
  for (int i = 0; i < 100; ++i) {
    const auto [pred, gt] = random_joint_pair(rng);
    if (pa_squared_error(pred, gt) > root_squared_error(pred, gt) * (1 + 1e-12) + 1e-18) ++sq_violations;
    const Eigen::Matrix3d r = random_rotation(rng);
    const double k = sc(rng);
    Joints sim = gt;
    for (std::size_t j = 0; j < kJoints; ++j) sim.row(j) = (k * r * gt.row(j).transpose()).transpose() + Eigen::RowVector3d(1, 2, 3);
    worst_sim = std::max(worst_sim, mpjpe_pa(sim, gt));
  }
  out.push_back({"PA squared error <= root-aligned squared error", sq_violations == 0,
                 std::to_string(sq_violations) + " violations over 100 pairs"});
  out.push_back({"MPJPE-PA zero under similarity", worst_sim < 1e-6, sci("max MPJPE-PA (mm)", worst_sim) + " over 100 transforms"});
  return out;
}

Result mpjpe_pa_pairs(std::uint64_t seed, int pairs) {
  std::mt19937_64 rng(seed);
  int violations = 0;
  double worst = 0.0;
  for (int i = 0; i < pairs; ++i) {
    const auto [pred, gt] = random_joint_pair(rng);
    const double m = mpjpe(pred, gt), pa = mpjpe_pa(pred, gt);
    if (pa > m) {
      ++violations;
      worst = std::max(worst, pa - m);
    }
  }
  return {"MPJPE-PA <= MPJPE", violations == 0,
          std::to_string(violations) + " violations over " + std::to_string(pairs) + " pairs" +
              (violations ? sci(", worst excess (mm)", worst) : std::string())};
}

}  // namespace mtta::checks
