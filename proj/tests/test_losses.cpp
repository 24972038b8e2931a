#include <cmath>
#include <random>

#include "doctest.h"
#include "fd_check.hpp"
#include "mtta/losses.hpp"
#include "mtta/ops.hpp"
#include "mtta/stream.hpp"

using namespace mtta;
using mtta::testing::max_fd_error;

namespace {

struct Sample {
  std::vector<PoseFrame> frames;
  std::vector<ObservationFeature> obs;
};

Sample sample(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const PersonProfile p = PersonProfile::random(3, seed);
  Sample s;
  s.frames = generate_motion(p, n, kStreamFps, rng);
  DomainShift shift;
  shift.dropout_prob = 0.2;
  s.obs = observe(s.frames, Camera{}, shift, rng);
  return s;
}

// Perturbed copies of the GT so the reprojection residuals are well away from zero.
std::vector<Array> pose_inputs(const std::vector<PoseFrame>& frames, std::mt19937_64& rng) {
  const std::size_t n = frames.size();
  Array th({n, kThetaDim}), be({n, kBetaDim}), ps({n, 3});
  std::normal_distribution<double> nz(0.0, 0.05);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < kThetaDim; ++k) th.at(i * kThetaDim + k) = frames[i].theta[k] + nz(rng);
    for (std::size_t k = 0; k < kBetaDim; ++k) be.at(i * kBetaDim + k) = frames[i].beta[k] * (1.0 + nz(rng));
    for (std::size_t k = 0; k < 3; ++k) ps.at(i * 3 + k) = frames[i].psi[k] + nz(rng);
  }
  return {th, be, ps};
}

PoseFrame frame_of(const std::vector<Array>& in, std::size_t i) {
  PoseFrame f;
  for (std::size_t k = 0; k < kThetaDim; ++k) f.theta[k] = in[0][i * kThetaDim + k];
  for (std::size_t k = 0; k < kBetaDim; ++k) f.beta[k] = in[1][i * kBetaDim + k];
  for (std::size_t k = 0; k < 3; ++k) f.psi[k] = in[2][i * 3 + k];
  return f;
}

}  // namespace

TEST_CASE("keypoint targets mirror the observations") {
  const Sample s = sample(3, 11);
  const KeypointTargets t = keypoint_targets(s.obs);
  CHECK(t.keypoints.shape() == Shape{3, kJoints, 2});
  CHECK(t.confidence.shape() == Shape{3, kJoints});
  CHECK(t.keypoints[(1 * kJoints + 5) * 2 + 1] == s.obs[1].keypoints(5, 1));
  CHECK(t.confidence[2 * kJoints + 7] == s.obs[2].confidence[7]);
}

TEST_CASE("l1_mean") {
  ad::Graph g;
  const auto a = g.constant(Array::from({1.0, -2.0, 3.0}));
  const auto b = g.constant(Array::from({0.0, 0.0, 5.0}));
  CHECK(l1_mean(a, b).value().item() == doctest::Approx(5.0 / 3.0));
}

TEST_CASE("reprojection loss matches a direct per-joint computation") {
  const Sample s = sample(4, 21);
  std::mt19937_64 rng(5);
  const auto in = pose_inputs(s.frames, rng);
  const Camera cam;
  const Skeleton& skel = Skeleton::standard();

  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < s.frames.size(); ++i) {
    PoseFrame f = frame_of(in, i);
    const Projection p = project_2d(cam, forward_kinematics(skel, f));
    for (std::size_t j = 0; j < kJoints; ++j) {
      const double c = s.obs[i].confidence[j];
      const auto jj = static_cast<Eigen::Index>(j);
      num += c * (std::fabs(p.uv(jj, 0) - s.obs[i].keypoints(jj, 0)) * 2.0 / cam.image_size.x() +
                  std::fabs(p.uv(jj, 1) - s.obs[i].keypoints(jj, 1)) * 2.0 / cam.image_size.y());
      den += 2.0 * c;
    }
  }
  ad::Graph g;
  const PoseOutputs out{g.constant(in[0]), g.constant(in[1]), g.constant(in[2])};
  CHECK(reprojection_loss(cam, skel, out, keypoint_targets(s.obs)).value().item() == doctest::Approx(num / den).epsilon(1e-12));
}

TEST_CASE("reprojection loss gradient agrees with finite differences") {
  const Sample s = sample(3, 31);
  std::mt19937_64 rng(6);
  const auto targets = keypoint_targets(s.obs);
  const Camera cam;
  for (int rep = 0; rep < 3; ++rep) {
    const auto in = pose_inputs(s.frames, rng);
    const double err = max_fd_error(in, [&](ad::Graph&, const std::vector<ad::Var>& v) {
      return reprojection_loss(cam, Skeleton::standard(), PoseOutputs{v[0], v[1], v[2]}, targets);
    });
    CHECK(err < 1e-5);
  }
}

TEST_CASE("zero-confidence joints and batches contribute nothing") {
  Sample s = sample(2, 41);
  std::mt19937_64 rng(7);
  const auto in = pose_inputs(s.frames, rng);
  const Camera cam;
  auto loss = [&](const std::vector<ObservationFeature>& obs) {
    ad::Graph g;
    const PoseOutputs out{g.input(in[0]), g.input(in[1]), g.input(in[2])};
    const ad::Var l = reprojection_loss(cam, Skeleton::standard(), out, keypoint_targets(obs));
    g.backward(l);
    double gsum = 0.0;
    const Array gp = g.grad(out.psi);
    for (double x : gp.data()) gsum += std::fabs(x);
    return std::pair{l.value().item(), gsum};
  };
  SUBCASE("moving a zero-confidence keypoint changes nothing") {
    s.obs[0].confidence[4] = 0.0;
    const double base = loss(s.obs).first;
    s.obs[0].keypoints(4, 0) += 300.0;
    CHECK(loss(s.obs).first == base);
  }
  SUBCASE("all confidences zero") {
    for (auto& o : s.obs) o.confidence.fill(0.0);
    const auto [l, gsum] = loss(s.obs);
    CHECK(l == 0.0);
    CHECK(gsum == 0.0);
  }
}
