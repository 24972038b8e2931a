#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include <Eigen/Geometry>

#include "doctest.h"
#include "mtta/stream.hpp"

using namespace mtta;

namespace {

Eigen::Matrix3d rot(const PoseFrame& f, std::size_t j) {
  return rot6d_to_matrix(std::span<const double, 6>(f.theta.data() + 6 * j, 6));
}

double angle_between(const Eigen::Matrix3d& a, const Eigen::Matrix3d& b) {
  return Eigen::AngleAxisd(a.transpose() * b).angle();
}

bool frames_equal(const PoseFrame& a, const PoseFrame& b) {
  return a.theta == b.theta && a.beta == b.beta && a.psi == b.psi;
}

}  // namespace

TEST_CASE("profile validation") {
  const PersonProfile p = PersonProfile::random(3, 42);
  p.validate();
  const PersonProfile q = PersonProfile::random(3, 42);
  CHECK(p.beta == q.beta);
  CHECK(p.primitives[2].frequency == q.primitives[2].frequency);
  CHECK(PersonProfile::random(4, 42).beta != p.beta);
  const auto& skel = Skeleton::standard();
  for (std::size_t j = 1; j < kJoints; ++j) CHECK(p.beta[j - 1] == p.beta[skel.mirror[j] - 1]);

  PersonProfile bad = p;
  bad.primitives[0].weight += 0.1;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = p;
  bad.beta[4] = 2.5;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  DomainShift s;
  s.dropout_prob = 1.2;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  CHECK(DomainShift::source() == DomainShift{});
}

TEST_CASE("pure sway moves only the pelvis yaw and its counter-rotations") {
  const MotionGenerator gen(PersonProfile::single(Primitive::Sway, 0.25, 0.5));
  const PoseFrame f0 = gen.frame(0);
  bool yaw_moved = false;
  for (std::size_t i = 1; i < 300; ++i) {
    const PoseFrame f = gen.frame(i);
    for (std::size_t j : {1, 2, 3, 4, 5, 6, 7, 8, 10, 11, 13, 14, 15, 16, 17, 18, 19, 20, 21}) {
      CHECK((rot(f, j) - rot(f0, j)).norm() == 0.0);
    }
    for (std::size_t j : {4, 5}) CHECK((rot(f, j) - Eigen::Matrix3d::Identity()).norm() < 1e-15);
    yaw_moved = yaw_moved || std::fabs(yaw_of(rot(f, 0)) - yaw_of(rot(f0, 0))) > 0.01;
    // Pelvis stays upright: rotation purely about y.
    CHECK(std::fabs(rot(f, 0)(1, 1) - 1.0) < 1e-12);
  }
  CHECK(yaw_moved);
}

TEST_CASE("generator determinism and continuity") {
  for (std::uint32_t id = 0; id < 8; ++id) {
    const PersonProfile p = PersonProfile::random(id, 100 + id);
    std::mt19937_64 a(id), b(id);
    const auto m1 = generate_motion(p, 1500, kStreamFps, a);
    const auto m2 = generate_motion(p, 1500, kStreamFps, b);
    double worst = 0.0;
    for (std::size_t i = 0; i < m1.size(); ++i) {
      CHECK(frames_equal(m1[i], m2[i]));
      CHECK(m1[i].beta == p.beta);
      if (i == 0) continue;
      for (std::size_t j = 0; j < kJoints; ++j) worst = std::max(worst, angle_between(rot(m1[i - 1], j), rot(m1[i], j)));
    }
    CHECK(worst < 0.2);
  }
  std::mt19937_64 rng(0);
  CHECK_THROWS(generate_motion(PersonProfile::random(0, 0), 0, kStreamFps, rng));
}

TEST_CASE("walk frequency recovered from knee zero crossings") {
  for (double freq : {0.7, 0.9, 1.1}) {
    const MotionGenerator gen(PersonProfile::single(Primitive::Walk, freq, 0.45));
    const std::size_t n = 60 * 30;
    std::vector<double> knee(n);
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      knee[i] = Eigen::AngleAxisd(rot(gen.frame(i), 4)).angle();
      mean += knee[i] / static_cast<double>(n);
    }
    int crossings = 0;
    for (std::size_t i = 1; i < n; ++i) crossings += ((knee[i - 1] - mean) * (knee[i] - mean) < 0.0) ? 1 : 0;
    const double est = crossings / (2.0 * 60.0);
    CHECK(std::fabs(est - freq) / freq < 0.05);
  }
}

TEST_CASE("observation model") {
  const Camera cam;
  std::mt19937_64 rng(1);
  const auto gt = generate_motion(PersonProfile::random(1, 1), 50, kStreamFps, rng);

  SUBCASE("zero shift and zero noise gives exact projections") {
    DomainShift s;
    s.noise_scale = 0.0;
    const auto obs = observe(gt, cam, s, rng);
    for (std::size_t i = 0; i < gt.size(); ++i) {
      const Projection p = project_2d(cam, forward_kinematics(Skeleton::standard(), gt[i]));
      CHECK((obs[i].keypoints - p.uv).norm() == 0.0);
      for (double c : obs[i].confidence) CHECK(c == 1.0);
    }
  }
  SUBCASE("dropout one removes every detection") {
    DomainShift s;
    s.dropout_prob = 1.0;
    for (const auto& o : observe(gt, cam, s, rng)) {
      for (double c : o.confidence) CHECK(c == 0.0);
      CHECK(o.keypoints.norm() == 0.0);
    }
  }
  SUBCASE("bias, warp and nuisance offset") {
    DomainShift s;
    s.noise_scale = 0.0;
    s.keypoint_bias = {3.0, -4.0};
    s.nuisance_offset.fill(2.0);
    const auto o = observe_frame(gt[0], cam, s, rng);
    const Projection p = project_2d(cam, forward_kinematics(Skeleton::standard(), gt[0]));
    CHECK(o.keypoints(5, 0) - p.uv(5, 0) == doctest::Approx(3.0));
    CHECK(o.confidence[5] == doctest::Approx(std::exp(-0.5)));
    double mean_n = 0.0;
    for (double v : o.nuisance) mean_n += v / kNuisanceDim;
    CHECK(std::fabs(mean_n - 2.0) < 0.2);

    DomainShift w;
    w.noise_scale = 0.0;
    w.radial_warp = 0.5;
    const auto ow = observe_frame(gt[0], cam, w, rng);
    for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(kJoints); ++j) {
      const Eigen::Vector2d off = p.uv.row(j).transpose() - cam.principal_point;
      const Eigen::Vector2d want = cam.principal_point + off * (1.0 + 0.5 * off.squaredNorm() / 1e6);
      CHECK((ow.keypoints.row(j).transpose() - want).norm() < 1e-9);
    }
  }
  SUBCASE("mean reprojection error is linear in noise scale") {
    std::vector<double> xs{0.5, 1.0, 2.0, 4.0}, ys;
    for (double scale : xs) {
      DomainShift s;
      s.noise_scale = scale;
      double err = 0.0;
      std::size_t n = 0;
      for (int rep = 0; rep < 20; ++rep) {
        const auto obs = observe(gt, cam, s, rng);
        for (std::size_t i = 0; i < gt.size(); ++i) {
          const Projection p = project_2d(cam, forward_kinematics(Skeleton::standard(), gt[i]));
          for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(kJoints); ++j) {
            err += (obs[i].keypoints.row(j) - p.uv.row(j)).norm();
            ++n;
          }
        }
      }
      ys.push_back(err / static_cast<double>(n));
    }
    const double mx = (xs[0] + xs[1] + xs[2] + xs[3]) / 4, my = (ys[0] + ys[1] + ys[2] + ys[3]) / 4;
    double sxy = 0, sxx = 0, syy = 0;
    for (int i = 0; i < 4; ++i) {
      sxy += (xs[i] - mx) * (ys[i] - my);
      sxx += (xs[i] - mx) * (xs[i] - mx);
      syy += (ys[i] - my) * (ys[i] - my);
    }
    const double r2 = sxy * sxy / (sxx * syy);
    CHECK(r2 > 0.95);
    // Slope of a 2-D Gaussian's mean radius: 2 px * sqrt(pi / 2).
    CHECK(sxy / sxx == doctest::Approx(2.0 * std::sqrt(std::numbers::pi / 2.0)).epsilon(0.03));
  }
}

TEST_CASE("person stream batching") {
  const PersonProfile p = PersonProfile::random(2, 9);
  PersonStream s = stream_person(p, DomainShift::source(), 1.0, 77);
  CHECK(s.total_batches() == 11);
  std::size_t n = 0;
  std::vector<StreamBatch> first;
  while (auto b = s.next()) {
    CHECK(b->observed.frames.size() == kBatchFrames);
    CHECK(b->gt.size() == kBatchFrames);
    CHECK(b->observed.batch_idx == n);
    CHECK(b->observed.person_id == 2);
    for (const auto& g : b->gt) CHECK(g.beta == p.beta);
    if (n < 2) first.push_back(std::move(*b));
    ++n;
  }
  CHECK(n == 11);
  CHECK_FALSE(s.next().has_value());

  PersonStream again = stream_person(p, DomainShift::source(), 1.0, 77);
  const StreamBatch b0 = *again.next();
  for (std::size_t i = 0; i < kBatchFrames; ++i) {
    CHECK(frames_equal(b0.gt[i], first[0].gt[i]));
    CHECK((b0.observed.frames[i].keypoints - first[0].observed.frames[i].keypoints).norm() == 0.0);
  }
  // Consecutive batches continue the same timeline.
  CHECK(angle_between(rot(first[0].gt.back(), 1), rot(first[1].gt.front(), 1)) < 0.2);
  CHECK(stream_person(p, DomainShift::source(), 10.0, 1).total_batches() == 112);
  CHECK_THROWS(stream_person(p, DomainShift::source(), 0.0, 1));
}

TEST_CASE("batch dump files") {
  const PersonProfile p = PersonProfile::random(5, 3);
  DomainShift shift;
  shift.dropout_prob = 0.2;
  PersonStream s = stream_person(p, shift, 0.2, 4);
  const StreamBatch b = *s.next();
  const auto dir = std::filesystem::temp_directory_path();
  const auto with_gt = dir / "mtta_batch_gt.bin", without = dir / "mtta_batch_obs.bin";
  write_batch(with_gt, b, true);
  write_batch(without, b, false);

  const ObservedBatch o = read_observed_batch(with_gt);
  CHECK(o.person_id == 5);
  CHECK(o.frames.size() == kBatchFrames);
  for (std::size_t i = 0; i < kBatchFrames; ++i) {
    CHECK((o.frames[i].keypoints - b.observed.frames[i].keypoints).norm() == 0.0);
    CHECK(o.frames[i].confidence == b.observed.frames[i].confidence);
    CHECK(o.frames[i].nuisance == b.observed.frames[i].nuisance);
  }
  const StreamBatch e = read_eval_batch(with_gt);
  for (std::size_t i = 0; i < kBatchFrames; ++i) CHECK(frames_equal(e.gt[i], b.gt[i]));
  CHECK(read_observed_batch(without).frames.size() == kBatchFrames);
  CHECK_THROWS_AS(read_eval_batch(without), std::runtime_error);
  CHECK(std::filesystem::file_size(with_gt) == 24 + kBatchFrames * 8 * (74 + 156));
  std::filesystem::remove(with_gt);
  std::filesystem::remove(without);
  CHECK_THROWS(read_observed_batch(with_gt));
}
