#include <cmath>
#include <random>

#include <Eigen/Geometry>
#include <Eigen/SVD>

#include "doctest.h"
#include "fd_check.hpp"
#include "mtta/kinematics.hpp"
#include "mtta/ops.hpp"

using namespace mtta;

namespace {

Eigen::Matrix3d random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> ang(0.0, M_PI);
  Eigen::Vector3d axis(nd(rng), nd(rng), nd(rng));
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

Array theta_array(const PoseFrame& p) { return Array(Shape{1, kThetaDim}, std::vector<double>(p.theta.begin(), p.theta.end())); }
Array beta_array(const PoseFrame& p) { return Array(Shape{1, kBones}, std::vector<double>(p.beta.begin(), p.beta.end())); }
Array psi_array(const PoseFrame& p) { return Array(Shape{1, 3}, std::vector<double>(p.psi.begin(), p.psi.end())); }

}  // namespace

TEST_CASE("skeleton is a pelvis-rooted tree with mirrored sides") {
  const auto& s = Skeleton::standard();
  CHECK(s.parent[0] == -1);
  for (std::size_t j = 1; j < kJoints; ++j) {
    CHECK(s.parent[j] >= 0);
    CHECK(static_cast<std::size_t>(s.parent[j]) < j);
    CHECK(s.rest_length[j - 1] > 0.0);
    CHECK(s.mirror[s.mirror[j]] == j);
    const auto m = s.mirror[j];
    const Eigen::Vector3d a = s.rest_offset(j), b = s.rest_offset(m);
    CHECK(a.x() == doctest::Approx(-b.x()));
    CHECK(a.y() == doctest::Approx(b.y()));
  }
  CHECK(s.mirror[1] == 2);
  CHECK(s.mirror[20] == 21);
}

TEST_CASE("rot6d examples") {
  const std::array<double, 6> id{1, 0, 0, 0, 1, 0};
  CHECK(rot6d_to_matrix(id).isApprox(Eigen::Matrix3d::Identity(), 1e-15));
  const std::array<double, 6> z90{0, 1, 0, -1, 0, 0};
  const Eigen::Matrix3d r = rot6d_to_matrix(z90);
  CHECK((r.transpose() * r - Eigen::Matrix3d::Identity()).norm() < 1e-12);
  CHECK((r * Eigen::Vector3d::UnitX() - Eigen::Vector3d::UnitY()).norm() < 1e-12);
  CHECK(r.determinant() == doctest::Approx(1.0).epsilon(1e-12));
  const auto back = matrix_to_rot6d(Eigen::Matrix3d::Identity());
  CHECK(back == id);
  CHECK_THROWS_AS(rot6d_to_matrix(std::array<double, 6>{0, 0, 0, 0, 1, 0}), GeometryError);
  CHECK_THROWS_AS(rot6d_to_matrix(std::array<double, 6>{1, 0, 0, 2, 0, 0}), GeometryError);
  CHECK_THROWS_AS(matrix_to_rot6d(2.0 * Eigen::Matrix3d::Identity()), GeometryError);
}

TEST_CASE("rot6d outputs are proper rotations and round-trip") {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> nd;
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    std::array<double, 6> raw;
    for (auto& v : raw) v = nd(rng);
    const Eigen::Matrix3d m = rot6d_to_matrix(raw);
    CHECK((m.transpose() * m - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(std::fabs(m.determinant() - 1.0) < 1e-10);
    // Projection property: applying the map again changes nothing.
    CHECK((rot6d_to_matrix(matrix_to_rot6d(m)) - m).cwiseAbs().maxCoeff() < 1e-12);

    const Eigen::Matrix3d r = random_rotation(rng);
    worst = std::max(worst, (rot6d_to_matrix(matrix_to_rot6d(r)) - r).cwiseAbs().maxCoeff());
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("forward kinematics identities") {
  const auto& s = Skeleton::standard();
  const PoseFrame rest = PoseFrame::rest();
  const Joints j = forward_kinematics(s, rest);
  CHECK(j.row(0).norm() == 0.0);
  for (std::size_t k = 1; k < kJoints; ++k) {
    const Eigen::Vector3d expected = j.row(s.parent[k]).transpose() + s.rest_offset(k);
    CHECK((j.row(k).transpose() - expected).norm() < 1e-14);
  }
  PoseFrame doubled = rest;
  doubled.beta.fill(2.0);
  const Joints j2 = forward_kinematics(s, doubled);
  CHECK((j2 - 2.0 * j).cwiseAbs().maxCoeff() < 1e-14);

  std::mt19937_64 rng(4);
  PoseFrame p = random_pose(rng);
  const Joints base = forward_kinematics(s, p);
  p.psi[0] += 0.25;
  p.psi[2] -= 1.0;
  const Joints moved = forward_kinematics(s, p);
  for (std::size_t k = 0; k < kJoints; ++k) {
    CHECK(moved(k, 0) == doctest::Approx(base(k, 0) + 0.25).epsilon(1e-14));
    CHECK(moved(k, 1) == base(k, 1));
    CHECK(moved(k, 2) == doctest::Approx(base(k, 2) - 1.0).epsilon(1e-14));
  }
}

TEST_CASE("batched FK matches the scalar version and finite differences") {
  const auto& s = Skeleton::standard();
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    PoseFrame p = random_pose(rng);
    std::normal_distribution<double> nd(0.0, 0.1);
    for (auto& v : p.theta) v += nd(rng);  // non-unit 6D inputs exercise the Gram-Schmidt path
    ad::Graph g;
    auto joints = kin_ops::forward_kinematics(s, g.input(theta_array(p)), g.input(beta_array(p)), g.input(psi_array(p)));
    const Joints ref = forward_kinematics(s, p);
    for (std::size_t k = 0; k < kJoints; ++k) {
      for (int c = 0; c < 3; ++c) CHECK(joints.value()[k * 3 + c] == doctest::Approx(ref(k, c)).epsilon(1e-14));
    }
    const Array w = mtta::testing::random_array(rng, Shape{1, kJoints, 3});
    const double err = mtta::testing::max_fd_error({theta_array(p), beta_array(p), psi_array(p)}, [&](ad::Graph& gg, auto& v) {
      return ad::sum(ad::mul(kin_ops::forward_kinematics(s, v[0], v[1], v[2]), gg.constant(w)));
    });
    CHECK(err < 1e-4);
  }
}

TEST_CASE("batched rot6d and projection gradients") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const Array r6 = mtta::testing::random_array(rng, Shape{3, 6});
    const Array w = mtta::testing::random_array(rng, Shape{3, 3, 3});
    CHECK(mtta::testing::max_fd_error({r6}, [&](ad::Graph& g, auto& v) {
            return ad::sum(ad::mul(kin_ops::rot6d_to_matrix(v[0]), g.constant(w)));
          }) < 1e-4);
    Array pts = mtta::testing::random_array(rng, Shape{2, 4, 3});
    for (std::size_t k = 0; k < 8; ++k) pts.at(k * 3 + 2) = 2.0 + std::fabs(pts[k * 3 + 2]);
    const Array w2 = mtta::testing::random_array(rng, Shape{2, 4, 2});
    Camera cam;
    CHECK(mtta::testing::max_fd_error({pts}, [&](ad::Graph& g, auto& v) {
            return ad::sum(ad::mul(ad::scale(kin_ops::project(cam, v[0]), 1e-3), g.constant(w2)));
          }) < 1e-4);
  }
}

TEST_CASE("pinhole projection examples") {
  Camera cam;
  Joints j = Joints::Zero();
  for (std::size_t k = 0; k < kJoints; ++k) j(k, 2) = 2.0;
  j(1, 0) = 1.0;
  const auto p = project_2d(cam, j);
  CHECK(p.uv(0, 0) == 500.0);
  CHECK(p.uv(0, 1) == 500.0);
  CHECK(p.uv(1, 0) == 1000.0);
  CHECK(p.uv(1, 1) == 500.0);
  CHECK(p.visible[0]);
  CHECK_FALSE(p.visible[1]);  // u == width lies outside [0, width)
  // Moving along the camera ray keeps pixel coordinates.
  const auto p2 = project_2d(cam, 3.0 * j);
  CHECK((p2.uv - p.uv).cwiseAbs().maxCoeff() < 1e-12);
  j(5, 2) = 0.0;
  CHECK_THROWS_AS(project_2d(cam, j), GeometryError);
}

TEST_CASE("mpjpe examples") {
  std::mt19937_64 rng(2);
  const Joints gt = forward_kinematics(Skeleton::standard(), random_pose(rng));
  CHECK(mpjpe(gt, gt) == 0.0);
  Joints shifted = gt;
  shifted.rowwise() += Eigen::RowVector3d(0.3, -0.1, 0.7);
  CHECK(mpjpe(shifted, gt) < 1e-9);
  Joints bumped = gt;
  bumped(7, 1) += 0.010;
  CHECK(mpjpe(bumped, gt) == doctest::Approx(10.0 / 22.0).epsilon(1e-9));
  std::array<bool, kJoints> none{};
  CHECK_THROWS_AS(mpjpe(gt, gt, none), GeometryError);
}

TEST_CASE("mpjpe_pa properties") {
  std::mt19937_64 rng(6);
  const auto& s = Skeleton::standard();
  std::uniform_real_distribution<double> sc(0.5, 2.0);
  for (int i = 0; i < 100; ++i) {
    const PoseFrame a = random_pose(rng);
    PoseFrame b = a;
    std::normal_distribution<double> nd(0.0, 0.3);
    for (auto& v : b.theta) v += nd(rng);
    const Joints gt = forward_kinematics(s, a);
    const Joints pred = forward_kinematics(s, b);
    CHECK(mpjpe_pa(pred, gt) <= mpjpe(pred, gt) + 1e-9);

    const Eigen::Matrix3d r = random_rotation(rng);
    const double k = sc(rng);
    Joints sim = gt;
    for (std::size_t j = 0; j < kJoints; ++j) sim.row(j) = (k * r * gt.row(j).transpose()).transpose() + Eigen::RowVector3d(1, 2, 3);
    CHECK(mpjpe_pa(sim, gt) < 1e-6);
  }

  // Reflection: a solver allowed to reflect would reach zero; ours must not.
  const Joints gt = forward_kinematics(s, random_pose(rng));
  Joints mirrored = gt;
  mirrored.col(0) *= -1.0;
  const double with_fix = mpjpe_pa(mirrored, gt);
  CHECK(with_fix > 1.0);
  Eigen::Matrix<double, kJoints, 3> p = mirrored, g = gt;
  p.rowwise() -= p.colwise().mean();
  g.rowwise() -= g.colwise().mean();
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(p.transpose() * g, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Matrix3d r_free = svd.matrixV() * svd.matrixU().transpose();
  const double scale = svd.singularValues().sum() / p.squaredNorm();
  double total = 0.0;
  for (int j = 0; j < static_cast<int>(kJoints); ++j) total += (scale * r_free * p.row(j).transpose() - g.row(j).transpose()).norm();
  CHECK(1000.0 * total / kJoints < 1e-6);

  Joints line = Joints::Zero();
  for (std::size_t j = 0; j < kJoints; ++j) line(j, 0) = static_cast<double>(j);
  CHECK_THROWS_AS(mpjpe_pa(line, gt), GeometryError);
}
