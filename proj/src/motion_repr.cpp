#include "mtta/motion_repr.hpp"

#include <cmath>

#include <Eigen/Geometry>

namespace mtta {

double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * M_PI;
  a -= two_pi * std::ceil((a - M_PI) / two_pi);
  if (a <= -M_PI) a += two_pi;
  return a;
}

double yaw_of(const Eigen::Matrix3d& r) {
  const Eigen::Quaterniond q(r);
  const double norm = std::hypot(q.w(), q.y());
  if (norm < 1e-6) throw GeometryError("yaw_of: twist about +y is ill-defined for this rotation");
  return wrap_angle(2.0 * std::atan2(q.y(), q.w()));
}

PhiSequence to_phi(const MotionWindow& w, const Skeleton& skel) {
  const std::size_t t = w.frames.size();
  if (t == 0) throw GeometryError("to_phi: empty window");
  for (const auto& f : w.frames) {
    if (f.beta != w.frames.front().beta) throw GeometryError("to_phi: frames of a window must share beta");
  }
  std::vector<double> v(t * kPhiDim, 0.0);
  double prev_yaw = 0.0;
  for (std::size_t i = 0; i < t; ++i) {
    const PoseFrame& f = w.frames[i];
    double* row = v.data() + i * kPhiDim;
    const Eigen::Matrix3d pelvis = rot6d_to_matrix(std::span<const double, 6>(f.theta.data(), 6));
    const double yaw = yaw_of(pelvis);
    row[kPhiRootY] = f.psi[1];
    row[kPhiOmega] = i == 0 ? 0.0 : wrap_angle(yaw - prev_yaw);
    prev_yaw = yaw;
    const auto no_yaw = matrix_to_rot6d(rotation_y(-yaw) * pelvis);
    std::copy(no_yaw.begin(), no_yaw.end(), row + kPhiTheta);
    std::copy(f.theta.begin() + 6, f.theta.end(), row + kPhiTheta + 6);
    const Joints j = forward_kinematics(skel, f);
    for (std::size_t k = 1; k < kJoints; ++k) {
      for (int c = 0; c < 3; ++c) row[kPhiJoints + (k - 1) * 3 + c] = j(k, c) - j(0, c);
    }
  }
  return PhiSequence{Array(Shape{t, kPhiDim}, std::move(v)), std::vector<uint8_t>(t, 0)};
}

std::vector<Theta> from_phi(const PhiSequence& p, double yaw0) {
  const std::size_t t = p.frames();
  std::vector<Theta> out(t);
  double yaw = yaw0;
  for (std::size_t i = 0; i < t; ++i) {
    const double* row = p.values.data().data() + i * kPhiDim;
    yaw += row[kPhiOmega];
    const Eigen::Matrix3d no_yaw = rot6d_to_matrix(std::span<const double, 6>(row + kPhiTheta, 6));
    const auto pelvis = matrix_to_rot6d(rotation_y(yaw) * no_yaw);
    std::copy(pelvis.begin(), pelvis.end(), out[i].begin());
    std::copy(row + kPhiTheta + 6, row + kPhiTheta + kThetaDim, out[i].begin() + 6);
  }
  return out;
}

PhiSequence phi_from_values(Array values) {
  if (values.ndim() != 2 || values.dim(1) != kPhiDim) {
    throw ShapeError("phi_from_values: expected [t,197], got " + shape_str(values.shape()));
  }
  const std::size_t t = values.dim(0);
  return PhiSequence{std::move(values), std::vector<uint8_t>(t, 0)};
}

PhiSequence augment(const PhiSequence& p, std::mt19937_64& rng, double noise_sigma, double mask_prob) {
  PhiSequence out = p;
  auto data = out.values.mutable_data();
  if (noise_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, noise_sigma);
    for (auto& x : data) x += noise(rng);
  }
  if (mask_prob > 0.0) {
    std::bernoulli_distribution drop(mask_prob);
    for (std::size_t i = 0; i < out.frames(); ++i) {
      if (!drop(rng)) continue;
      out.mask[i] = 1;
      std::fill_n(data.begin() + static_cast<std::ptrdiff_t>(i * kPhiDim), kPhiDim, 0.0);
    }
  }
  return out;
}

}  // namespace mtta
