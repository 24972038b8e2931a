#pragma once

// 22-joint skeleton, 6D rotations, forward kinematics, pinhole projection
// and the joint-error metrics.
//
// Conventions: +y is up; the camera sits at the origin looking down +z and
// image coordinates are u = f*x/z + cx, v = f*y/z + cy. Rotation matrices are
// row-major; a 6D rotation stores the first two matrix columns.

#include <array>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "mtta/graph.hpp"

namespace mtta {

class GeometryError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

inline constexpr std::size_t kJoints = 22;
inline constexpr std::size_t kBones = kJoints - 1;
inline constexpr std::size_t kThetaDim = kJoints * 6;  // 132

using Joints = Eigen::Matrix<double, static_cast<int>(kJoints), 3, Eigen::RowMajor>;
using Joints2d = Eigen::Matrix<double, static_cast<int>(kJoints), 2, Eigen::RowMajor>;

struct Skeleton {
  std::array<int, kJoints> parent{};
  // Per non-root joint j (index j-1): unit direction from the parent and base length in meters.
  std::array<Eigen::Vector3d, kBones> rest_dir{};
  std::array<double, kBones> rest_length{};
  std::array<std::string_view, kJoints> names{};
  // mirror[j] is the joint's left/right counterpart (itself on the midline).
  std::array<std::size_t, kJoints> mirror{};

  Eigen::Vector3d rest_offset(std::size_t joint) const { return rest_length[joint - 1] * rest_dir[joint - 1]; }

  // Pelvis-rooted human tree: spine x3, neck, head; per side hip, knee, ankle,
  // foot, collar, shoulder, elbow, wrist.
  static const Skeleton& standard();
};

struct PoseFrame {
  std::array<double, kThetaDim> theta{};  // per-joint 6D rotation (local)
  std::array<double, kBones> beta{};      // per-bone scale in [0.5, 2]
  std::array<double, 3> psi{};            // root translation, meters

  static PoseFrame rest(const Eigen::Vector3d& translation = Eigen::Vector3d::Zero());
  void validate() const;
};

struct Camera {
  double focal = 1000.0;
  Eigen::Vector2d principal_point{500.0, 500.0};
  Eigen::Vector2d image_size{1000.0, 1000.0};

  void validate() const;
};

// Gram-Schmidt on the two stored columns; third column by cross product.
Eigen::Matrix3d rot6d_to_matrix(std::span<const double, 6> r);
std::array<double, 6> matrix_to_rot6d(const Eigen::Matrix3d& r);
Eigen::Matrix3d axis_angle(const Eigen::Vector3d& axis_times_angle);
Eigen::Matrix3d rotation_y(double angle);

Joints forward_kinematics(const Skeleton& skel, const PoseFrame& pose);

struct Projection {
  Joints2d uv;
  std::array<bool, kJoints> visible{};
};
Projection project_2d(const Camera& cam, const Joints& joints);

// Root-aligned mean per-joint position error in millimeters.
double mpjpe(const Joints& pred, const Joints& gt, std::span<const bool> gt_valid = {});
// Error after the optimal similarity transform (rotation, uniform scale, translation).
double mpjpe_pa(const Joints& pred, const Joints& gt, std::span<const bool> gt_valid = {});

// Differentiable batched versions. Shapes: theta [N,132], beta [N,21], psi [N,3].
namespace kin_ops {

ad::Var rot6d_to_matrix(ad::Var r6d);  // [N,6] -> [N,3,3]
ad::Var forward_kinematics(const Skeleton& skel, ad::Var theta, ad::Var beta, ad::Var psi);  // -> [N,22,3]
ad::Var project(const Camera& cam, ad::Var joints);  // [N,J,3] -> [N,J,2]

}  // namespace kin_ops
}  // namespace mtta
