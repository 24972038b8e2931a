#pragma once

// Per-frame 197-wide motion representation fed to the motion denoiser:
//   [0]        root height (psi.y, meters)
//   [1]        pelvis yaw velocity about world +y (rad/frame, wrapped to (-pi, pi])
//   [2, 134)   6D rotations, pelvis with its yaw removed
//   [134, 197) root-relative positions of the 21 non-root joints (meters)

#include <array>
#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include "mtta/array.hpp"
#include "mtta/kinematics.hpp"

namespace mtta {

inline constexpr std::size_t kWindowFrames = 16;
inline constexpr std::size_t kPhiDim = 197;
inline constexpr std::size_t kPhiRootY = 0;
inline constexpr std::size_t kPhiOmega = 1;
inline constexpr std::size_t kPhiTheta = 2;
inline constexpr std::size_t kPhiJoints = kPhiTheta + kThetaDim;  // 134

using Theta = std::array<double, kThetaDim>;

struct MotionWindow {
  std::vector<PoseFrame> frames;
};

struct PhiSequence {
  Array values;               // [t, 197]
  std::vector<uint8_t> mask;  // 1 = frame masked out (row zeroed)

  std::size_t frames() const { return values.ndim() == 2 ? values.dim(0) : 0; }
  double at(std::size_t frame, std::size_t channel) const { return values[frame * kPhiDim + channel]; }
};

double wrap_angle(double a);  // into (-pi, pi]
// Twist angle of a rotation about world +y (swing-twist decomposition).
double yaw_of(const Eigen::Matrix3d& r);

PhiSequence to_phi(const MotionWindow& w, const Skeleton& skel);
// Recovers per-frame rotations. yaw0 seeds the accumulated pelvis yaw; the
// position channels are ignored.
std::vector<Theta> from_phi(const PhiSequence& p, double yaw0);
// Builds a sequence from raw decoder output [t,197] with no masked frames.
PhiSequence phi_from_values(Array values);

// Adds N(0, sigma) to every channel, then masks each frame with probability mask_prob.
PhiSequence augment(const PhiSequence& p, std::mt19937_64& rng, double noise_sigma = 0.015, double mask_prob = 0.25);

}  // namespace mtta
