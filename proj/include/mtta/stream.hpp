#pragma once

// Synthetic people and cameras: a per-person motion generator with persistent
// shape and motion habits, a keypoint detector stand-in with controllable
// domain shift, and 160-frame streaming batches.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <vector>

#include "mtta/kinematics.hpp"
#include "mtta/networks.hpp"

namespace mtta {

inline constexpr double kStreamFps = 30.0;
inline constexpr std::size_t kBatchFrames = 160;

enum class Primitive : std::size_t { Walk = 0, Squat = 1, Reach = 2, Sway = 3 };
inline constexpr std::size_t kPrimitiveCount = 4;

// Ranges used by PersonProfile::random:
//   walk  0.7-1.1 Hz, amplitude 0.30-0.55 rad (hip swing; knees flex 1.2x, shoulders 0.5x)
//   squat 0.20-0.40 Hz, amplitude 0.40-0.80 rad (hip/knee/ankle flexion, root dip)
//   reach 0.15-0.35 Hz, amplitude 0.60-1.20 rad (alternating arm raise, elbow bend)
//   sway  0.10-0.30 Hz, amplitude 0.20-0.60 rad (pelvis yaw with spine counter-rotation)
struct PrimitiveParams {
  double weight = 0.0;
  double frequency = 1.0;  // Hz
  double amplitude = 0.0;  // rad
  double phase = 0.0;      // rad
};

struct PersonProfile {
  std::uint32_t person_id = 0;
  std::array<double, kBones> beta{};
  std::array<PrimitiveParams, kPrimitiveCount> primitives{};
  double heading = 3.14159265358979;  // base pelvis yaw; pi faces the camera
  double distance = 4.5;              // meters from the camera
  std::uint64_t seed = 0;

  void validate() const;
  static PersonProfile random(std::uint32_t person_id, std::uint64_t seed);
  // Only the named primitive active.
  static PersonProfile single(Primitive p, double frequency, double amplitude, std::uint64_t seed = 0);
};

struct DomainShift {
  Eigen::Vector2d keypoint_bias = Eigen::Vector2d::Zero();  // pixels
  double noise_scale = 1.0;                                  // times the 2 px base detector noise
  double dropout_prob = 0.0;
  double radial_warp = 0.0;
  std::array<double, kNuisanceDim> nuisance_offset{};

  void validate() const;
  bool operator==(const DomainShift&) const = default;
  // The pre-training domain: unit detector noise, every other knob zero.
  static DomainShift source() { return {}; }
};

// Evaluates the motion of one person at any frame index. Pure given the profile.
class MotionGenerator {
 public:
  explicit MotionGenerator(const PersonProfile& profile, double fps = kStreamFps);
  PoseFrame frame(std::size_t index) const;

 private:
  PersonProfile profile_;
  double fps_;
};

// Frames [0, n_frames). The rng supplies the start offset into the person's timeline.
std::vector<PoseFrame> generate_motion(const PersonProfile& profile, std::size_t n_frames, double fps, std::mt19937_64& rng);

ObservationFeature observe_frame(const PoseFrame& gt, const Camera& cam, const DomainShift& shift, std::mt19937_64& rng);
std::vector<ObservationFeature> observe(const std::vector<PoseFrame>& gt, const Camera& cam, const DomainShift& shift,
                                        std::mt19937_64& rng);

// What the adapter may see: no ground-truth fields exist on this type.
struct ObservedBatch {
  std::uint32_t person_id = 0;
  std::uint32_t batch_idx = 0;
  std::vector<ObservationFeature> frames;
};

struct StreamBatch {
  ObservedBatch observed;
  std::vector<PoseFrame> gt;
};

class PersonStream {
 public:
  PersonStream(PersonProfile profile, DomainShift shift, Camera cam, double total_minutes, std::uint64_t seed);
  std::optional<StreamBatch> next();
  std::size_t total_batches() const { return total_batches_; }

 private:
  PersonProfile profile_;
  DomainShift shift_;
  Camera cam_;
  MotionGenerator gen_;
  std::mt19937_64 rng_;
  std::size_t start_frame_ = 0;
  std::size_t total_batches_ = 0;
  std::size_t emitted_ = 0;
};

PersonStream stream_person(const PersonProfile& profile, const DomainShift& shift, double total_minutes, std::uint64_t seed,
                           const Camera& cam = {});

// Batch dump: "MTSB", u32 version, u32 person_id, u32 batch_idx, u32 frame count,
// u32 flags (bit 0: GT section present), then per frame 44 keypoint, 22
// confidence and 8 nuisance f64 values; with the flag set, a GT section
// follows with 132 + 21 + 3 f64 per frame.
void write_batch(const std::filesystem::path& path, const StreamBatch& batch, bool include_gt = true);
// Adapter-side reader: never materialises the GT section.
ObservedBatch read_observed_batch(const std::filesystem::path& path);
// Evaluation-side reader: fails when the file carries no GT.
StreamBatch read_eval_batch(const std::filesystem::path& path);

}  // namespace mtta
