#pragma once

// Learnable models: the pose estimator F (an MLP over 2D detections plus a
// nuisance channel) and the motion denoiser M (temporal conv encoder E and
// decoder D). Parameters live in ordered ParamSets; a forward pass first binds
// a ParamSet into a Graph and then builds on the bound Vars.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "mtta/array.hpp"
#include "mtta/graph.hpp"
#include "mtta/kinematics.hpp"
#include "mtta/motion_repr.hpp"

namespace mtta {

class LayoutError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ParamSpec {
  std::string name;
  Shape shape;
  bool operator==(const ParamSpec&) const = default;
};
using Layout = std::vector<ParamSpec>;

class ParamSet {
 public:
  void add(std::string name, Array value);

  std::size_t count() const { return values_.size(); }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  const Array& value(std::size_t i) const { return values_.at(i); }
  Array& mutable_value(std::size_t i) { return values_.at(i); }
  const Array& get(std::string_view name) const { return values_.at(index(name)); }
  std::size_t index(std::string_view name) const;

  Layout layout() const;
  std::size_t total_size() const;
  // FNV-1a over the raw bit patterns; used to prove weights did or did not move.
  std::uint64_t hash() const;

 private:
  std::vector<std::string> names_;
  std::vector<Array> values_;
};

struct WeightSnapshot {
  Layout layout;
  std::vector<double> values;

  std::size_t offset_of(std::string_view name) const;
  Array get(std::string_view name) const;
};

WeightSnapshot snapshot(const ParamSet& params);
void load(ParamSet& params, const WeightSnapshot& snap);
// mu * a + (1 - mu) * b, elementwise.
WeightSnapshot ema_blend(const WeightSnapshot& a, const WeightSnapshot& b, double mu);
bool bit_equal(const WeightSnapshot& a, const WeightSnapshot& b);

// Joins snapshots, prefixing every name with the given string.
WeightSnapshot merge(const std::vector<std::pair<std::string, const WeightSnapshot*>>& parts);
// Entries whose name starts with prefix, with the prefix stripped.
WeightSnapshot extract(const WeightSnapshot& snap, std::string_view prefix);

// Little-endian: "MTTA", u32 version, u32 entry count, per entry (u32 name
// length, name bytes, u32 rank, u64 dims...), then all values as f64.
void write_model(const std::filesystem::path& path, const WeightSnapshot& snap);
WeightSnapshot read_model(const std::filesystem::path& path);
inline constexpr std::uint32_t kModelFormatVersion = 1;

struct Bound {
  std::vector<ad::Var> vars;
  ad::Var operator[](std::size_t i) const { return vars.at(i); }
};
Bound bind(ad::Graph& g, const ParamSet& params, bool trainable = true);
std::vector<Array> gradients(const ad::Graph& g, const Bound& bound);

double cosine_lr(double start, double end, std::size_t step, std::size_t total_steps);

struct AdamConfig {
  double lr_start = 5e-5;
  double lr_end = 1e-6;
  std::size_t total_steps = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(const ParamSet& params, AdamConfig cfg);
  void step(ParamSet& params, const std::vector<Array>& grads);
  double current_lr() const;
  std::size_t steps_taken() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  Layout layout_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

// ---------------------------------------------------------------- pose estimator

inline constexpr std::size_t kNuisanceDim = 8;
inline constexpr std::size_t kFeatureDim = kJoints * 3 + kNuisanceDim;  // 74
inline constexpr std::size_t kBetaDim = kBones;

struct ObservationFeature {
  Joints2d keypoints = Joints2d::Zero();  // pixels; zero where dropped
  std::array<double, kJoints> confidence{};
  std::array<double, kNuisanceDim> nuisance{};

  void validate() const;
};

// Row layout: per joint (u, v, confidence) with u, v mapped to [-1, 1] by
// image size (dropped joints stay 0), then the nuisance channel.
Array features_from(const std::vector<ObservationFeature>& obs, const Camera& cam);

struct PoseEstimatorConfig {
  std::size_t hidden = 128;
};

class PoseEstimator {
 public:
  explicit PoseEstimator(PoseEstimatorConfig cfg = {});
  PoseEstimator(PoseEstimatorConfig cfg, std::mt19937_64& rng);

  PoseEstimatorConfig config;
  ParamSet params;
};

struct PoseOutputs {
  ad::Var theta;  // [N,132]
  ad::Var beta;   // [N,21], in (0.5, 2)
  ad::Var psi;    // [N,3], psi.z > 0.1
};
PoseOutputs f_forward(const Bound& params, ad::Var features);

struct PosePrediction {
  Array theta, beta, psi;
  PoseFrame frame(std::size_t i) const;
};
PosePrediction f_predict(const PoseEstimator& f, const Array& features);

// ---------------------------------------------------------------- motion denoiser

struct MotionDenoiserConfig {
  std::size_t hidden = 64;
  std::size_t latent = 32;
};

class MotionDenoiser {
 public:
  explicit MotionDenoiser(MotionDenoiserConfig cfg = {});
  MotionDenoiser(MotionDenoiserConfig cfg, std::mt19937_64& rng);

  MotionDenoiserConfig config;
  ParamSet params;  // "enc.*" then "dec.*"
};

inline constexpr std::size_t kLatentSteps = kWindowFrames / 4;

// x: [B,16,197] (or [16,197]) -> [B,4,d] (or [4,d]).
ad::Var m_encode(const Bound& params, ad::Var x);
// z: [B,4,d] (or [4,d]) -> [B,16,197] (or [16,197]).
ad::Var m_decode(const Bound& params, ad::Var z);

// Index of the first decoder parameter in a denoiser ParamSet.
std::size_t decoder_offset(const ParamSet& m_params);

}  // namespace mtta
