#pragma once

// Source-domain pre-training: the pose estimator by direct supervision and the
// motion denoiser as a denoising autoencoder, with the codebook clustered on
// the (detached) encoder latents along the way.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "mtta/codebook.hpp"
#include "mtta/networks.hpp"
#include "mtta/stream.hpp"

namespace mtta {

struct PretrainConfig {
  std::size_t source_profiles = 8;
  std::uint64_t profile_seed = 1000;
  Camera camera;

  PoseEstimatorConfig f_model{256};
  std::size_t f_steps = 5000;
  std::size_t f_batch = 64;
  double f_lr_start = 2e-3;
  double f_lr_end = 1e-5;
  double f_l2d_weight = 0.1;

  MotionDenoiserConfig m_model{32, 32};
  CodebookConfig codebook;
  std::size_t m_steps = 8000;
  std::size_t m_batch = 32;
  double m_lr_start = 2e-4;
  double m_lr_end = 1e-5;
  double m_beta2 = 0.99;
  double noise_sigma = 0.015;
  double mask_prob = 0.25;
  double codebook_decay = 0.99;
  std::size_t revive_every = 500;
  // A code is dead when its usage falls below this fraction of a uniform share.
  double dead_fraction = 0.05;

  std::size_t eval_frames = 2000;
  std::size_t eval_windows = 256;
  std::size_t log_every = 50;

  void validate() const;
  double usage_floor() const;
};

void to_json(nlohmann::json& j, const PretrainConfig& c);
void from_json(const nlohmann::json& j, PretrainConfig& c);

std::vector<PersonProfile> source_profiles(const PretrainConfig& cfg);

// Left/right mirror: swaps paired joints and reflects x (rotations R -> S R S
// with S = diag(-1, 1, 1); translation x negated).
PoseFrame mirror_frame(const PoseFrame& f, const Skeleton& skel);

// 16 frames at 15 fps starting at `start` (every other 30 fps frame).
MotionWindow sample_window(const MotionGenerator& gen, std::size_t start);

struct FReport {
  std::vector<double> loss_curve;  // mean loss per log_every steps
  double source_mpjpe = 0.0;       // held-out source frames, standard detector noise
  double source_mpjpe_pa = 0.0;
  double lr_first = 0.0, lr_last = 0.0;
  bool smoothed_monotone = true;
};

struct MReport {
  std::vector<double> loss_curve;
  double recon_error = 0.0;   // mean |D(E(aug)) - clean|
  double input_error = 0.0;   // mean |aug - clean|
  double utilization = 0.0;
  std::size_t revived_codes = 0;
  double lr_first = 0.0, lr_last = 0.0;
  bool smoothed_monotone = true;
};

using ProgressFn = std::function<void(const std::string&)>;

struct FResult {
  PoseEstimator model;
  FReport report;
};
struct MResult {
  MotionDenoiser model;
  ResidualCodebook codebook;
  MReport report;
};

FResult pretrain_f(const PretrainConfig& cfg, std::mt19937_64& rng, const ProgressFn& progress = {});
MResult pretrain_m(const PretrainConfig& cfg, std::mt19937_64& rng, const ProgressFn& progress = {});

// Denoiser plus embedded codebook ("codebook.layer{i}", "codebook.usage").
WeightSnapshot denoiser_file_snapshot(const MotionDenoiser& m, const ResidualCodebook& cb);
void load_denoiser_file(const WeightSnapshot& snap, MotionDenoiser& m, ResidualCodebook& cb);
// Rebuilds models from files alone (architecture is inferred from the shapes).
PoseEstimator pose_estimator_from(const WeightSnapshot& snap);
MotionDenoiser denoiser_from(const WeightSnapshot& snap);

nlohmann::json report_json(const FReport& f, const MReport& m);

// True when a trailing moving average of `curve` (window in entries) never rises.
bool smoothed_non_increasing(const std::vector<double>& curve, std::size_t window);

}  // namespace mtta
