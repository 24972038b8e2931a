#pragma once

// Online test-time adaptation. Every 160-frame batch runs `cycles` rounds of
// one pose-estimator step followed by one denoiser step. The denoiser turns
// the current pose predictions into smoothed pseudo-labels (theta') and
// codebook-snapped anchors (theta*) for the next round. After the final
// prediction, the estimator is pulled back toward its batch-start weights.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <utility>
#include <vector>

#include "json.hpp"
#include "mtta/codebook.hpp"
#include "mtta/losses.hpp"
#include "mtta/networks.hpp"
#include "mtta/stream.hpp"

namespace mtta {

struct AdaptConfig {
  std::size_t cycles = 12;
  double lr_start = 5e-5;
  double lr_end = 1e-6;
  double lambda_shape = 0.001;   // L_s
  double lambda_2d = 0.1;        // L_2D
  double lambda_anchor = 0.3;    // L_ach
  double mu_f = 0.95;            // soft reset of F toward its batch-start weights
  double mu_c = 0.999;           // live codebook EMA decay
  std::optional<double> mu_m;    // optional soft reset of M (off by default)
  std::size_t replay_minibatch = 4;
  std::size_t minibatch = 32;    // frames per F step
  double mask_prob = 0.25;       // frame masking of denoiser inputs during adaptation
  double dead_fraction = 0.05;   // utilization floor, as a fraction of a uniform share
  std::size_t codebook_depth = 3;  // k; 0 disables the codebook
  bool use_anchor_loss = true;
  bool use_self_replay = true;
  bool use_soft_reset = true;
  bool continuous = true;
  bool sync_test_latents = false;  // also EMA-sync C with the test latents
  bool deterministic = false;      // record wall_ms as 0
  Camera camera;

  void validate() const;
};

void to_json(nlohmann::json& j, const AdaptConfig& c);
void from_json(const nlohmann::json& j, AdaptConfig& c);

// ------------------------------------------------------------ windowing

inline constexpr std::size_t kWindowsPerBatch = kBatchFrames / 2 / kWindowFrames;  // 5

struct WindowPlan {
  // windows[w][p] is the batch frame feeding position p of window w.
  std::vector<std::array<std::size_t, kWindowFrames>> windows;
  // Every batch frame's (window, position) source; odd frames take the even frame before them.
  std::vector<std::pair<std::size_t, std::size_t>> source;
};
WindowPlan windows_from_batch(std::size_t frame_count);

// ------------------------------------------------------------ state

struct PretrainedModels {
  PoseEstimator f;
  MotionDenoiser m;
  ResidualCodebook codebook;
};
PretrainedModels load_pretrained(const std::filesystem::path& f_model, const std::filesystem::path& m_model);

class AdaptState {
 public:
  AdaptState(const PretrainedModels& pre, const AdaptConfig& cfg, std::uint64_t probe_seed = 0);

  // Live models.
  PoseEstimator f;
  MotionDenoiser m;
  ResidualCodebook codebook;

  const PoseEstimator& f_bar() const { return f_bar_; }
  const MotionDenoiser& m_bar() const { return m_bar_; }
  const ResidualCodebook& codebook_bar() const { return codebook_bar_; }
  const Array& drift_probe() const { return drift_probe_; }

  // Hash of the frozen copies; constant for the lifetime of the state.
  std::uint64_t frozen_hash() const;
  void reset_to_pretrained();

 private:
  PoseEstimator f_bar_;
  MotionDenoiser m_bar_;
  ResidualCodebook codebook_bar_;
  Array drift_probe_;  // fixed latent windows sampled from the frozen codebook
};

// Everything the adapter derives from one observed batch before any update.
struct BatchInputs {
  std::uint32_t person_id = 0;
  std::uint32_t batch_idx = 0;
  Array features;           // [n,74]
  KeypointTargets targets;  // detections for L_2D
  WindowPlan plan;
};
BatchInputs prepare_batch(const ObservedBatch& batch, const Camera& cam);

// Per-batch pseudo-labels carried from one cycle to the next.
struct CycleTargets {
  Array theta_prime;  // [n,132] denoised rotations
  Array theta_star;   // [n,132] codebook anchors
  Array beta_prime;   // [21] batch-mean shape
};

struct FStepLosses {
  double l_p = 0, l_s = 0, l_2d = 0, l_ach = 0, l_f = 0;
};

// Rows `idx` of a [n, ...] array.
Array gather_rows(const Array& a, const std::vector<std::size_t>& idx);

// L_F on the selected frames. theta', theta* and beta' enter as constants.
ad::Var f_loss(const Bound& f_params, const BatchInputs& in, const CycleTargets& cyc, const std::vector<std::size_t>& frames,
               const AdaptConfig& cfg, FStepLosses* parts = nullptr);

// One optimizer step on F. Throws NumericError on a non-finite loss.
FStepLosses adapt_f_step(AdaptState& state, Adam& opt, const BatchInputs& in, const CycleTargets& cyc,
                         const std::vector<std::size_t>& frames, const AdaptConfig& cfg);

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Replay motions: random codes from the frozen codebook decoded by the frozen decoder.
struct ReplayBatch {
  Array phi;  // [r,16,197]
};
ReplayBatch prepare_replay(const AdaptState& state, const AdaptConfig& cfg, std::mt19937_64& rng);

// Current F predictions as denoiser windows ([5,16,197]), each window's
// starting pelvis yaw, and the batch-mean shape every window is built with.
struct TestWindows {
  Array phi;
  std::vector<double> yaw0;
  Array beta_mean;  // [21]
};
TestWindows test_windows(const PoseEstimator& f, const BatchInputs& in);

// theta' = D(E(phi)), theta* = D(sum of the k nearest codes of E(phi)), spread back to every frame.
CycleTargets refresh_targets(const AdaptState& state, const BatchInputs& in, const TestWindows& tw, const AdaptConfig& cfg);

// Smooth-L1 reconstruction of masked windows [B,16,197]: the mean over the
// first n_test windows plus, when any remain, the mean over the replay windows.
ad::Var m_loss(const Bound& m_params, const Array& masked, const Array& clean, std::size_t n_test);

// One optimizer step on E and D, then the codebook sync. Throws NumericError on a non-finite loss.
double adapt_m_step(AdaptState& state, Adam& opt, const TestWindows& tw, const ReplayBatch& replay, const AdaptConfig& cfg,
                    std::mt19937_64& rng);

struct BatchTelemetry {
  std::uint32_t person_id = 0;
  std::uint32_t batch_idx = 0;
  std::vector<FStepLosses> f_losses;  // one per cycle
  std::vector<double> m_losses;       // one per cycle
  std::size_t pairs = 0;              // (F step, M step) pairs executed
  bool aborted = false;
  double drift = 0.0;
  double codebook_util = 0.0;
  double wall_ms = 0.0;

  double mean_l_f() const;
  double mean_l_m() const;
  double mean_l_ach() const;
};

struct BatchResult {
  std::vector<PoseFrame> predictions;
  BatchTelemetry telemetry;
};

BatchResult adapt_batch(AdaptState& state, const ObservedBatch& batch, const AdaptConfig& cfg, std::mt19937_64& rng);

// ------------------------------------------------------------ streams

struct TelemetryRow {
  std::uint32_t person_id = 0;
  std::uint32_t batch_idx = 0;
  double mpjpe_mm = 0, mpjpe_pa_mm = 0;
  double l_f = 0, l_m = 0, l_ach = 0;
  double drift = 0, codebook_util = 0, wall_ms = 0;
};

// Mean per-frame MPJPE and MPJPE-PA of a batch (evaluation side; needs GT).
std::pair<double, double> score_batch(const std::vector<PoseFrame>& pred, const std::vector<PoseFrame>& gt);

TelemetryRow telemetry_row(const BatchTelemetry& t, const std::vector<PoseFrame>& pred, const std::vector<PoseFrame>& gt);

struct StreamSpec {
  PersonProfile profile;
  DomainShift shift;
  double minutes = 10.0;
  std::uint64_t stream_seed = 0;
};

struct StreamRun {
  std::vector<TelemetryRow> rows;
  double final_drift = 0.0;
};

// Seed of the per-person adapter rng used by run_stream.
std::uint64_t stream_rng_seed(std::uint64_t seed, std::uint32_t person_id);

// Fresh state per person; batches flow through adapt_batch in order.
StreamRun run_stream(const PretrainedModels& pre, const StreamSpec& spec, const AdaptConfig& cfg, std::uint64_t seed);
std::vector<StreamRun> run_streams(const PretrainedModels& pre, const std::vector<StreamSpec>& specs, const AdaptConfig& cfg,
                                   std::uint64_t seed);

void write_telemetry_csv(const std::filesystem::path& path, const std::vector<TelemetryRow>& rows);
std::vector<TelemetryRow> read_telemetry_csv(const std::filesystem::path& path);

struct PredictionRecord {
  std::uint32_t person_id = 0;
  std::uint32_t batch_idx = 0;
  std::vector<PoseFrame> frames;
};

// "MTPR", u32 version, u32 record count, then per record u32 person_id,
// u32 batch_idx, u32 frame count and 132 + 21 + 3 f64 per frame.
void write_predictions(const std::filesystem::path& path, const std::vector<PredictionRecord>& records);
std::vector<PredictionRecord> read_predictions(const std::filesystem::path& path);

}  // namespace mtta
