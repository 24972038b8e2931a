#include "mtta/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "mtta/losses.hpp"
#include "mtta/ops.hpp"

namespace mtta {

namespace {

constexpr std::size_t kTimelineFrames = 1'000'000;

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(std::string("PretrainConfig: ") + what);
}

Eigen::Matrix3d reflect_x(const Eigen::Matrix3d& r) {
  Eigen::Matrix3d m = r;
  m.row(0) *= -1.0;
  m.col(0) *= -1.0;
  return m;
}

struct FrameBatch {
  std::vector<PoseFrame> gt;
  std::vector<ObservationFeature> obs;
};

FrameBatch draw_frames(const std::vector<MotionGenerator>& gens, std::size_t n, const Camera& cam,
                       const DomainShift& shift, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, gens.size() - 1);
  std::uniform_int_distribution<std::size_t> when(0, kTimelineFrames);
  FrameBatch b;
  b.gt.reserve(n);
  b.obs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t p = pick(rng);
    b.gt.push_back(gens[p].frame(when(rng)));
    b.obs.push_back(observe_frame(b.gt.back(), cam, shift, rng));
  }
  return b;
}

struct PoseTargets {
  Array theta, beta, psi;
};

PoseTargets pose_targets(const std::vector<PoseFrame>& frames) {
  const std::size_t n = frames.size();
  PoseTargets t{Array({n, kThetaDim}), Array({n, kBetaDim}), Array({n, 3})};
  for (std::size_t i = 0; i < n; ++i) {
    std::copy(frames[i].theta.begin(), frames[i].theta.end(), t.theta.mutable_data().begin() + static_cast<std::ptrdiff_t>(i * kThetaDim));
    std::copy(frames[i].beta.begin(), frames[i].beta.end(), t.beta.mutable_data().begin() + static_cast<std::ptrdiff_t>(i * kBetaDim));
    std::copy(frames[i].psi.begin(), frames[i].psi.end(), t.psi.mutable_data().begin() + static_cast<std::ptrdiff_t>(i * 3));
  }
  return t;
}

std::vector<MotionGenerator> generators(const PretrainConfig& cfg) {
  std::vector<MotionGenerator> gens;
  for (const auto& p : source_profiles(cfg)) gens.emplace_back(p, kStreamFps);
  return gens;
}

// Clean and augmented windows, [B,16,197] each.
struct WindowBatch {
  Array clean, noisy;
};

WindowBatch draw_windows(const std::vector<MotionGenerator>& gens, std::size_t n, const PretrainConfig& cfg,
                         std::mt19937_64& rng) {
  const Skeleton& skel = Skeleton::standard();
  std::uniform_int_distribution<std::size_t> pick(0, gens.size() - 1);
  std::uniform_int_distribution<std::size_t> when(0, kTimelineFrames);
  std::bernoulli_distribution flip(0.5);
  const std::size_t stride = kWindowFrames * kPhiDim;
  WindowBatch b{Array({n, kWindowFrames, kPhiDim}), Array({n, kWindowFrames, kPhiDim})};
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t p = pick(rng);
    MotionWindow w = sample_window(gens[p], when(rng));
    if (flip(rng)) {
      for (auto& f : w.frames) f = mirror_frame(f, skel);
    }
    const PhiSequence clean = to_phi(w, skel);
    const PhiSequence noisy = augment(clean, rng, cfg.noise_sigma, cfg.mask_prob);
    std::copy(clean.values.data().begin(), clean.values.data().end(), b.clean.mutable_data().begin() + static_cast<std::ptrdiff_t>(i * stride));
    std::copy(noisy.values.data().begin(), noisy.values.data().end(), b.noisy.mutable_data().begin() + static_cast<std::ptrdiff_t>(i * stride));
  }
  return b;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace

void PretrainConfig::validate() const {
  camera.validate();
  require(source_profiles >= 1, "source_profiles must be >= 1");
  require(f_model.hidden >= 1 && m_model.hidden >= 1 && m_model.latent >= 1, "model widths must be >= 1");
  require(codebook.dim == m_model.latent, "codebook.dim must equal the denoiser latent width");
  require(codebook.layers >= 1 && codebook.codes >= 1, "codebook must have at least one layer and one code");
  require(f_steps >= 1 && m_steps >= 1, "step counts must be >= 1");
  require(f_batch >= 1 && m_batch >= 1, "batch sizes must be >= 1");
  require(f_lr_start > 0 && f_lr_end > 0 && m_lr_start > 0 && m_lr_end > 0, "learning rates must be positive");
  require(m_beta2 > 0 && m_beta2 < 1, "m_beta2 must lie in (0, 1)");
  require(f_l2d_weight >= 0, "f_l2d_weight must be >= 0");
  require(noise_sigma >= 0, "noise_sigma must be >= 0");
  require(mask_prob >= 0 && mask_prob <= 1, "mask_prob must lie in [0, 1]");
  require(codebook_decay >= 0 && codebook_decay <= 1, "codebook_decay must lie in [0, 1]");
  require(dead_fraction >= 0 && dead_fraction < 1, "dead_fraction must lie in [0, 1)");
  require(log_every >= 1, "log_every must be >= 1");
  require(eval_frames >= 1 && eval_windows >= 1, "evaluation sizes must be >= 1");
}

double PretrainConfig::usage_floor() const {
  return dead_fraction * static_cast<double>(m_batch * kLatentSteps) / static_cast<double>(codebook.codes);
}

void to_json(nlohmann::json& j, const PretrainConfig& c) {
  j = nlohmann::json{
      {"source_profiles", c.source_profiles},
      {"profile_seed", c.profile_seed},
      {"camera",
       {{"focal", c.camera.focal},
        {"principal_point", {c.camera.principal_point.x(), c.camera.principal_point.y()}},
        {"image_size", {c.camera.image_size.x(), c.camera.image_size.y()}}}},
      {"f_hidden", c.f_model.hidden},
      {"f_steps", c.f_steps},
      {"f_batch", c.f_batch},
      {"f_lr_start", c.f_lr_start},
      {"f_lr_end", c.f_lr_end},
      {"f_l2d_weight", c.f_l2d_weight},
      {"m_hidden", c.m_model.hidden},
      {"m_latent", c.m_model.latent},
      {"codebook_layers", c.codebook.layers},
      {"codebook_codes", c.codebook.codes},
      {"m_steps", c.m_steps},
      {"m_batch", c.m_batch},
      {"m_lr_start", c.m_lr_start},
      {"m_lr_end", c.m_lr_end},
      {"m_beta2", c.m_beta2},
      {"noise_sigma", c.noise_sigma},
      {"mask_prob", c.mask_prob},
      {"codebook_decay", c.codebook_decay},
      {"revive_every", c.revive_every},
      {"dead_fraction", c.dead_fraction},
      {"eval_frames", c.eval_frames},
      {"eval_windows", c.eval_windows},
      {"log_every", c.log_every},
  };
}

void from_json(const nlohmann::json& j, PretrainConfig& c) {
  static const std::vector<std::string> known = {
      "source_profiles", "profile_seed", "camera",      "f_hidden",     "f_steps",        "f_batch",
      "f_lr_start",      "f_lr_end",     "f_l2d_weight", "m_hidden",    "m_latent",       "codebook_layers",
      "codebook_codes",  "m_steps",      "m_batch",      "m_lr_start",  "m_lr_end",       "m_beta2",
      "noise_sigma",     "mask_prob",    "codebook_decay", "revive_every", "dead_fraction", "eval_frames",
      "eval_windows",    "log_every"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw std::invalid_argument("PretrainConfig: unknown key '" + key + "'");
  }
  auto opt = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  opt("source_profiles", c.source_profiles);
  opt("profile_seed", c.profile_seed);
  if (j.contains("camera")) {
    const auto& cam = j.at("camera");
    if (cam.contains("focal")) cam.at("focal").get_to(c.camera.focal);
    if (cam.contains("principal_point"))
      c.camera.principal_point = {cam.at("principal_point").at(0).get<double>(), cam.at("principal_point").at(1).get<double>()};
    if (cam.contains("image_size"))
      c.camera.image_size = {cam.at("image_size").at(0).get<double>(), cam.at("image_size").at(1).get<double>()};
  }
  opt("f_hidden", c.f_model.hidden);
  opt("f_steps", c.f_steps);
  opt("f_batch", c.f_batch);
  opt("f_lr_start", c.f_lr_start);
  opt("f_lr_end", c.f_lr_end);
  opt("f_l2d_weight", c.f_l2d_weight);
  opt("m_hidden", c.m_model.hidden);
  opt("m_latent", c.m_model.latent);
  c.codebook.dim = c.m_model.latent;
  opt("codebook_layers", c.codebook.layers);
  opt("codebook_codes", c.codebook.codes);
  opt("m_steps", c.m_steps);
  opt("m_batch", c.m_batch);
  opt("m_lr_start", c.m_lr_start);
  opt("m_lr_end", c.m_lr_end);
  opt("m_beta2", c.m_beta2);
  opt("noise_sigma", c.noise_sigma);
  opt("mask_prob", c.mask_prob);
  opt("codebook_decay", c.codebook_decay);
  opt("revive_every", c.revive_every);
  opt("dead_fraction", c.dead_fraction);
  opt("eval_frames", c.eval_frames);
  opt("eval_windows", c.eval_windows);
  opt("log_every", c.log_every);
}

std::vector<PersonProfile> source_profiles(const PretrainConfig& cfg) {
  std::vector<PersonProfile> out;
  for (std::size_t i = 0; i < cfg.source_profiles; ++i) {
    out.push_back(PersonProfile::random(static_cast<std::uint32_t>(1000 + i), cfg.profile_seed + 7919 * i));
  }
  return out;
}

PoseFrame mirror_frame(const PoseFrame& f, const Skeleton& skel) {
  PoseFrame m;
  for (std::size_t j = 0; j < kJoints; ++j) {
    const std::size_t src = skel.mirror[j];
    const std::span<const double, 6> r(f.theta.data() + 6 * src, 6);
    const auto out = matrix_to_rot6d(reflect_x(rot6d_to_matrix(r)));
    std::copy(out.begin(), out.end(), m.theta.begin() + static_cast<std::ptrdiff_t>(6 * j));
    if (j > 0) m.beta[j - 1] = f.beta[src - 1];
  }
  m.psi = {-f.psi[0], f.psi[1], f.psi[2]};
  return m;
}

MotionWindow sample_window(const MotionGenerator& gen, std::size_t start) {
  MotionWindow w;
  w.frames.reserve(kWindowFrames);
  for (std::size_t i = 0; i < kWindowFrames; ++i) w.frames.push_back(gen.frame(start + 2 * i));
  return w;
}

bool smoothed_non_increasing(const std::vector<double>& curve, std::size_t window) {
  if (window == 0) window = 1;
  // Non-overlapping block means; 2% slack absorbs minibatch noise.
  double prev = 0.0;
  bool first = true;
  for (std::size_t b = 0; b + window <= curve.size(); b += window) {
    double s = 0.0;
    for (std::size_t i = b; i < b + window; ++i) s += curve[i];
    s /= static_cast<double>(window);
    if (!first && s > prev * 1.02) return false;
    prev = s;
    first = false;
  }
  return true;
}

FResult pretrain_f(const PretrainConfig& cfg, std::mt19937_64& rng, const ProgressFn& progress) {
  cfg.validate();
  const Skeleton& skel = Skeleton::standard();
  const auto gens = generators(cfg);
  const DomainShift source = DomainShift::source();

  FResult res{PoseEstimator(cfg.f_model, rng), {}};
  Adam opt(res.model.params, {cfg.f_lr_start, cfg.f_lr_end, cfg.f_steps, 0.9, 0.99, 1e-8});
  res.report.lr_first = opt.current_lr();

  std::vector<double> window_losses;
  for (std::size_t step = 0; step < cfg.f_steps; ++step) {
    const FrameBatch batch = draw_frames(gens, cfg.f_batch, cfg.camera, source, rng);
    const PoseTargets t = pose_targets(batch.gt);
    ad::Graph g;
    const Bound b = bind(g, res.model.params);
    const PoseOutputs out = f_forward(b, g.constant(features_from(batch.obs, cfg.camera)));
    ad::Var loss = l1_mean(out.theta, g.constant(t.theta)) + l1_mean(out.beta, g.constant(t.beta)) +
                   l1_mean(out.psi, g.constant(t.psi));
    if (cfg.f_l2d_weight > 0) {
      loss = loss + ad::scale(reprojection_loss(cfg.camera, skel, out, keypoint_targets(batch.obs)), cfg.f_l2d_weight);
    }
    g.backward(loss);
    res.report.lr_last = opt.current_lr();
    opt.step(res.model.params, gradients(g, b));
    window_losses.push_back(loss.value().item());
    if (window_losses.size() == cfg.log_every || step + 1 == cfg.f_steps) {
      res.report.loss_curve.push_back(mean_of(window_losses));
      window_losses.clear();
      if (progress) {
        char line[96];
        std::snprintf(line, sizeof line, "F step %zu/%zu loss %.5f", step + 1, cfg.f_steps, res.report.loss_curve.back());
        progress(line);
      }
    }
  }
  res.report.smoothed_monotone = smoothed_non_increasing(res.report.loss_curve, std::max<std::size_t>(1, 500 / cfg.log_every));

  // Held-out evaluation: fresh frames from the same source people.
  std::mt19937_64 eval_rng(rng());
  const FrameBatch held = draw_frames(gens, cfg.eval_frames, cfg.camera, source, eval_rng);
  const PosePrediction noisy = f_predict(res.model, features_from(held.obs, cfg.camera));
  double e = 0.0, epa = 0.0;
  for (std::size_t i = 0; i < held.gt.size(); ++i) {
    const Joints gt = forward_kinematics(skel, held.gt[i]);
    const Joints pn = forward_kinematics(skel, noisy.frame(i));
    e += mpjpe(pn, gt);
    epa += mpjpe_pa(pn, gt);
  }
  const double n = static_cast<double>(held.gt.size());
  res.report.source_mpjpe = e / n;
  res.report.source_mpjpe_pa = epa / n;
  return res;
}

MResult pretrain_m(const PretrainConfig& cfg, std::mt19937_64& rng, const ProgressFn& progress) {
  cfg.validate();
  const auto gens = generators(cfg);
  MResult res{MotionDenoiser(cfg.m_model, rng), ResidualCodebook(cfg.codebook), {}};
  Adam opt(res.model.params, {cfg.m_lr_start, cfg.m_lr_end, cfg.m_steps, 0.9, cfg.m_beta2, 1e-8});
  res.report.lr_first = opt.current_lr();
  const std::size_t d = cfg.m_model.latent;
  const double floor = cfg.usage_floor();

  std::vector<double> window_losses;
  for (std::size_t step = 0; step < cfg.m_steps; ++step) {
    const WindowBatch batch = draw_windows(gens, cfg.m_batch, cfg, rng);
    ad::Graph g;
    const Bound b = bind(g, res.model.params);
    const ad::Var z = m_encode(b, g.constant(batch.noisy));
    const ad::Var loss = ad::mean(ad::smooth_l1(m_decode(b, z) - g.constant(batch.clean)));
    g.backward(loss);
    res.report.lr_last = opt.current_lr();
    opt.step(res.model.params, gradients(g, b));

    // The codebook follows the encoder without feeding gradient back.
    const Array latents = z.value().reshaped({cfg.m_batch * kLatentSteps, d});
    if (step == 0) init_kmeanspp(res.codebook, latents, rng);
    const auto q = quantize_rows(res.codebook, latents);
    ema_update(res.codebook, assignments_of(q), cfg.codebook_decay);
    if (cfg.revive_every > 0 && (step + 1) % cfg.revive_every == 0 && step + 1 < cfg.m_steps) {
      res.report.revived_codes += revive_dead_codes(res.codebook, revival_pool(q), floor, rng);
    }

    window_losses.push_back(loss.value().item());
    if (window_losses.size() == cfg.log_every || step + 1 == cfg.m_steps) {
      res.report.loss_curve.push_back(mean_of(window_losses));
      window_losses.clear();
      if (progress) {
        char line[128];
        std::snprintf(line, sizeof line, "M step %zu/%zu loss %.5f util %.2f", step + 1, cfg.m_steps,
                      res.report.loss_curve.back(), utilization(res.codebook, floor));
        progress(line);
      }
    }
  }
  res.report.smoothed_monotone = smoothed_non_increasing(res.report.loss_curve, std::max<std::size_t>(1, 500 / cfg.log_every));
  res.report.utilization = utilization(res.codebook, floor);

  std::mt19937_64 eval_rng(rng());
  const WindowBatch held = draw_windows(gens, cfg.eval_windows, cfg, eval_rng);
  ad::Graph g;
  const Bound b = bind(g, res.model.params, false);
  const Array recon = m_decode(b, m_encode(b, g.constant(held.noisy))).value();
  double er = 0.0, ei = 0.0;
  for (std::size_t i = 0; i < recon.size(); ++i) {
    er += std::abs(recon[i] - held.clean[i]);
    ei += std::abs(held.noisy[i] - held.clean[i]);
  }
  res.report.recon_error = er / static_cast<double>(recon.size());
  res.report.input_error = ei / static_cast<double>(recon.size());
  return res;
}

WeightSnapshot denoiser_file_snapshot(const MotionDenoiser& m, const ResidualCodebook& cb) {
  const WeightSnapshot ms = snapshot(m.params);
  const WeightSnapshot cs = cb.to_snapshot();
  return merge({{"", &ms}, {"codebook.", &cs}});
}

MotionDenoiser denoiser_from(const WeightSnapshot& snap) {
  const Array in = snap.get("enc.in.w");     // [h, 197, 1]
  const Array lat = snap.get("enc.latent.w");  // [d, h, 1]
  MotionDenoiser m({in.dim(0), lat.dim(0)});
  WeightSnapshot own;
  for (const auto& spec : snap.layout) {
    if (!spec.name.starts_with("codebook.")) own.layout.push_back(spec);
  }
  std::size_t n = 0;
  for (const auto& spec : own.layout) n += shape_size(spec.shape);
  own.values.assign(snap.values.begin(), snap.values.begin() + static_cast<std::ptrdiff_t>(n));
  load(m.params, own);
  return m;
}

void load_denoiser_file(const WeightSnapshot& snap, MotionDenoiser& m, ResidualCodebook& cb) {
  m = denoiser_from(snap);
  cb = ResidualCodebook::from_snapshot(extract(snap, "codebook."));
  if (cb.config.dim != m.config.latent) throw LayoutError("model file: codebook width differs from the denoiser latent width");
}

PoseEstimator pose_estimator_from(const WeightSnapshot& snap) {
  PoseEstimator f({snap.get("l1.w").dim(1)});
  load(f.params, snap);
  return f;
}

nlohmann::json report_json(const FReport& f, const MReport& m) {
  return nlohmann::json{
      {"pose_estimator",
       {{"source_mpjpe_mm", f.source_mpjpe},
        {"source_mpjpe_pa_mm", f.source_mpjpe_pa},
        {"lr_first", f.lr_first},
        {"lr_last", f.lr_last},
        {"smoothed_monotone", f.smoothed_monotone},
        {"loss_curve", f.loss_curve}}},
      {"motion_denoiser",
       {{"recon_error", m.recon_error},
        {"input_error", m.input_error},
        {"denoising_gain", m.recon_error > 0 ? m.input_error / m.recon_error : 0.0},
        {"codebook_utilization", m.utilization},
        {"revived_codes", m.revived_codes},
        {"lr_first", m.lr_first},
        {"lr_last", m.lr_last},
        {"smoothed_monotone", m.smoothed_monotone},
        {"loss_curve", m.loss_curve}}},
  };
}

}  // namespace mtta
