#include "mtta/adapt.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "mtta/ops.hpp"
#include "mtta/pretrain.hpp"

namespace mtta {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(std::string("AdaptConfig: ") + what);
}

bool in_unit(double v) { return v >= 0.0 && v <= 1.0; }

// Writes the first k layers of `part` (and their usage rows) back into `cb`.
void store_prefix(ResidualCodebook& cb, const ResidualCodebook& part) {
  const std::size_t nc = cb.config.codes;
  for (std::size_t i = 0; i < part.depth(); ++i) {
    cb.layers[i] = part.layers[i];
    std::copy_n(part.usage.data().begin() + static_cast<std::ptrdiff_t>(i * nc), nc,
                cb.usage.mutable_data().begin() + static_cast<std::ptrdiff_t>(i * nc));
  }
}

void sync_codebook(ResidualCodebook& cb, std::size_t k, const Array& latents, double decay) {
  if (k == 0 || latents.size() == 0) return;
  ResidualCodebook part = cb.prefix(k);
  const auto q = quantize_rows(part, latents);
  ema_update(part, assignments_of(q), decay);
  store_prefix(cb, part);
}

void check_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw NumericError(std::string(what) + " is not finite");
}

void check_finite(const ParamSet& p, const char* what) {
  for (std::size_t i = 0; i < p.count(); ++i) {
    if (!p.value(i).all_finite()) throw NumericError(std::string(what) + " weights are not finite");
  }
}

Array slice_rows(const Array& a, std::size_t begin, std::size_t end) {
  const std::size_t row = a.size() / a.dim(0);
  Shape s = a.shape();
  s[0] = end - begin;
  return Array(s, std::vector<double>(a.data().begin() + static_cast<std::ptrdiff_t>(begin * row),
                                      a.data().begin() + static_cast<std::ptrdiff_t>(end * row)));
}

// Decoded windows [w,16,197] back to per-frame rotations [n,132].
Array spread_rotations(const Array& decoded, const std::vector<double>& yaw0, const WindowPlan& plan) {
  const std::size_t nw = decoded.dim(0);
  std::vector<std::vector<Theta>> per_window(nw);
  for (std::size_t w = 0; w < nw; ++w) {
    per_window[w] = from_phi(phi_from_values(slice_rows(decoded, w, w + 1).reshaped({kWindowFrames, kPhiDim})), yaw0[w]);
  }
  const std::size_t n = plan.source.size();
  Array out({n, kThetaDim});
  auto data = out.mutable_data();
  for (std::size_t i = 0; i < n; ++i) {
    const auto [w, p] = plan.source[i];
    std::copy(per_window[w][p].begin(), per_window[w][p].end(), data.begin() + static_cast<std::ptrdiff_t>(i * kThetaDim));
  }
  return out;
}

Array repeat_row(const Array& row, std::size_t n) {
  std::vector<double> v;
  v.reserve(n * row.size());
  for (std::size_t i = 0; i < n; ++i) v.insert(v.end(), row.data().begin(), row.data().end());
  return Array({n, row.size()}, std::move(v));
}

}  // namespace

// ------------------------------------------------------------ config

void AdaptConfig::validate() const {
  camera.validate();
  require(cycles >= 1, "cycles must be >= 1");
  require(lr_start > 0 && lr_end > 0, "learning rates must be positive");
  require(lambda_shape >= 0 && lambda_2d >= 0 && lambda_anchor >= 0, "loss weights must be >= 0");
  require(in_unit(mu_f) && in_unit(mu_c), "decays must lie in [0, 1]");
  require(!mu_m || in_unit(*mu_m), "mu_m must lie in [0, 1]");
  require(minibatch >= 1 && minibatch <= kBatchFrames, "minibatch must lie in [1, 160]");
  require(replay_minibatch >= 1, "replay_minibatch must be >= 1");
  require(in_unit(mask_prob), "mask_prob must lie in [0, 1]");
  require(dead_fraction >= 0 && dead_fraction < 1, "dead_fraction must lie in [0, 1)");
  require(codebook_depth <= 3, "codebook_depth must lie in [0, 3]");
}

void to_json(nlohmann::json& j, const AdaptConfig& c) {
  j = nlohmann::json{
      {"cycles", c.cycles},
      {"lr_start", c.lr_start},
      {"lr_end", c.lr_end},
      {"lambda_shape", c.lambda_shape},
      {"lambda_2d", c.lambda_2d},
      {"lambda_anchor", c.lambda_anchor},
      {"mu_f", c.mu_f},
      {"mu_c", c.mu_c},
      {"mu_m", c.mu_m ? nlohmann::json(*c.mu_m) : nlohmann::json(nullptr)},
      {"replay_minibatch", c.replay_minibatch},
      {"minibatch", c.minibatch},
      {"mask_prob", c.mask_prob},
      {"dead_fraction", c.dead_fraction},
      {"codebook_depth", c.codebook_depth},
      {"use_anchor_loss", c.use_anchor_loss},
      {"use_self_replay", c.use_self_replay},
      {"use_soft_reset", c.use_soft_reset},
      {"continuous", c.continuous},
      {"sync_test_latents", c.sync_test_latents},
      {"deterministic", c.deterministic},
      {"camera",
       {{"focal", c.camera.focal},
        {"principal_point", {c.camera.principal_point.x(), c.camera.principal_point.y()}},
        {"image_size", {c.camera.image_size.x(), c.camera.image_size.y()}}}},
  };
}

void from_json(const nlohmann::json& j, AdaptConfig& c) {
  const nlohmann::json defaults = AdaptConfig{};
  for (const auto& item : j.items()) {
    if (!defaults.contains(item.key())) throw std::invalid_argument("AdaptConfig: unknown key '" + item.key() + "'");
  }
  auto opt = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  opt("cycles", c.cycles);
  opt("lr_start", c.lr_start);
  opt("lr_end", c.lr_end);
  opt("lambda_shape", c.lambda_shape);
  opt("lambda_2d", c.lambda_2d);
  opt("lambda_anchor", c.lambda_anchor);
  opt("mu_f", c.mu_f);
  opt("mu_c", c.mu_c);
  if (j.contains("mu_m")) {
    if (j.at("mu_m").is_null()) {
      c.mu_m.reset();
    } else {
      c.mu_m = j.at("mu_m").get<double>();
    }
  }
  opt("replay_minibatch", c.replay_minibatch);
  opt("minibatch", c.minibatch);
  opt("mask_prob", c.mask_prob);
  opt("dead_fraction", c.dead_fraction);
  opt("codebook_depth", c.codebook_depth);
  opt("use_anchor_loss", c.use_anchor_loss);
  opt("use_self_replay", c.use_self_replay);
  opt("use_soft_reset", c.use_soft_reset);
  opt("continuous", c.continuous);
  opt("sync_test_latents", c.sync_test_latents);
  opt("deterministic", c.deterministic);
  if (j.contains("camera")) {
    const auto& cam = j.at("camera");
    if (cam.contains("focal")) cam.at("focal").get_to(c.camera.focal);
    if (cam.contains("principal_point"))
      c.camera.principal_point = {cam.at("principal_point").at(0).get<double>(), cam.at("principal_point").at(1).get<double>()};
    if (cam.contains("image_size"))
      c.camera.image_size = {cam.at("image_size").at(0).get<double>(), cam.at("image_size").at(1).get<double>()};
  }
}

// ------------------------------------------------------------ windows

WindowPlan windows_from_batch(std::size_t frame_count) {
  if (frame_count != kBatchFrames) {
    throw std::invalid_argument("windows_from_batch: expected " + std::to_string(kBatchFrames) + " frames, got " +
                                std::to_string(frame_count));
  }
  WindowPlan plan;
  plan.windows.resize(kWindowsPerBatch);
  plan.source.resize(frame_count);
  for (std::size_t w = 0; w < kWindowsPerBatch; ++w) {
    for (std::size_t p = 0; p < kWindowFrames; ++p) {
      const std::size_t frame = 2 * (w * kWindowFrames + p);
      plan.windows[w][p] = frame;
      plan.source[frame] = {w, p};
      plan.source[frame + 1] = {w, p};
    }
  }
  return plan;
}

// ------------------------------------------------------------ state

PretrainedModels load_pretrained(const std::filesystem::path& f_model, const std::filesystem::path& m_model) {
  if (!std::filesystem::exists(f_model)) throw std::runtime_error("pose estimator file not found: " + f_model.string());
  if (!std::filesystem::exists(m_model)) throw std::runtime_error("denoiser file not found: " + m_model.string());
  PretrainedModels pre{pose_estimator_from(read_model(f_model)), MotionDenoiser{}, ResidualCodebook{}};
  load_denoiser_file(read_model(m_model), pre.m, pre.codebook);
  return pre;
}

AdaptState::AdaptState(const PretrainedModels& pre, const AdaptConfig& cfg, std::uint64_t probe_seed)
    : f(pre.f), m(pre.m), codebook(pre.codebook), f_bar_(pre.f), m_bar_(pre.m), codebook_bar_(pre.codebook) {
  if (cfg.codebook_depth > codebook_bar_.depth()) throw std::invalid_argument("AdaptState: codebook_depth exceeds the codebook");
  std::mt19937_64 rng(probe_seed ^ 0x9e3779b97f4a7c15ULL);
  drift_probe_ = sample_latent_windows(codebook_bar_, 16, rng);
}

std::uint64_t AdaptState::frozen_hash() const {
  std::uint64_t h = f_bar_.params.hash();
  h = h * 1099511628211ULL ^ m_bar_.params.hash();
  return h * 1099511628211ULL ^ codebook_bar_.hash();
}

void AdaptState::reset_to_pretrained() {
  f = f_bar_;
  m = m_bar_;
  codebook = codebook_bar_;
}

// ------------------------------------------------------------ steps

BatchInputs prepare_batch(const ObservedBatch& batch, const Camera& cam) {
  BatchInputs in;
  in.person_id = batch.person_id;
  in.batch_idx = batch.batch_idx;
  in.plan = windows_from_batch(batch.frames.size());
  in.features = features_from(batch.frames, cam);
  in.targets = keypoint_targets(batch.frames);
  return in;
}

Array gather_rows(const Array& a, const std::vector<std::size_t>& idx) {
  const std::size_t row = a.size() / a.dim(0);
  Shape s = a.shape();
  s[0] = idx.size();
  std::vector<double> v;
  v.reserve(idx.size() * row);
  for (std::size_t i : idx) {
    if (i >= a.dim(0)) throw std::out_of_range("gather_rows: row index out of range");
    v.insert(v.end(), a.data().begin() + static_cast<std::ptrdiff_t>(i * row), a.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * row));
  }
  return Array(std::move(s), std::move(v));
}

ad::Var f_loss(const Bound& fp, const BatchInputs& in, const CycleTargets& cyc, const std::vector<std::size_t>& frames,
               const AdaptConfig& cfg, FStepLosses* parts) {
  ad::Graph& g = *fp[0].graph;
  const PoseOutputs out = f_forward(fp, g.constant(gather_rows(in.features, frames)));
  const KeypointTargets kp{gather_rows(in.targets.keypoints, frames), gather_rows(in.targets.confidence, frames)};

  const ad::Var l_p = l1_mean(out.theta, g.constant(gather_rows(cyc.theta_prime, frames)));
  const ad::Var l_s = l1_mean(out.beta, g.constant(repeat_row(cyc.beta_prime, frames.size())));
  const ad::Var l_2d = reprojection_loss(cfg.camera, Skeleton::standard(), out, kp);
  ad::Var total = l_p + cfg.lambda_shape * l_s + cfg.lambda_2d * l_2d;
  double ach = 0.0;
  if (cfg.use_anchor_loss) {
    const ad::Var l_ach = l1_mean(out.theta, g.constant(gather_rows(cyc.theta_star, frames)));
    total = total + cfg.lambda_anchor * l_ach;
    ach = l_ach.value().item();
  }
  if (parts) *parts = {l_p.value().item(), l_s.value().item(), l_2d.value().item(), ach, total.value().item()};
  return total;
}

FStepLosses adapt_f_step(AdaptState& state, Adam& opt, const BatchInputs& in, const CycleTargets& cyc,
                         const std::vector<std::size_t>& frames, const AdaptConfig& cfg) {
  ad::Graph g;
  const Bound b = bind(g, state.f.params);
  FStepLosses parts;
  const ad::Var loss = f_loss(b, in, cyc, frames, cfg, &parts);
  check_finite(parts.l_f, "L_F");
  g.backward(loss);
  opt.step(state.f.params, gradients(g, b));
  check_finite(state.f.params, "pose estimator");
  return parts;
}

ReplayBatch prepare_replay(const AdaptState& state, const AdaptConfig& cfg, std::mt19937_64& rng) {
  const Array latents = sample_latent_windows(state.codebook_bar(), cfg.replay_minibatch, rng);
  ad::Graph g;
  const Bound b = bind(g, state.m_bar().params, false);
  return ReplayBatch{m_decode(b, g.constant(latents)).value()};
}

TestWindows test_windows(const PoseEstimator& f, const BatchInputs& in) {
  const PosePrediction pred = f_predict(f, in.features);
  const std::size_t n = in.features.dim(0);
  PoseFrame proto;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < kBetaDim; ++k) proto.beta[k] += pred.beta[i * kBetaDim + k];
  }
  for (auto& v : proto.beta) v /= static_cast<double>(n);

  const Skeleton& skel = Skeleton::standard();
  const std::size_t nw = in.plan.windows.size();
  TestWindows tw{Array({nw, kWindowFrames, kPhiDim}), std::vector<double>(nw),
                 Array({kBetaDim}, std::vector<double>(proto.beta.begin(), proto.beta.end()))};
  auto data = tw.phi.mutable_data();
  for (std::size_t w = 0; w < nw; ++w) {
    MotionWindow win;
    win.frames.reserve(kWindowFrames);
    for (std::size_t p = 0; p < kWindowFrames; ++p) {
      const std::size_t i = in.plan.windows[w][p];
      PoseFrame fr = proto;
      std::copy_n(pred.theta.data().begin() + static_cast<std::ptrdiff_t>(i * kThetaDim), kThetaDim, fr.theta.begin());
      std::copy_n(pred.psi.data().begin() + static_cast<std::ptrdiff_t>(i * 3), 3, fr.psi.begin());
      win.frames.push_back(fr);
    }
    tw.yaw0[w] = yaw_of(rot6d_to_matrix(std::span<const double, 6>(win.frames.front().theta.data(), 6)));
    const PhiSequence phi = to_phi(win, skel);
    std::copy(phi.values.data().begin(), phi.values.data().end(),
              data.begin() + static_cast<std::ptrdiff_t>(w * kWindowFrames * kPhiDim));
  }
  return tw;
}

CycleTargets refresh_targets(const AdaptState& state, const BatchInputs& in, const TestWindows& tw, const AdaptConfig& cfg) {
  CycleTargets cyc;
  cyc.beta_prime = tw.beta_mean;
  const std::size_t nw = tw.phi.dim(0);
  const std::size_t d = state.m.config.latent;

  ad::Graph g;
  const Bound b = bind(g, state.m.params, false);
  const Array z = m_encode(b, g.constant(tw.phi)).value();
  const Array recon = m_decode(b, g.constant(z)).value();
  cyc.theta_prime = spread_rotations(recon, tw.yaw0, in.plan);
  if (cfg.codebook_depth == 0) {
    cyc.theta_star = cyc.theta_prime;
  } else {
    const ResidualCodebook part = state.codebook.prefix(cfg.codebook_depth);
    const Array snapped = quantized_sum(quantize_rows(part, z.reshaped({nw * kLatentSteps, d})), d).reshaped({nw, kLatentSteps, d});
    cyc.theta_star = spread_rotations(m_decode(b, g.constant(snapped)).value(), tw.yaw0, in.plan);
  }
  return cyc;
}

ad::Var m_loss(const Bound& mp, const Array& masked, const Array& clean, std::size_t n_test) {
  ad::Graph& g = *mp[0].graph;
  const std::size_t nb = masked.dim(0);
  if (clean.shape() != masked.shape() || n_test == 0 || n_test > nb) throw ShapeError("m_loss: mismatched windows");
  const ad::Var err = ad::smooth_l1(m_decode(mp, m_encode(mp, g.constant(masked))) - g.constant(clean));
  ad::Var loss = ad::mean(ad::slice(err, 0, 0, n_test));
  if (n_test < nb) loss = loss + ad::mean(ad::slice(err, 0, n_test, nb));
  return loss;
}

double adapt_m_step(AdaptState& state, Adam& opt, const TestWindows& tw, const ReplayBatch& replay, const AdaptConfig& cfg,
                    std::mt19937_64& rng) {
  const std::size_t nt = tw.phi.dim(0);
  const std::size_t nr = cfg.use_self_replay ? replay.phi.dim(0) : 0;
  const std::size_t nb = nt + nr;
  const std::size_t stride = kWindowFrames * kPhiDim;

  // Clean targets and their masked copies: test windows first, replay after.
  Array clean({nb, kWindowFrames, kPhiDim}), masked({nb, kWindowFrames, kPhiDim});
  for (std::size_t w = 0; w < nb; ++w) {
    const Array& src = w < nt ? tw.phi : replay.phi;
    const std::size_t row = w < nt ? w : w - nt;
    const PhiSequence p = phi_from_values(slice_rows(src, row, row + 1).reshaped({kWindowFrames, kPhiDim}));
    const PhiSequence a = augment(p, rng, 0.0, cfg.mask_prob);
    std::copy(p.values.data().begin(), p.values.data().end(), clean.mutable_data().begin() + static_cast<std::ptrdiff_t>(w * stride));
    std::copy(a.values.data().begin(), a.values.data().end(), masked.mutable_data().begin() + static_cast<std::ptrdiff_t>(w * stride));
  }

  ad::Graph g;
  const Bound b = bind(g, state.m.params);
  const ad::Var loss = m_loss(b, masked, clean, nt);
  const double value = loss.value().item();
  check_finite(value, "L_M");
  g.backward(loss);
  opt.step(state.m.params, gradients(g, b));
  check_finite(state.m.params, "denoiser");

  // Codebook sync with the updated encoder's latents.
  if (cfg.codebook_depth > 0 && (cfg.use_self_replay || cfg.sync_test_latents)) {
    ad::Graph ge;
    const Bound be = bind(ge, state.m.params, false);
    const std::size_t d = state.m.config.latent;
    if (cfg.use_self_replay) {
      const Array z = m_encode(be, ge.constant(replay.phi)).value();
      sync_codebook(state.codebook, cfg.codebook_depth, z.reshaped({nr * kLatentSteps, d}), cfg.mu_c);
    }
    if (cfg.sync_test_latents) {
      const Array z = m_encode(be, ge.constant(tw.phi)).value();
      sync_codebook(state.codebook, cfg.codebook_depth, z.reshaped({nt * kLatentSteps, d}), cfg.mu_c);
    }
  }
  return value;
}

// ------------------------------------------------------------ batch

double BatchTelemetry::mean_l_f() const {
  double s = 0.0;
  for (const auto& l : f_losses) s += l.l_f;
  return f_losses.empty() ? 0.0 : s / static_cast<double>(f_losses.size());
}

double BatchTelemetry::mean_l_m() const {
  return m_losses.empty() ? 0.0 : std::accumulate(m_losses.begin(), m_losses.end(), 0.0) / static_cast<double>(m_losses.size());
}

double BatchTelemetry::mean_l_ach() const {
  double s = 0.0;
  for (const auto& l : f_losses) s += l.l_ach;
  return f_losses.empty() ? 0.0 : s / static_cast<double>(f_losses.size());
}

BatchResult adapt_batch(AdaptState& state, const ObservedBatch& batch, const AdaptConfig& cfg, std::mt19937_64& rng) {
  const auto t0 = std::chrono::steady_clock::now();
  if (!cfg.continuous) state.reset_to_pretrained();
  const BatchInputs in = prepare_batch(batch, cfg.camera);
  const std::size_t n = batch.frames.size();

  BatchResult res;
  res.telemetry.person_id = batch.person_id;
  res.telemetry.batch_idx = batch.batch_idx;

  const WeightSnapshot f_pre = snapshot(state.f.params);
  const WeightSnapshot m_start = snapshot(state.m.params);
  const ResidualCodebook c_start = state.codebook;
  const AdamConfig adam{cfg.lr_start, cfg.lr_end, cfg.cycles, 0.9, 0.999, 1e-8};
  Adam opt_f(state.f.params, adam);
  Adam opt_m(state.m.params, adam);

  try {
    const ReplayBatch replay = prepare_replay(state, cfg, rng);
    CycleTargets cyc = refresh_targets(state, in, test_windows(state.f, in), cfg);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::size_t cursor = n;
    for (std::size_t cycle = 0; cycle < cfg.cycles; ++cycle) {
      if (cursor + cfg.minibatch > n) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const std::vector<std::size_t> frames(order.begin() + static_cast<std::ptrdiff_t>(cursor),
                                            order.begin() + static_cast<std::ptrdiff_t>(cursor + cfg.minibatch));
      cursor += cfg.minibatch;

      res.telemetry.f_losses.push_back(adapt_f_step(state, opt_f, in, cyc, frames, cfg));
      const TestWindows tw = test_windows(state.f, in);
      res.telemetry.m_losses.push_back(adapt_m_step(state, opt_m, tw, replay, cfg, rng));
      ++res.telemetry.pairs;
      if (cycle + 1 < cfg.cycles) cyc = refresh_targets(state, in, tw, cfg);
    }
  } catch (const NumericError&) {
    res.telemetry.aborted = true;
  } catch (const NonFiniteError&) {
    res.telemetry.aborted = true;
  } catch (const GeometryError&) {
    res.telemetry.aborted = true;
  }
  if (res.telemetry.aborted) {
    load(state.f.params, f_pre);
    load(state.m.params, m_start);
    state.codebook = c_start;
  }

  const PosePrediction pred = f_predict(state.f, in.features);
  res.predictions.reserve(n);
  for (std::size_t i = 0; i < n; ++i) res.predictions.push_back(pred.frame(i));

  if (cfg.use_soft_reset) load(state.f.params, ema_blend(f_pre, snapshot(state.f.params), cfg.mu_f));
  if (cfg.mu_m) load(state.m.params, ema_blend(m_start, snapshot(state.m.params), *cfg.mu_m));

  res.telemetry.drift = drift_metric(state.m, state.m_bar(), state.drift_probe());
  const double floor = cfg.dead_fraction * static_cast<double>(cfg.replay_minibatch * kLatentSteps) /
                       static_cast<double>(state.codebook.config.codes);
  res.telemetry.codebook_util = cfg.codebook_depth == 0 ? 0.0 : utilization(state.codebook.prefix(cfg.codebook_depth), floor);
  res.telemetry.wall_ms =
      cfg.deterministic ? 0.0 : std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

// ------------------------------------------------------------ streams

std::pair<double, double> score_batch(const std::vector<PoseFrame>& pred, const std::vector<PoseFrame>& gt) {
  if (pred.size() != gt.size() || pred.empty()) throw std::invalid_argument("score_batch: prediction and GT sizes differ");
  const Skeleton& skel = Skeleton::standard();
  double e = 0.0, epa = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const Joints p = forward_kinematics(skel, pred[i]);
    const Joints t = forward_kinematics(skel, gt[i]);
    e += mpjpe(p, t);
    epa += mpjpe_pa(p, t);
  }
  return {e / static_cast<double>(pred.size()), epa / static_cast<double>(pred.size())};
}

TelemetryRow telemetry_row(const BatchTelemetry& t, const std::vector<PoseFrame>& pred, const std::vector<PoseFrame>& gt) {
  const auto [e, epa] = score_batch(pred, gt);
  return TelemetryRow{t.person_id, t.batch_idx, e, epa, t.mean_l_f(), t.mean_l_m(), t.mean_l_ach(), t.drift, t.codebook_util, t.wall_ms};
}

std::uint64_t stream_rng_seed(std::uint64_t seed, std::uint32_t person_id) { return seed * 0x2545F4914F6CDD1DULL + person_id; }

StreamRun run_stream(const PretrainedModels& pre, const StreamSpec& spec, const AdaptConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (spec.shift == DomainShift::source()) throw std::invalid_argument("run_stream: the test domain must differ from the source domain");
  AdaptState state(pre, cfg, seed);
  PersonStream stream(spec.profile, spec.shift, cfg.camera, spec.minutes, spec.stream_seed);
  std::mt19937_64 rng(stream_rng_seed(seed, spec.profile.person_id));
  StreamRun run;
  while (auto batch = stream.next()) {
    const BatchResult r = adapt_batch(state, batch->observed, cfg, rng);
    run.rows.push_back(telemetry_row(r.telemetry, r.predictions, batch->gt));
    run.final_drift = r.telemetry.drift;
  }
  return run;
}

std::vector<StreamRun> run_streams(const PretrainedModels& pre, const std::vector<StreamSpec>& specs, const AdaptConfig& cfg,
                                   std::uint64_t seed) {
  std::vector<StreamRun> out;
  out.reserve(specs.size());
  for (const auto& s : specs) out.push_back(run_stream(pre, s, cfg, seed));
  return out;
}

void write_telemetry_csv(const std::filesystem::path& path, const std::vector<TelemetryRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "person_id,batch_idx,mpjpe_mm,mpjpe_pa_mm,L_F,L_M,L_ach,drift,codebook_util,wall_ms\n";
  char line[512];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%u,%u,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.person_id, r.batch_idx,
                  r.mpjpe_mm, r.mpjpe_pa_mm, r.l_f, r.l_m, r.l_ach, r.drift, r.codebook_util, r.wall_ms);
    out << line;
  }
}

std::vector<TelemetryRow> read_telemetry_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "person_id,batch_idx,mpjpe_mm,mpjpe_pa_mm,L_F,L_M,L_ach,drift,codebook_util,wall_ms")
    throw std::runtime_error("telemetry CSV: unexpected header in " + path.string());
  std::vector<TelemetryRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    TelemetryRow r;
    if (std::sscanf(line.c_str(), "%u,%u,%lf,%lf,%lf,%lf,%lf,%lf,%lf,%lf", &r.person_id, &r.batch_idx, &r.mpjpe_mm, &r.mpjpe_pa_mm,
                    &r.l_f, &r.l_m, &r.l_ach, &r.drift, &r.codebook_util, &r.wall_ms) != 10)
      throw std::runtime_error("telemetry CSV: malformed row '" + line + "'");
    rows.push_back(r);
  }
  return rows;
}

namespace {

constexpr char kPredMagic[4] = {'M', 'T', 'P', 'R'};
constexpr std::uint32_t kPredVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); }

std::uint32_t get_u32(std::istream& is, const std::filesystem::path& path) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw std::runtime_error("truncated predictions file " + path.string());
  return v;
}

}  // namespace

void write_predictions(const std::filesystem::path& path, const std::vector<PredictionRecord>& records) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os.write(kPredMagic, 4);
  put_u32(os, kPredVersion);
  put_u32(os, static_cast<std::uint32_t>(records.size()));
  for (const auto& r : records) {
    put_u32(os, r.person_id);
    put_u32(os, r.batch_idx);
    put_u32(os, static_cast<std::uint32_t>(r.frames.size()));
    for (const auto& f : r.frames) {
      os.write(reinterpret_cast<const char*>(f.theta.data()), sizeof(double) * kThetaDim);
      os.write(reinterpret_cast<const char*>(f.beta.data()), sizeof(double) * kBones);
      os.write(reinterpret_cast<const char*>(f.psi.data()), sizeof(double) * 3);
    }
  }
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

std::vector<PredictionRecord> read_predictions(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || !std::equal(magic, magic + 4, kPredMagic)) throw std::runtime_error(path.string() + " is not a predictions file");
  if (get_u32(is, path) != kPredVersion) throw std::runtime_error("unsupported predictions version in " + path.string());
  std::vector<PredictionRecord> out(get_u32(is, path));
  for (auto& r : out) {
    r.person_id = get_u32(is, path);
    r.batch_idx = get_u32(is, path);
    r.frames.resize(get_u32(is, path));
    for (auto& f : r.frames) {
      if (!is.read(reinterpret_cast<char*>(f.theta.data()), sizeof(double) * kThetaDim) ||
          !is.read(reinterpret_cast<char*>(f.beta.data()), sizeof(double) * kBones) ||
          !is.read(reinterpret_cast<char*>(f.psi.data()), sizeof(double) * 3)) {
        throw std::runtime_error("truncated predictions file " + path.string());
      }
    }
  }
  if (is.peek() != std::char_traits<char>::eof()) throw std::runtime_error("trailing bytes in " + path.string());
  return out;
}

}  // namespace mtta
