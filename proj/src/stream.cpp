#include "mtta/stream.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <stdexcept>

namespace mtta {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kBaseNoisePx = 2.0;
constexpr double kConfidenceScalePx = 10.0;
constexpr double kNuisanceNoise = 0.1;

// Joint indices of the standard skeleton.
enum J : std::size_t {
  kPelvis = 0, kLHip = 1, kRHip = 2, kSpine1 = 3, kLKnee = 4, kRKnee = 5, kSpine2 = 6, kLAnkle = 7, kRAnkle = 8,
  kSpine3 = 9, kNeck = 12, kLShoulder = 16, kRShoulder = 17, kLElbow = 18, kRElbow = 19
};

constexpr double kArmDown = 1.3;    // rest posture: arms lowered from the T-pose
constexpr double kElbowRest = 0.2;

double hann(double x) { return 0.5 * (1.0 - std::cos(x)); }

}  // namespace

void PersonProfile::validate() const {
  double total = 0.0;
  for (const auto& p : primitives) {
    if (!(p.weight >= 0.0)) throw std::invalid_argument("primitive weights must be non-negative");
    if (!(p.frequency > 0.0) || !std::isfinite(p.amplitude) || !std::isfinite(p.phase)) {
      throw std::invalid_argument("primitive parameters must be finite with positive frequency");
    }
    total += p.weight;
  }
  if (std::fabs(total - 1.0) > 1e-9) throw std::invalid_argument("primitive weights must sum to 1");
  for (double b : beta) {
    if (!(b >= 0.5 && b <= 2.0)) throw std::invalid_argument("profile bone scale outside [0.5, 2]");
  }
  if (!(distance > 1.5)) throw std::invalid_argument("person must stand more than 1.5 m from the camera");
}

PersonProfile PersonProfile::random(std::uint32_t person_id, std::uint64_t seed) {
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + person_id + 1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto between = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };
  PersonProfile p;
  p.person_id = person_id;
  p.seed = seed;

  const Skeleton& skel = Skeleton::standard();
  const double global = between(0.85, 1.15), legs = between(0.92, 1.08), arms = between(0.92, 1.08);
  for (std::size_t j = 1; j < kJoints; ++j) {
    if (skel.mirror[j] < j) continue;  // right side copies the left below
    const std::string_view n = skel.names[j];
    double s = global * between(0.97, 1.03);
    if (n.find("hip") != n.npos || n.find("knee") != n.npos || n.find("ankle") != n.npos || n.find("foot") != n.npos) s *= legs;
    if (n.find("shoulder") != n.npos || n.find("elbow") != n.npos || n.find("wrist") != n.npos) s *= arms;
    p.beta[j - 1] = s;
    p.beta[skel.mirror[j] - 1] = s;
  }

  const std::array<std::array<double, 4>, kPrimitiveCount> ranges = {{
      {0.7, 1.1, 0.30, 0.55},
      {0.20, 0.40, 0.40, 0.80},
      {0.15, 0.35, 0.60, 1.20},
      {0.10, 0.30, 0.20, 0.60},
  }};
  double total = 0.0;
  for (std::size_t i = 0; i < kPrimitiveCount; ++i) {
    auto& prim = p.primitives[i];
    prim.weight = -std::log(1.0 - u(rng)) + (i == 0 ? 0.5 : 0.0);
    prim.frequency = between(ranges[i][0], ranges[i][1]);
    prim.amplitude = between(ranges[i][2], ranges[i][3]);
    prim.phase = between(0.0, kTwoPi);
    total += prim.weight;
  }
  for (auto& prim : p.primitives) prim.weight /= total;
  p.heading = std::numbers::pi + between(-0.5, 0.5);
  p.distance = between(4.0, 5.5);
  return p;
}

PersonProfile PersonProfile::single(Primitive which, double frequency, double amplitude, std::uint64_t seed) {
  PersonProfile p;
  p.seed = seed;
  p.beta.fill(1.0);
  for (auto& prim : p.primitives) prim = {0.0, 1.0, 0.0, 0.0};
  p.primitives[static_cast<std::size_t>(which)] = {1.0, frequency, amplitude, 0.0};
  return p;
}

void DomainShift::validate() const {
  if (!(dropout_prob >= 0.0 && dropout_prob <= 1.0)) throw std::invalid_argument("dropout_prob must lie in [0, 1]");
  if (!(noise_scale >= 0.0) || !std::isfinite(radial_warp) || !keypoint_bias.allFinite()) {
    throw std::invalid_argument("domain shift knobs must be finite with non-negative noise");
  }
  for (double v : nuisance_offset) {
    if (!std::isfinite(v)) throw std::invalid_argument("non-finite nuisance offset");
  }
}

// ---------------------------------------------------------------- motion

MotionGenerator::MotionGenerator(const PersonProfile& profile, double fps) : profile_(profile), fps_(fps) {
  profile_.validate();
  if (!(fps > 0.0)) throw std::invalid_argument("fps must be positive");
}

PoseFrame MotionGenerator::frame(std::size_t index) const {
  const double t = static_cast<double>(index) / fps_;
  const auto& pr = profile_.primitives;

  // Slowly varying activity levels; with a single active primitive it stays at 1.
  std::array<double, kPrimitiveCount> w{};
  double total = 0.0;
  for (std::size_t i = 0; i < kPrimitiveCount; ++i) {
    const double period = 20.0 + 10.0 * static_cast<double>(i);
    w[i] = pr[i].weight * (1.0 + 0.6 * std::sin(kTwoPi * t / period + pr[i].phase));
    total += w[i];
  }
  for (auto& x : w) x /= total;

  std::array<Eigen::Vector3d, kJoints> aa;
  aa.fill(Eigen::Vector3d::Zero());
  double yaw = profile_.heading + 0.3 * std::sin(kTwoPi * t / 73.0 + profile_.primitives[0].phase);
  double root_dy = 0.0;

  {  // walk
    const auto& p = pr[0];
    const double a = w[0] * p.amplitude, ph = kTwoPi * p.frequency * t + p.phase;
    const double s = std::sin(ph);
    aa[kLHip].x() -= a * s;
    aa[kRHip].x() += a * s;
    aa[kLKnee].x() += 1.2 * a * hann(ph - 0.5);
    aa[kRKnee].x() += 1.2 * a * hann(ph + std::numbers::pi - 0.5);
    aa[kLShoulder].x() += 0.5 * a * s;
    aa[kRShoulder].x() -= 0.5 * a * s;
    root_dy += 0.03 * w[0] * std::cos(2.0 * ph);
  }
  {  // squat
    const auto& p = pr[1];
    const double a = w[1] * p.amplitude, s = hann(kTwoPi * p.frequency * t + p.phase);
    for (std::size_t j : {kLHip, kRHip}) aa[j].x() -= a * s;
    for (std::size_t j : {kLKnee, kRKnee}) aa[j].x() += 2.0 * a * s;
    for (std::size_t j : {kLAnkle, kRAnkle}) aa[j].x() -= a * s;
    aa[kSpine1].x() += 0.3 * a * s;
    root_dy -= 0.25 * a * s;
  }
  {  // reach
    const auto& p = pr[2];
    const double a = w[2] * p.amplitude, ph = kTwoPi * p.frequency * t + p.phase;
    const double sl = hann(ph), sr = hann(ph + std::numbers::pi);
    aa[kLShoulder].z() += a * sl;
    aa[kRShoulder].z() -= a * sr;
    aa[kLElbow].y() += 0.5 * a * sl;
    aa[kRElbow].y() -= 0.5 * a * sr;
  }
  {  // sway
    const auto& p = pr[3];
    const double a = w[3] * p.amplitude, s = std::sin(kTwoPi * p.frequency * t + p.phase);
    yaw += a * s;
    aa[kSpine3].y() -= 0.5 * a * s;
    aa[kNeck].y() -= 0.2 * a * s;
  }

  PoseFrame f;
  f.beta = profile_.beta;
  const Eigen::Matrix3d pelvis = rotation_y(yaw);
  auto put = [&](std::size_t j, const Eigen::Matrix3d& r) {
    const auto r6 = matrix_to_rot6d(r);
    std::copy(r6.begin(), r6.end(), f.theta.begin() + static_cast<std::ptrdiff_t>(6 * j));
  };
  put(kPelvis, pelvis);
  for (std::size_t j = 1; j < kJoints; ++j) {
    Eigen::Matrix3d base = Eigen::Matrix3d::Identity();
    if (j == kLShoulder) base = axis_angle(Eigen::Vector3d(0, 0, -kArmDown));
    if (j == kRShoulder) base = axis_angle(Eigen::Vector3d(0, 0, kArmDown));
    if (j == kLElbow) base = axis_angle(Eigen::Vector3d(0, kElbowRest, 0));
    if (j == kRElbow) base = axis_angle(Eigen::Vector3d(0, -kElbowRest, 0));
    put(j, axis_angle(aa[j]) * base);
  }
  const double drift = profile_.primitives[1].phase;
  f.psi = {0.3 * std::sin(kTwoPi * t / 41.0 + drift), root_dy, profile_.distance + 0.4 * std::sin(kTwoPi * t / 57.0 + 2.0 * drift)};
  return f;
}

std::vector<PoseFrame> generate_motion(const PersonProfile& profile, std::size_t n_frames, double fps, std::mt19937_64& rng) {
  if (n_frames == 0) throw std::invalid_argument("generate_motion: n_frames must be positive");
  const MotionGenerator gen(profile, fps);
  const std::size_t start = std::uniform_int_distribution<std::size_t>(0, 100000)(rng);
  std::vector<PoseFrame> out;
  out.reserve(n_frames);
  for (std::size_t i = 0; i < n_frames; ++i) out.push_back(gen.frame(start + i));
  return out;
}

// ---------------------------------------------------------------- observation

ObservationFeature observe_frame(const PoseFrame& gt, const Camera& cam, const DomainShift& shift, std::mt19937_64& rng) {
  const Projection proj = project_2d(cam, forward_kinematics(Skeleton::standard(), gt));
  std::normal_distribution<double> noise(0.0, kBaseNoisePx * shift.noise_scale);
  std::normal_distribution<double> nuisance(0.0, kNuisanceNoise);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ObservationFeature o;
  const Eigen::Vector2d c = cam.principal_point;
  for (std::size_t j = 0; j < kJoints; ++j) {
    const Eigen::Vector2d exact = proj.uv.row(static_cast<Eigen::Index>(j)).transpose();
    const Eigen::Vector2d off = exact - c;
    Eigen::Vector2d obs = c + off * (1.0 + shift.radial_warp * off.squaredNorm() / (cam.focal * cam.focal));
    obs += shift.keypoint_bias;
    // Draw every random number unconditionally so the stream does not depend on branch outcomes.
    const double nx = noise(rng), ny = noise(rng), drop = u(rng);
    obs += Eigen::Vector2d(nx, ny);
    if (drop < shift.dropout_prob) {
      o.keypoints.row(static_cast<Eigen::Index>(j)).setZero();
      o.confidence[j] = 0.0;
    } else {
      o.keypoints.row(static_cast<Eigen::Index>(j)) = obs.transpose();
      o.confidence[j] = std::exp(-(obs - exact).norm() / kConfidenceScalePx);
    }
  }
  for (std::size_t i = 0; i < kNuisanceDim; ++i) o.nuisance[i] = shift.nuisance_offset[i] + nuisance(rng);
  return o;
}

std::vector<ObservationFeature> observe(const std::vector<PoseFrame>& gt, const Camera& cam, const DomainShift& shift,
                                        std::mt19937_64& rng) {
  cam.validate();
  shift.validate();
  std::vector<ObservationFeature> out;
  out.reserve(gt.size());
  for (const auto& f : gt) out.push_back(observe_frame(f, cam, shift, rng));
  return out;
}

// ---------------------------------------------------------------- streaming

PersonStream::PersonStream(PersonProfile profile, DomainShift shift, Camera cam, double total_minutes, std::uint64_t seed)
    : profile_(std::move(profile)), shift_(shift), cam_(cam), gen_(profile_), rng_(seed) {
  if (!(total_minutes > 0.0)) throw std::invalid_argument("stream length must be positive");
  shift_.validate();
  cam_.validate();
  const auto frames = static_cast<std::size_t>(std::floor(total_minutes * 60.0 * kStreamFps + 1e-9));
  total_batches_ = frames / kBatchFrames;
  start_frame_ = std::uniform_int_distribution<std::size_t>(0, 100000)(rng_);
}

std::optional<StreamBatch> PersonStream::next() {
  if (emitted_ >= total_batches_) return std::nullopt;
  StreamBatch b;
  b.observed.person_id = profile_.person_id;
  b.observed.batch_idx = static_cast<std::uint32_t>(emitted_);
  b.gt.reserve(kBatchFrames);
  for (std::size_t i = 0; i < kBatchFrames; ++i) b.gt.push_back(gen_.frame(start_frame_ + emitted_ * kBatchFrames + i));
  b.observed.frames = observe(b.gt, cam_, shift_, rng_);
  ++emitted_;
  return b;
}

PersonStream stream_person(const PersonProfile& profile, const DomainShift& shift, double total_minutes, std::uint64_t seed,
                           const Camera& cam) {
  return PersonStream(profile, shift, cam, total_minutes, seed);
}

// ---------------------------------------------------------------- dump files

namespace {

constexpr std::uint32_t kBatchFormatVersion = 1;
constexpr std::uint32_t kFlagHasGt = 1;
constexpr std::size_t kObsDoubles = kJoints * 2 + kJoints + kNuisanceDim;
constexpr std::size_t kGtDoubles = kThetaDim + kBones + 3;

struct BatchHeader {
  std::uint32_t person_id, batch_idx, frames, flags;
};

void put_u32(std::ofstream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void put_f64s(std::ofstream& os, const double* p, std::size_t n) {
  os.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * sizeof(double)));
}

std::uint32_t get_u32(std::ifstream& is, const std::filesystem::path& path) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 4)) throw std::runtime_error("truncated batch file " + path.string());
  return v;
}

void get_f64s(std::ifstream& is, double* p, std::size_t n, const std::filesystem::path& path) {
  if (!is.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n * sizeof(double)))) {
    throw std::runtime_error("truncated batch file " + path.string());
  }
}

BatchHeader read_header(std::ifstream& is, const std::filesystem::path& path) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "MTSB", 4) != 0) throw std::runtime_error(path.string() + " is not a batch file");
  if (get_u32(is, path) != kBatchFormatVersion) throw std::runtime_error("unsupported batch format in " + path.string());
  BatchHeader h{};
  h.person_id = get_u32(is, path);
  h.batch_idx = get_u32(is, path);
  h.frames = get_u32(is, path);
  h.flags = get_u32(is, path);
  if (h.frames > 1u << 20) throw std::runtime_error("implausible frame count in " + path.string());
  return h;
}

ObservedBatch read_observations(std::ifstream& is, const BatchHeader& h, const std::filesystem::path& path) {
  ObservedBatch b;
  b.person_id = h.person_id;
  b.batch_idx = h.batch_idx;
  b.frames.resize(h.frames);
  std::array<double, kObsDoubles> buf{};
  for (auto& f : b.frames) {
    get_f64s(is, buf.data(), buf.size(), path);
    for (std::size_t j = 0; j < kJoints; ++j) {
      f.keypoints(static_cast<Eigen::Index>(j), 0) = buf[2 * j];
      f.keypoints(static_cast<Eigen::Index>(j), 1) = buf[2 * j + 1];
      f.confidence[j] = buf[2 * kJoints + j];
    }
    std::copy_n(buf.begin() + 3 * kJoints, kNuisanceDim, f.nuisance.begin());
    f.validate();
  }
  return b;
}

}  // namespace

void write_batch(const std::filesystem::path& path, const StreamBatch& batch, bool include_gt) {
  const auto& frames = batch.observed.frames;
  if (include_gt && batch.gt.size() != frames.size()) throw std::invalid_argument("write_batch: GT and observation counts differ");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os.write("MTSB", 4);
  put_u32(os, kBatchFormatVersion);
  put_u32(os, batch.observed.person_id);
  put_u32(os, batch.observed.batch_idx);
  put_u32(os, static_cast<std::uint32_t>(frames.size()));
  put_u32(os, include_gt ? kFlagHasGt : 0u);
  std::array<double, kObsDoubles> buf{};
  for (const auto& f : frames) {
    for (std::size_t j = 0; j < kJoints; ++j) {
      buf[2 * j] = f.keypoints(static_cast<Eigen::Index>(j), 0);
      buf[2 * j + 1] = f.keypoints(static_cast<Eigen::Index>(j), 1);
      buf[2 * kJoints + j] = f.confidence[j];
    }
    std::copy(f.nuisance.begin(), f.nuisance.end(), buf.begin() + 3 * kJoints);
    put_f64s(os, buf.data(), buf.size());
  }
  if (include_gt) {
    for (const auto& g : batch.gt) {
      put_f64s(os, g.theta.data(), kThetaDim);
      put_f64s(os, g.beta.data(), kBones);
      put_f64s(os, g.psi.data(), 3);
    }
  }
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

ObservedBatch read_observed_batch(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open batch file " + path.string());
  const BatchHeader h = read_header(is, path);
  return read_observations(is, h, path);
}

StreamBatch read_eval_batch(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open batch file " + path.string());
  const BatchHeader h = read_header(is, path);
  if ((h.flags & kFlagHasGt) == 0) throw std::runtime_error(path.string() + " carries no ground truth");
  StreamBatch b;
  b.observed = read_observations(is, h, path);
  b.gt.resize(h.frames);
  for (auto& g : b.gt) {
    get_f64s(is, g.theta.data(), kThetaDim, path);
    get_f64s(is, g.beta.data(), kBones, path);
    get_f64s(is, g.psi.data(), 3, path);
    g.validate();
  }
  return b;
}

static_assert(kGtDoubles == 156);

}  // namespace mtta
