#include "mtta/networks.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "mtta/ops.hpp"

namespace mtta {

// ---------------------------------------------------------------- ParamSet

void ParamSet::add(std::string name, Array value) {
  if (std::find(names_.begin(), names_.end(), name) != names_.end()) throw LayoutError("duplicate parameter " + name);
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
}

std::size_t ParamSet::index(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return i;
  }
  throw LayoutError("no parameter named " + std::string(name));
}

Layout ParamSet::layout() const {
  Layout out;
  for (std::size_t i = 0; i < names_.size(); ++i) out.push_back({names_[i], values_[i].shape()});
  return out;
}

std::size_t ParamSet::total_size() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

namespace {

std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t bytes) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < bytes; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

std::string layout_str(const Layout& l) {
  std::string s;
  for (const auto& e : l) s += e.name + shape_str(e.shape) + " ";
  return s;
}

}  // namespace

std::uint64_t ParamSet::hash() const {
  std::uint64_t h = 14695981039346656037ULL;
  for (std::size_t i = 0; i < values_.size(); ++i) {
    h = fnv1a(h, names_[i].data(), names_[i].size());
    h = fnv1a(h, values_[i].data().data(), values_[i].size() * sizeof(double));
  }
  return h;
}

// ---------------------------------------------------------------- snapshots

std::size_t WeightSnapshot::offset_of(std::string_view name) const {
  std::size_t off = 0;
  for (const auto& e : layout) {
    if (e.name == name) return off;
    off += shape_size(e.shape);
  }
  throw LayoutError("snapshot has no entry " + std::string(name));
}

Array WeightSnapshot::get(std::string_view name) const {
  const std::size_t off = offset_of(name);
  for (const auto& e : layout) {
    if (e.name == name) {
      const auto first = values.begin() + static_cast<std::ptrdiff_t>(off);
      return Array(e.shape, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(shape_size(e.shape))));
    }
  }
  throw LayoutError("snapshot has no entry " + std::string(name));
}

WeightSnapshot snapshot(const ParamSet& params) {
  WeightSnapshot s;
  s.layout = params.layout();
  s.values.reserve(params.total_size());
  for (std::size_t i = 0; i < params.count(); ++i) {
    const auto d = params.value(i).data();
    s.values.insert(s.values.end(), d.begin(), d.end());
  }
  return s;
}

void load(ParamSet& params, const WeightSnapshot& snap) {
  if (params.layout() != snap.layout) {
    throw LayoutError("snapshot layout mismatch: model has " + layout_str(params.layout()) + "but snapshot has " +
                      layout_str(snap.layout));
  }
  std::size_t off = 0;
  for (std::size_t i = 0; i < params.count(); ++i) {
    auto dst = params.mutable_value(i).mutable_data();
    std::copy_n(snap.values.begin() + static_cast<std::ptrdiff_t>(off), dst.size(), dst.begin());
    off += dst.size();
  }
}

WeightSnapshot ema_blend(const WeightSnapshot& a, const WeightSnapshot& b, double mu) {
  if (a.layout != b.layout || a.values.size() != b.values.size()) throw LayoutError("ema_blend: layout mismatch");
  if (!(mu >= 0.0 && mu <= 1.0)) throw std::invalid_argument("ema_blend: mu must lie in [0, 1]");
  // Endpoints are copied so they hold bit-exactly; the b + mu*(a - b) form keeps blend(a, a, mu) == a.
  if (mu == 1.0) return a;
  if (mu == 0.0) return b;
  WeightSnapshot out{a.layout, std::vector<double>(a.values.size())};
  for (std::size_t i = 0; i < a.values.size(); ++i) out.values[i] = b.values[i] + mu * (a.values[i] - b.values[i]);
  return out;
}

bool bit_equal(const WeightSnapshot& a, const WeightSnapshot& b) {
  return a.layout == b.layout && a.values.size() == b.values.size() &&
         std::memcmp(a.values.data(), b.values.data(), a.values.size() * sizeof(double)) == 0;
}

WeightSnapshot merge(const std::vector<std::pair<std::string, const WeightSnapshot*>>& parts) {
  WeightSnapshot out;
  for (const auto& [prefix, snap] : parts) {
    for (const auto& e : snap->layout) out.layout.push_back({prefix + e.name, e.shape});
    out.values.insert(out.values.end(), snap->values.begin(), snap->values.end());
  }
  return out;
}

WeightSnapshot extract(const WeightSnapshot& snap, std::string_view prefix) {
  WeightSnapshot out;
  std::size_t off = 0;
  for (const auto& e : snap.layout) {
    const std::size_t n = shape_size(e.shape);
    if (e.name.starts_with(prefix)) {
      out.layout.push_back({e.name.substr(prefix.size()), e.shape});
      out.values.insert(out.values.end(), snap.values.begin() + static_cast<std::ptrdiff_t>(off),
                        snap.values.begin() + static_cast<std::ptrdiff_t>(off + n));
    }
    off += n;
  }
  if (out.layout.empty()) throw LayoutError("no entries with prefix " + std::string(prefix));
  return out;
}

// ---------------------------------------------------------------- model file

namespace {

static_assert(std::endian::native == std::endian::little, "model files are written with native little-endian layout");

template <typename T>
void put(std::ofstream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(std::ifstream& is, const std::filesystem::path& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw std::runtime_error("truncated model file " + path.string());
  return v;
}

}  // namespace

void write_model(const std::filesystem::path& path, const WeightSnapshot& snap) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os.write("MTTA", 4);
  put<std::uint32_t>(os, kModelFormatVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(snap.layout.size()));
  for (const auto& e : snap.layout) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(e.shape.size()));
    for (auto d : e.shape) put<std::uint64_t>(os, d);
  }
  os.write(reinterpret_cast<const char*>(snap.values.data()), static_cast<std::streamsize>(snap.values.size() * sizeof(double)));
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

WeightSnapshot read_model(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open model file " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "MTTA", 4) != 0) throw std::runtime_error(path.string() + " is not a model file");
  const auto version = take<std::uint32_t>(is, path);
  if (version != kModelFormatVersion) throw std::runtime_error("unsupported model format version " + std::to_string(version));
  const auto entries = take<std::uint32_t>(is, path);
  WeightSnapshot s;
  std::size_t total = 0;
  for (std::uint32_t i = 0; i < entries; ++i) {
    const auto len = take<std::uint32_t>(is, path);
    if (len > 4096) throw std::runtime_error("corrupt entry name in " + path.string());
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw std::runtime_error("truncated model file " + path.string());
    const auto rank = take<std::uint32_t>(is, path);
    if (rank > 8) throw std::runtime_error("corrupt rank in " + path.string());
    Shape shape(rank);
    for (auto& d : shape) d = take<std::uint64_t>(is, path);
    total += shape_size(shape);
    s.layout.push_back({std::move(name), std::move(shape)});
  }
  s.values.resize(total);
  if (!is.read(reinterpret_cast<char*>(s.values.data()), static_cast<std::streamsize>(total * sizeof(double)))) {
    throw std::runtime_error("truncated model file " + path.string());
  }
  is.peek();
  if (!is.eof()) throw std::runtime_error("trailing bytes in model file " + path.string());
  return s;
}

// ---------------------------------------------------------------- binding and optimizer

Bound bind(ad::Graph& g, const ParamSet& params, bool trainable) {
  Bound b;
  b.vars.reserve(params.count());
  for (std::size_t i = 0; i < params.count(); ++i) b.vars.push_back(g.input(params.value(i), trainable));
  return b;
}

std::vector<Array> gradients(const ad::Graph& g, const Bound& bound) {
  std::vector<Array> out;
  out.reserve(bound.vars.size());
  for (auto v : bound.vars) out.push_back(g.grad(v));
  return out;
}

double cosine_lr(double start, double end, std::size_t step, std::size_t total_steps) {
  if (total_steps <= 1) return start;
  const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(total_steps - 1));
  return end + 0.5 * (start - end) * (1.0 + std::cos(std::numbers::pi * frac));
}

Adam::Adam(const ParamSet& params, AdamConfig cfg) : cfg_(cfg), layout_(params.layout()) {
  for (std::size_t i = 0; i < params.count(); ++i) {
    m_.emplace_back(params.value(i).size(), 0.0);
    v_.emplace_back(params.value(i).size(), 0.0);
  }
}

double Adam::current_lr() const { return cosine_lr(cfg_.lr_start, cfg_.lr_end, t_, cfg_.total_steps); }

void Adam::step(ParamSet& params, const std::vector<Array>& grads) {
  if (params.layout() != layout_) throw LayoutError("Adam: parameter layout changed");
  if (grads.size() != params.count()) throw LayoutError("Adam: gradient count mismatch");
  const double lr = current_lr();
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.count(); ++i) {
    if (grads[i].shape() != params.value(i).shape()) throw LayoutError("Adam: gradient shape mismatch for " + params.name(i));
    auto w = params.mutable_value(i).mutable_data();
    const auto gr = grads[i].data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gr[j];
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gr[j] * gr[j];
      w[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg_.eps);
    }
  }
}

// ---------------------------------------------------------------- pose estimator

void ObservationFeature::validate() const {
  for (double c : confidence) {
    if (!(c >= 0.0 && c <= 1.0)) throw std::invalid_argument("observation confidence outside [0, 1]");
  }
  if (!keypoints.allFinite()) throw std::invalid_argument("non-finite keypoints");
  for (double n : nuisance) {
    if (!std::isfinite(n)) throw std::invalid_argument("non-finite nuisance channel");
  }
}

Array features_from(const std::vector<ObservationFeature>& obs, const Camera& cam) {
  std::vector<double> out;
  out.reserve(obs.size() * kFeatureDim);
  for (const auto& o : obs) {
    o.validate();
    for (std::size_t j = 0; j < kJoints; ++j) {
      const bool dropped = o.confidence[j] == 0.0;
      for (int a = 0; a < 2; ++a) {
        const double n = 2.0 * o.keypoints(static_cast<Eigen::Index>(j), a) / cam.image_size[a] - 1.0;
        out.push_back(dropped ? 0.0 : std::clamp(n, -1.0, 1.0));
      }
      out.push_back(o.confidence[j]);
    }
    out.insert(out.end(), o.nuisance.begin(), o.nuisance.end());
  }
  return Array({obs.size(), kFeatureDim}, std::move(out));
}

namespace {

constexpr double kBetaLo = 0.5, kBetaSpan = 1.5, kMinDepth = 0.1, kInitDepth = 4.5;

Array normal_array(Shape shape, double stddev, std::mt19937_64* rng) {
  Array a(std::move(shape), 0.0);
  if (rng != nullptr && stddev > 0.0) {
    std::normal_distribution<double> nd(0.0, stddev);
    for (auto& v : a.mutable_data()) v = nd(*rng);
  }
  return a;
}

void build_pose_estimator(PoseEstimator& f, std::mt19937_64* rng) {
  const std::size_t h = f.config.hidden;
  if (h == 0) throw std::invalid_argument("pose estimator hidden width must be positive");
  const double head_scale = 0.1 / std::sqrt(static_cast<double>(h));
  f.params.add("l1.w", normal_array({kFeatureDim, h}, std::sqrt(2.0 / kFeatureDim), rng));
  f.params.add("l1.b", Array({h}, 0.0));
  f.params.add("l2.w", normal_array({h, h}, std::sqrt(2.0 / static_cast<double>(h)), rng));
  f.params.add("l2.b", Array({h}, 0.0));

  // Head biases encode the rest pose so that an untrained or zeroed network
  // still emits valid rotations, unit bone scales and a plausible depth.
  Array theta_b({kThetaDim}, 0.0);
  for (std::size_t j = 0; j < kJoints; ++j) {
    theta_b.at(6 * j) = 1.0;
    theta_b.at(6 * j + 4) = 1.0;
  }
  const double z = kInitDepth - kMinDepth;
  f.params.add("theta.w", normal_array({h, kThetaDim}, head_scale, rng));
  f.params.add("theta.b", std::move(theta_b));
  f.params.add("beta.w", normal_array({h, kBetaDim}, head_scale, rng));
  f.params.add("beta.b", Array({kBetaDim}, std::log((1.0 - kBetaLo) / kBetaSpan / (1.0 - (1.0 - kBetaLo) / kBetaSpan))));
  f.params.add("psi.w", normal_array({h, 3}, head_scale, rng));
  f.params.add("psi.b", Array({3}, std::vector<double>{0.0, 0.0, z + std::log(-std::expm1(-z))}));
}

}  // namespace

PoseEstimator::PoseEstimator(PoseEstimatorConfig cfg) : config(cfg) { build_pose_estimator(*this, nullptr); }

PoseEstimator::PoseEstimator(PoseEstimatorConfig cfg, std::mt19937_64& rng) : config(cfg) {
  build_pose_estimator(*this, &rng);
}

PoseOutputs f_forward(const Bound& p, ad::Var x) {
  using namespace ad;
  if (p.vars.size() != 10) throw LayoutError("f_forward: expected 10 pose-estimator parameters");
  if (x.shape().size() != 2 || x.shape()[1] != kFeatureDim) {
    throw ShapeError("f_forward: features must be [N," + std::to_string(kFeatureDim) + "], got " + shape_str(x.shape()));
  }
  Var h1 = relu(matmul(x, p[0]) + p[1]);
  Var h2 = relu(matmul(h1, p[2]) + p[3]);
  PoseOutputs out;
  out.theta = matmul(h2, p[4]) + p[5];
  out.beta = add_scalar(scale(sigmoid(matmul(h2, p[6]) + p[7]), kBetaSpan), kBetaLo);
  Var psi_raw = matmul(h2, p[8]) + p[9];
  Var depth = add_scalar(softplus(slice(psi_raw, 1, 2, 3)), kMinDepth);
  out.psi = concat({slice(psi_raw, 1, 0, 2), depth}, 1);
  return out;
}

PosePrediction f_predict(const PoseEstimator& f, const Array& features) {
  ad::Graph g;
  const Bound b = bind(g, f.params, false);
  const PoseOutputs o = f_forward(b, g.constant(features));
  return {o.theta.value(), o.beta.value(), o.psi.value()};
}

PoseFrame PosePrediction::frame(std::size_t i) const {
  PoseFrame f;
  std::copy_n(theta.data().begin() + static_cast<std::ptrdiff_t>(i * kThetaDim), kThetaDim, f.theta.begin());
  std::copy_n(beta.data().begin() + static_cast<std::ptrdiff_t>(i * kBetaDim), kBetaDim, f.beta.begin());
  std::copy_n(psi.data().begin() + static_cast<std::ptrdiff_t>(i * 3), 3, f.psi.begin());
  return f;
}

// ---------------------------------------------------------------- motion denoiser
//
// Encoder: 1x1 projection 197->h, ReLU; two blocks of
//   y = relu(conv3 stride 2 (x)); y = y + conv3(relu(conv3(y)))
// then a 1x1 conv h->d. The decoder mirrors it with nearest upsampling in
// place of the strided conv and ends in a 1x1 projection h->197.

namespace {

constexpr std::size_t kEncoderParams = 16;
constexpr std::size_t kDecoderParams = 16;

void add_conv(ParamSet& ps, const std::string& name, std::size_t out, std::size_t in, std::size_t k, double gain,
              std::mt19937_64* rng) {
  ps.add(name + ".w", normal_array({out, in, k}, gain / std::sqrt(static_cast<double>(in * k)), rng));
  ps.add(name + ".b", Array({out}, 0.0));
}

void build_denoiser(MotionDenoiser& m, std::mt19937_64* rng) {
  const std::size_t h = m.config.hidden, d = m.config.latent;
  if (h == 0 || d == 0) throw std::invalid_argument("denoiser widths must be positive");
  const double he = std::sqrt(2.0);
  auto& ps = m.params;
  add_conv(ps, "enc.in", h, kPhiDim, 1, he, rng);
  for (int b = 0; b < 2; ++b) {
    const std::string pre = "enc.block" + std::to_string(b);
    add_conv(ps, pre + ".down", h, h, 3, he, rng);
    add_conv(ps, pre + ".res_a", h, h, 3, he, rng);
    add_conv(ps, pre + ".res_b", h, h, 3, 0.1, rng);
  }
  add_conv(ps, "enc.latent", d, h, 1, 1.0, rng);
  add_conv(ps, "dec.in", h, d, 1, he, rng);
  for (int b = 0; b < 2; ++b) {
    const std::string pre = "dec.block" + std::to_string(b);
    add_conv(ps, pre + ".up", h, h, 3, he, rng);
    add_conv(ps, pre + ".res_a", h, h, 3, he, rng);
    add_conv(ps, pre + ".res_b", h, h, 3, 0.1, rng);
  }
  add_conv(ps, "dec.out", kPhiDim, h, 1, 1.0, rng);
}

ad::Var residual(const Bound& p, std::size_t at, ad::Var y) {
  using namespace ad;
  Var r = relu(conv1d(y, p[at], p[at + 1], 1, 1));
  return y + conv1d(r, p[at + 2], p[at + 3], 1, 1);
}

// Accepts [T,C] or [B,T,C]; returns the batched channel-major view [B,C,T] and whether a batch axis was added.
std::pair<ad::Var, bool> to_channel_major(ad::Var x) {
  const bool unbatched = x.shape().size() == 2;
  if (unbatched) x = ad::reshape(x, Shape{1, x.shape()[0], x.shape()[1]});
  return {ad::transpose(x), unbatched};
}

ad::Var from_channel_major(ad::Var y, bool unbatched) {
  y = ad::transpose(y);
  if (unbatched) y = ad::reshape(y, Shape{y.shape()[1], y.shape()[2]});
  return y;
}

}  // namespace

MotionDenoiser::MotionDenoiser(MotionDenoiserConfig cfg) : config(cfg) { build_denoiser(*this, nullptr); }

MotionDenoiser::MotionDenoiser(MotionDenoiserConfig cfg, std::mt19937_64& rng) : config(cfg) { build_denoiser(*this, &rng); }

std::size_t decoder_offset(const ParamSet& m_params) {
  if (m_params.count() != kEncoderParams + kDecoderParams) throw LayoutError("not a motion denoiser parameter set");
  return kEncoderParams;
}

ad::Var m_encode(const Bound& p, ad::Var x) {
  using namespace ad;
  if (p.vars.size() != kEncoderParams + kDecoderParams) throw LayoutError("m_encode: expected denoiser parameters");
  const Shape& s = x.shape();
  if ((s.size() != 2 && s.size() != 3) || s[s.size() - 2] != kWindowFrames || s.back() != kPhiDim) {
    throw ShapeError("m_encode: input must be [B,16,197] or [16,197], got " + shape_str(s));
  }
  auto [y, unbatched] = to_channel_major(x);
  y = relu(conv1d(y, p[0], p[1], 1, 0));
  for (std::size_t b = 0; b < 2; ++b) {
    const std::size_t at = 2 + 6 * b;
    y = relu(conv1d(y, p[at], p[at + 1], 2, 1));
    y = residual(p, at + 2, y);
  }
  y = conv1d(y, p[14], p[15], 1, 0);
  return from_channel_major(y, unbatched);
}

ad::Var m_decode(const Bound& p, ad::Var z) {
  using namespace ad;
  if (p.vars.size() != kEncoderParams + kDecoderParams) throw LayoutError("m_decode: expected denoiser parameters");
  const Shape& s = z.shape();
  const std::size_t d = p[kEncoderParams].shape()[1];
  if ((s.size() != 2 && s.size() != 3) || s[s.size() - 2] != kLatentSteps || s.back() != d) {
    throw ShapeError("m_decode: latent must be [B,4," + std::to_string(d) + "], got " + shape_str(s));
  }
  const std::size_t o = kEncoderParams;
  auto [y, unbatched] = to_channel_major(z);
  y = relu(conv1d(y, p[o], p[o + 1], 1, 0));
  for (std::size_t b = 0; b < 2; ++b) {
    const std::size_t at = o + 2 + 6 * b;
    y = relu(conv1d(upsample_nearest(y, 2), p[at], p[at + 1], 1, 1));
    y = residual(p, at + 2, y);
  }
  y = conv1d(y, p[o + 14], p[o + 15], 1, 0);
  return from_channel_major(y, unbatched);
}

}  // namespace mtta
