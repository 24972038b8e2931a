#include "mtta/codebook.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <stdexcept>
#include <string>

#include "mtta/kernels.hpp"
#include "mtta/ops.hpp"

namespace mtta {

ResidualCodebook::ResidualCodebook(CodebookConfig cfg) : config(cfg), usage({cfg.layers, cfg.codes}, 0.0) {
  if (cfg.codes == 0 || cfg.dim == 0) throw std::invalid_argument("codebook needs at least one code of positive dimension");
  for (std::size_t i = 0; i < cfg.layers; ++i) layers.emplace_back(Shape{cfg.codes, cfg.dim}, 0.0);
}

const double* ResidualCodebook::code(std::size_t layer, std::size_t index) const {
  if (layer >= layers.size() || index >= config.codes) throw std::out_of_range("codebook index out of range");
  return layers[layer].data().data() + index * config.dim;
}

void ResidualCodebook::validate() const {
  if (layers.size() != config.layers) throw std::invalid_argument("codebook layer count mismatch");
  for (const auto& l : layers) {
    if (l.shape() != Shape{config.codes, config.dim}) throw ShapeError("codebook layer shape " + shape_str(l.shape()));
    if (!l.all_finite()) throw NonFiniteError("non-finite code vector");
  }
  for (double u : usage.data()) {
    if (!(u >= 0.0)) throw std::invalid_argument("negative codebook usage");
  }
}

ResidualCodebook ResidualCodebook::prefix(std::size_t k) const {
  if (k > layers.size()) throw std::invalid_argument("codebook prefix deeper than the codebook");
  ResidualCodebook out({k, config.codes, config.dim});
  for (std::size_t i = 0; i < k; ++i) {
    out.layers[i] = layers[i];
    std::copy_n(usage.data().begin() + static_cast<std::ptrdiff_t>(i * config.codes), config.codes,
                out.usage.mutable_data().begin() + static_cast<std::ptrdiff_t>(i * config.codes));
  }
  return out;
}

WeightSnapshot ResidualCodebook::to_snapshot() const {
  ParamSet ps;
  for (std::size_t i = 0; i < layers.size(); ++i) ps.add("layer" + std::to_string(i), layers[i]);
  ps.add("usage", usage);
  return snapshot(ps);
}

ResidualCodebook ResidualCodebook::from_snapshot(const WeightSnapshot& snap) {
  std::size_t k = 0;
  while (k < snap.layout.size() && snap.layout[k].name == "layer" + std::to_string(k)) ++k;
  if (k + 1 != snap.layout.size() || snap.layout[k].name != "usage") throw LayoutError("not a codebook snapshot");
  const Array usage = snap.get("usage");
  if (usage.ndim() != 2 || usage.dim(0) != k) throw LayoutError("codebook usage shape " + shape_str(usage.shape()));
  std::size_t dim = 1;
  if (k > 0) {
    const Shape& s = snap.layout[0].shape;
    if (s.size() != 2) throw LayoutError("codebook layer must be 2-D");
    dim = s[1];
  }
  ResidualCodebook cb({k, usage.dim(1), dim});
  for (std::size_t i = 0; i < k; ++i) cb.layers[i] = snap.get("layer" + std::to_string(i));
  cb.usage = usage;
  cb.validate();
  return cb;
}

std::uint64_t ResidualCodebook::hash() const {
  ParamSet ps;
  for (std::size_t i = 0; i < layers.size(); ++i) ps.add("layer" + std::to_string(i), layers[i]);
  ps.add("usage", usage);
  return ps.hash();
}

std::vector<Quantized> quantize_rows(const ResidualCodebook& cb, const Array& z) {
  const std::size_t d = cb.config.dim;
  if (z.ndim() != 2 || z.dim(1) != d) {
    throw ShapeError("quantize: latent rows must have dim " + std::to_string(d) + ", got " + shape_str(z.shape()));
  }
  if (!z.all_finite()) throw NonFiniteError("quantize: non-finite latent");
  const std::size_t n = z.dim(0);
  std::vector<Quantized> out(n);
  std::vector<double> r(z.data().begin(), z.data().end());
  std::vector<double> c_sum(n * d, 0.0);
  std::vector<std::size_t> idx(n);
  for (auto& q : out) q.codes.reserve(cb.depth());
  for (std::size_t layer = 0; layer < cb.depth(); ++layer) {
    kernels::nearest_codes(r, cb.layers[layer].data(), idx, n, cb.config.codes, d);
    for (std::size_t i = 0; i < n; ++i) {
      Quantized& q = out[i];
      q.codes.push_back(idx[i]);
      q.inputs.emplace_back(r.begin() + static_cast<std::ptrdiff_t>(i * d), r.begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
      const double* c = cb.code(layer, idx[i]);
      for (std::size_t j = 0; j < d; ++j) {
        r[i * d + j] -= c[j];
        c_sum[i * d + j] += c[j];
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    out[i].c_sum.assign(c_sum.begin() + static_cast<std::ptrdiff_t>(i * d), c_sum.begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
    out[i].residual.resize(d);
    for (std::size_t j = 0; j < d; ++j) out[i].residual[j] = z[i * d + j] - out[i].c_sum[j];
  }
  return out;
}

Quantized quantize(const ResidualCodebook& cb, std::span<const double> z) {
  if (z.size() != cb.config.dim) {
    throw ShapeError("quantize: expected dim " + std::to_string(cb.config.dim) + ", got " + std::to_string(z.size()));
  }
  return quantize_rows(cb, Array({1, z.size()}, std::vector<double>(z.begin(), z.end()))).front();
}

Array quantized_sum(const std::vector<Quantized>& q, std::size_t dim) {
  std::vector<double> out;
  out.reserve(q.size() * dim);
  for (const auto& x : q) out.insert(out.end(), x.c_sum.begin(), x.c_sum.end());
  return Array({q.size(), dim}, std::move(out));
}

std::vector<Assignment> assignments_of(const std::vector<Quantized>& q) {
  std::vector<Assignment> out;
  for (const auto& x : q) {
    for (std::size_t layer = 0; layer < x.codes.size(); ++layer) out.push_back({layer, x.codes[layer], x.inputs[layer]});
  }
  return out;
}

void ema_update(ResidualCodebook& cb, const std::vector<Assignment>& assignments, double decay) {
  if (!(decay >= 0.0 && decay <= 1.0)) throw std::invalid_argument("ema_update: decay must lie in [0, 1]");
  if (assignments.empty()) return;
  const std::size_t k = cb.depth(), nc = cb.config.codes, d = cb.config.dim;
  std::vector<double> sums(k * nc * d, 0.0);
  std::vector<std::size_t> counts(k * nc, 0);
  for (const auto& a : assignments) {
    if (a.layer >= k || a.code >= nc || a.residual.size() != d) throw std::invalid_argument("ema_update: malformed assignment");
    const std::size_t slot = a.layer * nc + a.code;
    ++counts[slot];
    for (std::size_t j = 0; j < d; ++j) sums[slot * d + j] += a.residual[j];
  }
  auto usage = cb.usage.mutable_data();
  for (std::size_t layer = 0; layer < k; ++layer) {
    auto codes = cb.layers[layer].mutable_data();
    for (std::size_t c = 0; c < nc; ++c) {
      const std::size_t slot = layer * nc + c;
      usage[slot] = decay * usage[slot] + (1.0 - decay) * static_cast<double>(counts[slot]);
      if (counts[slot] == 0) continue;
      const double inv = 1.0 / static_cast<double>(counts[slot]);
      for (std::size_t j = 0; j < d; ++j) {
        double& v = codes[c * d + j];
        v = decay * v + (1.0 - decay) * (sums[slot * d + j] * inv);
      }
    }
  }
}

CodeSample sample_random_code(const ResidualCodebook& cb, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, cb.config.codes - 1);
  CodeSample s;
  s.vector.assign(cb.config.dim, 0.0);
  for (std::size_t layer = 0; layer < cb.depth(); ++layer) {
    const std::size_t i = pick(rng);
    s.indices.push_back(i);
    const double* c = cb.code(layer, i);
    for (std::size_t j = 0; j < cb.config.dim; ++j) s.vector[j] += c[j];
  }
  return s;
}

Array sample_latent_windows(const ResidualCodebook& cb, std::size_t n, std::mt19937_64& rng) {
  std::vector<double> out;
  out.reserve(n * kLatentSteps * cb.config.dim);
  for (std::size_t i = 0; i < n * kLatentSteps; ++i) {
    const CodeSample s = sample_random_code(cb, rng);
    out.insert(out.end(), s.vector.begin(), s.vector.end());
  }
  return Array({n, kLatentSteps, cb.config.dim}, std::move(out));
}

RevivalPool revival_pool(const std::vector<Quantized>& q) {
  RevivalPool pool;
  for (const auto& x : q) {
    if (pool.size() < x.inputs.size()) pool.resize(x.inputs.size());
    for (std::size_t layer = 0; layer < x.inputs.size(); ++layer) pool[layer].push_back(x.inputs[layer]);
  }
  return pool;
}

std::size_t revive_dead_codes(ResidualCodebook& cb, const RevivalPool& pool, double usage_floor, std::mt19937_64& rng) {
  const std::size_t nc = cb.config.codes, d = cb.config.dim;
  std::size_t revived = 0;
  auto usage = cb.usage.mutable_data();
  for (std::size_t layer = 0; layer < cb.depth(); ++layer) {
    const auto first = usage.begin() + static_cast<std::ptrdiff_t>(layer * nc);
    const double mean_usage = std::accumulate(first, first + static_cast<std::ptrdiff_t>(nc), 0.0) / static_cast<double>(nc);
    auto codes = cb.layers[layer].mutable_data();
    for (std::size_t c = 0; c < nc; ++c) {
      if (usage[layer * nc + c] >= usage_floor) continue;
      if (layer >= pool.size() || pool[layer].empty()) throw std::invalid_argument("revive_dead_codes: empty pool with dead codes");
      std::uniform_int_distribution<std::size_t> pick(0, pool[layer].size() - 1);
      const auto& v = pool[layer][pick(rng)];
      if (v.size() != d) throw ShapeError("revive_dead_codes: pool vector has wrong dimension");
      std::copy(v.begin(), v.end(), codes.begin() + static_cast<std::ptrdiff_t>(c * d));
      usage[layer * nc + c] = mean_usage;
      ++revived;
    }
  }
  return revived;
}

void init_kmeanspp(ResidualCodebook& cb, const Array& latents, std::mt19937_64& rng) {
  const std::size_t nc = cb.config.codes, d = cb.config.dim;
  if (latents.ndim() != 2 || latents.dim(1) != d || latents.dim(0) == 0) throw ShapeError("init_kmeanspp: bad latents " + shape_str(latents.shape()));
  const std::size_t n = latents.dim(0);
  std::vector<double> r(latents.data().begin(), latents.data().end());
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t layer = 0; layer < cb.depth(); ++layer) {
    auto codes = cb.layers[layer].mutable_data();
    std::vector<double> best(n, std::numeric_limits<double>::infinity());
    std::size_t pick = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    for (std::size_t c = 0; c < nc; ++c) {
      std::copy_n(r.begin() + static_cast<std::ptrdiff_t>(pick * d), d, codes.begin() + static_cast<std::ptrdiff_t>(c * d));
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          const double diff = r[i * d + j] - codes[c * d + j];
          s += diff * diff;
        }
        best[i] = std::min(best[i], s);
        total += best[i];
      }
      if (total <= 0.0) {
        pick = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
        continue;
      }
      double target = u(rng) * total;
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        target -= best[i];
        if (target <= 0.0) {
          pick = i;
          break;
        }
      }
    }
    std::vector<std::size_t> idx(n);
    kernels::nearest_codes(r, cb.layers[layer].data(), idx, n, nc, d);
    auto usage = cb.usage.mutable_data();
    for (std::size_t i = 0; i < n; ++i) {
      usage[layer * nc + idx[i]] += 1.0;
      for (std::size_t j = 0; j < d; ++j) r[i * d + j] -= codes[idx[i] * d + j];
    }
  }
}

double utilization(const ResidualCodebook& cb, double usage_floor) {
  if (cb.usage.size() == 0) return 0.0;
  std::size_t alive = 0;
  for (double u : cb.usage.data()) alive += u > usage_floor ? 1 : 0;
  return static_cast<double>(alive) / static_cast<double>(cb.usage.size());
}

double drift_metric(const MotionDenoiser& live, const MotionDenoiser& frozen, const Array& latent_windows) {
  ad::Graph g;
  const Bound a = bind(g, live.params, false), b = bind(g, frozen.params, false);
  const ad::Var z = g.constant(latent_windows);
  const Array& ya = m_decode(a, z).value();
  const Array& yb = m_decode(b, z).value();
  double s = 0.0;
  for (std::size_t i = 0; i < ya.size(); ++i) s += std::fabs(ya[i] - yb[i]);
  return ya.size() == 0 ? 0.0 : s / static_cast<double>(ya.size());
}

}  // namespace mtta
