#include "mtta/eval.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace mtta {

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string file_safe(const std::string& s) {
  std::string out;
  for (char ch : s) out += (std::isalnum(static_cast<unsigned char>(ch)) || ch == '.' || ch == '-' || ch == '_') ? ch : '_';
  return out;
}

}  // namespace

// ------------------------------------------------------------ suite

DomainShift standard_shift() {
  DomainShift s;
  s.keypoint_bias = {6.0, -4.0};
  s.noise_scale = 2.0;
  s.dropout_prob = 0.1;
  s.radial_warp = 0.05;
  s.nuisance_offset.fill(0.5);
  return s;
}

SuiteConfig::SuiteConfig() : shift(standard_shift()) {}

void SuiteConfig::validate() const {
  if (persons == 0) throw std::invalid_argument("suite: persons must be >= 1");
  if (!(minutes > 0.0)) throw std::invalid_argument("suite: minutes must be positive");
  shift.validate();
  if (shift == DomainShift::source()) throw std::invalid_argument("suite: the shift must differ from the source domain");
}

void to_json(nlohmann::json& j, const DomainShift& s) {
  j = nlohmann::json{{"keypoint_bias", {s.keypoint_bias.x(), s.keypoint_bias.y()}},
                     {"noise_scale", s.noise_scale},
                     {"dropout_prob", s.dropout_prob},
                     {"radial_warp", s.radial_warp},
                     {"nuisance_offset", s.nuisance_offset}};
}

void from_json(const nlohmann::json& j, DomainShift& s) {
  static const std::set<std::string> keys = {"keypoint_bias", "noise_scale", "dropout_prob", "radial_warp", "nuisance_offset"};
  for (const auto& item : j.items()) {
    if (!keys.count(item.key())) throw std::invalid_argument("DomainShift: unknown key '" + item.key() + "'");
  }
  if (j.contains("keypoint_bias")) {
    const auto b = j.at("keypoint_bias").get<std::vector<double>>();
    if (b.size() != 2) throw std::invalid_argument("DomainShift: keypoint_bias needs 2 values");
    s.keypoint_bias = {b[0], b[1]};
  }
  if (j.contains("noise_scale")) j.at("noise_scale").get_to(s.noise_scale);
  if (j.contains("dropout_prob")) j.at("dropout_prob").get_to(s.dropout_prob);
  if (j.contains("radial_warp")) j.at("radial_warp").get_to(s.radial_warp);
  if (j.contains("nuisance_offset")) {
    const auto v = j.at("nuisance_offset").get<std::vector<double>>();
    if (v.size() != kNuisanceDim) throw std::invalid_argument("DomainShift: nuisance_offset needs 8 values");
    std::copy(v.begin(), v.end(), s.nuisance_offset.begin());
  }
}

void to_json(nlohmann::json& j, const SuiteConfig& c) {
  j = nlohmann::json{{"persons", c.persons}, {"minutes", c.minutes}, {"profile_seed", c.profile_seed}, {"shift", c.shift}};
}

void from_json(const nlohmann::json& j, SuiteConfig& c) {
  static const std::set<std::string> keys = {"persons", "minutes", "profile_seed", "shift"};
  for (const auto& item : j.items()) {
    if (!keys.count(item.key())) throw std::invalid_argument("SuiteConfig: unknown key '" + item.key() + "'");
  }
  if (j.contains("persons")) j.at("persons").get_to(c.persons);
  if (j.contains("minutes")) j.at("minutes").get_to(c.minutes);
  if (j.contains("profile_seed")) j.at("profile_seed").get_to(c.profile_seed);
  if (j.contains("shift")) j.at("shift").get_to(c.shift);
}

std::vector<StreamSpec> suite_specs(const SuiteConfig& suite, std::uint64_t seed) {
  suite.validate();
  std::vector<StreamSpec> specs;
  for (std::uint32_t p = 0; p < suite.persons; ++p) {
    specs.push_back({PersonProfile::random(p, suite.profile_seed * 7919 + p), suite.shift, suite.minutes,
                     seed * 1000003ULL + p});
  }
  return specs;
}

// ------------------------------------------------------------ dumps

std::size_t write_suite_dumps(const SuiteConfig& suite, std::uint64_t seed, const Camera& cam, const std::filesystem::path& dir,
                              bool include_gt) {
  std::size_t written = 0;
  for (const auto& spec : suite_specs(suite, seed)) {
    const std::filesystem::path pdir = dir / ("person_" + std::to_string(spec.profile.person_id));
    std::filesystem::create_directories(pdir);
    PersonStream stream(spec.profile, spec.shift, cam, spec.minutes, spec.stream_seed);
    while (auto batch = stream.next()) {
      char name[32];
      std::snprintf(name, sizeof name, "batch_%05u.mtsb", batch->observed.batch_idx);
      write_batch(pdir / name, *batch, include_gt);
      ++written;
    }
  }
  return written;
}

DumpRun adapt_dump_dir(const PretrainedModels& pre, const std::filesystem::path& dir, const AdaptConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (!std::filesystem::is_directory(dir)) throw std::runtime_error("stream directory " + dir.string() + " does not exist");
  std::vector<std::filesystem::path> persons;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_directory() && e.path().filename().string().rfind("person_", 0) == 0) persons.push_back(e.path());
  }
  std::sort(persons.begin(), persons.end());
  if (persons.empty()) throw std::runtime_error("no person_<id> directories under " + dir.string());

  DumpRun run;
  for (const auto& pdir : persons) {
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(pdir)) {
      if (e.path().extension() == ".mtsb") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) continue;
    const ObservedBatch first = read_observed_batch(files.front());
    AdaptState state(pre, cfg, seed);
    std::mt19937_64 rng(stream_rng_seed(seed, first.person_id));
    for (const auto& f : files) {
      const ObservedBatch batch = read_observed_batch(f);
      if (batch.person_id != first.person_id) throw std::runtime_error(f.string() + " belongs to another person");
      const BatchResult r = adapt_batch(state, batch, cfg, rng);
      TelemetryRow row;
      try {
        const StreamBatch eval = read_eval_batch(f);
        row = telemetry_row(r.telemetry, r.predictions, eval.gt);
      } catch (const std::runtime_error&) {
        row = telemetry_row(r.telemetry, r.predictions, r.predictions);
        row.mpjpe_mm = row.mpjpe_pa_mm = std::numeric_limits<double>::quiet_NaN();
      }
      run.rows.push_back(row);
      run.predictions.push_back({batch.person_id, batch.batch_idx, r.predictions});
    }
  }
  return run;
}

// ------------------------------------------------------------ grid

std::vector<Cell> expand_axes(const AdaptConfig& base, const nlohmann::json& axes) {
  using Setter = void (*)(AdaptConfig&, const nlohmann::json&);
  struct Axis {
    const char* name;
    Setter set;
  };
  static const Axis known[] = {
      {"soft_reset", [](AdaptConfig& c, const nlohmann::json& v) { c.use_soft_reset = v.get<bool>(); }},
      {"anchor", [](AdaptConfig& c, const nlohmann::json& v) { c.use_anchor_loss = v.get<bool>(); }},
      {"self_replay", [](AdaptConfig& c, const nlohmann::json& v) { c.use_self_replay = v.get<bool>(); }},
      {"mu_f", [](AdaptConfig& c, const nlohmann::json& v) { c.mu_f = v.get<double>(); }},
      {"k", [](AdaptConfig& c, const nlohmann::json& v) { c.codebook_depth = v.get<std::size_t>(); }},
      {"continuous", [](AdaptConfig& c, const nlohmann::json& v) { c.continuous = v.get<bool>(); }},
      {"mu_m",
       [](AdaptConfig& c, const nlohmann::json& v) {
         if (v.is_null()) {
           c.mu_m.reset();
         } else {
           c.mu_m = v.get<double>();
         }
       }},
  };
  if (!axes.is_null() && !axes.is_object()) throw std::invalid_argument("axes must be a JSON object");
  for (const auto& item : axes.items()) {
    const bool ok = std::any_of(std::begin(known), std::end(known), [&](const Axis& a) { return item.key() == a.name; });
    if (!ok) throw std::invalid_argument("unknown ablation axis '" + item.key() + "'");
    if (!item.value().is_array() || item.value().empty()) throw std::invalid_argument("axis '" + item.key() + "' needs a non-empty list");
  }

  std::vector<Cell> cells = {{"", base}};
  for (const auto& axis : known) {
    if (!axes.is_object() || !axes.contains(axis.name)) continue;
    std::vector<Cell> next;
    for (const auto& cell : cells) {
      for (const auto& v : axes.at(axis.name)) {
        Cell c = cell;
        axis.set(c.config, v);
        std::string label;
        if (v.is_boolean()) {
          label = v.get<bool>() ? "on" : "off";
        } else if (v.is_null()) {
          label = "off";
        } else {
          label = fmt("%g", v.get<double>());
        }
        c.name += (c.name.empty() ? "" : ";") + std::string(axis.name) + "=" + label;
        next.push_back(std::move(c));
      }
    }
    cells = std::move(next);
  }
  if (cells.size() == 1 && cells[0].name.empty()) cells[0].name = "base";
  return cells;
}

std::vector<GridRow> ablation_grid(const PretrainedModels& pre, const std::vector<Cell>& cells, const SuiteConfig& suite,
                                   const std::vector<std::uint64_t>& seeds, int threads, const LogFn& log) {
  suite.validate();
  std::vector<const Cell*> runnable;
  std::set<std::string> names;
  for (const auto& c : cells) {
    if (c.name.empty() || c.name.find(',') != std::string::npos || c.name.find('\n') != std::string::npos) {
      throw std::invalid_argument("cell names must be non-empty and free of commas and newlines");
    }
    if (!names.insert(c.name).second) throw std::invalid_argument("duplicate cell name '" + c.name + "'");
    try {
      c.config.validate();
      if (c.config.codebook_depth > pre.codebook.depth()) throw std::invalid_argument("k exceeds the pre-trained codebook depth");
      runnable.push_back(&c);
    } catch (const std::invalid_argument& e) {
      if (log) log("skipping cell " + c.name + ": " + e.what());
    }
  }

  struct Job {
    const Cell* cell;
    std::uint64_t seed;
    StreamSpec spec;
  };
  std::vector<Job> jobs;
  for (const Cell* c : runnable) {
    for (std::uint64_t s : seeds) {
      for (auto& spec : suite_specs(suite, s)) jobs.push_back({c, s, spec});
    }
  }

  std::vector<StreamRun> results(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  const int nthreads = std::max(1, threads);
#pragma omp parallel for schedule(dynamic, 1) num_threads(nthreads)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(jobs.size()); ++i) {
    const Job& job = jobs[static_cast<std::size_t>(i)];
    try {
      results[static_cast<std::size_t>(i)] = run_stream(pre, job.spec, job.cell->config, job.seed);
      if (log) {
#pragma omp critical(mtta_grid_log)
        log(job.cell->name + " seed " + std::to_string(job.seed) + " person " + std::to_string(job.spec.profile.person_id) +
            " done");
      }
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  std::vector<GridRow> rows;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    for (const auto& r : results[i].rows) rows.push_back({jobs[i].cell->name, jobs[i].seed, r});
  }
  return rows;
}

static const char* kGridHeader = "cell,seed,person_id,batch_idx,mpjpe_mm,mpjpe_pa_mm,L_F,L_M,L_ach,drift,codebook_util,wall_ms";

void write_grid_csv(const std::filesystem::path& path, const std::vector<GridRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << kGridHeader << '\n';
  char line[512];
  for (const auto& g : rows) {
    if (g.cell.find(',') != std::string::npos) throw std::invalid_argument("cell names must not contain commas");
    const auto& r = g.row;
    std::snprintf(line, sizeof line, ",%llu,%u,%u,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                  static_cast<unsigned long long>(g.seed), r.person_id, r.batch_idx, r.mpjpe_mm, r.mpjpe_pa_mm, r.l_f, r.l_m,
                  r.l_ach, r.drift, r.codebook_util, r.wall_ms);
    out << g.cell << line;
  }
}

std::vector<GridRow> read_grid_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != kGridHeader) throw std::runtime_error("grid CSV: unexpected header in " + path.string());
  std::vector<GridRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos || comma == 0) throw std::runtime_error("grid CSV: malformed row '" + line + "'");
    GridRow g;
    g.cell = line.substr(0, comma);
    unsigned long long seed = 0;
    auto& r = g.row;
    if (std::sscanf(line.c_str() + comma + 1, "%llu,%u,%u,%lf,%lf,%lf,%lf,%lf,%lf,%lf,%lf", &seed, &r.person_id, &r.batch_idx,
                    &r.mpjpe_mm, &r.mpjpe_pa_mm, &r.l_f, &r.l_m, &r.l_ach, &r.drift, &r.codebook_util, &r.wall_ms) != 11) {
      throw std::runtime_error("grid CSV: malformed row '" + line + "'");
    }
    g.seed = seed;
    rows.push_back(std::move(g));
  }
  return rows;
}

// ------------------------------------------------------------ summaries

double final_quarter_mean(const std::vector<TelemetryRow>& person_rows) {
  if (person_rows.empty()) throw std::invalid_argument("final_quarter_mean: no rows");
  const std::size_t n = person_rows.size();
  const std::size_t first = n - std::max<std::size_t>(1, n / 4);
  double s = 0;
  for (std::size_t i = first; i < n; ++i) s += person_rows[i].mpjpe_mm;
  return s / static_cast<double>(n - first);
}

namespace {

double final_quarter_pa(const std::vector<TelemetryRow>& rows) {
  const std::size_t n = rows.size();
  const std::size_t first = n - std::max<std::size_t>(1, n / 4);
  double s = 0;
  for (std::size_t i = first; i < n; ++i) s += rows[i].mpjpe_pa_mm;
  return s / static_cast<double>(n - first);
}

// cell -> seed -> person -> rows sorted by batch index, cells in first-seen order.
struct Grouped {
  std::vector<std::string> order;
  std::map<std::string, std::map<std::uint64_t, std::map<std::uint32_t, std::vector<TelemetryRow>>>> data;
};

Grouped group_rows(const std::vector<GridRow>& rows) {
  Grouped g;
  for (const auto& r : rows) {
    if (!g.data.count(r.cell)) g.order.push_back(r.cell);
    g.data[r.cell][r.seed][r.row.person_id].push_back(r.row);
  }
  for (auto& [cell, seeds] : g.data) {
    for (auto& [seed, persons] : seeds) {
      for (auto& [pid, v] : persons) {
        std::stable_sort(v.begin(), v.end(), [](const TelemetryRow& a, const TelemetryRow& b) { return a.batch_idx < b.batch_idx; });
      }
    }
  }
  return g;
}

}  // namespace

std::vector<CellSummary> summarize(const std::vector<GridRow>& rows) {
  const Grouped g = group_rows(rows);
  std::vector<CellSummary> out;
  for (const auto& cell : g.order) {
    CellSummary cs{cell, {}};
    for (const auto& [seed, persons] : g.data.at(cell)) {
      SeedSummary s;
      s.seed = seed;
      double all = 0;
      std::size_t n_all = 0;
      for (const auto& [pid, v] : persons) {
        s.final_quarter_mpjpe += final_quarter_mean(v);
        s.final_quarter_mpjpe_pa += final_quarter_pa(v);
        s.final_drift += v.back().drift;
        for (const auto& r : v) all += r.mpjpe_mm;
        n_all += v.size();
      }
      const double np = static_cast<double>(persons.size());
      s.final_quarter_mpjpe /= np;
      s.final_quarter_mpjpe_pa /= np;
      s.final_drift /= np;
      s.mean_mpjpe = all / static_cast<double>(n_all);
      cs.seeds.push_back(s);
    }
    out.push_back(std::move(cs));
  }
  return out;
}

const CellSummary& find_cell(const std::vector<CellSummary>& s, const std::string& name) {
  for (const auto& c : s) {
    if (c.cell == name) return c;
  }
  throw std::invalid_argument("no cell named '" + name + "'");
}

MeanStd mean_std(const std::vector<double>& v) {
  if (v.empty()) return {};
  double m = 0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double ss = 0;
  for (double x : v) ss += (x - m) * (x - m);
  return {m, v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0};
}

SignTest sign_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("sign_test: paired samples differ in length");
  SignTest t;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] < b[i]) {
      ++t.wins;
    } else if (a[i] > b[i]) {
      ++t.losses;
    } else {
      ++t.ties;
    }
  }
  const std::size_t n = t.wins + t.losses;
  if (n == 0) return t;
  // Two-sided exact binomial tail at p = 1/2.
  const std::size_t k = std::min(t.wins, t.losses);
  double tail = 0;
  for (std::size_t i = 0; i <= k; ++i) {
    tail += std::exp(std::lgamma(n + 1.0) - std::lgamma(i + 1.0) - std::lgamma(n - i + 1.0) - static_cast<double>(n) * std::log(2.0));
  }
  t.p_value = std::min(1.0, 2.0 * tail);
  return t;
}

// ------------------------------------------------------------ curves

std::vector<double> moving_average5(const std::vector<double>& x) {
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(x.size());
  std::vector<double> out(x.size());
  auto at = [&](std::ptrdiff_t i) {
    // Half-sample symmetric extension with period 2n.
    std::ptrdiff_t m = ((i % (2 * n)) + 2 * n) % (2 * n);
    if (m >= n) m = 2 * n - 1 - m;
    return x[static_cast<std::size_t>(m)];
  };
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    double s = 0;
    for (std::ptrdiff_t k = -2; k <= 2; ++k) s += at(i + k);
    out[static_cast<std::size_t>(i)] = s / 5.0;
  }
  return out;
}

ProgressCurve progress_curve(const std::vector<TelemetryRow>& method, const std::vector<TelemetryRow>& baseline) {
  if (method.size() != baseline.size()) throw std::invalid_argument("progress_curve: series lengths differ");
  ProgressCurve c;
  const std::size_t n = method.size();
  for (std::size_t b = 0; b < n; ++b) {
    if (method[b].batch_idx != baseline[b].batch_idx || method[b].person_id != baseline[b].person_id) {
      throw std::invalid_argument("progress_curve: batch indices do not match");
    }
    c.progress.push_back(static_cast<double>(b + 1) / static_cast<double>(n));
    c.delta.push_back(method[b].mpjpe_mm - baseline[b].mpjpe_mm);
  }
  c.smoothed = moving_average5(c.delta);
  return c;
}

void write_curve_csv(const std::filesystem::path& path, const ProgressCurve& c) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "progress,delta_mm,smoothed_mm\n";
  char line[128];
  for (std::size_t i = 0; i < c.delta.size(); ++i) {
    std::snprintf(line, sizeof line, "%.17g,%.17g,%.17g\n", c.progress[i], c.delta[i], c.smoothed[i]);
    out << line;
  }
}

std::string render_curve_svg(const std::vector<std::pair<std::string, ProgressCurve>>& series, const std::string& title) {
  const double W = 640, H = 360, L = 70, R = 150, T = 40, B = 50;
  double lo = 0, hi = 0;
  for (const auto& [name, c] : series) {
    for (double v : c.smoothed) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (hi - lo < 1e-9) {
    lo -= 1;
    hi += 1;
  }
  const double pad = 0.05 * (hi - lo);
  lo -= pad;
  hi += pad;
  auto px = [&](double p) { return L + p * (W - L - R); };
  auto py = [&](double v) { return T + (hi - v) / (hi - lo) * (H - T - B); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n";
  s << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double p = i / 4.0;
    s << "<text x=\"" << fmt("%.1f", px(p)) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">" << fmt("%.2f", p) << "</text>\n";
    const double v = lo + (hi - lo) * i / 4.0;
    s << "<text x=\"" << L - 6 << "\" y=\"" << fmt("%.1f", py(v) + 4) << "\" text-anchor=\"end\">" << fmt("%.1f", v) << "</text>\n";
  }
  if (lo < 0 && hi > 0) {
    s << "<line x1=\"" << L << "\" y1=\"" << fmt("%.1f", py(0)) << "\" x2=\"" << W - R << "\" y2=\"" << fmt("%.1f", py(0))
      << "\" stroke=\"gray\" stroke-dasharray=\"4 3\"/>\n";
  }
  s << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">adaptation progress (fraction of stream)</text>\n";
  s << "<text transform=\"translate(16," << (T + H - B) / 2 << ") rotate(-90)\" text-anchor=\"middle\">MPJPE difference (mm)</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& [name, c] = series[k];
    const char* color = colors[k % 8];
    s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < c.smoothed.size(); ++i) {
      s << (i ? " " : "") << fmt("%.2f", px(c.progress[i])) << "," << fmt("%.2f", py(c.smoothed[i]));
    }
    s << "\"/>\n";
    const double ly = T + 16.0 * static_cast<double>(k);
    s << "<line x1=\"" << W - R + 10 << "\" y1=\"" << ly << "\" x2=\"" << W - R + 30 << "\" y2=\"" << ly << "\" stroke=\"" << color
      << "\" stroke-width=\"2\"/>\n";
    s << "<text x=\"" << W - R + 35 << "\" y=\"" << ly + 4 << "\">" << name << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

// ------------------------------------------------------------ report

namespace {

std::string resolve_baseline(const std::vector<CellSummary>& s, const ReportOptions& opt) {
  if (!opt.baseline.empty()) {
    find_cell(s, opt.baseline);
    return opt.baseline;
  }
  return s.empty() ? std::string() : s.front().cell;
}

// Baseline and method rows averaged over the seeds both cells share, per person.
std::map<std::uint32_t, std::pair<std::vector<TelemetryRow>, std::vector<TelemetryRow>>> seed_averaged(const Grouped& g,
                                                                                                     const std::string& method,
                                                                                                     const std::string& base) {
  std::map<std::uint32_t, std::pair<std::vector<TelemetryRow>, std::vector<TelemetryRow>>> out;
  const auto& ms = g.data.at(method);
  const auto& bs = g.data.at(base);
  std::map<std::uint32_t, std::size_t> count;
  for (const auto& [seed, persons] : ms) {
    if (!bs.count(seed)) continue;
    for (const auto& [pid, mrows] : persons) {
      if (!bs.at(seed).count(pid)) continue;
      const auto& brows = bs.at(seed).at(pid);
      auto& [ma, ba] = out[pid];
      if (ma.empty()) {
        ma = mrows;
        ba = brows;
        for (auto& r : ma) r.mpjpe_mm = 0;
        for (auto& r : ba) r.mpjpe_mm = 0;
      }
      if (mrows.size() != ma.size() || brows.size() != ba.size()) throw std::invalid_argument("report: stream lengths differ across seeds");
      for (std::size_t i = 0; i < ma.size(); ++i) ma[i].mpjpe_mm += mrows[i].mpjpe_mm;
      for (std::size_t i = 0; i < ba.size(); ++i) ba[i].mpjpe_mm += brows[i].mpjpe_mm;
      ++count[pid];
    }
  }
  for (auto& [pid, pr] : out) {
    const double c = static_cast<double>(count[pid]);
    for (auto& r : pr.first) r.mpjpe_mm /= c;
    for (auto& r : pr.second) r.mpjpe_mm /= c;
  }
  return out;
}

}  // namespace

std::string render_report(const std::vector<GridRow>& rows, const ReportOptions& opt) {
  const auto summary = summarize(rows);
  std::ostringstream md;
  md << "# Ablation report\n\n";
  md << "Final-quarter MPJPE: mean over the last quarter of each person's batches, averaged over persons. "
        "Values are mean ± sample std over seeds. Drift is the decoder drift after the last batch.\n\n";
  md << "| cell | seeds | final-quarter MPJPE (mm) | final-quarter MPJPE-PA (mm) | all-batch MPJPE (mm) | final drift |\n";
  md << "|---|---|---|---|---|---|\n";
  for (const auto& c : summary) {
    std::vector<double> fq, pa, all, dr;
    for (const auto& s : c.seeds) {
      fq.push_back(s.final_quarter_mpjpe);
      pa.push_back(s.final_quarter_mpjpe_pa);
      all.push_back(s.mean_mpjpe);
      dr.push_back(s.final_drift);
    }
    auto ms = [](const std::vector<double>& v, const char* f) {
      const MeanStd m = mean_std(v);
      return fmt(f, m.mean) + " ± " + fmt(f, m.std);
    };
    md << "| " << c.cell << " | " << c.seeds.size() << " | " << ms(fq, "%.2f") << " | " << ms(pa, "%.2f") << " | " << ms(all, "%.2f")
       << " | " << ms(dr, "%.5f") << " |\n";
  }
  if (summary.size() < 2) return md.str();

  const std::string base = resolve_baseline(summary, opt);
  const auto& b = find_cell(summary, base);
  md << "\n## Sign tests against `" << base << "`\n\n";
  md << "Paired over seeds on final-quarter MPJPE; a win means the cell's error is lower. "
        "This is a desk-scale analog of a per-participant significance test, with far fewer samples.\n\n";
  md << "| cell | wins | losses | ties | two-sided p |\n|---|---|---|---|---|\n";
  for (const auto& c : summary) {
    if (c.cell == base) continue;
    std::vector<double> x, y;
    for (const auto& s : c.seeds) {
      for (const auto& t : b.seeds) {
        if (t.seed == s.seed) {
          x.push_back(s.final_quarter_mpjpe);
          y.push_back(t.final_quarter_mpjpe);
        }
      }
    }
    const SignTest st = sign_test(x, y);
    md << "| " << c.cell << " | " << st.wins << " | " << st.losses << " | " << st.ties << " | " << fmt("%.4f", st.p_value) << " |\n";
  }
  md << "\nError-difference curves (cell minus `" << base << "`, averaged over seeds, window-5 moving average) are under `curves/`.\n";
  return md.str();
}

void write_report_bundle(const std::vector<GridRow>& rows, const std::filesystem::path& dir, const ReportOptions& opt) {
  std::filesystem::create_directories(dir / "curves");
  {
    std::ofstream out(dir / "report.md");
    if (!out) throw std::runtime_error("cannot write report.md");
    out << render_report(rows, opt);
  }
  const auto summary = summarize(rows);
  {
    std::ofstream out(dir / "summary.csv");
    out << "cell,seed,final_quarter_mpjpe_mm,final_quarter_mpjpe_pa_mm,mean_mpjpe_mm,final_drift\n";
    char line[256];
    for (const auto& c : summary) {
      for (const auto& s : c.seeds) {
        std::snprintf(line, sizeof line, ",%llu,%.17g,%.17g,%.17g,%.17g\n", static_cast<unsigned long long>(s.seed),
                      s.final_quarter_mpjpe, s.final_quarter_mpjpe_pa, s.mean_mpjpe, s.final_drift);
        out << c.cell << line;
      }
    }
  }
  if (summary.size() < 2) return;
  const std::string base = resolve_baseline(summary, opt);
  const Grouped g = group_rows(rows);
  for (const auto& c : summary) {
    if (c.cell == base) continue;
    std::vector<std::pair<std::string, ProgressCurve>> series;
    for (const auto& [pid, pr] : seed_averaged(g, c.cell, base)) {
      ProgressCurve curve = progress_curve(pr.first, pr.second);
      const std::string stem = file_safe(c.cell) + "_vs_" + file_safe(base) + "_p" + std::to_string(pid);
      write_curve_csv(dir / "curves" / (stem + ".csv"), curve);
      series.emplace_back("person " + std::to_string(pid), std::move(curve));
    }
    std::ofstream svg(dir / "curves" / (file_safe(c.cell) + "_vs_" + file_safe(base) + ".svg"));
    svg << render_curve_svg(series, c.cell + " minus " + base);
  }
}

}  // namespace mtta
