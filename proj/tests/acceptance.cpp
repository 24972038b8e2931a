// End-to-end acceptance run: one PASS/FAIL line per criterion, exit 1 if any fails.
//
//   acceptance [--seed 42] [--out DIR] [--criteria 1,2,7] [--f-model F --m-model M]
//
// Criteria 7-9 need pre-trained models; they come from criterion 6 unless
// model files are passed explicitly.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mtta/checks.hpp"
#include "mtta/eval.hpp"
#include "mtta/kernels.hpp"
#include "mtta/pretrain.hpp"

namespace fs = std::filesystem;
using namespace mtta;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

struct Outcome {
  int id;
  bool pass;
  std::string summary;
};

// Prints the per-check lines and folds them into one outcome.
Outcome fold(int id, const std::vector<checks::Result>& rs, const std::string& extra = {}) {
  std::size_t ok = 0;
  for (const auto& r : rs) {
    std::printf("    %s %s: %s\n", r.pass ? "ok  " : "FAIL", r.name.c_str(), r.detail.c_str());
    ok += r.pass;
  }
  std::string s = std::to_string(ok) + "/" + std::to_string(rs.size()) + " checks";
  if (!extra.empty()) s += ", " + extra;
  return {id, ok == rs.size(), s};
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// ------------------------------------------------------------ pretraining

struct Pretrained {
  fs::path f_path, m_path;
  FReport f;
  MReport m;
  double f_seconds = 0, m_seconds = 0;
};

Pretrained pretrain_to(const PretrainConfig& cfg, std::uint64_t seed, const fs::path& dir, const ProgressFn& log) {
  fs::create_directories(dir);
  Pretrained p{dir / "f_pre.mtta", dir / "m_pre.mtta", {}, {}, 0, 0};
  std::mt19937_64 rng(seed);
  auto t0 = Clock::now();
  FResult f = pretrain_f(cfg, rng, log);
  write_model(p.f_path, snapshot(f.model.params));
  p.f = f.report;
  p.f_seconds = seconds_since(t0);
  t0 = Clock::now();
  MResult m = pretrain_m(cfg, rng, log);
  write_model(p.m_path, denoiser_file_snapshot(m.model, m.codebook));
  p.m = m.report;
  p.m_seconds = seconds_since(t0);
  return p;
}

Outcome criterion6(const Pretrained& p) {
  const double total = p.f_seconds + p.m_seconds;
  std::vector<checks::Result> rs = {
      {"pretraining time <= 600 s", total <= 600.0,
       fmt("%.1f s", total) + " (pose estimator " + fmt("%.1f s", p.f_seconds) + ", denoiser " + fmt("%.1f s", p.m_seconds) + ")"},
      {"source MPJPE < 30 mm", p.f.source_mpjpe < 30.0, fmt("%.2f mm", p.f.source_mpjpe)},
      {"reconstruction error below input error", p.m.recon_error < p.m.input_error,
       fmt("recon %.5f", p.m.recon_error) + fmt(" vs input %.5f", p.m.input_error)},
      {"codebook utilization >= 50%", p.m.utilization >= 0.5, fmt("%.3f", p.m.utilization)},
  };
  return fold(6, rs);
}

// ------------------------------------------------------------ ablations

struct Arm {
  std::string name;
  AdaptConfig cfg;
};

std::vector<Arm> arms_for(const std::set<int>& want) {
  AdaptConfig full;
  full.deterministic = true;
  AdaptConfig sr_only = full;  // soft reset without the codebook-driven terms
  sr_only.use_anchor_loss = false;
  sr_only.use_self_replay = false;
  AdaptConfig disc_only = full;  // codebook terms without soft reset (also the mu_F = 0 arm)
  disc_only.use_soft_reset = false;
  AdaptConfig neither = sr_only;
  neither.use_soft_reset = false;
  AdaptConfig mu09 = full, mu1 = full, no_replay = full;
  mu09.mu_f = 0.9;
  mu1.mu_f = 1.0;
  no_replay.use_self_replay = false;

  std::vector<Arm> arms;
  auto add = [&](const std::string& n, const AdaptConfig& c) {
    if (std::none_of(arms.begin(), arms.end(), [&](const Arm& a) { return a.name == n; })) arms.push_back({n, c});
  };
  if (want.count(7)) {
    add("full", full);
    add("sr_only", sr_only);
    add("disc_only", disc_only);
    add("neither", neither);
  }
  if (want.count(8)) {
    add("disc_only", disc_only);
    add("mu0.9", mu09);
    add("full", full);
    add("mu1", mu1);
  }
  if (want.count(9)) {
    add("full", full);
    add("no_replay", no_replay);
  }
  return arms;
}

using Metric = double SeedSummary::*;

std::vector<double> column(const CellSummary& c, Metric m) {
  std::vector<double> v;
  for (const auto& s : c.seeds) v.push_back(s.*m);
  return v;
}

// Seeds where a < b, with a line of per-seed values.
checks::Result ordering(const std::string& label, const std::vector<double>& a, const std::vector<double>& b, std::size_t need) {
  const SignTest t = sign_test(a, b);
  std::ostringstream d;
  d << t.wins << "/" << a.size() << " seeds [";
  for (std::size_t i = 0; i < a.size(); ++i) d << (i ? ", " : "") << fmt("%.3g", a[i]) << " vs " << fmt("%.3g", b[i]);
  d << "]";
  return {label, t.wins >= need, d.str()};
}

// ------------------------------------------------------------ determinism

std::string pipeline_run(const fs::path& dir, std::uint64_t seed) {
  PretrainConfig pc;
  pc.f_model.hidden = 32;
  pc.f_steps = 40;
  pc.m_steps = 40;
  pc.eval_frames = 100;
  pc.eval_windows = 8;
  pc.revive_every = 20;
  const Pretrained p = pretrain_to(pc, seed, dir / "models", {});

  SuiteConfig suite;
  suite.persons = 2;
  suite.minutes = 0.5;
  write_suite_dumps(suite, seed, Camera{}, dir / "stream");

  AdaptConfig ac;
  ac.deterministic = true;
  ac.cycles = 3;
  const DumpRun run = adapt_dump_dir(load_pretrained(p.f_path, p.m_path), dir / "stream", ac, seed);
  write_telemetry_csv(dir / "telemetry.csv", run.rows);
  return read_bytes(dir / "telemetry.csv");
}

Outcome criterion10(const fs::path& out, std::uint64_t seed) {
  const std::string a = pipeline_run(out / "determinism_a", seed);
  const std::string b = pipeline_run(out / "determinism_b", seed);
  const bool models_equal = read_bytes(out / "determinism_a/models/f_pre.mtta") == read_bytes(out / "determinism_b/models/f_pre.mtta") &&
                            read_bytes(out / "determinism_a/models/m_pre.mtta") == read_bytes(out / "determinism_b/models/m_pre.mtta");
  std::vector<checks::Result> rs = {
      {"model files identical", models_equal, models_equal ? "byte-equal" : "differ"},
      {"telemetry CSVs identical", !a.empty() && a == b, std::to_string(a.size()) + " bytes each run"},
  };
  return fold(10, rs);
}

std::set<int> parse_criteria(const std::string& s) {
  std::set<int> out;
  if (s.empty() || s == "all") {
    for (int i = 1; i <= 10; ++i) out.insert(i);
    return out;
  }
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    const int v = std::stoi(tok);
    if (v < 1 || v > 10) throw std::invalid_argument("criterion out of range: " + tok);
    out.insert(v);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  std::uint64_t seed = 42;
  std::string out = "acceptance_out", criteria = "all", f_model, m_model;
  app.add_option("--seed", seed)->capture_default_str();
  app.add_option("--out", out, "scratch directory")->capture_default_str();
  app.add_option("--criteria", criteria, "comma list of criteria, or 'all'")->capture_default_str();
  app.add_option("--f-model", f_model, "reuse this pose estimator instead of pretraining");
  app.add_option("--m-model", m_model, "reuse this denoiser instead of pretraining");
  CLI11_PARSE(app, argc, argv);

  try {
    const std::set<int> want = parse_criteria(criteria);
    if (f_model.empty() != m_model.empty()) throw std::invalid_argument("--f-model and --m-model go together");
    fs::create_directories(out);
    const int grid_threads = kernels::max_threads();
    kernels::set_threads(1);
    std::vector<Outcome> results;
    auto report = [&](const Outcome& o) {
      std::printf("criterion %d: %s (%s)\n", o.id, o.pass ? "PASS" : "FAIL", o.summary.c_str());
      std::fflush(stdout);
      results.push_back(o);
    };
    auto header = [](int id, const char* title) {
      std::printf("-- criterion %d: %s\n", id, title);
      std::fflush(stdout);
    };

    if (want.count(1)) {
      header(1, "gradient suite");
      const auto t0 = Clock::now();
      const auto rs = checks::gradient_suite(seed, 20);
      const double s = seconds_since(t0);
      Outcome o = fold(1, rs, fmt("%.1f s", s));
      o.pass = o.pass && s < 60.0;
      report(o);
    }
    if (want.count(2)) {
      header(2, "quantization oracle");
      report(fold(2, checks::quantization_suite(seed, 1000)));
    }
    if (want.count(3)) {
      header(3, "EMA closed form");
      report(fold(3, checks::ema_suite(seed)));
    }
    if (want.count(4)) {
      header(4, "soft-reset endpoints");
      report(fold(4, checks::soft_reset_suite(seed)));
    }
    if (want.count(5)) {
      header(5, "geometry");
      auto rs = checks::geometry_suite(seed);
      rs.push_back(checks::mpjpe_pa_pairs(seed, 100));
      report(fold(5, rs));
    }

    const bool need_models = want.count(7) || want.count(8) || want.count(9);
    fs::path f_path = f_model, m_path = m_model;
    if (want.count(6) || (need_models && f_model.empty())) {
      header(6, "pretraining");
      const Pretrained p = pretrain_to(PretrainConfig{}, seed, fs::path(out) / "pretrained", {});
      report(criterion6(p));
      if (f_model.empty()) {
        f_path = p.f_path;
        m_path = p.m_path;
      }
    }

    if (need_models) {
      const PretrainedModels pre = load_pretrained(f_path, m_path);
      const auto arms = arms_for(want);
      std::vector<Cell> cells;
      for (const auto& a : arms) cells.push_back({a.name, a.cfg});
      std::vector<std::uint64_t> seeds;
      for (std::uint64_t s = 0; s < 5; ++s) seeds.push_back(seed + s);
      const SuiteConfig suite;
      std::printf("-- ablation grid: %zu arms x %zu seeds x %zu persons, %.0f min streams\n", cells.size(), seeds.size(), suite.persons,
                  suite.minutes);
      std::fflush(stdout);

      // Criterion 7's runtime covers its own four arms; the grid runs those first.
      std::vector<Cell> c7, rest;
      for (const auto& c : cells)
        (want.count(7) && (c.name == "full" || c.name == "sr_only" || c.name == "disc_only" || c.name == "neither") ? c7 : rest).push_back(c);
      const auto t0 = Clock::now();
      auto rows = ablation_grid(pre, c7, suite, seeds, grid_threads);
      const double c7_seconds = seconds_since(t0);
      const auto more = ablation_grid(pre, rest, suite, seeds, grid_threads);
      rows.insert(rows.end(), more.begin(), more.end());
      write_grid_csv(fs::path(out) / "grid.csv", rows);
      write_report_bundle(rows, fs::path(out) / "report", ReportOptions{"full"});
      const auto sum = summarize(rows);
      auto col = [&](const std::string& cell, Metric m) { return column(find_cell(sum, cell), m); };

      if (want.count(7)) {
        header(7, "ablation ordering (final-quarter MPJPE)");
        const Metric fq = &SeedSummary::final_quarter_mpjpe;
        std::vector<checks::Result> rs = {
            ordering("full < soft-reset-only", col("full", fq), col("sr_only", fq), 4),
            ordering("full < discretization-only", col("full", fq), col("disc_only", fq), 4),
            ordering("soft-reset-only < neither", col("sr_only", fq), col("neither", fq), 4),
            {"runtime < 30 min", c7_seconds < 1800.0, fmt("%.1f s", c7_seconds)},
        };
        report(fold(7, rs));
      }
      if (want.count(8)) {
        header(8, "soft-reset decay ordering (mean MPJPE)");
        const Metric mm = &SeedSummary::mean_mpjpe;
        const auto m0 = col("disc_only", mm), m09 = col("mu0.9", mm), m095 = col("full", mm), m1 = col("mu1", mm);
        std::vector<double> others_max(m0.size());
        for (std::size_t i = 0; i < m0.size(); ++i) others_max[i] = std::max({m09[i], m095[i], m1[i]});
        std::vector<checks::Result> rs = {
            ordering("mu_F=0 worst (others' max < mu_F=0)", others_max, m0, 4),
            ordering("mu_F=0.9 < mu_F=1", m09, m1, 4),
            ordering("mu_F=0.95 < mu_F=1", m095, m1, 4),
        };
        report(fold(8, rs));
      }
      if (want.count(9)) {
        header(9, "self-replay drift");
        const Metric dr = &SeedSummary::final_drift;
        report(fold(9, {ordering("drift with replay < without", col("full", dr), col("no_replay", dr), 4)}));
      }
    }

    if (want.count(10)) {
      header(10, "determinism");
      report(criterion10(out, seed));
    }

    std::sort(results.begin(), results.end(), [](const Outcome& a, const Outcome& b) { return a.id < b.id; });
    std::size_t passed = 0;
    std::printf("== summary\n");
    for (const auto& o : results) {
      std::printf("criterion %d: %s\n", o.id, o.pass ? "PASS" : "FAIL");
      passed += o.pass;
    }
    std::printf("acceptance: %zu/%zu passed\n", passed, results.size());
    return passed == results.size() ? 0 : 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
