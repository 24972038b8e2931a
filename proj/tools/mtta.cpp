#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "mtta/checks.hpp"
#include "mtta/eval.hpp"
#include "mtta/kernels.hpp"
#include "mtta/pretrain.hpp"

namespace fs = std::filesystem;
using namespace mtta;

namespace {

struct Common {
  std::uint64_t seed = 42;
  std::string config;
  std::string out;
  int threads = 0;
};

void add_common(CLI::App* cmd, Common& c, bool out_required = true) {
  cmd->add_option("--seed", c.seed, "RNG seed")->capture_default_str();
  cmd->add_option("--config", c.config, "JSON config file (unknown keys are rejected)");
  auto* out = cmd->add_option("--out", c.out, "output directory");
  if (out_required) out->required();
  cmd->add_option("--threads", c.threads, "thread count (ablate: concurrent cells; elsewhere: kernel threads, default 1)");
}

nlohmann::json read_json(const std::string& path) {
  if (path.empty()) return nlohmann::json::object();
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  return nlohmann::json::parse(in);
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

void log_line(const std::string& s) { std::fprintf(stderr, "%s\n", s.c_str()); }

// Echoes the resolved config to stdout and to <out>/<name>.
void echo_config(const Common& c, const std::string& name, nlohmann::json resolved) {
  resolved["seed"] = c.seed;
  fs::create_directories(c.out);
  std::cout << resolved.dump(2) << std::endl;
  write_json(fs::path(c.out) / name, resolved);
}

// ------------------------------------------------------------ pretrain

int run_pretrain(const Common& c, const std::string& which) {
  PretrainConfig cfg = read_json(c.config).get<PretrainConfig>();
  cfg.validate();
  echo_config(c, "pretrain_config.json", cfg);

  std::mt19937_64 rng(c.seed);
  const auto t0 = std::chrono::steady_clock::now();
  FReport fr;
  MReport mr;
  if (which != "m") {
    FResult f = pretrain_f(cfg, rng, log_line);
    write_model(fs::path(c.out) / "f_pre.mtta", snapshot(f.model.params));
    fr = f.report;
  }
  const auto t1 = std::chrono::steady_clock::now();
  if (which != "f") {
    MResult m = pretrain_m(cfg, rng, log_line);
    write_model(fs::path(c.out) / "m_pre.mtta", denoiser_file_snapshot(m.model, m.codebook));
    mr = m.report;
  }
  const auto t2 = std::chrono::steady_clock::now();
  nlohmann::json rep = report_json(fr, mr);
  rep["pose_estimator"]["seconds"] = std::chrono::duration<double>(t1 - t0).count();
  rep["motion_denoiser"]["seconds"] = std::chrono::duration<double>(t2 - t1).count();
  write_json(fs::path(c.out) / "pretrain_report.json", rep);
  if (which != "m" && !fr.smoothed_monotone) log_line("warning: pose estimator loss is not monotone under smoothing");
  if (which != "f" && !mr.smoothed_monotone) log_line("warning: denoiser loss is not monotone under smoothing");
  nlohmann::json summary = rep;
  summary["pose_estimator"].erase("loss_curve");
  summary["motion_denoiser"].erase("loss_curve");
  std::cout << summary.dump(2) << std::endl;
  return 0;
}

// ------------------------------------------------------------ stream-gen

int run_stream_gen(const Common& c, bool no_gt) {
  const SuiteConfig suite = read_json(c.config).get<SuiteConfig>();
  suite.validate();
  nlohmann::json resolved = suite;
  resolved["include_gt"] = !no_gt;
  echo_config(c, "stream_config.json", resolved);
  const std::size_t n = write_suite_dumps(suite, c.seed, Camera{}, c.out, !no_gt);
  log_line("wrote " + std::to_string(n) + " batch files under " + c.out);
  return 0;
}

// ------------------------------------------------------------ adapt

struct AdaptFlags {
  std::string f_model, m_model, stream_dir;
  bool deterministic = false;
};

int run_adapt(const Common& c, const AdaptFlags& a) {
  AdaptConfig cfg = read_json(c.config).get<AdaptConfig>();
  if (a.deterministic) cfg.deterministic = true;
  cfg.validate();
  nlohmann::json resolved = cfg;
  resolved["f_model"] = a.f_model;
  resolved["m_model"] = a.m_model;
  resolved["stream_dir"] = a.stream_dir;
  echo_config(c, "adapt_config.json", resolved);

  const PretrainedModels pre = load_pretrained(a.f_model, a.m_model);
  const DumpRun run = adapt_dump_dir(pre, a.stream_dir, cfg, c.seed);
  write_telemetry_csv(fs::path(c.out) / "telemetry.csv", run.rows);
  write_predictions(fs::path(c.out) / "predictions.bin", run.predictions);
  double total = 0;
  for (const auto& r : run.rows) total += r.mpjpe_mm;
  char line[128];
  std::snprintf(line, sizeof line, "adapted %zu batches, mean MPJPE %.2f mm", run.rows.size(),
                run.rows.empty() ? 0.0 : total / static_cast<double>(run.rows.size()));
  log_line(line);
  return 0;
}

// ------------------------------------------------------------ ablate

struct AblateFlags {
  std::string f_model, m_model;
};

int run_ablate(const Common& c, const AblateFlags& a) {
  const nlohmann::json j = read_json(c.config);
  for (const auto& item : j.items()) {
    static const std::set<std::string> keys = {"base", "suite", "seeds", "axes", "cells", "baseline"};
    if (!keys.count(item.key())) throw std::invalid_argument("ablate config: unknown key '" + item.key() + "'");
  }
  if (j.contains("axes") && j.contains("cells")) throw std::invalid_argument("ablate config: give either axes or cells, not both");

  const nlohmann::json base_json = j.value("base", nlohmann::json::object());
  AdaptConfig base = base_json.get<AdaptConfig>();
  base.deterministic = true;
  const SuiteConfig suite = j.value("suite", nlohmann::json::object()).get<SuiteConfig>();
  std::vector<std::uint64_t> seeds;
  if (j.contains("seeds")) {
    seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  } else {
    for (std::uint64_t s = 0; s < 5; ++s) seeds.push_back(c.seed + s);
  }
  if (seeds.empty()) throw std::invalid_argument("ablate config: seeds must not be empty");

  std::vector<Cell> cells;
  if (j.contains("cells")) {
    for (const auto& cj : j.at("cells")) {
      nlohmann::json merged = base;
      merged.update(cj.value("config", nlohmann::json::object()));
      cells.push_back({cj.at("name").get<std::string>(), merged.get<AdaptConfig>()});
    }
  } else {
    cells = expand_axes(base, j.value("axes", nlohmann::json::object()));
  }
  const std::string baseline = j.value("baseline", std::string());

  nlohmann::json resolved;
  resolved["base"] = base;
  resolved["suite"] = suite;
  resolved["seeds"] = seeds;
  resolved["baseline"] = baseline;
  resolved["cells"] = nlohmann::json::array();
  for (const auto& cell : cells) resolved["cells"].push_back({{"name", cell.name}, {"config", cell.config}});
  resolved["threads"] = std::max(1, c.threads);
  echo_config(c, "ablate_config.json", resolved);

  kernels::set_threads(1);
  const PretrainedModels pre = load_pretrained(a.f_model, a.m_model);
  const auto rows = ablation_grid(pre, cells, suite, seeds, std::max(1, c.threads), log_line);
  write_grid_csv(fs::path(c.out) / "grid.csv", rows);
  write_report_bundle(rows, c.out, {baseline});
  std::cout << render_report(rows, {baseline});
  return 0;
}

// ------------------------------------------------------------ report

int run_report(const Common& c, std::string grid, std::string baseline) {
  const nlohmann::json j = read_json(c.config);
  for (const auto& item : j.items()) {
    if (item.key() != "grid" && item.key() != "baseline") throw std::invalid_argument("report config: unknown key '" + item.key() + "'");
  }
  if (grid.empty()) grid = j.value("grid", std::string());
  if (baseline.empty()) baseline = j.value("baseline", std::string());
  if (grid.empty()) grid = (fs::path(c.out) / "grid.csv").string();
  echo_config(c, "report_config.json", {{"grid", grid}, {"baseline", baseline}});
  const auto rows = read_grid_csv(grid);
  write_report_bundle(rows, c.out, {baseline});
  std::cout << render_report(rows, {baseline});
  return 0;
}

// ------------------------------------------------------------ selftest

int run_selftest(const Common& c) {
  if (!c.config.empty()) {
    const nlohmann::json j = read_json(c.config);
    if (!j.empty()) throw std::invalid_argument("selftest takes no config keys");
  }
  if (!c.out.empty()) echo_config(c, "selftest_config.json", nlohmann::json::object());
  std::vector<checks::Result> all;
  for (auto suite : {checks::gradient_suite(c.seed), checks::quantization_suite(c.seed + 1), checks::ema_suite(c.seed + 2),
                     checks::soft_reset_suite(c.seed + 3), checks::geometry_suite(c.seed + 4)}) {
    all.insert(all.end(), suite.begin(), suite.end());
  }
  std::ostringstream transcript;
  std::size_t passed = 0;
  for (const auto& r : all) {
    transcript << (r.pass ? "PASS " : "FAIL ") << r.name << ": " << r.detail << "\n";
    passed += r.pass ? 1 : 0;
  }
  transcript << "selftest: " << passed << "/" << all.size() << " passed\n";
  std::cout << transcript.str();
  if (!c.out.empty()) {
    std::ofstream out(fs::path(c.out) / "selftest.txt");
    out << transcript.str();
  }
  return passed == all.size() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mtta: online test-time adaptation of a 3D pose estimator"};
  app.require_subcommand(1);

  Common pre;
  std::string which = "both";
  auto* cmd_pre = app.add_subcommand("pretrain", "pre-train F and M on the source domain");
  add_common(cmd_pre, pre);
  cmd_pre->add_option("--only", which, "f, m or both")->check(CLI::IsMember({"f", "m", "both"}));

  Common gen;
  bool no_gt = false;
  auto* cmd_gen = app.add_subcommand("stream-gen", "write the synthetic test suite as batch dumps");
  add_common(cmd_gen, gen);
  cmd_gen->add_flag("--no-gt", no_gt, "omit the ground-truth section");

  Common ad;
  AdaptFlags af;
  auto* cmd_adapt = app.add_subcommand("adapt", "adapt online over a dump directory");
  add_common(cmd_adapt, ad);
  cmd_adapt->add_option("--f-model", af.f_model, "pre-trained pose estimator file")->required();
  cmd_adapt->add_option("--m-model", af.m_model, "pre-trained denoiser + codebook file")->required();
  cmd_adapt->add_option("--stream-dir", af.stream_dir, "directory written by stream-gen")->required();
  cmd_adapt->add_flag("--deterministic", af.deterministic, "record wall_ms as 0 for byte-identical telemetry");

  Common abl;
  AblateFlags ab;
  auto* cmd_abl = app.add_subcommand("ablate", "run an ablation grid over the synthetic suite");
  add_common(cmd_abl, abl);
  cmd_abl->add_option("--f-model", ab.f_model, "pre-trained pose estimator file")->required();
  cmd_abl->add_option("--m-model", ab.m_model, "pre-trained denoiser + codebook file")->required();

  Common rep;
  std::string grid, baseline;
  auto* cmd_rep = app.add_subcommand("report", "render report.md, summary.csv and curves from grid.csv");
  add_common(cmd_rep, rep);
  cmd_rep->add_option("--grid", grid, "grid CSV (default <out>/grid.csv)");
  cmd_rep->add_option("--baseline", baseline, "reference cell (default: first cell)");

  Common st;
  auto* cmd_st = app.add_subcommand("selftest", "run the invariant suites");
  add_common(cmd_st, st, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  auto threads_for = [](const Common& c) { kernels::set_threads(c.threads > 0 ? c.threads : 1); };
  try {
    if (*cmd_pre) {
      threads_for(pre);
      return run_pretrain(pre, which);
    }
    if (*cmd_gen) {
      threads_for(gen);
      return run_stream_gen(gen, no_gt);
    }
    if (*cmd_adapt) {
      threads_for(ad);
      return run_adapt(ad, af);
    }
    if (*cmd_abl) return run_ablate(abl, ab);
    if (*cmd_rep) {
      threads_for(rep);
      return run_report(rep, grid, baseline);
    }
    if (*cmd_st) {
      threads_for(st);
      return run_selftest(st);
    }
  } catch (const nlohmann::json::exception& e) {
    std::fprintf(stderr, "error: malformed config: %s\n", e.what());
    return 2;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
