#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "mtta/eval.hpp"
#include "mtta/ops.hpp"

using namespace mtta;
namespace fs = std::filesystem;

namespace {

PretrainedModels tiny_models(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  PretrainedModels pre{PoseEstimator({16}, rng), MotionDenoiser({8, 8}, rng), ResidualCodebook({3, 8, 8})};
  Array x({6, kWindowFrames, kPhiDim});
  std::normal_distribution<double> n(0.0, 0.3);
  for (auto& v : x.mutable_data()) v = n(rng);
  ad::Graph g;
  const Bound b = bind(g, pre.m.params, false);
  init_kmeanspp(pre.codebook, m_encode(b, g.constant(x)).value().reshaped({6 * kLatentSteps, 8}), rng);
  return pre;
}

SuiteConfig small_suite() {
  SuiteConfig s;
  s.persons = 2;
  s.minutes = 320.0 / 1800.0;  // two batches
  return s;
}

AdaptConfig quick() {
  AdaptConfig c;
  c.cycles = 2;
  c.deterministic = true;
  return c;
}

std::vector<TelemetryRow> series(std::uint32_t pid, const std::vector<double>& mpjpe) {
  std::vector<TelemetryRow> rows;
  for (std::size_t i = 0; i < mpjpe.size(); ++i) {
    TelemetryRow r;
    r.person_id = pid;
    r.batch_idx = static_cast<std::uint32_t>(i);
    r.mpjpe_mm = mpjpe[i];
    r.mpjpe_pa_mm = mpjpe[i] / 2;
    r.drift = 0.01 * static_cast<double>(i);
    rows.push_back(r);
  }
  return rows;
}

std::vector<GridRow> synthetic_grid() {
  std::vector<GridRow> rows;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(50.0, 100.0);
  for (const char* cell : {"full", "neither"}) {
    for (std::uint64_t seed : {3u, 1u, 2u}) {
      for (std::uint32_t p = 0; p < 2; ++p) {
        std::vector<double> v(9);
        for (auto& x : v) x = u(rng);
        for (const auto& r : series(p, v)) rows.push_back({cell, seed, r});
      }
    }
  }
  return rows;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("moving average keeps the series mean") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(0.0, 5.0);
  for (std::size_t len = 1; len <= 60; ++len) {
    std::vector<double> x(len);
    for (auto& v : x) v = n(rng) + 3.0;
    const auto y = moving_average5(x);
    REQUIRE(y.size() == len);
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < len; ++i) {
      mx += x[i];
      my += y[i];
    }
    CHECK(std::abs(mx - my) / static_cast<double>(len) < 1e-9);
  }
  // Interior points are plain 5-point means.
  const std::vector<double> x = {1, 2, 3, 4, 5, 6, 7, 8};
  const auto y = moving_average5(x);
  CHECK(y[3] == doctest::Approx(4.0).epsilon(1e-15));
  CHECK(y[0] == doctest::Approx((2 + 1 + 1 + 2 + 3) / 5.0));
}

TEST_CASE("progress curves") {
  const auto base = series(0, {10, 12, 9, 11, 10, 13, 8});
  SUBCASE("identical series give an all-zero curve") {
    const ProgressCurve c = progress_curve(base, base);
    for (double v : c.delta) CHECK(v == 0.0);
    for (double v : c.smoothed) CHECK(v == 0.0);
    CHECK(c.progress.back() == 1.0);
    CHECK(c.progress.front() == doctest::Approx(1.0 / 7.0));
  }
  SUBCASE("a constant gap gives a flat line") {
    auto m = base;
    for (auto& r : m) r.mpjpe_mm += 1.0;
    const ProgressCurve c = progress_curve(m, base);
    for (double v : c.smoothed) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("mismatches are errors") {
    auto shorter = base;
    shorter.pop_back();
    CHECK_THROWS_AS(progress_curve(shorter, base), std::invalid_argument);
    auto shifted = base;
    shifted[2].batch_idx = 99;
    CHECK_THROWS_AS(progress_curve(shifted, base), std::invalid_argument);
  }
  SUBCASE("csv and svg") {
    const fs::path dir = fs::temp_directory_path() / "mtta_curve_test";
    fs::create_directories(dir);
    auto m = base;
    m[3].mpjpe_mm -= 4;
    const ProgressCurve c = progress_curve(m, base);
    write_curve_csv(dir / "c.csv", c);
    const std::string csv = slurp(dir / "c.csv");
    CHECK(csv.rfind("progress,delta_mm,smoothed_mm\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 8);
    const std::string svg = render_curve_svg({{"person 0", c}}, "m minus b");
    CHECK(svg.find("<svg") == 0);
    CHECK(svg.find("MPJPE difference (mm)") != std::string::npos);
    CHECK(svg.find("adaptation progress") != std::string::npos);
    CHECK(svg.find("<polyline") != std::string::npos);
    CHECK(svg == render_curve_svg({{"person 0", c}}, "m minus b"));
    fs::remove_all(dir);
  }
}

TEST_CASE("sign test") {
  SignTest t = sign_test({1, 2, 3, 4, 5}, {2, 3, 4, 5, 6});
  CHECK(t.wins == 5);
  CHECK(t.losses == 0);
  CHECK(t.p_value == doctest::Approx(0.0625));
  t = sign_test({1, 2, 3, 4, 9}, {2, 3, 4, 5, 6});
  CHECK(t.wins == 4);
  CHECK(t.p_value == doctest::Approx(0.375));
  t = sign_test({1, 1}, {1, 1});
  CHECK(t.ties == 2);
  CHECK(t.p_value == 1.0);
  CHECK_THROWS_AS(sign_test({1}, {1, 2}), std::invalid_argument);
}

TEST_CASE("axes expand to a cartesian grid") {
  const AdaptConfig base;
  SUBCASE("no axes is one base cell") {
    const auto cells = expand_axes(base, nlohmann::json::object());
    REQUIRE(cells.size() == 1);
    CHECK(cells[0].name == "base");
  }
  SUBCASE("decay axis has four rows") {
    const auto cells = expand_axes(base, {{"mu_f", {0.0, 0.9, 0.95, 1.0}}});
    REQUIRE(cells.size() == 4);
    CHECK(cells[0].name == "mu_f=0");
    CHECK(cells[2].name == "mu_f=0.95");
    CHECK(cells[3].config.mu_f == 1.0);
  }
  SUBCASE("depth axis, k = 0 included") {
    const auto cells = expand_axes(base, {{"k", {0, 1, 2, 3}}});
    REQUIRE(cells.size() == 4);
    CHECK(cells[0].config.codebook_depth == 0);
    CHECK(cells[0].name == "k=0");
  }
  SUBCASE("product of axes") {
    const auto cells = expand_axes(
        base, {{"soft_reset", {true, false}}, {"anchor", {true, false}}, {"self_replay", {false}}, {"mu_m", {nullptr, 0.95, 1.0}}});
    REQUIRE(cells.size() == 12);
    CHECK(cells[0].name == "soft_reset=on;anchor=on;self_replay=off;mu_m=off");
    CHECK(!cells[0].config.mu_m);
    CHECK(cells[1].config.mu_m == 0.95);
    CHECK(!cells[11].config.use_soft_reset);
    CHECK(!cells[11].config.use_anchor_loss);
    CHECK(!cells[11].config.use_self_replay);
  }
  SUBCASE("continuous axis") {
    const auto cells = expand_axes(base, {{"continuous", {true, false}}});
    CHECK(cells[1].name == "continuous=off");
    CHECK(!cells[1].config.continuous);
  }
  CHECK_THROWS_AS(expand_axes(base, {{"lr", {1.0}}}), std::invalid_argument);
  CHECK_THROWS_AS(expand_axes(base, {{"mu_f", nlohmann::json::array()}}), std::invalid_argument);
}

TEST_CASE("suite config") {
  const SuiteConfig s;
  CHECK(s.persons == 4);
  CHECK(s.minutes == 10.0);
  CHECK(!(s.shift == DomainShift::source()));
  const nlohmann::json j = s;
  const SuiteConfig back = j.get<SuiteConfig>();
  CHECK(back.shift == s.shift);
  CHECK(back.profile_seed == s.profile_seed);
  CHECK_THROWS_AS(nlohmann::json({{"people", 3}}).get<SuiteConfig>(), std::invalid_argument);
  SuiteConfig bad;
  bad.shift = DomainShift::source();
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  const auto a = suite_specs(s, 1), b = suite_specs(s, 2);
  REQUIRE(a.size() == 4);
  CHECK(a[0].profile.beta == b[0].profile.beta);  // same people across seeds
  CHECK(a[0].stream_seed != b[0].stream_seed);
}

TEST_CASE("summaries recompute from raw rows") {
  const auto rows = synthetic_grid();
  const auto s = summarize(rows);
  REQUIRE(s.size() == 2);
  CHECK(s[0].cell == "full");
  REQUIRE(s[0].seeds.size() == 3);
  CHECK(s[0].seeds[0].seed == 1);  // ascending
  // Hand recomputation: 9 batches -> last 2 form the final quarter.
  for (const auto& cs : s) {
    for (const auto& ss : cs.seeds) {
      double fq = 0, all = 0, drift = 0;
      int n = 0;
      for (std::uint32_t p = 0; p < 2; ++p) {
        std::vector<TelemetryRow> v;
        for (const auto& g : rows) {
          if (g.cell == cs.cell && g.seed == ss.seed && g.row.person_id == p) v.push_back(g.row);
        }
        fq += (v[7].mpjpe_mm + v[8].mpjpe_mm) / 2;
        drift += v[8].drift;
        for (const auto& r : v) {
          all += r.mpjpe_mm;
          ++n;
        }
      }
      CHECK(ss.final_quarter_mpjpe == fq / 2);
      CHECK(ss.final_drift == drift / 2);
      CHECK(ss.mean_mpjpe == all / n);
    }
  }
  CHECK(final_quarter_mean(series(0, {1, 2, 3})) == 3.0);
  CHECK_THROWS_AS(final_quarter_mean({}), std::invalid_argument);
  const MeanStd m = mean_std({1, 2, 3, 4});
  CHECK(m.mean == 2.5);
  CHECK(m.std == doctest::Approx(std::sqrt(5.0 / 3.0)));
}

TEST_CASE("grid csv round trip is exact") {
  const auto rows = synthetic_grid();
  const fs::path p = fs::temp_directory_path() / "mtta_grid_test.csv";
  write_grid_csv(p, rows);
  const auto back = read_grid_csv(p);
  REQUIRE(back.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(back[i].cell == rows[i].cell);
    CHECK(back[i].seed == rows[i].seed);
    CHECK(back[i].row.mpjpe_mm == rows[i].row.mpjpe_mm);
    CHECK(back[i].row.drift == rows[i].row.drift);
  }
  // Summaries from the file equal summaries from memory bit for bit.
  const auto a = summarize(rows), b = summarize(back);
  for (std::size_t c = 0; c < a.size(); ++c) {
    for (std::size_t s = 0; s < a[c].seeds.size(); ++s) CHECK(a[c].seeds[s].final_quarter_mpjpe == b[c].seeds[s].final_quarter_mpjpe);
  }
  auto bad = rows;
  bad[0].cell = "a,b";
  CHECK_THROWS_AS(write_grid_csv(p, bad), std::invalid_argument);
  fs::remove(p);
}

TEST_CASE("report rendering") {
  SUBCASE("empty results give a header-only report") {
    const std::string md = render_report({}, {});
    CHECK(md.find("# Ablation report") == 0);
    CHECK(md.find("| cell |") != std::string::npos);
    CHECK(md.find("| full") == std::string::npos);
  }
  SUBCASE("bundle is deterministic and traceable") {
    const auto rows = synthetic_grid();
    const fs::path d1 = fs::temp_directory_path() / "mtta_report_a";
    const fs::path d2 = fs::temp_directory_path() / "mtta_report_b";
    fs::remove_all(d1);
    fs::remove_all(d2);
    write_report_bundle(rows, d1, {"neither"});
    write_report_bundle(rows, d2, {"neither"});
    for (const char* f : {"report.md", "summary.csv", "curves/full_vs_neither_p0.csv", "curves/full_vs_neither.svg"}) {
      REQUIRE(fs::exists(d1 / f));
      CHECK(slurp(d1 / f) == slurp(d2 / f));
    }
    const std::string md = slurp(d1 / "report.md");
    CHECK(md.find("Sign tests against `neither`") != std::string::npos);
    CHECK(md.find("desk-scale analog") != std::string::npos);
    // Table mean equals the mean of the per-seed values.
    const auto s = summarize(rows);
    std::vector<double> fq;
    for (const auto& ss : s[0].seeds) fq.push_back(ss.final_quarter_mpjpe);
    char buf[64];
    std::snprintf(buf, sizeof buf, "| full | 3 | %.2f ± ", mean_std(fq).mean);
    CHECK(md.find(buf) != std::string::npos);
    CHECK_THROWS_AS(write_report_bundle(rows, d1, {"missing"}), std::invalid_argument);
    fs::remove_all(d1);
    fs::remove_all(d2);
  }
}

TEST_CASE("grid runs") {
  const PretrainedModels pre = tiny_models(4);
  const SuiteConfig suite = small_suite();
  const AdaptConfig cfg = quick();

  SUBCASE("one cell, one seed equals run_stream") {
    const auto rows = ablation_grid(pre, {{"base", cfg}}, suite, {7});
    const auto specs = suite_specs(suite, 7);
    std::vector<TelemetryRow> direct;
    for (const auto& sp : specs) {
      for (const auto& r : run_stream(pre, sp, cfg, 7).rows) direct.push_back(r);
    }
    REQUIRE(rows.size() == direct.size());
    REQUIRE(rows.size() == 4);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      CHECK(rows[i].row.mpjpe_mm == direct[i].mpjpe_mm);
      CHECK(rows[i].row.drift == direct[i].drift);
      CHECK(rows[i].row.l_f == direct[i].l_f);
    }
  }
  SUBCASE("execution order and threading leave numbers unchanged") {
    AdaptConfig other = cfg;
    other.use_soft_reset = false;
    const auto ab = ablation_grid(pre, {{"a", cfg}, {"b", other}}, suite, {1, 2});
    const auto ba = ablation_grid(pre, {{"b", other}, {"a", cfg}}, suite, {2, 1}, 2);
    REQUIRE(ab.size() == ba.size());
    auto key = [](const GridRow& g) { return std::make_tuple(g.cell, g.seed, g.row.person_id, g.row.batch_idx); };
    auto sa = ab, sb = ba;
    auto by_key = [&](const GridRow& x, const GridRow& y) { return key(x) < key(y); };
    std::sort(sa.begin(), sa.end(), by_key);
    std::sort(sb.begin(), sb.end(), by_key);
    for (std::size_t i = 0; i < sa.size(); ++i) {
      REQUIRE(key(sa[i]) == key(sb[i]));
      CHECK(sa[i].row.mpjpe_mm == sb[i].row.mpjpe_mm);
      CHECK(sa[i].row.l_m == sb[i].row.l_m);
    }
  }
  SUBCASE("cells that cannot run are skipped with a log line") {
    AdaptConfig bad = cfg;
    bad.mu_f = 2.0;
    std::vector<std::string> log;
    const auto rows = ablation_grid(pre, {{"bad", bad}}, suite, {1}, 1, [&](const std::string& s) { log.push_back(s); });
    CHECK(rows.empty());
    REQUIRE(!log.empty());
    CHECK(log[0].find("skipping cell bad") == 0);
    CHECK_THROWS_AS(ablation_grid(pre, {{"x", cfg}, {"x", cfg}}, suite, {1}), std::invalid_argument);
  }
}

TEST_CASE("dump pipeline matches in-memory streams") {
  const PretrainedModels pre = tiny_models(8);
  const SuiteConfig suite = small_suite();
  const AdaptConfig cfg = quick();
  const fs::path dir = fs::temp_directory_path() / "mtta_dump_test";
  fs::remove_all(dir);
  CHECK(write_suite_dumps(suite, 3, cfg.camera, dir) == 4);
  CHECK(fs::exists(dir / "person_1" / "batch_00001.mtsb"));

  const DumpRun run = adapt_dump_dir(pre, dir, cfg, 3);
  std::vector<TelemetryRow> direct;
  for (const auto& sp : suite_specs(suite, 3)) {
    for (const auto& r : run_stream(pre, sp, cfg, 3).rows) direct.push_back(r);
  }
  REQUIRE(run.rows.size() == direct.size());
  for (std::size_t i = 0; i < direct.size(); ++i) {
    CHECK(run.rows[i].mpjpe_mm == direct[i].mpjpe_mm);
    CHECK(run.rows[i].l_m == direct[i].l_m);
    CHECK(run.rows[i].drift == direct[i].drift);
  }
  REQUIRE(run.predictions.size() == 4);
  CHECK(run.predictions[2].person_id == 1);
  CHECK(run.predictions[2].frames.size() == kBatchFrames);

  const fs::path pred = dir / "predictions.bin";
  write_predictions(pred, run.predictions);
  const auto back = read_predictions(pred);
  REQUIRE(back.size() == 4);
  CHECK(back[3].batch_idx == run.predictions[3].batch_idx);
  CHECK(back[3].frames[17].theta == run.predictions[3].frames[17].theta);
  CHECK(back[3].frames[17].psi == run.predictions[3].frames[17].psi);

  // Without GT the adapter still runs; scores are NaN.
  const fs::path blind = fs::temp_directory_path() / "mtta_dump_blind";
  fs::remove_all(blind);
  write_suite_dumps(suite, 3, cfg.camera, blind, false);
  const DumpRun b = adapt_dump_dir(pre, blind, cfg, 3);
  REQUIRE(b.rows.size() == 4);
  CHECK(std::isnan(b.rows[0].mpjpe_mm));
  CHECK(b.rows[0].l_f == run.rows[0].l_f);
  CHECK_THROWS(adapt_dump_dir(pre, dir / "nope", cfg, 3));
  fs::remove_all(dir);
  fs::remove_all(blind);
}
