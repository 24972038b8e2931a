#pragma once

// Ablation grids over adaptation configs, error-difference curves against a
// baseline, and the markdown/CSV/SVG report rendered from raw telemetry.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mtta/adapt.hpp"

namespace mtta {

// ------------------------------------------------------------ suite

// The standard synthetic test suite: fixed people, one domain shift, one
// stream per person. The seed varies detector noise, the start offset into
// each person's timeline, and the adapter's randomness.
struct SuiteConfig {
  std::size_t persons = 4;
  double minutes = 10.0;
  std::uint64_t profile_seed = 2024;
  DomainShift shift;

  SuiteConfig();
  void validate() const;
};
// Detector bias, extra noise, dropout, lens warp and a nuisance-channel offset together.
DomainShift standard_shift();

void to_json(nlohmann::json& j, const SuiteConfig& c);
void from_json(const nlohmann::json& j, SuiteConfig& c);
void to_json(nlohmann::json& j, const DomainShift& s);
void from_json(const nlohmann::json& j, DomainShift& s);

std::vector<StreamSpec> suite_specs(const SuiteConfig& suite, std::uint64_t seed);

// ------------------------------------------------------------ dumps

// Writes every suite stream as person_<id>/batch_<idx>.mtsb under `dir`.
// Returns the number of batch files written.
std::size_t write_suite_dumps(const SuiteConfig& suite, std::uint64_t seed, const Camera& cam, const std::filesystem::path& dir,
                              bool include_gt = true);

struct DumpRun {
  std::vector<TelemetryRow> rows;
  std::vector<PredictionRecord> predictions;
};

// Adapts over a dump directory person by person, reading batches through the
// GT-free reader. Scores come from a separate evaluation read and are NaN
// when a dump carries no GT. Same seed and batches give the same rows as run_stream.
DumpRun adapt_dump_dir(const PretrainedModels& pre, const std::filesystem::path& dir, const AdaptConfig& cfg, std::uint64_t seed);

// ------------------------------------------------------------ grid

struct Cell {
  std::string name;
  AdaptConfig config;
};

// Cartesian product over the named axes, applied on top of `base`. Supported
// axes: soft_reset, anchor, self_replay, continuous (booleans), mu_f, k,
// mu_m (numbers; mu_m also accepts null for "off").
std::vector<Cell> expand_axes(const AdaptConfig& base, const nlohmann::json& axes);

struct GridRow {
  std::string cell;
  std::uint64_t seed = 0;
  TelemetryRow row;
};

using LogFn = std::function<void(const std::string&)>;

// Every cell x seed over the suite. Cells are independent and seeded only by
// (seed, person), so the execution order never changes a number. `threads`
// > 1 runs cells concurrently.
std::vector<GridRow> ablation_grid(const PretrainedModels& pre, const std::vector<Cell>& cells, const SuiteConfig& suite,
                                   const std::vector<std::uint64_t>& seeds, int threads = 1, const LogFn& log = {});

void write_grid_csv(const std::filesystem::path& path, const std::vector<GridRow>& rows);
std::vector<GridRow> read_grid_csv(const std::filesystem::path& path);

// ------------------------------------------------------------ summaries

// Mean MPJPE over the last quarter of a person's batches (at least one batch).
double final_quarter_mean(const std::vector<TelemetryRow>& person_rows);

struct SeedSummary {
  std::uint64_t seed = 0;
  double final_quarter_mpjpe = 0;     // mean over persons
  double final_quarter_mpjpe_pa = 0;
  double mean_mpjpe = 0;              // all batches, all persons
  double final_drift = 0;             // last batch, mean over persons
};

struct CellSummary {
  std::string cell;
  std::vector<SeedSummary> seeds;  // ascending seed order
};

// Cells in order of first appearance.
std::vector<CellSummary> summarize(const std::vector<GridRow>& rows);
const CellSummary& find_cell(const std::vector<CellSummary>& s, const std::string& name);

struct MeanStd {
  double mean = 0, std = 0;
};
MeanStd mean_std(const std::vector<double>& v);

// Paired two-sided sign test: counts seeds where a < b.
struct SignTest {
  std::size_t wins = 0, losses = 0, ties = 0;
  double p_value = 1.0;
};
SignTest sign_test(const std::vector<double>& a, const std::vector<double>& b);

// ------------------------------------------------------------ curves

struct ProgressCurve {
  std::vector<double> progress;  // (b + 1) / total
  std::vector<double> delta;     // method - baseline, mm
  std::vector<double> smoothed;  // window-5 moving average
};

// Window-5 centered moving average with half-sample symmetric edges, which
// keeps the series mean.
std::vector<double> moving_average5(const std::vector<double>& x);

ProgressCurve progress_curve(const std::vector<TelemetryRow>& method, const std::vector<TelemetryRow>& baseline);

void write_curve_csv(const std::filesystem::path& path, const ProgressCurve& c);
// Plain SVG line chart of the smoothed curves (one polyline per series).
std::string render_curve_svg(const std::vector<std::pair<std::string, ProgressCurve>>& series, const std::string& title);

// ------------------------------------------------------------ report

struct ReportOptions {
  std::string baseline;                  // reference cell for curves and sign tests ("" = first cell)
};

// Markdown summary. Deterministic: the same rows always render the same bytes.
std::string render_report(const std::vector<GridRow>& rows, const ReportOptions& opt);
// report.md, summary.csv, curves/<cell>_p<person>.csv/.svg under `dir`.
void write_report_bundle(const std::vector<GridRow>& rows, const std::filesystem::path& dir, const ReportOptions& opt);

}  // namespace mtta
