#pragma once

// The work behind each subcommand, callable without the argument parser:
// data ingestion, fitting, model-file round trips, prediction, dependence
// summaries, scoring and simulation.

#include "deepwarp/cli/config.hpp"
#include "deepwarp/engine/optim.hpp"
#include "deepwarp/extremes/extremes.hpp"
#include "deepwarp/gauss/gauss.hpp"
#include "deepwarp/io/csv.hpp"
#include "deepwarp/warp/warp.hpp"

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

namespace deepwarp::cli {

// Fills in the seed (flag, else config, else 1) and the risk quantile (flag,
// else config, else 0.95) so the echo in every output reflects the run.
void resolve(RunConfig& config, std::optional<std::uint64_t> seed_flag, std::optional<double> quantile_flag);

struct TraceDigest {
  int steps = 0;
  int failures = 0;
  bool converged = false;
  double first_loss = 0.0;
  double last_loss = 0.0;
  std::string digest;  // FNV-1a 64 of the trace CSV
};

TraceDigest trace_digest(const engine::FitResult& result);

struct FoldSummary {
  std::string stack;  // spatial or spatial2
  warp::FoldReport report;
};

struct GaussRun {
  RunConfig config;
  warp::Rescaler space;
  warp::Rescaler time;  // spatio-temporal only
  gauss::GaussData train;
  engine::ParamVector params;
  gauss::GaussFit fit;
  TraceDigest trace;
  std::vector<FoldSummary> folds;
};

struct ExtremesRun {
  RunConfig config;
  warp::Rescaler space;
  engine::ParamVector params;
  extremes::ExtremesFit fit;
  double threshold = 1.0;
  int pairs = 0, terms = 0, events = 0, excluded_pairs = 0;
  TraceDigest trace;
  std::vector<FoldSummary> folds;
};

using ModelRun = std::variant<GaussRun, ExtremesRun>;

// ---- ingestion ----

gauss::GaussSpec gauss_spec(const RunConfig& config);
extremes::ExtremesSpec extremes_spec(const RunConfig& config);

// Long format: x, y [, t] [, process in {1, 2}], covariates, response.
gauss::GaussData gauss_data(const io::Table& table, const RunConfig& config, const warp::Rescaler& space,
                            const warp::Rescaler& time, bool need_response);
// Wide format: exactly x, y, z1..zT. Returns rescaled sites and T x n observations
// on the standardized scale.
extremes::ExtremesData extremes_data(const io::Table& table, const RunConfig& config, const warp::Rescaler& space,
                                     std::vector<std::string>* warnings = nullptr);

// ---- fitting ----

struct FitOutput {
  ModelRun run;
  engine::FitResult result;
};

FitOutput fit_model(const RunConfig& config, const io::Table& data, const engine::ProgressFn& progress = {});

// ---- model file ----

std::string model_json(const ModelRun& run);
ModelRun parse_model(const std::string& text, const std::string& source = "<model>");

// ---- reports ----

// Header: x, y [, t] [, process], mean, stderr, extrapolated.
std::string predict_csv(const ModelRun& run, const io::Table& newdata);

struct SummaryFiles {
  std::string map;    // ref, ref_x, ref_y, x, y, warped_x, warped_y, distance, <measure>, ref_outside
  std::string curve;  // distance, <measure>
  std::string sites;  // x, y, warped_x, warped_y, outside
};

// `config` supplies reference_sites and curve_points.
SummaryFiles summary_files(const ModelRun& run, const io::Table& newdata, const RunConfig& config);

// Aligned prediction (mean, stderr) and truth (response) tables.
gauss::Scores score_tables(const io::Table& pred, const io::Table& truth, const std::string& response);
std::string score_json(const gauss::Scores& scores, std::size_t rows, const RunConfig& config);

// ---- simulation ----

struct SimulatedData {
  std::string csv;
  std::string truth;  // JSON sidecar
};

SimulatedData simulate(const RunConfig& config);

// Comment line written at the top of every CSV output.
std::string provenance_line(const RunConfig& config);

}  // namespace deepwarp::cli
