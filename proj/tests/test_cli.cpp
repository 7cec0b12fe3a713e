#include "deepwarp/cli/commands.hpp"
#include "deepwarp/cli/pipeline.hpp"
#include "deepwarp/error.hpp"
#include "deepwarp/util/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace dw = deepwarp;
namespace cli = deepwarp::cli;
namespace io = deepwarp::io;

namespace {

std::string fmt(double v) { return io::format_double(v); }

// Long-format Gaussian data on an irregular design with a smooth signal.
io::Table gp_table(int n, std::uint64_t seed, bool with_time = false, bool with_process = false) {
  dw::util::Rng rng(seed);
  std::string csv = "x,y";
  if (with_time) csv += ",t";
  if (with_process) csv += ",process";
  csv += ",elev,z\n";
  for (int i = 0; i < n; ++i) {
    const double x = 10.0 * rng.uniform() - 3.0, y = 4.0 * rng.uniform() + 1.0;
    const double elev = rng.normal();
    csv += fmt(x) + "," + fmt(y);
    if (with_time) csv += "," + std::to_string(1 + i % 4);
    if (with_process) csv += "," + std::to_string(1 + i % 2);
    csv += "," + fmt(elev) + "," + fmt(std::sin(0.5 * x) + 0.3 * y + 0.2 * elev + 0.1 * rng.normal()) + "\n";
  }
  return io::parse_csv(csv);
}

cli::RunConfig config(const std::string& json) {
  cli::RunConfig c = cli::parse_config(json);
  cli::resolve(c, std::nullopt, std::nullopt);
  return c;
}

const char* kLayers = R"("layers": [{"type": "AWU", "dim": 1, "r": 8, "steepness": 20},
                                     {"type": "AWU", "dim": 2, "r": 8, "steepness": 20},
                                     {"type": "RBF", "res": 1}, {"type": "LFT"}])";

std::string gp_json(const std::string& extra) {
  return std::string(R"({"model": "gp", )") + kLayers + R"(, "optimizer": {"nsteps": 4}, "seed": 11)" +
         (extra.empty() ? "" : ", " + extra) + "}";
}

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("deepwarp_cli_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)) + "_" +
            std::to_string(std::rand()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

void write(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  f << text;
}

int run_cli(std::vector<std::string> args, std::string* out = nullptr, std::string* err = nullptr) {
  args.insert(args.begin(), "deepwarp");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream o, e;
  const int rc = cli::run(static_cast<int>(argv.size()), argv.data(), o, e);
  if (out) *out = o.str();
  if (err) *err = e.str();
  return rc;
}

}  // namespace

// ---- CSV ----

TEST(Csv, ParsesHeaderBodyAndComments) {
  const io::Table t = io::parse_csv("# provenance\nx, y ,z\n1,2.5,-3e-2\n4,5,6\n\n");
  ASSERT_EQ(t.header, (std::vector<std::string>{"x", "y", "z"}));
  ASSERT_EQ(t.rows(), 2);
  EXPECT_EQ(t.values(0, 2), -3e-2);
  EXPECT_EQ(t.col("y")(1), 5.0);
  EXPECT_THROW(t.col("w"), dw::DataError);
}

TEST(Csv, RejectsMalformedInput) {
  EXPECT_THROW(io::parse_csv(""), dw::DataError);
  EXPECT_THROW(io::parse_csv("x,y\n1\n"), dw::DataError);
  EXPECT_THROW(io::parse_csv("x,y\n1,abc\n"), dw::DataError);
  EXPECT_THROW(io::parse_csv("x,y\n1,2x\n"), dw::DataError);
  EXPECT_THROW(io::parse_csv("x,y\n1,nan\n"), dw::DataError);
  EXPECT_THROW(io::parse_csv("x,y\n1,\n"), dw::DataError);
  EXPECT_THROW(io::parse_csv("x,x\n1,2\n"), dw::DataError);
  EXPECT_THROW(io::parse_csv("x,\n1,2\n"), dw::DataError);
}

TEST(Csv, FormatDoubleRoundTrips) {
  dw::util::Rng rng(5);
  for (int i = 0; i < 1000; ++i) {
    const double v = rng.normal() * std::pow(10.0, static_cast<int>(rng.index(40)) - 20);
    EXPECT_EQ(io::parse_csv("v\n" + fmt(v) + "\n").values(0, 0), v);
  }
}

TEST(Csv, AtomicWriteReplacesTarget) {
  TempDir d;
  const std::string p = d.file("a.txt");
  io::write_text_atomic(p, "one");
  io::write_text_atomic(p, "two");
  EXPECT_EQ(io::read_text(p), "two");
  EXPECT_FALSE(std::filesystem::exists(p + ".tmp"));
}

// ---- config ----

TEST(Config, DefaultsAndEcho) {
  const cli::RunConfig c = cli::parse_config("{}");
  EXPECT_EQ(c.model, "gp");
  EXPECT_EQ(c.backend, "exact");
  EXPECT_EQ(c.optimizer.nsteps, 50);
  EXPECT_FALSE(c.risk_quantile.has_value());
  EXPECT_TRUE(c.layers.empty());
  // The echo parses back to the same configuration.
  const cli::RunConfig again = cli::parse_config(cli::config_json(config(gp_json(""))));
  EXPECT_EQ(cli::config_json(again), cli::config_json(config(gp_json(""))));
}

TEST(Config, RejectsUnknownKeysAndBadTypes) {
  EXPECT_THROW(cli::parse_config(R"({"modle": "gp"})"), dw::ConfigError);
  EXPECT_THROW(cli::parse_config(R"({"optimizer": {"steps": 3}})"), dw::ConfigError);
  EXPECT_THROW(cli::parse_config(R"({"optimizer": {"rates": {"mean": 0.1}}})"), dw::ConfigError);
  EXPECT_THROW(cli::parse_config(R"({"layers": [{"type": "AWU", "grad": 50}]})"), dw::ConfigError);
  EXPECT_THROW(cli::parse_config(R"({"simulate": {"nn": 3}})"), dw::ConfigError);
  EXPECT_THROW(cli::parse_config(R"({"neighbors": "ten"})"), dw::ConfigError);
  EXPECT_THROW(cli::parse_config(R"({"neighbors": 2.5})"), dw::ConfigError);
  EXPECT_THROW(cli::parse_config(R"({"backend": "dense"})"), dw::ConfigError);
  EXPECT_THROW(cli::parse_config(R"({"layers": [{"type": "XYZ"}]})"), dw::ConfigError);
  EXPECT_THROW(cli::parse_config(R"({"seed": -1})"), dw::ConfigError);
  EXPECT_THROW(cli::parse_config("{not json"), dw::ConfigError);
  EXPECT_THROW(cli::parse_config("[1, 2]"), dw::ConfigError);
}

TEST(Config, HashTracksContent) {
  const auto a = config(gp_json(""));
  auto b = a;
  EXPECT_EQ(cli::config_hash(a), cli::config_hash(b));
  b.optimizer.nsteps += 1;
  EXPECT_NE(cli::config_hash(a), cli::config_hash(b));
  EXPECT_EQ(cli::config_hash(a).size(), 16u);
}

TEST(Config, FlagsOverrideConfig) {
  cli::RunConfig c = cli::parse_config(R"({"seed": 4, "risk_quantile": 0.9})");
  cli::resolve(c, std::nullopt, std::nullopt);
  EXPECT_EQ(*c.seed, 4u);
  EXPECT_EQ(*c.risk_quantile, 0.9);
  cli::resolve(c, 8, 0.8);
  EXPECT_EQ(*c.seed, 8u);
  EXPECT_EQ(*c.risk_quantile, 0.8);
  cli::RunConfig d = cli::parse_config("{}");
  cli::resolve(d, std::nullopt, std::nullopt);
  EXPECT_EQ(*d.seed, 1u);
  EXPECT_EQ(*d.risk_quantile, 0.95);
}

TEST(Config, BuildStackValidates) {
  const auto c = cli::parse_config(R"({"layers": [{"type": "AWU", "dim": 3}]})");
  EXPECT_THROW(cli::build_stack(c.layers, 2, true), dw::ConfigError);
  const auto t = cli::parse_config(R"({"layers": [{"type": "RBF"}]})");
  EXPECT_THROW(cli::build_stack(t.layers, 1, true), dw::ConfigError);
  EXPECT_EQ(cli::build_stack(cli::parse_config(gp_json("")).layers, 2, true).size(), 4u);
}

// ---- Gaussian model files ----

namespace {

void expect_round_trip(const cli::RunConfig& c, const io::Table& train, const io::Table& sites) {
  const cli::FitOutput f = cli::fit_model(c, train);
  const std::string json = cli::model_json(f.run);
  const std::string direct = cli::predict_csv(f.run, sites);
  const cli::ModelRun back = cli::parse_model(json);
  EXPECT_EQ(cli::predict_csv(back, sites), direct);
  EXPECT_EQ(cli::model_json(back), json);
}

}  // namespace

TEST(ModelFile, RoundTripExact) { expect_round_trip(config(gp_json("")), gp_table(40, 1), gp_table(15, 2)); }

TEST(ModelFile, RoundTripNngp) {
  expect_round_trip(config(gp_json(R"("backend": "nngp", "neighbors": 6, "predict_neighbors": 8)")), gp_table(40, 3),
                    gp_table(15, 4));
}

TEST(ModelFile, RoundTripFrk) {
  expect_round_trip(config(gp_json(R"("backend": "frk", "basis": 9)")), gp_table(40, 5), gp_table(15, 6));
}

TEST(ModelFile, RoundTripCovariatesSpatioTemporalBivariate) {
  expect_round_trip(config(gp_json(R"("covariates": ["elev"])")), gp_table(30, 7), gp_table(10, 8));
  expect_round_trip(config(gp_json(R"("kind": "spatio_temporal", "temporal_layers": [{"type": "AWU", "dim": 1, "r": 5, "steepness": 10}])")),
                    gp_table(30, 9, true), gp_table(10, 10, true));
  expect_round_trip(config(gp_json(R"("kind": "bivariate", "layers2": [{"type": "AWU", "dim": 1, "r": 5, "steepness": 10}])")),
                    gp_table(30, 11, false, true), gp_table(10, 12, false, true));
}

TEST(ModelFile, ZeroStepsKeepsInitialParameters) {
  cli::RunConfig c = config(gp_json(""));
  c.optimizer.nsteps = 0;
  const cli::FitOutput f = cli::fit_model(c, gp_table(30, 13));
  const auto& run = std::get<cli::GaussRun>(f.run);
  EXPECT_EQ(run.trace.steps, 0);
  EXPECT_NEAR(run.fit.lengthscale, 0.5 * std::sqrt(2.0), 1e-15);
  for (const auto& w : run.fit.w_spatial[0].parts[1]) EXPECT_EQ(w, 0.0);
  EXPECT_TRUE(run.folds.at(0).report.ok);
}

TEST(ModelFile, SameSeedSameFile) {
  const cli::RunConfig c = config(gp_json(R"("backend": "nngp", "neighbors": 5)"));
  const io::Table t = gp_table(35, 14);
  EXPECT_EQ(cli::model_json(cli::fit_model(c, t).run), cli::model_json(cli::fit_model(c, t).run));
}

TEST(ModelFile, RejectsTamperingAndGarbage) {
  const cli::FitOutput f = cli::fit_model(config(gp_json("")), gp_table(25, 15));
  std::string json = cli::model_json(f.run);
  EXPECT_THROW(cli::parse_model("{}"), dw::DataError);
  EXPECT_THROW(cli::parse_model("not json"), dw::DataError);
  const auto pos = json.find("\"nsteps\": 4");
  ASSERT_NE(pos, std::string::npos);
  json.replace(pos, 11, "\"nsteps\": 5");
  EXPECT_THROW(cli::parse_model(json), dw::DataError);
}

TEST(ModelFile, EmbedsHashAndSeed) {
  const cli::RunConfig c = config(gp_json(""));
  const cli::FitOutput f = cli::fit_model(c, gp_table(25, 16));
  const std::string json = cli::model_json(f.run);
  EXPECT_NE(json.find(cli::config_hash(c)), std::string::npos);
  EXPECT_NE(json.find("\"seed\": 11"), std::string::npos);
  EXPECT_EQ(cli::predict_csv(f.run, gp_table(3, 17)).rfind(cli::provenance_line(c), 0), 0u);
}

// ---- prediction ----

TEST(Predict, InterpolatesTrainingSitesWithoutNoise) {
  cli::RunConfig c = config(gp_json(""));
  c.optimizer.nsteps = 0;
  const io::Table train = gp_table(30, 18);
  cli::FitOutput f = cli::fit_model(c, train);
  auto& run = std::get<cli::GaussRun>(f.run);
  run.fit.noise = 1e-12;
  const io::Table pred = io::parse_csv(cli::predict_csv(f.run, train));
  const Eigen::VectorXd res = pred.col("mean") - train.col("z");
  EXPECT_LT(res.cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_EQ(pred.col("extrapolated").sum(), 0.0);
}

TEST(Predict, FlagsExtrapolationAndMissingColumns) {
  const cli::FitOutput f = cli::fit_model(config(gp_json(R"("covariates": ["elev"])")), gp_table(30, 19));
  const io::Table far = io::parse_csv("x,y,elev\n100,2,0\n0,2,0\n");
  const io::Table p = io::parse_csv(cli::predict_csv(f.run, far));
  EXPECT_EQ(p.col("extrapolated")(0), 1.0);
  EXPECT_EQ(p.col("extrapolated")(1), 0.0);
  EXPECT_THROW(cli::predict_csv(f.run, io::parse_csv("x,y\n0,2\n")), dw::DataError);
  EXPECT_THROW(cli::predict_csv(f.run, io::parse_csv("x,elev\n0,2\n")), dw::DataError);
}

// ---- extremes ----

namespace {

io::Table br_table(int n, int nt, std::uint64_t seed, bool pareto) {
  cli::RunConfig c = config(R"({"simulate": {"type": "BR_approx", "n": )" + std::to_string(n) +
                            R"(, "n_fields": )" + std::to_string(nt) + R"(, "ds": 0.05, "range": 0.5, "smoothness": 1.2, "pareto": )" +
                            (pareto ? "true" : "false") + "}}");
  c.seed = seed;
  return io::parse_csv(cli::simulate(c).csv);
}

std::string ext_json(const std::string& method, const std::string& extra, bool warped = true) {
  return std::string(R"({"model": "extremes", "method": ")") + method + "\"" + (warped ? std::string(", ") + kLayers : "") +
         R"(, "optimizer": {"nsteps": 3}, "reference_sites": [[0, 0], [0.25, -0.3]])" + (extra.empty() ? "" : ", " + extra) + "}";
}

}  // namespace

TEST(Extremes, FitsEveryMethodAndRoundTrips) {
  const io::Table maxima = br_table(8, 30, 21, false), pareto = br_table(8, 40, 22, true);
  const io::Table sites = io::parse_csv("x,y\n0,0\n0.1,0.2\n-0.3,0.4\n");
  const std::vector<std::pair<std::string, std::string>> cases = {
      {"wls", ""}, {"pcl", R"("pcl_b": 0.7)"}, {"rpl", R"("rpl_b": 0.5)"},
      {"wls", R"("data_type": "pareto", "risk_quantile": 0.5)"}, {"gsm", R"("data_type": "pareto", "risk_quantile": 0.5)"}};
  for (const auto& [method, extra] : cases) {
    SCOPED_TRACE(method + " " + extra);
    const cli::RunConfig c = config(ext_json(method, extra));
    const cli::FitOutput f = cli::fit_model(c, extra.find("pareto") == std::string::npos ? maxima : pareto);
    const std::string json = cli::model_json(f.run);
    const cli::ModelRun back = cli::parse_model(json);
    EXPECT_EQ(cli::model_json(back), json);
    EXPECT_EQ(cli::summary_files(back, sites, c).map, cli::summary_files(f.run, sites, c).map);
    EXPECT_TRUE(std::get<cli::ExtremesRun>(f.run).folds.at(0).report.ok);
  }
}

TEST(Extremes, PredictIsUnsupported) {
  const cli::FitOutput f = cli::fit_model(config(ext_json("wls", "")), br_table(6, 20, 23, false));
  EXPECT_THROW(cli::predict_csv(f.run, io::parse_csv("x,y\n0,0\n")), dw::UnsupportedError);
}

TEST(Extremes, MethodDataIncompatibility) {
  EXPECT_THROW(cli::fit_model(config(ext_json("gsm", "")), br_table(6, 20, 24, false)), dw::ConfigError);
}

TEST(Extremes, WideFormatIsStrict) {
  const cli::RunConfig c = config(ext_json("wls", ""));
  EXPECT_THROW(cli::fit_model(c, io::parse_csv("x,y,z2\n0,0,1\n1,1,2\n")), dw::DataError);
  EXPECT_THROW(cli::fit_model(c, io::parse_csv("y,x,z1\n0,0,1\n1,1,2\n")), dw::DataError);
  EXPECT_THROW(cli::fit_model(c, io::parse_csv("x,y\n0,0\n1,1\n")), dw::DataError);
}

// ---- summary ----

TEST(Summary, ReferenceSiteEqualToNewSite) {
  const cli::RunConfig c = config(ext_json("wls", ""));
  const cli::FitOutput f = cli::fit_model(c, br_table(8, 30, 25, false));
  const io::Table sites = io::parse_csv("x,y\n0.25,-0.3\n0,0.4\n");
  const io::Table map = io::parse_csv(cli::summary_files(f.run, sites, c).map);
  // Rows: ref 1 x {site 1, site 2}, ref 2 x {site 1, site 2}; ref 2 equals site 1.
  EXPECT_NEAR(map.col("theta")(2), 1.0, 1e-15);
  EXPECT_GT(map.col("theta")(3), 1.0);

  const cli::RunConfig g = config(gp_json(R"("reference_sites": [[0, 2]])"));
  const cli::FitOutput gf = cli::fit_model(g, gp_table(30, 26));
  const io::Table gmap = io::parse_csv(cli::summary_files(gf.run, io::parse_csv("x,y\n0,2\n1,3\n"), g).map);
  EXPECT_NEAR(gmap.col("correlation")(0), 1.0, 1e-12);
  EXPECT_LT(gmap.col("correlation")(1), 1.0);
}

TEST(Summary, IdentityWarpDependsOnDistanceOnly) {
  const cli::RunConfig c = config(ext_json("wls", R"("reference_sites": [[0, 0]])", false));
  const cli::FitOutput f = cli::fit_model(c, br_table(8, 30, 27, false));
  const auto& run = std::get<cli::ExtremesRun>(f.run);
  // Four sites at the same rescaled distance from the reference, in raw units.
  const Eigen::VectorXd mid = 0.5 * (run.space.lo + run.space.hi), half = 0.5 * (run.space.hi - run.space.lo);
  std::string csv = "x,y\n";
  const double r = 0.2;
  for (const auto& [dx, dy] : std::vector<std::pair<double, double>>{{r, 0}, {-r, 0}, {0, r}, {0, -r}}) {
    csv += fmt(mid(0) + 2.0 * half(0) * dx) + "," + fmt(mid(1) + 2.0 * half(1) * dy) + "\n";
  }
  cli::RunConfig cc = c;
  cc.reference_sites = {{mid(0), mid(1)}};
  const io::Table map = io::parse_csv(cli::summary_files(f.run, io::parse_csv(csv), cc).map);
  for (int k = 1; k < 4; ++k) EXPECT_NEAR(map.col("theta")(k), map.col("theta")(0), 1e-12);
}

TEST(Summary, ThreeSiteOracle) {
  const cli::RunConfig c = config(ext_json("wls", ""));
  const cli::FitOutput f = cli::fit_model(c, br_table(8, 30, 28, false));
  const auto& run = std::get<cli::ExtremesRun>(f.run);
  const io::Table sites = io::parse_csv("x,y\n0.1,0.1\n-0.2,0.3\n0.3,-0.4\n");
  const io::Table map = io::parse_csv(cli::summary_files(f.run, sites, c).map);
  const Eigen::MatrixXd refs = run.space.apply((Eigen::MatrixXd(2, 2) << 0, 0, 0.25, -0.3).finished());
  const Eigen::MatrixXd s = run.space.apply(sites.values);
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 3; ++j) {
      const double want = dw::extremes::extremal_coefficient(dw::covario::nonstat_vario(
          run.fit.spec.stack, run.fit.weights, run.fit.calibration, run.fit.vario, refs.row(i), s.row(j)));
      EXPECT_NEAR(map.col("theta")(3 * i + j), want, 1e-12);
    }
  }
  const io::Table curve = io::parse_csv(cli::summary_files(f.run, sites, c).curve);
  EXPECT_EQ(curve.rows(), c.curve_points);
  EXPECT_EQ(curve.col("theta")(0), 1.0);
}

TEST(Summary, NeedsReferenceSites) {
  const cli::RunConfig c = config(ext_json("wls", R"("reference_sites": [])"));
  const cli::FitOutput f = cli::fit_model(c, br_table(6, 20, 29, false));
  EXPECT_THROW(cli::summary_files(f.run, io::parse_csv("x,y\n0,0\n"), c), dw::ConfigError);
}

TEST(Summary, FlagsReferenceOutsideTheBox) {
  cli::RunConfig c = config(ext_json("wls", R"("reference_sites": [[5, 5]])"));
  const cli::FitOutput f = cli::fit_model(c, br_table(6, 20, 30, false));
  const io::Table map = io::parse_csv(cli::summary_files(f.run, io::parse_csv("x,y\n0,0\n"), c).map);
  EXPECT_EQ(map.col("ref_outside")(0), 1.0);
}

// ---- scoring ----

TEST(Score, PerfectSpotAndEquivariance) {
  const io::Table truth = io::parse_csv("x,y,z\n0,0,1\n1,0,2\n0,1,-1\n");
  const auto perfect = cli::score_tables(io::parse_csv("x,y,mean,stderr\n0,0,1,0\n1,0,2,0\n0,1,-1,0\n"), truth, "z");
  EXPECT_EQ(perfect.rmspe, 0.0);
  EXPECT_EQ(perfect.crps, 0.0);

  // CRPS(N(0, 1), 0) = 2 phi(0) - 1/sqrt(pi).
  const auto spot = cli::score_tables(io::parse_csv("mean,stderr\n0,1\n"), io::parse_csv("z\n0\n"), "z");
  EXPECT_NEAR(spot.crps, 2.0 / std::sqrt(2.0 * M_PI) - 1.0 / std::sqrt(M_PI), 1e-12);

  const std::string pred = "mean,stderr\n0.5,0.3\n2.5,0.7\n-0.2,1.1\n";
  const auto a = cli::score_tables(io::parse_csv(pred), io::parse_csv("z\n1\n2\n-1\n"), "z");
  const auto b = cli::score_tables(io::parse_csv("mean,stderr\n1.5,0.9\n7.5,2.1\n-0.6,3.3\n"),
                                   io::parse_csv("z\n3\n6\n-3\n"), "z");
  EXPECT_NEAR(b.rmspe, 3.0 * a.rmspe, 1e-12);
  EXPECT_NEAR(b.crps, 3.0 * a.crps, 1e-12);
}

TEST(Score, RowMismatch) {
  EXPECT_THROW(cli::score_tables(io::parse_csv("mean,stderr\n0,1\n"), io::parse_csv("z\n0\n1\n"), "z"), dw::DataError);
  EXPECT_THROW(cli::score_tables(io::parse_csv("x,mean,stderr\n0,0,1\n"), io::parse_csv("x,z\n1,0\n"), "z"),
               dw::DataError);
}

// ---- simulation ----

TEST(Simulate, PaperListingShape) {
  cli::RunConfig c = config(R"({"simulate": {"type": "AWU_RBF_2D", "n": 6000, "ds": 0.01, "sigma2y": 0.01}})");
  const cli::SimulatedData d = cli::simulate(c);
  const io::Table t = io::parse_csv(d.csv);
  ASSERT_EQ(t.rows(), 6000);
  EXPECT_EQ(t.header, (std::vector<std::string>{"x", "y", "z"}));
  EXPECT_GE(t.col("x").minCoeff(), -0.5);
  EXPECT_LE(t.col("x").maxCoeff(), 0.5 + 1e-12);
  // Sites are distinct points of the 101 x 101 grid.
  std::set<std::pair<long, long>> seen;
  for (Eigen::Index i = 0; i < t.rows(); ++i) {
    const double gx = (t.values(i, 0) + 0.5) / 0.01, gy = (t.values(i, 1) + 0.5) / 0.01;
    EXPECT_NEAR(gx, std::round(gx), 1e-9);
    EXPECT_NEAR(gy, std::round(gy), 1e-9);
    seen.insert({std::lround(gx), std::lround(gy)});
  }
  EXPECT_EQ(seen.size(), 6000u);
  EXPECT_NE(d.truth.find("\"warp\""), std::string::npos);
}

TEST(Simulate, DeterministicAndGridLimit) {
  cli::RunConfig c = config(R"({"simulate": {"type": "AWU_RBF_2D", "n": 200, "ds": 0.05, "sigma2y": 0}})");
  EXPECT_EQ(cli::simulate(c).csv, cli::simulate(c).csv);
  c.simulate.n = 442;  // 21 x 21 grid
  EXPECT_THROW(cli::simulate(c), dw::ConfigError);
}

TEST(Simulate, StationaryVariogramAtTheLengthscale) {
  // sigma^2 (1 - e^-1) at h = l for the exponential family, n = 10^4.
  const double ell = 0.05, sigma2 = 1.0;
  cli::RunConfig c = config(R"({"simulate": {"type": "stationary_GP", "n": 10000, "ds": 0.01, "sigma2y": 0, "lengthscale": 0.05}})");
  const io::Table t = io::parse_csv(cli::simulate(c).csv);
  double sum = 0.0;
  long count = 0;
  for (Eigen::Index i = 0; i < t.rows(); ++i) {
    for (Eigen::Index j = 0; j < i; ++j) {
      const double h = std::hypot(t.values(i, 0) - t.values(j, 0), t.values(i, 1) - t.values(j, 1));
      if (std::abs(h - ell) < 0.0025) {
        sum += 0.5 * std::pow(t.values(i, 2) - t.values(j, 2), 2);
        ++count;
      }
    }
  }
  const double want = sigma2 * (1.0 - std::exp(-1.0));
  EXPECT_GT(count, 1000);
  EXPECT_NEAR(sum / static_cast<double>(count), want, 0.1 * want);
}

TEST(Simulate, BrownResnickWideFormat) {
  const io::Table t = br_table(7, 12, 31, false);
  ASSERT_EQ(t.header.size(), 14u);
  EXPECT_EQ(t.header[2], "z1");
  EXPECT_EQ(t.header[13], "z12");
  EXPECT_GT(t.values.rightCols(12).minCoeff(), 0.0);
}

// ---- command line ----

TEST(Cli, EndToEndAndExitCodes) {
  TempDir d;
  write(d.file("sim.json"), R"({"simulate": {"type": "AWU_RBF_2D", "n": 80, "ds": 0.05}})");
  ASSERT_EQ(run_cli({"simulate", "--config", d.file("sim.json"), "--out", d.file("all.csv"), "--seed", "5"}), 0);
  EXPECT_TRUE(std::filesystem::exists(d.file("all.csv.truth.json")));
  const io::Table all = io::read_csv(d.file("all.csv"));
  std::string train = "x,y,z\n", test = "x,y,z\n";
  for (Eigen::Index i = 0; i < all.rows(); ++i) {
    const std::string row = fmt(all.values(i, 0)) + "," + fmt(all.values(i, 1)) + "," + fmt(all.values(i, 2)) + "\n";
    (i < 60 ? train : test) += row;
  }
  write(d.file("train.csv"), train);
  write(d.file("test.csv"), test);
  write(d.file("fit.json"), gp_json(R"("reference_sites": [[0, 0]])"));

  const std::vector<std::string> fit = {"fit", "--config", d.file("fit.json"), "--data", d.file("train.csv"),
                                        "--out", d.file("m.json"), "--deterministic"};
  ASSERT_EQ(run_cli(fit), 0);
  EXPECT_TRUE(std::filesystem::exists(d.file("m.json.trace.csv")));
  const std::string first = io::read_text(d.file("m.json"));
  ASSERT_EQ(run_cli(fit), 0);
  EXPECT_EQ(io::read_text(d.file("m.json")), first);

  ASSERT_EQ(run_cli({"predict", "--model", d.file("m.json"), "--data", d.file("test.csv"), "--out", d.file("p.csv")}), 0);
  std::string out;
  ASSERT_EQ(run_cli({"score", "--pred", d.file("p.csv"), "--data", d.file("test.csv")}, &out), 0);
  EXPECT_NE(out.find("\"rmspe\""), std::string::npos);
  EXPECT_NE(out.find("\"crps\""), std::string::npos);
  ASSERT_EQ(run_cli({"summary", "--model", d.file("m.json"), "--data", d.file("test.csv"), "--out", d.file("s.csv")}), 0);
  EXPECT_EQ(io::read_csv(d.file("s.csv")).rows(), 20);
  EXPECT_EQ(io::read_csv(d.file("s.csv.sites.csv")).rows(), 20);

  // Configuration errors.
  EXPECT_EQ(run_cli({}), 2);
  EXPECT_EQ(run_cli({"frobnicate"}), 2);
  EXPECT_EQ(run_cli({"fit", "--data", d.file("train.csv")}), 2);
  write(d.file("bad.json"), R"({"model": "gp", "colour": "red"})");
  EXPECT_EQ(run_cli({"fit", "--config", d.file("bad.json"), "--data", d.file("train.csv"), "--out", d.file("x.json")}), 2);
  EXPECT_EQ(run_cli({"fit", "--config", d.file("nope.json"), "--data", d.file("train.csv"), "--out", d.file("x.json")}), 2);
  EXPECT_EQ(run_cli({"fit", "--data", d.file("train.csv"), "--out", d.file("x.json"), "--risk-quantile", "1.5"}), 2);
  EXPECT_EQ(run_cli({"fit", "--data", d.file("train.csv"), "--out", d.file("x.json"), "--threads", "0"}), 2);

  // Data errors.
  write(d.file("ragged.csv"), "x,y,z\n1,2\n");
  EXPECT_EQ(run_cli({"fit", "--data", d.file("ragged.csv"), "--out", d.file("x.json")}), 3);
  EXPECT_EQ(run_cli({"fit", "--data", d.file("missing.csv"), "--out", d.file("x.json")}), 3);
  write(d.file("noz.csv"), "x,y,w\n1,2,3\n2,3,4\n");
  EXPECT_EQ(run_cli({"fit", "--data", d.file("noz.csv"), "--out", d.file("x.json")}), 3);
  write(d.file("short.csv"), "x,y,z\n0,0,1\n");
  EXPECT_EQ(run_cli({"score", "--pred", d.file("p.csv"), "--data", d.file("short.csv")}), 3);

  // Extremes model given to predict: unsupported, reported as a configuration error.
  write(d.file("br.json"), R"({"simulate": {"type": "BR_approx", "n": 6, "n_fields": 20, "ds": 0.1}})");
  ASSERT_EQ(run_cli({"simulate", "--config", d.file("br.json"), "--out", d.file("br.csv")}), 0);
  write(d.file("ext.json"), R"({"model": "extremes", "method": "wls", "optimizer": {"nsteps": 2}, "reference_sites": [[0, 0]]})");
  ASSERT_EQ(run_cli({"fit", "--config", d.file("ext.json"), "--data", d.file("br.csv"), "--out", d.file("e.json")}), 0);
  std::string err;
  EXPECT_EQ(run_cli({"predict", "--model", d.file("e.json"), "--data", d.file("test.csv"), "--out", d.file("q.csv")},
                    nullptr, &err),
            2);
  EXPECT_NE(err.find("Gaussian"), std::string::npos);
  ASSERT_EQ(run_cli({"summary", "--model", d.file("e.json"), "--data", d.file("test.csv"), "--out", d.file("es.csv")}), 0);
  write(d.file("gsm.json"), R"({"model": "extremes", "method": "gsm"})");
  EXPECT_EQ(run_cli({"fit", "--config", d.file("gsm.json"), "--data", d.file("br.csv"), "--out", d.file("g.json")}), 2);

  // Numerical failure: a runaway step size collapses the covariance.
  write(d.file("wild.json"), R"({"optimizer": {"method": "gd", "nsteps": 20, "rates": {"cov": 1e12}}})");
  EXPECT_EQ(run_cli({"fit", "--config", d.file("wild.json"), "--data", d.file("train.csv"), "--out", d.file("w.json")}), 4);
  EXPECT_TRUE(std::filesystem::exists(d.file("w.json.trace.csv")));
  EXPECT_FALSE(std::filesystem::exists(d.file("w.json")));
}

TEST(Cli, HelpExitsCleanly) {
  std::string out;
  EXPECT_EQ(run_cli({"--help"}, &out), 0);
  EXPECT_NE(out.find("simulate"), std::string::npos);
}
