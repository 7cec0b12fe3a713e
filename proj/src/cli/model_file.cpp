#include "deepwarp/cli/pipeline.hpp"

#include "deepwarp/error.hpp"

#include <json.hpp>

namespace deepwarp::cli {

namespace {

using ojson = nlohmann::ordered_json;

constexpr const char* kFormat = "deepwarp-model";
constexpr int kVersion = 1;

// ---- writing ----

ojson vec(const Eigen::VectorXd& v) {
  ojson a = ojson::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

ojson mat(const Eigen::MatrixXd& m) {
  ojson a = ojson::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) a.push_back(vec(m.row(i).transpose()));
  return a;
}

ojson rescaler(const warp::Rescaler& r) {
  if (r.lo.size() == 0) return nullptr;
  return {{"lo", vec(r.lo)}, {"hi", vec(r.hi)}};
}

ojson calibration(const warp::Calibration& c) {
  ojson a = ojson::array();
  for (const auto& unit : c.units) {
    ojson u = ojson::array();
    for (const auto& r : unit) u.push_back({r.lo, r.hi});
    a.push_back(u);
  }
  return a;
}

ojson params_json(const engine::ParamVector& params) {
  ojson a = ojson::array();
  for (const auto& g : params.groups()) {
    ojson p;
    p["name"] = g.name;
    p["role"] = g.role == engine::GroupRole::warp ? "warp" : "dependence";
    p["transform"] = g.transform.name();
    p["bound"] = g.transform.bound;
    p["rate"] = g.learning_rate;
    p["raw"] = vec(g.raw);
    ojson nat = ojson::array();
    for (Eigen::Index i = 0; i < g.raw.size(); ++i) nat.push_back(g.transform.to_natural(g.raw(i)));
    p["natural"] = nat;
    a.push_back(p);
  }
  return a;
}

ojson folds_json(const std::vector<FoldSummary>& folds) {
  ojson a = ojson::array();
  for (const auto& f : folds) {
    a.push_back({{"stack", f.stack},
                 {"ok", f.report.ok},
                 {"positive", f.report.positive},
                 {"negative", f.report.negative},
                 {"degenerate", f.report.degenerate}});
  }
  return a;
}

ojson trace_json(const TraceDigest& t) {
  return {{"steps", t.steps},         {"failures", t.failures},   {"converged", t.converged},
          {"first_loss", t.first_loss}, {"last_loss", t.last_loss}, {"digest", t.digest}};
}

ojson header(const RunConfig& config, const char* model) {
  ojson j;
  j["format"] = kFormat;
  j["version"] = kVersion;
  j["model"] = model;
  j["config_hash"] = config_hash(config);
  j["seed"] = config.seed.value_or(1);
  j["config"] = ojson::parse(config_json(config));
  return j;
}

std::string gauss_json(const GaussRun& run) {
  ojson j = header(run.config, "gp");
  j["rescale"] = {{"space", rescaler(run.space)}, {"time", rescaler(run.time)}};
  j["params"] = params_json(run.params);
  const gauss::GaussFit& f = run.fit;
  j["calibration"] = {{"spatial", calibration(f.record.spatial)},
                      {"temporal", calibration(f.record.temporal)},
                      {"spatial2", calibration(f.record.spatial2)}};
  j["gls"] = {{"beta", vec(f.record.gls.beta)}, {"beta_cov", mat(f.record.gls.beta_cov)}};
  ojson nb = ojson::array();
  for (const auto& n : f.structures.nngp.neighbors) nb.push_back(n);
  j["structures"] = {{"nngp", {{"order", f.structures.nngp.order}, {"neighbors", nb}}},
                     {"frk_side", f.structures.frk_side},
                     {"frk", {{"side", f.record.frk.side}, {"aperture", f.record.frk.aperture}, {"centers", mat(f.record.frk.centers)}}}};
  j["fold_check"] = folds_json(run.folds);
  j["trace"] = trace_json(run.trace);
  const gauss::GaussData& d = run.train;
  ojson proc = ojson::array();
  for (Eigen::Index i = 0; i < d.process.size(); ++i) proc.push_back(d.process(i));
  j["train"] = {{"coords", mat(d.coords)}, {"times", vec(d.times)}, {"process", proc}, {"x", mat(d.x)}, {"z", vec(d.z)}};
  return j.dump(1) + "\n";
}

std::string extremes_json(const ExtremesRun& run) {
  ojson j = header(run.config, "extremes");
  j["rescale"] = {{"space", rescaler(run.space)}};
  j["params"] = params_json(run.params);
  j["calibration"] = {{"spatial", calibration(run.fit.calibration)}};
  j["structures"] = {{"threshold", run.threshold},
                     {"pairs", run.pairs},
                     {"terms", run.terms},
                     {"events", run.events},
                     {"excluded_pairs", run.excluded_pairs}};
  j["fold_check"] = folds_json(run.folds);
  j["trace"] = trace_json(run.trace);
  return j.dump(1) + "\n";
}

// ---- reading ----

struct Reader {
  std::string source;

  [[noreturn]] void fail(const std::string& what) const { throw DataError(source + ": " + what); }

  const ojson& at(const ojson& j, const char* key) const {
    if (!j.is_object() || !j.contains(key)) fail(std::string("missing field '") + key + "'");
    return j.at(key);
  }
  double num(const ojson& j) const {
    if (!j.is_number()) fail("expected a number");
    return j.get<double>();
  }
  long long integer(const ojson& j) const {
    if (!j.is_number_integer()) fail("expected an integer");
    return j.get<long long>();
  }
  Eigen::VectorXd vector(const ojson& j) const {
    if (!j.is_array()) fail("expected an array");
    Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = num(j[i]);
    return v;
  }
  Eigen::MatrixXd matrix(const ojson& j) const {
    if (!j.is_array()) fail("expected an array of rows");
    if (j.empty()) return {};
    const std::size_t cols = j[0].size();
    Eigen::MatrixXd m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
    for (std::size_t i = 0; i < j.size(); ++i) {
      if (!j[i].is_array() || j[i].size() != cols) fail("ragged matrix");
      m.row(static_cast<Eigen::Index>(i)) = vector(j[i]).transpose();
    }
    return m;
  }
  std::vector<Eigen::Index> indices(const ojson& j) const {
    if (!j.is_array()) fail("expected an index array");
    std::vector<Eigen::Index> out;
    for (const auto& v : j) out.push_back(static_cast<Eigen::Index>(integer(v)));
    return out;
  }
  warp::Rescaler rescaler(const ojson& j) const {
    warp::Rescaler r;
    if (j.is_null()) return r;
    r.lo = vector(at(j, "lo"));
    r.hi = vector(at(j, "hi"));
    if (r.lo.size() != r.hi.size()) fail("rescaling bounds differ in length");
    return r;
  }
  warp::Calibration calibration(const ojson& j) const {
    warp::Calibration c;
    if (!j.is_array()) fail("expected calibration ranges");
    for (const auto& unit : j) {
      std::vector<warp::AxisRange> ranges;
      for (const auto& r : unit) {
        if (!r.is_array() || r.size() != 2) fail("calibration range must be [lo, hi]");
        ranges.push_back({num(r[0]), num(r[1])});
      }
      c.units.push_back(std::move(ranges));
    }
    return c;
  }
  engine::ParamVector params(const ojson& j) const {
    engine::ParamVector p;
    if (!j.is_array()) fail("expected a parameter list");
    for (const auto& g : j) {
      const auto& role = at(g, "role");
      if (!role.is_string() || (role != "warp" && role != "dependence")) fail("bad parameter role");
      const auto& tname = at(g, "transform");
      if (!tname.is_string()) fail("bad transform name");
      engine::Transform t;
      try {
        t = engine::Transform::from_name(tname.get<std::string>(), num(at(g, "bound")));
      } catch (const std::exception& e) {
        fail(e.what());
      }
      const Eigen::VectorXd raw = vector(at(g, "raw"));
      Eigen::VectorXd natural(raw.size());
      for (Eigen::Index i = 0; i < raw.size(); ++i) natural(i) = t.to_natural(raw(i));
      const auto& name = at(g, "name");
      if (!name.is_string()) fail("bad parameter name");
      p.add(name.get<std::string>(), role == "warp" ? engine::GroupRole::warp : engine::GroupRole::dependence, t,
            natural, num(at(g, "rate")));
      p.group(p.size() - 1).raw = raw;
    }
    return p;
  }
  std::vector<FoldSummary> folds(const ojson& j) const {
    std::vector<FoldSummary> out;
    for (const auto& f : j) {
      FoldSummary s;
      s.stack = at(f, "stack").get<std::string>();
      s.report.ok = at(f, "ok").get<bool>();
      s.report.positive = static_cast<int>(integer(at(f, "positive")));
      s.report.negative = static_cast<int>(integer(at(f, "negative")));
      s.report.degenerate = static_cast<int>(integer(at(f, "degenerate")));
      out.push_back(s);
    }
    return out;
  }
  TraceDigest trace(const ojson& j) const {
    TraceDigest t;
    t.steps = static_cast<int>(integer(at(j, "steps")));
    t.failures = static_cast<int>(integer(at(j, "failures")));
    t.converged = at(j, "converged").get<bool>();
    t.first_loss = num(at(j, "first_loss"));
    t.last_loss = num(at(j, "last_loss"));
    t.digest = at(j, "digest").get<std::string>();
    return t;
  }
};

GaussRun read_gauss(const ojson& j, const Reader& r, RunConfig config) {
  GaussRun run;
  run.config = std::move(config);
  const ojson& rs = r.at(j, "rescale");
  run.space = r.rescaler(r.at(rs, "space"));
  run.time = r.rescaler(r.at(rs, "time"));
  run.params = r.params(r.at(j, "params"));

  const ojson& tr = r.at(j, "train");
  gauss::GaussData& d = run.train;
  d.coords = r.matrix(r.at(tr, "coords"));
  d.times = r.vector(r.at(tr, "times"));
  const auto proc = r.indices(r.at(tr, "process"));
  d.process.resize(static_cast<Eigen::Index>(proc.size()));
  for (std::size_t i = 0; i < proc.size(); ++i) d.process(static_cast<Eigen::Index>(i)) = static_cast<int>(proc[i]);
  d.x = r.matrix(r.at(tr, "x"));
  d.z = r.vector(r.at(tr, "z"));

  gauss::GaussFit& f = run.fit;
  f.spec = gauss_spec(run.config);
  const engine::ParamVector& p = run.params;
  try {
    if (!f.spec.spatial.empty()) f.w_spatial = warp::weights_from(p, f.spec.spatial, "warp");
    if (!f.spec.temporal.empty()) f.w_temporal = warp::weights_from(p, f.spec.temporal, "twarp");
    if (!f.spec.spatial2.empty()) f.w_spatial2 = warp::weights_from(p, f.spec.spatial2, "warp2");
    f.variance = p.natural_scalar("cov.variance");
    f.lengthscale = p.natural_scalar("cov.lengthscale");
    f.noise = p.natural_scalar("noise.variance");
    if (p.contains("cov.t_lengthscale")) f.t_lengthscale = p.natural_scalar("cov.t_lengthscale");
    if (p.contains("cov.variance2")) {
      f.variance2 = p.natural_scalar("cov.variance2");
      f.noise2 = p.natural_scalar("noise.variance2");
      f.rho = p.natural_scalar("cov.rho");
    }
  } catch (const DataError&) {
    throw;
  } catch (const std::exception& e) {
    r.fail(std::string("parameters do not match the configured model: ") + e.what());
  }

  const ojson& cal = r.at(j, "calibration");
  f.record.spatial = r.calibration(r.at(cal, "spatial"));
  f.record.temporal = r.calibration(r.at(cal, "temporal"));
  f.record.spatial2 = r.calibration(r.at(cal, "spatial2"));
  const ojson& gls = r.at(j, "gls");
  f.record.gls.beta = r.vector(r.at(gls, "beta"));
  f.record.gls.beta_cov = r.matrix(r.at(gls, "beta_cov"));
  const ojson& st = r.at(j, "structures");
  const ojson& nngp = r.at(st, "nngp");
  f.structures.nngp.order = r.indices(r.at(nngp, "order"));
  for (const auto& nb : r.at(nngp, "neighbors")) f.structures.nngp.neighbors.push_back(r.indices(nb));
  f.structures.frk_side = static_cast<int>(r.integer(r.at(st, "frk_side")));
  const ojson& frk = r.at(st, "frk");
  f.record.frk.side = static_cast<int>(r.integer(r.at(frk, "side")));
  f.record.frk.aperture = r.num(r.at(frk, "aperture"));
  f.record.frk.centers = r.matrix(r.at(frk, "centers"));
  run.folds = r.folds(r.at(j, "fold_check"));
  run.trace = r.trace(r.at(j, "trace"));
  return run;
}

ExtremesRun read_extremes(const ojson& j, const Reader& r, RunConfig config) {
  ExtremesRun run;
  run.config = std::move(config);
  run.space = r.rescaler(r.at(r.at(j, "rescale"), "space"));
  run.params = r.params(r.at(j, "params"));
  extremes::ExtremesFit& f = run.fit;
  f.spec = extremes_spec(run.config);
  try {
    if (!f.spec.stack.empty()) f.weights = warp::weights_from(run.params, f.spec.stack, "warp");
    f.vario.range = run.params.natural_scalar("vario.range");
    f.vario.smoothness = run.params.natural_scalar("vario.smoothness");
  } catch (const std::exception& e) {
    r.fail(std::string("parameters do not match the configured model: ") + e.what());
  }
  f.calibration = r.calibration(r.at(r.at(j, "calibration"), "spatial"));
  const ojson& st = r.at(j, "structures");
  run.threshold = r.num(r.at(st, "threshold"));
  run.pairs = static_cast<int>(r.integer(r.at(st, "pairs")));
  run.terms = static_cast<int>(r.integer(r.at(st, "terms")));
  run.events = static_cast<int>(r.integer(r.at(st, "events")));
  run.excluded_pairs = static_cast<int>(r.integer(r.at(st, "excluded_pairs")));
  run.folds = r.folds(r.at(j, "fold_check"));
  run.trace = r.trace(r.at(j, "trace"));
  return run;
}

}  // namespace

std::string model_json(const ModelRun& run) {
  if (const auto* g = std::get_if<GaussRun>(&run)) return gauss_json(*g);
  return extremes_json(std::get<ExtremesRun>(run));
}

ModelRun parse_model(const std::string& text, const std::string& source) {
  const Reader r{source};
  ojson j;
  try {
    j = ojson::parse(text);
  } catch (const ojson::parse_error& e) {
    r.fail(std::string("invalid JSON: ") + e.what());
  }
  const ojson& format = r.at(j, "format");
  if (!format.is_string() || format != kFormat) r.fail("not a deepwarp model file");
  if (r.integer(r.at(j, "version")) != kVersion) r.fail("unsupported model file version");
  RunConfig config = parse_config(r.at(j, "config").dump(), source + " (config)");
  const ojson& hash = r.at(j, "config_hash");
  if (!hash.is_string() || hash != config_hash(config)) r.fail("config echo does not match its hash");
  const ojson& model = r.at(j, "model");
  if (model != config.model) r.fail("model type disagrees with the config echo");
  try {
    if (config.model == "gp") return read_gauss(j, r, std::move(config));
    return read_extremes(j, r, std::move(config));
  } catch (const nlohmann::json::exception& e) {
    r.fail(e.what());
  }
}

}  // namespace deepwarp::cli
