#include "deepwarp/cli/config.hpp"

#include "deepwarp/error.hpp"
#include "deepwarp/io/csv.hpp"

#include <json.hpp>

#include <cstdio>
#include <set>

namespace deepwarp::cli {

namespace {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

void allow_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [k, v] : obj.items()) {
    if (!allowed.count(k)) throw ConfigError(where + ": unknown key '" + k + "'");
  }
}

template <class T>
void read(const json& obj, const char* key, T& out, const std::string& where) {
  if (!obj.contains(key)) return;
  const json& v = obj.at(key);
  const std::string at = where + "." + key;
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) throw ConfigError(at + ": expected true or false");
    out = v.get<bool>();
  } else if constexpr (std::is_same_v<T, int>) {
    if (!v.is_number_integer()) throw ConfigError(at + ": expected an integer");
    const auto x = v.get<long long>();
    if (x < -(1LL << 31) || x >= (1LL << 31)) throw ConfigError(at + ": integer out of range");
    out = static_cast<int>(x);
  } else if constexpr (std::is_same_v<T, double>) {
    if (!v.is_number()) throw ConfigError(at + ": expected a number");
    out = v.get<double>();
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!v.is_string()) throw ConfigError(at + ": expected a string");
    out = v.get<std::string>();
  } else {
    static_assert(sizeof(T) == 0, "unsupported config type");
  }
}

void check_choice(const std::string& value, const std::set<std::string>& choices, const std::string& at) {
  if (!choices.count(value)) {
    std::string list;
    for (const auto& c : choices) list += (list.empty() ? "" : ", ") + c;
    throw ConfigError(at + ": '" + value + "' is not one of {" + list + "}");
  }
}

std::vector<LayerSpec> read_layers(const json& obj, const char* key, const std::string& where) {
  std::vector<LayerSpec> out;
  if (!obj.contains(key)) return out;
  const json& arr = obj.at(key);
  const std::string at = where + "." + key;
  if (!arr.is_array()) throw ConfigError(at + ": expected an array of layer objects");
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const std::string li = at + "[" + std::to_string(i) + "]";
    const json& l = arr[i];
    allow_keys(l, {"type", "dim", "r", "steepness", "lims", "res"}, li);
    LayerSpec s;
    if (!l.contains("type")) throw ConfigError(li + ": missing 'type'");
    read(l, "type", s.type, li);
    check_choice(s.type, {"AWU", "RBF", "LFT"}, li + ".type");
    read(l, "dim", s.dim, li);
    read(l, "r", s.r, li);
    read(l, "steepness", s.steepness, li);
    read(l, "res", s.res, li);
    if (l.contains("lims")) {
      const json& lims = l.at("lims");
      if (!lims.is_array() || lims.size() != 2 || !lims[0].is_number() || !lims[1].is_number()) {
        throw ConfigError(li + ".lims: expected [lo, hi]");
      }
      s.lims = {lims[0].get<double>(), lims[1].get<double>()};
    }
    out.push_back(s);
  }
  return out;
}

ojson layers_json(const std::vector<LayerSpec>& layers) {
  ojson arr = ojson::array();
  for (const auto& l : layers) {
    ojson o;
    o["type"] = l.type;
    if (l.type == "AWU") {
      o["dim"] = l.dim;
      o["r"] = l.r;
      o["steepness"] = l.steepness;
      o["lims"] = {l.lims.lo, l.lims.hi};
    } else if (l.type == "RBF") {
      o["res"] = l.res;
    }
    arr.push_back(o);
  }
  return arr;
}

}  // namespace

RunConfig parse_config(const std::string& json_text, const std::string& source) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(source + ": invalid JSON: " + e.what());
  }
  const std::string w = source;
  allow_keys(j, {"model", "kind", "backend", "family", "neighbors", "predict_neighbors", "basis", "covariates",
                 "response", "latent", "layers", "temporal_layers", "layers2", "renormalize", "method", "data_type",
                 "standardize", "risk", "risk_site", "risk_quantile", "pcl_b", "rpl_b", "reference_sites",
                 "curve_points", "optimizer", "seed", "trace", "simulate"},
             w);
  RunConfig c;
  read(j, "model", c.model, w);
  check_choice(c.model, {"gp", "extremes"}, w + ".model");
  read(j, "kind", c.kind, w);
  check_choice(c.kind, {"spatial", "spatio_temporal", "bivariate"}, w + ".kind");
  read(j, "backend", c.backend, w);
  check_choice(c.backend, {"exact", "nngp", "frk"}, w + ".backend");
  read(j, "family", c.family, w);
  check_choice(c.family, {"exponential", "matern32"}, w + ".family");
  read(j, "neighbors", c.neighbors, w);
  read(j, "predict_neighbors", c.predict_neighbors, w);
  read(j, "basis", c.basis, w);
  if (c.neighbors < 1 || c.predict_neighbors < 1) throw ConfigError(w + ": neighbor counts must be >= 1");
  if (j.contains("covariates")) {
    const json& cv = j.at("covariates");
    if (!cv.is_array()) throw ConfigError(w + ".covariates: expected an array of column names");
    for (const auto& name : cv) {
      if (!name.is_string()) throw ConfigError(w + ".covariates: expected column names");
      c.covariates.push_back(name.get<std::string>());
    }
  }
  read(j, "response", c.response, w);
  read(j, "latent", c.latent, w);
  c.layers = read_layers(j, "layers", w);
  c.temporal_layers = read_layers(j, "temporal_layers", w);
  c.layers2 = read_layers(j, "layers2", w);
  read(j, "renormalize", c.renormalize, w);

  read(j, "method", c.method, w);
  check_choice(c.method, {"wls", "pcl", "rpl", "gsm"}, w + ".method");
  read(j, "data_type", c.data_type, w);
  check_choice(c.data_type, {"maxima", "pareto"}, w + ".data_type");
  read(j, "standardize", c.standardize, w);
  read(j, "risk", c.risk, w);
  check_choice(c.risk, {"max", "sum", "site"}, w + ".risk");
  read(j, "risk_site", c.risk_site, w);
  if (j.contains("risk_quantile")) {
    double q = 0.0;
    read(j, "risk_quantile", q, w);
    c.risk_quantile = q;
  }
  read(j, "pcl_b", c.pcl_b, w);
  read(j, "rpl_b", c.rpl_b, w);

  if (j.contains("reference_sites")) {
    const json& rs = j.at("reference_sites");
    if (!rs.is_array()) throw ConfigError(w + ".reference_sites: expected an array of [x, y]");
    for (const auto& s : rs) {
      if (!s.is_array() || s.size() != 2 || !s[0].is_number() || !s[1].is_number()) {
        throw ConfigError(w + ".reference_sites: expected [x, y] pairs");
      }
      c.reference_sites.push_back({s[0].get<double>(), s[1].get<double>()});
    }
  }
  read(j, "curve_points", c.curve_points, w);
  if (c.curve_points < 2) throw ConfigError(w + ".curve_points must be >= 2");

  if (j.contains("optimizer")) {
    const json& o = j.at("optimizer");
    const std::string ow = w + ".optimizer";
    allow_keys(o, {"method", "nsteps", "nsteps_pre", "tolerance", "log_every", "rates"}, ow);
    std::string m = engine::optimizer_name(c.optimizer.method);
    read(o, "method", m, ow);
    check_choice(m, {"adam", "gd"}, ow + ".method");
    c.optimizer.method = engine::parse_optimizer(m);
    read(o, "nsteps", c.optimizer.nsteps, ow);
    read(o, "nsteps_pre", c.optimizer.nsteps_pre, ow);
    read(o, "tolerance", c.optimizer.tolerance, ow);
    read(o, "log_every", c.optimizer.log_every, ow);
    if (c.optimizer.nsteps < 0 || c.optimizer.nsteps_pre < 0) throw ConfigError(ow + ": step counts must be >= 0");
    if (o.contains("rates")) {
      const json& r = o.at("rates");
      allow_keys(r, {"warp", "mobius", "cov", "vario"}, ow + ".rates");
      read(r, "warp", c.optimizer.rate_warp, ow + ".rates");
      read(r, "mobius", c.optimizer.rate_mobius, ow + ".rates");
      read(r, "cov", c.optimizer.rate_cov, ow + ".rates");
      read(r, "vario", c.optimizer.rate_vario, ow + ".rates");
    }
  }
  if (j.contains("seed")) {
    const json& s = j.at("seed");
    if (!s.is_number_unsigned() && !(s.is_number_integer() && s.get<long long>() >= 0)) {
      throw ConfigError(w + ".seed: expected a nonnegative integer");
    }
    c.seed = s.get<std::uint64_t>();
  }
  read(j, "trace", c.trace, w);

  if (j.contains("simulate")) {
    const json& s = j.at("simulate");
    const std::string sw = w + ".simulate";
    allow_keys(s, {"type", "n", "ds", "sigma2y", "family", "variance", "lengthscale", "n_fields", "n_spectral",
                   "range", "smoothness", "pareto"},
               sw);
    SimulateSpec& m = c.simulate;
    read(s, "type", m.type, sw);
    check_choice(m.type, {"AWU_RBF_2D", "stationary_GP", "BR_approx"}, sw + ".type");
    read(s, "n", m.n, sw);
    read(s, "ds", m.ds, sw);
    read(s, "sigma2y", m.sigma2y, sw);
    read(s, "family", m.family, sw);
    check_choice(m.family, {"exponential", "matern32"}, sw + ".family");
    read(s, "variance", m.variance, sw);
    read(s, "lengthscale", m.lengthscale, sw);
    read(s, "n_fields", m.n_fields, sw);
    read(s, "n_spectral", m.n_spectral, sw);
    read(s, "range", m.range, sw);
    read(s, "smoothness", m.smoothness, sw);
    read(s, "pareto", m.pareto, sw);
    if (m.n < 1 || m.n_fields < 1 || m.n_spectral < 1) throw ConfigError(sw + ": counts must be >= 1");
    if (!(m.ds > 0.0) || m.ds > 1.0) throw ConfigError(sw + ".ds must lie in (0, 1]");
    if (!(m.sigma2y >= 0.0)) throw ConfigError(sw + ".sigma2y must be >= 0");
    if (!(m.variance > 0.0) || !(m.lengthscale > 0.0) || !(m.range > 0.0)) {
      throw ConfigError(sw + ": variance, lengthscale and range must be > 0");
    }
    if (!(m.smoothness > 0.0) || m.smoothness > 2.0) throw ConfigError(sw + ".smoothness must lie in (0, 2]");
  }
  return c;
}

RunConfig load_config(const std::string& path) {
  std::string text;
  try {
    text = io::read_text(path);
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  return parse_config(text, path);
}

std::string config_json(const RunConfig& c) {
  ojson j;
  j["model"] = c.model;
  j["kind"] = c.kind;
  j["backend"] = c.backend;
  j["family"] = c.family;
  j["neighbors"] = c.neighbors;
  j["predict_neighbors"] = c.predict_neighbors;
  j["basis"] = c.basis;
  j["covariates"] = c.covariates;
  j["response"] = c.response;
  j["latent"] = c.latent;
  j["layers"] = layers_json(c.layers);
  j["temporal_layers"] = layers_json(c.temporal_layers);
  j["layers2"] = layers_json(c.layers2);
  j["renormalize"] = c.renormalize;
  j["method"] = c.method;
  j["data_type"] = c.data_type;
  j["standardize"] = c.standardize;
  j["risk"] = c.risk;
  j["risk_site"] = c.risk_site;
  j["risk_quantile"] = c.risk_quantile ? ojson(*c.risk_quantile) : ojson(nullptr);
  j["pcl_b"] = c.pcl_b;
  j["rpl_b"] = c.rpl_b;
  j["reference_sites"] = c.reference_sites;
  j["curve_points"] = c.curve_points;
  const OptimizerSpec& o = c.optimizer;
  j["optimizer"] = {{"method", engine::optimizer_name(o.method)},
                    {"nsteps", o.nsteps},
                    {"nsteps_pre", o.nsteps_pre},
                    {"tolerance", o.tolerance},
                    {"log_every", o.log_every},
                    {"rates", {{"warp", o.rate_warp}, {"mobius", o.rate_mobius}, {"cov", o.rate_cov}, {"vario", o.rate_vario}}}};
  j["seed"] = c.seed ? ojson(*c.seed) : ojson(nullptr);
  j["trace"] = c.trace;
  const SimulateSpec& s = c.simulate;
  j["simulate"] = {{"type", s.type},         {"n", s.n},
                   {"ds", s.ds},             {"sigma2y", s.sigma2y},
                   {"family", s.family},     {"variance", s.variance},
                   {"lengthscale", s.lengthscale}, {"n_fields", s.n_fields},
                   {"n_spectral", s.n_spectral},   {"range", s.range},
                   {"smoothness", s.smoothness},   {"pareto", s.pareto}};
  return j.dump();
}

std::string config_hash(const RunConfig& config) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char ch : config_json(config)) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

warp::WarpStack build_stack(const std::vector<LayerSpec>& layers, int input_dim, bool renormalize) {
  if (layers.empty()) return {};
  std::vector<warp::WarpUnit> units;
  for (const auto& l : layers) {
    if (l.type == "AWU") {
      if (l.dim > input_dim) throw ConfigError("AWU dim " + std::to_string(l.dim) + " exceeds input dimension");
      units.emplace_back(warp::AxialWarpUnit(l.dim, l.r, l.steepness, l.lims));
    } else if (l.type == "RBF") {
      if (input_dim != 2) throw ConfigError("RBF layers need two-dimensional input");
      units.emplace_back(warp::RbfBlockUnit(l.res));
    } else {
      if (input_dim != 2) throw ConfigError("LFT layers need two-dimensional input");
      units.emplace_back(warp::MobiusUnit{});
    }
  }
  return warp::WarpStack(input_dim, std::move(units), renormalize);
}

}  // namespace deepwarp::cli
