#include "advcast/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "advcast/errors.hpp"
#include "advcast/util.hpp"

namespace advcast {

using nlohmann::json;

std::string to_string(Experiment e) { return e == Experiment::arima ? "arima" : "lane_change"; }

namespace {

[[noreturn]] void invalid(const std::string& path, const std::string& what) {
  throw Error(ErrorCode::ConfigInvalid, path + ": " + what);
}

// Walks one JSON object, unwrapping {value, source} leaves and remembering
// which keys were consumed so leftovers can be reported.
class Reader {
 public:
  Reader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) invalid(path_, "expected an object");
  }

  bool has(const std::string& key) const { return obj_.contains(key); }

  const json* leaf(const std::string& key) {
    if (!obj_.contains(key)) return nullptr;
    seen_.insert(key);
    const json& v = obj_.at(key);
    if (v.is_object() && v.contains("value")) {
      for (const auto& [k, _] : v.items()) {
        if (k != "value" && k != "source") invalid(at(key), "unknown key '" + k + "' in annotated value");
      }
      if (v.contains("source")) {
        const json& s = v.at("source");
        if (!s.is_string() || (s != "paper" && s != "default")) invalid(at(key) + ".source", "must be \"paper\" or \"default\"");
      }
      return &v.at("value");
    }
    return &v;
  }

  void number(const std::string& key, double& out) {
    if (const json* v = leaf(key)) {
      if (!v->is_number()) invalid(at(key), "expected a number");
      out = v->get<double>();
    }
  }

  template <typename Int>
  void integer(const std::string& key, Int& out) {
    if (const json* v = leaf(key)) {
      if (!v->is_number_integer()) invalid(at(key), "expected an integer");
      const long long x = v->get<long long>();
      if (x < 0) invalid(at(key), "must be >= 0");
      out = static_cast<Int>(x);
    }
  }

  void flag(const std::string& key, bool& out) {
    if (const json* v = leaf(key)) {
      if (!v->is_boolean()) invalid(at(key), "expected true or false");
      out = v->get<bool>();
    }
  }

  void text(const std::string& key, std::optional<std::string>& out) {
    if (const json* v = leaf(key)) {
      if (!v->is_string()) invalid(at(key), "expected a string");
      out = v->get<std::string>();
    }
  }

  void range(const std::string& key, std::pair<double, double>& out) {
    if (const json* v = leaf(key)) {
      if (!v->is_array() || v->size() != 2 || !(*v)[0].is_number() || !(*v)[1].is_number()) {
        invalid(at(key), "expected [low, high]");
      }
      out = {(*v)[0].get<double>(), (*v)[1].get<double>()};
      if (!(out.first <= out.second)) invalid(at(key), "low must not exceed high");
    }
  }

  std::optional<Reader> child(const std::string& key) {
    if (!obj_.contains(key)) return std::nullopt;
    seen_.insert(key);
    return Reader(obj_.at(key), at(key));
  }

  std::vector<std::string> strings(const std::string& key) {
    const json* v = leaf(key);
    if (v == nullptr) return {};
    if (!v->is_array()) invalid(at(key), "expected an array of strings");
    std::vector<std::string> out;
    for (const json& e : *v) {
      if (!e.is_string()) invalid(at(key), "expected an array of strings");
      out.push_back(e.get<std::string>());
    }
    return out;
  }

  void finish() const {
    for (const auto& [k, _] : obj_.items()) {
      if (!seen_.count(k)) invalid(at(k), "unknown key");
    }
  }

  std::string at(const std::string& key) const { return path_ + "." + key; }

 private:
  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

void require(bool ok, const std::string& path, const std::string& what) {
  if (!ok) invalid(path, what);
}

void validate(const ExperimentConfig& c) {
  require(c.n_train >= 2, "config.data.n_train", "must be >= 2");
  require(c.n_test >= 2, "config.data.n_test", "must be >= 2");
  require(c.lambda_f >= 0.0, "config.game.lambda_f", "must be >= 0");
  require(c.lambda_a >= 0.0, "config.game.lambda_a", "must be >= 0");
  require(c.forecaster_hidden >= 1, "config.network.forecaster_hidden", "must be >= 1");
  require(c.adversary_hidden >= 1, "config.network.adversary_hidden", "must be >= 1");
  require(c.pretrain_lr > 0.0, "config.pretrain.lr", "must be > 0");
  require(c.game_lr_f > 0.0, "config.game.lr_f", "must be > 0");
  require(c.game_lr_a > 0.0, "config.game.lr_a", "must be > 0");
  require(c.game_lr_final_scale > 0.0 && c.game_lr_final_scale <= 1.0, "config.game.lr_final_scale", "must be in (0, 1]");
  require(c.rel_change_tol > 0.0, "config.game.rel_change_tol", "must be > 0");
  require(c.mpc.u_bound > 0.0, "config.mpc.u_bound", "must be > 0");
  require(c.mpc.x_bound > 0.0, "config.mpc.x_bound", "must be > 0");
  require(c.mpc.q_weight > 0.0, "config.mpc.q_weight", "must be > 0");
  require(c.mpc.r_weight > 0.0, "config.mpc.r_weight", "must be > 0");
  require(c.lne_fd_step > 0.0, "config.lne.fd_step", "must be > 0");
  require(c.workers >= 1, "config.workers", "must be >= 1");
  require(!c.schemes.empty(), "config.schemes", "must not be empty");
  require(!c.conditions.empty(), "config.conditions", "must not be empty");
  for (Kind k : c.conditions) {
    require(k == Kind::orig || k == Kind::adv || k == Kind::ood, "config.conditions", "allowed: orig, adv, ood");
  }
  const bool robust = std::find(c.schemes.begin(), c.schemes.end(), Scheme::robust) != c.schemes.end();
  const bool adv = std::find(c.conditions.begin(), c.conditions.end(), Kind::adv) != c.conditions.end();
  require(!adv || robust, "config.conditions", "the adv condition needs the robust scheme");
  if (c.experiment == Experiment::arima) {
    const ArimaParams& a = c.arima;
    require(a.H >= 1 && a.F >= 1, "config.data.arima", "H and F must be >= 1");
    require(a.T == a.H + a.F, "config.data.arima.T", "must equal H + F");
    require(a.sigma >= 0.0, "config.data.arima.sigma", "must be >= 0");
    require(c.sigma_ood >= 0.0, "config.data.arima.sigma_ood", "must be >= 0");
  } else {
    const LaneChangeParams& l = c.lane;
    require(l.H >= 1 && l.F >= 1, "config.data.lane_change", "H and F must be >= 1");
    require(l.dt > 0.0, "config.data.lane_change.dt", "must be > 0");
    require(l.road_length > 0.0, "config.data.lane_change.road_length", "must be > 0");
    require(l.speed_range_train.first > 0.0, "config.data.lane_change.speed_range_train", "speeds must be > 0");
    require(l.speed_range_train.second <= c.speed_threshold, "config.data.lane_change.speed_range_train",
            "must not exceed speed_threshold");
    require(l.speed_range_ood.first >= c.speed_threshold, "config.data.lane_change.speed_range_ood",
            "must start at or above speed_threshold");
  }
}

json range_json(const std::pair<double, double>& r) { return json::array({r.first, r.second}); }

}  // namespace

ExperimentConfig config_from_json(const json& doc) {
  Reader root(doc, "config");
  ExperimentConfig c;

  const json* version = root.leaf("schema_version");
  if (version == nullptr) invalid("config.schema_version", "missing");
  if (!version->is_number_integer() || version->get<int>() != kConfigSchemaVersion) {
    invalid("config.schema_version", "expected " + std::to_string(kConfigSchemaVersion));
  }
  const json* exp = root.leaf("experiment");
  if (exp == nullptr || !exp->is_string()) invalid("config.experiment", "missing or not a string");
  if (*exp == "arima") {
    c.experiment = Experiment::arima;
  } else if (*exp == "lane_change") {
    c.experiment = Experiment::lane_change;
    c.n_train = 500;
    c.n_test = 100;
    c.lambda_f = c.lambda_a = 10.0;
    c.forecaster_hidden = c.adversary_hidden = 128;
    c.mpc.u_bound = 10.0;
  } else {
    invalid("config.experiment", "must be \"arima\" or \"lane_change\"");
  }

  root.integer("seed", c.seed);
  root.integer("workers", c.workers);

  if (auto data = root.child("data")) {
    data->integer("n_train", c.n_train);
    data->integer("n_test", c.n_test);
    data->text("train_path", c.train_path);
    data->text("test_path", c.test_path);
    data->text("ood_path", c.ood_path);
    if (auto a = data->child("arima")) {
      a->integer("T", c.arima.T);
      a->integer("H", c.arima.H);
      a->integer("F", c.arima.F);
      a->number("sigma", c.arima.sigma);
      a->number("sigma_ood", c.sigma_ood);
      if (const json* v = a->leaf("coefficients")) {
        if (*v == "per_series") {
          c.arima_per_series = true;
        } else if (*v == "per_dataset") {
          c.arima_per_series = false;
        } else {
          invalid("config.data.arima.coefficients", "must be \"per_series\" or \"per_dataset\"");
        }
      }
      a->number("s0", c.arima.s0);
      a->number("x0", c.arima.x0);
      a->range("mu_range", c.arima_prior.mu);
      a->range("alpha_range", c.arima_prior.alpha);
      a->range("beta_range", c.arima_prior.beta);
      a->finish();
    }
    if (auto l = data->child("lane_change")) {
      l->number("road_length", c.lane.road_length);
      l->number("dt", c.lane.dt);
      l->integer("H", c.lane.H);
      l->integer("F", c.lane.F);
      l->range("speed_range_train", c.lane.speed_range_train);
      l->range("speed_range_ood", c.lane.speed_range_ood);
      l->number("accel_std", c.lane.accel_std);
      l->number("lane_offset", c.lane.lane_offset);
      l->number("max_gap", c.lane.max_gap);
      l->number("yield_decel", c.lane.yield_decel);
      l->range("first_start_time", c.lane.first_start_time);
      l->number("speed_threshold", c.speed_threshold);
      l->finish();
    }
    data->finish();
  }
  if (auto g = root.child("game")) {
    g->number("lambda_f", c.lambda_f);
    g->number("lambda_a", c.lambda_a);
    g->integer("rounds", c.game_rounds);
    g->number("lr_f", c.game_lr_f);
    g->number("lr_a", c.game_lr_a);
    g->number("lr_final_scale", c.game_lr_final_scale);
    g->number("rel_change_tol", c.rel_change_tol);
    g->integer("patience", c.patience);
    g->finish();
  }
  if (auto p = root.child("pretrain")) {
    p->integer("epochs", c.pretrain_epochs);
    p->number("lr", c.pretrain_lr);
    p->finish();
  }
  if (auto b = root.child("baseline")) {
    b->integer("epochs", c.baseline_epochs);
    b->finish();
  }
  if (auto n = root.child("network")) {
    n->integer("forecaster_hidden", c.forecaster_hidden);
    n->integer("adversary_hidden", c.adversary_hidden);
    n->finish();
  }
  if (auto m = root.child("mpc")) {
    m->number("u_bound", c.mpc.u_bound);
    m->number("x_bound", c.mpc.x_bound);
    m->number("q_weight", c.mpc.q_weight);
    m->number("r_weight", c.mpc.r_weight);
    m->finish();
  }
  if (auto l = root.child("lne")) {
    l->flag("enabled", c.lne_enabled);
    l->number("fd_step", c.lne_fd_step);
    l->integer("max_params", c.lne_max_params);
    l->finish();
  }
  if (root.has("schemes")) {
    c.schemes.clear();
    for (const std::string& s : root.strings("schemes")) {
      try {
        c.schemes.push_back(scheme_from_string(s));
      } catch (const Error&) {
        invalid("config.schemes", "unknown scheme '" + s + "'");
      }
    }
  }
  if (root.has("conditions")) {
    c.conditions.clear();
    for (const std::string& s : root.strings("conditions")) {
      try {
        c.conditions.push_back(kind_from_string(s));
      } catch (const Error&) {
        invalid("config.conditions", "unknown condition '" + s + "'");
      }
    }
  }
  root.finish();
  validate(c);
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingInput, "cannot open config file " + path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ConfigInvalid, path + ": " + e.what());
  }
  return config_from_json(doc);
}

json config_to_json(const ExperimentConfig& c) {
  json doc;
  doc["schema_version"] = kConfigSchemaVersion;
  doc["experiment"] = to_string(c.experiment);
  doc["seed"] = c.seed;
  doc["workers"] = c.workers;

  json data;
  data["n_train"] = c.n_train;
  data["n_test"] = c.n_test;
  if (c.train_path) data["train_path"] = *c.train_path;
  if (c.test_path) data["test_path"] = *c.test_path;
  if (c.ood_path) data["ood_path"] = *c.ood_path;
  if (c.experiment == Experiment::arima) {
    data["arima"] = {{"T", c.arima.T},
                     {"H", c.arima.H},
                     {"F", c.arima.F},
                     {"sigma", c.arima.sigma},
                     {"sigma_ood", c.sigma_ood},
                     {"coefficients", c.arima_per_series ? "per_series" : "per_dataset"},
                     {"s0", c.arima.s0},
                     {"x0", c.arima.x0},
                     {"mu_range", range_json(c.arima_prior.mu)},
                     {"alpha_range", range_json(c.arima_prior.alpha)},
                     {"beta_range", range_json(c.arima_prior.beta)}};
  } else {
    data["lane_change"] = {{"road_length", c.lane.road_length},
                           {"dt", c.lane.dt},
                           {"H", c.lane.H},
                           {"F", c.lane.F},
                           {"speed_range_train", range_json(c.lane.speed_range_train)},
                           {"speed_range_ood", range_json(c.lane.speed_range_ood)},
                           {"accel_std", c.lane.accel_std},
                           {"lane_offset", c.lane.lane_offset},
                           {"max_gap", c.lane.max_gap},
                           {"yield_decel", c.lane.yield_decel},
                           {"first_start_time", range_json(c.lane.first_start_time)},
                           {"speed_threshold", c.speed_threshold}};
  }
  doc["data"] = data;
  doc["game"] = {{"lambda_f", c.lambda_f},   {"lambda_a", c.lambda_a},          {"rounds", c.game_rounds},
                 {"lr_f", c.game_lr_f},      {"lr_a", c.game_lr_a}, {"lr_final_scale", c.game_lr_final_scale},             {"rel_change_tol", c.rel_change_tol},
                 {"patience", c.patience}};
  doc["pretrain"] = {{"epochs", c.pretrain_epochs}, {"lr", c.pretrain_lr}};
  doc["baseline"] = {{"epochs", c.baseline_epochs}};
  doc["network"] = {{"forecaster_hidden", c.forecaster_hidden}, {"adversary_hidden", c.adversary_hidden}};
  doc["mpc"] = {{"u_bound", c.mpc.u_bound},
                {"x_bound", c.mpc.x_bound},
                {"q_weight", c.mpc.q_weight},
                {"r_weight", c.mpc.r_weight}};
  doc["lne"] = {{"enabled", c.lne_enabled}, {"fd_step", c.lne_fd_step}, {"max_params", c.lne_max_params}};
  json schemes = json::array();
  for (Scheme s : c.schemes) schemes.push_back(to_string(s));
  doc["schemes"] = schemes;
  json conditions = json::array();
  for (Kind k : c.conditions) conditions.push_back(to_string(k));
  doc["conditions"] = conditions;
  return doc;
}

std::string config_hash(const ExperimentConfig& config) {
  // The worker count never changes results, so it stays out of the hash.
  json doc = config_to_json(config);
  doc.erase("workers");
  return fnv1a_hex(doc.dump());
}

MpcProblem experiment_mpc(const ExperimentConfig& c) {
  MpcProblem p;
  Eigen::Index n = 1;
  Eigen::Index m = 1;
  if (c.experiment == Experiment::arima) {
    p.a = Matrix::Constant(1, 1, 1.0);
    p.b = Matrix::Constant(1, 1, -1.0);
    p.horizon = c.arima.F;
  } else {
    const double dt = c.lane.dt;
    n = 4;
    m = 2;
    p.a = Matrix::Identity(4, 4);
    p.a(0, 2) = dt;
    p.a(1, 3) = dt;
    p.b = Matrix::Zero(4, 2);
    p.b(0, 0) = p.b(1, 1) = 0.5 * dt * dt;
    p.b(2, 0) = p.b(3, 1) = dt;
    p.horizon = c.lane.F;
  }
  p.q = c.mpc.q_weight * Matrix::Identity(n, n);
  p.r = c.mpc.r_weight * Matrix::Identity(m, m);
  p.u_min = Vector::Constant(m, -c.mpc.u_bound);
  p.u_max = Vector::Constant(m, c.mpc.u_bound);
  p.x_min = Vector::Constant(n, -c.mpc.x_bound);
  p.x_max = Vector::Constant(n, c.mpc.x_bound);
  p.validate();
  return p;
}

}  // namespace advcast
