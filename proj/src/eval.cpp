#include "advcast/eval.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "advcast/errors.hpp"
#include "advcast/util.hpp"

namespace advcast {

using nlohmann::json;

// ------------------------------------------------------------ evaluation

EvalResult evaluate_forecasts(const Controller& controller, const Dataset& dataset, double lambda_f,
                              const ForecastFn& forecaster, int workers) {
  if (dataset.size() == 0) throw Error(ErrorCode::EmptyDataset, "evaluate: empty dataset");
  const std::size_t n = dataset.size();
  std::vector<double> j(n), mse(n), gap(n);
  parallel_for(n, workers, [&](std::size_t i) {
    const Sample& s = dataset.samples[i];
    const Matrix s_hat = forecaster(s);
    if (s_hat.rows() != s.s_f.rows() || s_hat.cols() != s.s_f.cols()) {
      throw Error(ErrorCode::DimensionMismatch, "evaluate: forecast shape differs from s_F");
    }
    const Matrix u_hat = controller.solve(s.x0, s_hat).u;
    const Matrix u = controller.solve(s.x0, s.s_f).u;
    const double jc_hat = controller.control_cost(s.x0, u_hat, s.s_f);
    const double jc = controller.control_cost(s.x0, u, s.s_f);
    const double err = (s.s_f - s_hat).squaredNorm();
    gap[i] = jc_hat - jc;
    mse[i] = err / static_cast<double>(s_hat.size());
    j[i] = gap[i] + lambda_f * err;
  });

  EvalResult r;
  r.condition = dataset.kind;
  r.n = n;
  r.per_sample_j = Eigen::Map<const Vector>(j.data(), static_cast<Eigen::Index>(n));
  double sj = 0.0, sm = 0.0, sg = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sj += j[i];
    sm += mse[i];
    sg += gap[i];
  }
  r.mean_j = sj / static_cast<double>(n);
  r.mean_forecast_mse = sm / static_cast<double>(n);
  r.mean_control_gap = sg / static_cast<double>(n);
  return r;
}

EvalResult evaluate(const GamePipeline& pipeline, const Dataset& dataset, double lambda_f, int workers) {
  pipeline.validate();
  return evaluate_forecasts(*pipeline.controller, dataset, lambda_f,
                            [&](const Sample& s) { return forecast(pipeline, s.s_h); }, workers);
}

// ------------------------------------------------------------- wilcoxon

WilcoxonResult wilcoxon_signed_rank(const Vector& a, const Vector& b, WilcoxonMethod method) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::LengthMismatch, "wilcoxon: lengths " + std::to_string(a.size()) + " and " +
                                               std::to_string(b.size()) + " differ");
  }
  if (a.size() < 2) throw Error(ErrorCode::LengthMismatch, "wilcoxon: need at least 2 pairs");

  std::vector<double> d;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double x = a(i) - b(i);
    if (x != 0.0) d.push_back(x);
  }
  if (d.empty()) throw Error(ErrorCode::AllZeroDifferences, "wilcoxon: all differences are zero");
  std::sort(d.begin(), d.end(), [](double x, double y) { return std::abs(x) < std::abs(y); });

  // Doubled ranks keep average ranks integral.
  const std::size_t n = d.size();
  std::vector<long> rank2(n);
  double tie_term = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t k = i;
    while (k + 1 < n && std::abs(d[k + 1]) == std::abs(d[i])) ++k;
    const long r2 = static_cast<long>(i + 1 + k + 1);
    for (std::size_t q = i; q <= k; ++q) rank2[q] = r2;
    const double t = static_cast<double>(k - i + 1);
    tie_term += t * t * t - t;
    i = k + 1;
  }
  long plus2 = 0;
  long total2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    total2 += rank2[i];
    if (d[i] > 0.0) plus2 += rank2[i];
  }
  const long w2 = std::min(plus2, total2 - plus2);

  WilcoxonResult r;
  r.w = 0.5 * static_cast<double>(w2);
  r.n_used = n;
  const bool exact = method == WilcoxonMethod::exact || (method == WilcoxonMethod::automatic && n <= 20);
  if (exact) {
    // Distribution of the doubled positive-rank sum under random signs.
    std::vector<double> prob(static_cast<std::size_t>(total2) + 1, 0.0);
    prob[0] = 1.0;
    long reach = 0;
    for (std::size_t i = 0; i < n; ++i) {
      reach += rank2[i];
      for (long s = reach; s >= 0; --s) {
        const double keep = 0.5 * prob[static_cast<std::size_t>(s)];
        const double add = s >= rank2[i] ? 0.5 * prob[static_cast<std::size_t>(s - rank2[i])] : 0.0;
        prob[static_cast<std::size_t>(s)] = keep + add;
      }
    }
    double p = 0.0;
    for (long s = 0; s <= total2; ++s) {
      if (s <= w2 || s >= total2 - w2) p += prob[static_cast<std::size_t>(s)];
    }
    r.p = std::min(1.0, p);
  } else {
    const double nn = static_cast<double>(n);
    const double mean = nn * (nn + 1.0) / 4.0;
    const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term / 48.0;
    if (var <= 0.0) {
      r.p = 1.0;
    } else {
      const double z = std::min(0.0, (r.w - mean + 0.5) / std::sqrt(var));
      r.p = std::min(1.0, std::erfc(-z / std::sqrt(2.0)));
    }
  }
  return r;
}

double improvement_pct(double baseline_mean, double ours_mean) {
  if (!(baseline_mean > 0.0)) {
    throw Error(ErrorCode::NonPositiveBaseline, "improvement_pct: baseline mean must be > 0");
  }
  return 100.0 * (baseline_mean - ours_mean) / baseline_mean;
}

// --------------------------------------------------------------- bundle

const EvalResult* ReportBundle::find(Scheme scheme, Kind condition) const {
  for (const EvalResult& r : results) {
    if (r.scheme == scheme && r.condition == condition) return &r;
  }
  return nullptr;
}

const PairwiseTest* ReportBundle::find_test(Scheme a, Scheme b, const std::string& condition) const {
  for (const PairwiseTest& t : pairwise_tests) {
    if (t.condition != condition) continue;
    if ((t.scheme_a == a && t.scheme_b == b) || (t.scheme_a == b && t.scheme_b == a)) return &t;
  }
  return nullptr;
}

namespace {

json lne_to_json(const LneReport& r) {
  return {{"grad_norm_f", r.grad_norm_f},       {"grad_norm_a", r.grad_norm_a},
          {"lambda_min_Hff", r.lambda_min_hff}, {"lambda_max_Hff", r.lambda_max_hff},
          {"lambda_min_Haa", r.lambda_min_haa}, {"lambda_max_Haa", r.lambda_max_haa},
          {"tol_grad", r.tol_grad},             {"tol_hess", r.tol_hess},
          {"mean_J", r.mean_j},                 {"first_order_ok", r.first_order_ok},
          {"second_order_ok", r.second_order_ok}};
}

LneReport lne_from_json(const json& j) {
  LneReport r;
  r.grad_norm_f = j.at("grad_norm_f").get<double>();
  r.grad_norm_a = j.at("grad_norm_a").get<double>();
  r.lambda_min_hff = j.at("lambda_min_Hff").get<double>();
  r.lambda_max_hff = j.at("lambda_max_Hff").get<double>();
  r.lambda_min_haa = j.at("lambda_min_Haa").get<double>();
  r.lambda_max_haa = j.at("lambda_max_Haa").get<double>();
  r.tol_grad = j.at("tol_grad").get<double>();
  r.tol_hess = j.at("tol_hess").get<double>();
  r.mean_j = j.at("mean_J").get<double>();
  r.first_order_ok = j.at("first_order_ok").get<bool>();
  r.second_order_ok = j.at("second_order_ok").get<bool>();
  return r;
}

}  // namespace

json bundle_to_json(const ReportBundle& b) {
  json doc;
  doc["format"] = "advcast-report-1";
  doc["experiment"] = b.experiment;
  doc["config_hash"] = b.config_hash;
  doc["seed"] = b.seed;
  doc["config"] = b.config;
  json results = json::array();
  for (const EvalResult& r : b.results) {
    json per = json::array();
    for (Eigen::Index i = 0; i < r.per_sample_j.size(); ++i) per.push_back(r.per_sample_j(i));
    results.push_back({{"scheme", to_string(r.scheme)},
                       {"condition", to_string(r.condition)},
                       {"mean_J", r.mean_j},
                       {"mean_forecast_mse", r.mean_forecast_mse},
                       {"mean_control_gap", r.mean_control_gap},
                       {"n", r.n},
                       {"per_sample_J", per}});
  }
  doc["results"] = results;
  json tests = json::array();
  for (const PairwiseTest& t : b.pairwise_tests) {
    tests.push_back({{"scheme_a", to_string(t.scheme_a)},
                     {"scheme_b", to_string(t.scheme_b)},
                     {"condition", t.condition},
                     {"W", t.w},
                     {"p", t.p}});
  }
  doc["pairwise_tests"] = tests;
  json imps = json::array();
  for (const Improvement& i : b.improvements) {
    imps.push_back({{"baseline", to_string(i.baseline)},
                    {"condition", to_string(i.condition)},
                    {"pct", i.pct ? json(*i.pct) : json(nullptr)}});
  }
  doc["improvements"] = imps;
  doc["lne"] = b.lne ? lne_to_json(*b.lne) : json(nullptr);
  doc["lne_note"] = b.lne_note;
  doc["training"] = b.training.is_null() ? json::object() : b.training;
  return doc;
}

ReportBundle bundle_from_json(const json& doc) {
  try {
    if (doc.at("format") != "advcast-report-1") throw Error(ErrorCode::ParseError, "unknown report format");
    ReportBundle b;
    b.experiment = doc.at("experiment").get<std::string>();
    b.config_hash = doc.at("config_hash").get<std::string>();
    b.seed = doc.at("seed").get<std::uint64_t>();
    b.config = doc.at("config");
    for (const json& r : doc.at("results")) {
      EvalResult e;
      e.scheme = scheme_from_string(r.at("scheme").get<std::string>());
      e.condition = kind_from_string(r.at("condition").get<std::string>());
      e.mean_j = r.at("mean_J").get<double>();
      e.mean_forecast_mse = r.at("mean_forecast_mse").get<double>();
      e.mean_control_gap = r.at("mean_control_gap").get<double>();
      e.n = r.at("n").get<std::size_t>();
      const auto per = r.at("per_sample_J").get<std::vector<double>>();
      e.per_sample_j = Eigen::Map<const Vector>(per.data(), static_cast<Eigen::Index>(per.size()));
      b.results.push_back(std::move(e));
    }
    for (const json& t : doc.at("pairwise_tests")) {
      PairwiseTest p;
      p.scheme_a = scheme_from_string(t.at("scheme_a").get<std::string>());
      p.scheme_b = scheme_from_string(t.at("scheme_b").get<std::string>());
      p.condition = t.at("condition").get<std::string>();
      p.w = t.at("W").get<double>();
      p.p = t.at("p").get<double>();
      b.pairwise_tests.push_back(p);
    }
    for (const json& i : doc.at("improvements")) {
      Improvement m;
      m.baseline = scheme_from_string(i.at("baseline").get<std::string>());
      m.condition = kind_from_string(i.at("condition").get<std::string>());
      if (!i.at("pct").is_null()) m.pct = i.at("pct").get<double>();
      b.improvements.push_back(m);
    }
    if (!doc.at("lne").is_null()) b.lne = lne_from_json(doc.at("lne"));
    b.lne_note = doc.at("lne_note").get<std::string>();
    b.training = doc.at("training");
    return b;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("report: ") + e.what());
  }
}

std::string costs_csv(const ReportBundle& b) {
  std::string out = "scheme,condition,mean_J,mean_forecast_mse,mean_control_gap,n\n";
  for (const EvalResult& r : b.results) {
    out += to_string(r.scheme) + "," + to_string(r.condition) + "," + format_decimal(r.mean_j) + "," +
           format_decimal(r.mean_forecast_mse) + "," + format_decimal(r.mean_control_gap) + "," + std::to_string(r.n) + "\n";
  }
  return out;
}

std::string tests_csv(const ReportBundle& b) {
  std::string out = "scheme_a,scheme_b,condition,W,p\n";
  for (const PairwiseTest& t : b.pairwise_tests) {
    out += to_string(t.scheme_a) + "," + to_string(t.scheme_b) + "," + t.condition + "," + format_decimal(t.w) + "," +
           format_decimal(t.p) + "\n";
  }
  return out;
}

std::string lne_csv(const ReportBundle& b) {
  std::string out =
      "grad_norm_f,grad_norm_a,lambda_min_Hff,lambda_max_Hff,lambda_min_Haa,lambda_max_Haa,tol_grad,tol_hess,"
      "first_order_ok,second_order_ok,note\n";
  if (b.lne) {
    const LneReport& r = *b.lne;
    out += format_decimal(r.grad_norm_f) + "," + format_decimal(r.grad_norm_a) + "," + format_decimal(r.lambda_min_hff) +
           "," + format_decimal(r.lambda_max_hff) + "," + format_decimal(r.lambda_min_haa) + "," +
           format_decimal(r.lambda_max_haa) + "," + format_decimal(r.tol_grad) + "," + format_decimal(r.tol_hess) + "," +
           (r.first_order_ok ? "1" : "0") + "," + (r.second_order_ok ? "1" : "0") + "," + b.lne_note + "\n";
  } else if (!b.lne_note.empty()) {
    out += ",,,,,,,,,," + b.lne_note + "\n";
  }
  return out;
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

}  // namespace

void write_report(const ReportBundle& bundle, const std::string& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + out_dir + ": " + ec.message());
  const std::filesystem::path dir(out_dir);
  write_text(dir / "summary.json", bundle_to_json(bundle).dump(2) + "\n");
  write_text(dir / "costs.csv", costs_csv(bundle));
  write_text(dir / "tests.csv", tests_csv(bundle));
  write_text(dir / "lne.csv", lne_csv(bundle));
}

ReportBundle load_report(const std::string& summary_path) {
  std::ifstream in(summary_path);
  if (!in) throw Error(ErrorCode::MissingInput, "cannot open " + summary_path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ParseError, summary_path + ": " + e.what());
  }
  return bundle_from_json(doc);
}

// ----------------------------------------------------------- experiment

namespace {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  // splitmix64 finalizer over (seed, tag)
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Lane-change samples whose speeds fall on the requested side of the
// threshold, topped up from further generator chunks when filtering drops
// some.
Dataset lane_change_filtered(const LaneChangeParams& params, std::size_t n, std::uint64_t seed, bool want_ood,
                             double threshold) {
  Dataset out;
  for (std::uint64_t chunk = 0; out.size() < n; ++chunk) {
    if (chunk > 64) {
      throw Error(ErrorCode::InvalidParams, "lane-change generator rarely produces samples on the requested side of " +
                                                format_decimal(threshold) + " m/s");
    }
    const Dataset raw = lane_change_generate(params, n, derive_seed(seed, chunk));
    auto [in_dist, ood] = split_by_speed(raw, threshold);
    Dataset& take = want_ood ? ood : in_dist;
    if (chunk == 0) {
      out.dims = raw.dims;
      out.meta = raw.meta;
    }
    for (Sample& s : take.samples) {
      if (out.size() == n) break;
      out.samples.push_back(std::move(s));
    }
  }
  out.seed = seed;
  out.kind = want_ood ? Kind::ood : Kind::orig;
  return out;
}

}  // namespace

ExperimentData make_experiment_data(const ExperimentConfig& c) {
  ExperimentData d;
  const std::uint64_t seed = c.seed;
  if (c.experiment == Experiment::arima && c.arima_per_series) {
    ArimaParams ood_base = c.arima;
    ood_base.sigma = c.sigma_ood;
    const ArimaParams base = c.arima;
    const ArimaPrior prior = c.arima_prior;
    d.train = arima_generate_mixed(base, prior, c.n_train, derive_seed(seed, 3));
    d.test = arima_generate_mixed(base, prior, c.n_test, derive_seed(seed, 4));
    d.ood = arima_generate_mixed(ood_base, prior, c.n_test, derive_seed(seed, 5));
    d.train_generator = [base, prior](std::size_t n, std::uint64_t s) { return arima_generate_mixed(base, prior, n, s); };
  } else if (c.experiment == Experiment::arima) {
    const ArimaParams coeffs = draw_arima_coefficients(c.arima, c.arima_prior, derive_seed(seed, 1));
    ArimaParams ood_base = c.arima;
    ood_base.sigma = c.sigma_ood;
    const ArimaParams ood_coeffs = draw_arima_coefficients(ood_base, c.arima_prior, derive_seed(seed, 2));
    d.train = arima_generate(coeffs, c.n_train, derive_seed(seed, 3));
    d.test = arima_generate(coeffs, c.n_test, derive_seed(seed, 4));
    d.ood = arima_generate(ood_coeffs, c.n_test, derive_seed(seed, 5));
    d.train_generator = [coeffs](std::size_t n, std::uint64_t s) { return arima_generate(coeffs, n, s); };
  } else {
    LaneChangeParams train_params = c.lane;
    train_params.use_ood_range = false;
    LaneChangeParams ood_params = c.lane;
    ood_params.use_ood_range = true;
    const double thr = c.speed_threshold;
    d.train = lane_change_filtered(train_params, c.n_train, derive_seed(seed, 3), false, thr);
    d.test = lane_change_filtered(train_params, c.n_test, derive_seed(seed, 4), false, thr);
    d.ood = lane_change_filtered(ood_params, c.n_test, derive_seed(seed, 5), true, thr);
    d.train_generator = [train_params, thr](std::size_t n, std::uint64_t s) {
      return lane_change_filtered(train_params, n, s, false, thr);
    };
  }
  if (c.train_path) {
    d.train = load_dataset(*c.train_path);
    d.train_generator = nullptr;
  }
  if (c.test_path) d.test = load_dataset(*c.test_path);
  if (c.ood_path) d.ood = load_dataset(*c.ood_path);
  d.train.split = Split::train;
  d.train.kind = Kind::orig;
  d.test.split = Split::test;
  d.test.kind = Kind::orig;
  d.ood.split = Split::test;
  d.ood.kind = Kind::ood;
  if (!(d.test.dims == d.train.dims) || !(d.ood.dims == d.train.dims)) {
    throw Error(ErrorCode::DimsHeaderMismatch, "train, test and ood datasets have different dimensions");
  }
  return d;
}

ExperimentArtifacts run_experiment_full(const ExperimentConfig& c) {
  ExperimentArtifacts art;
  ReportBundle& b = art.bundle;
  b.experiment = to_string(c.experiment);
  b.config_hash = config_hash(c);
  b.seed = c.seed;
  b.config = config_to_json(c);
  b.config.erase("workers");

  const ExperimentData data = make_experiment_data(c);
  log(LogLevel::info, "data: train " + std::to_string(data.train.size()) + ", test " + std::to_string(data.test.size()) +
                          ", ood " + std::to_string(data.ood.size()));

  PipelineConfig pc;
  pc.dims = {data.train.dims.p_in, data.train.dims.p_out, data.train.dims.history, data.train.dims.horizon};
  pc.forecaster_hidden = c.forecaster_hidden;
  pc.adversary_hidden = c.adversary_hidden;
  pc.mpc = experiment_mpc(c);
  pc.lambda_f = c.lambda_f;
  pc.lambda_a = c.lambda_a;
  pc.seed = derive_seed(c.seed, 100);
  if (c.experiment == Experiment::arima) {
    pc.adversary_mask = {true};
    pc.output_channels = {0};
  } else {
    pc.adversary_mask = {false, false, false, false, true, true, true, true};
    pc.output_channels = {0, 1, 2, 3};
  }
  const GamePipeline base = make_pipeline(pc, normalize_stats(data.train));
  const int baseline_epochs = c.effective_baseline_epochs();

  json training;
  training["pretrain_epochs"] = c.pretrain_epochs;
  training["baseline_epochs"] = baseline_epochs;
  std::map<Scheme, GamePipeline> trained;
  for (Scheme s : c.schemes) {
    if (s == Scheme::robust) continue;
    Dataset scheme_data = build_scheme(data.train, s, data.train_generator ? &data.train_generator : nullptr,
                                       derive_seed(c.seed, 200 + static_cast<std::uint64_t>(s)));
    log(LogLevel::info, "training " + to_string(s) + " on " + std::to_string(scheme_data.size()) + " samples");
    const PretrainResult pr = pretrain_forecaster(base, scheme_data, baseline_epochs, c.pretrain_lr, c.workers);
    GamePipeline p = base;
    p.forecaster = pr.forecaster;
    training[to_string(s)] = {{"samples", scheme_data.size()},
                              {"final_mse", pr.loss_curve.empty() ? json(nullptr) : json(pr.loss_curve.back())}};
    trained.emplace(s, std::move(p));
  }

  const bool want_robust = std::find(c.schemes.begin(), c.schemes.end(), Scheme::robust) != c.schemes.end();
  if (want_robust) {
    log(LogLevel::info, "pretraining robust forecaster");
    const PretrainResult pr = pretrain_forecaster(base, data.train, c.pretrain_epochs, c.pretrain_lr, c.workers);
    GamePipeline p = base;
    p.forecaster = pr.forecaster;
    GameConfig gc;
    gc.max_rounds = c.game_rounds;
    gc.lr_f = c.game_lr_f;
    gc.lr_a = c.game_lr_a;
    gc.lr_final_scale = c.game_lr_final_scale;
    gc.rel_change_tol = c.rel_change_tol;
    gc.patience = c.patience;
    gc.workers = c.workers;
    log(LogLevel::info, "robust game: up to " + std::to_string(c.game_rounds) + " rounds");
    RobustResult rr = train_robust(p, data.train, gc);
    json robust = {{"pretrain_final_mse", pr.loss_curve.empty() ? json(nullptr) : json(pr.loss_curve.back())},
                   {"rounds_executed", rr.history.rounds.size()},
                   {"converged", rr.history.converged},
                   {"round_cap_reached", rr.history.round_cap_reached},
                   {"best_round", rr.history.best_round}};
    if (rr.history.best_round >= 0) {
      const RoundRecord& best = rr.history.rounds[static_cast<std::size_t>(rr.history.best_round)];
      robust["best_round_mean_J"] = best.mean_j;
      robust["best_round_grad_f_norm"] = best.grad_f_norm;
      robust["best_round_grad_a_norm"] = best.grad_a_norm;
      robust["best_round_mean_perturbation_norm"] = best.mean_perturbation_norm;
    }
    training["robust"] = robust;
    art.robust_history = rr.history;
    art.robust = rr.pipeline;
    trained.emplace(Scheme::robust, rr.pipeline);
  }
  b.training = training;

  std::map<Kind, Dataset> conditions;
  for (Kind k : c.conditions) {
    if (k == Kind::orig) conditions[k] = data.test;
    if (k == Kind::ood) conditions[k] = data.ood;
    if (k == Kind::adv) conditions[k] = make_adversarial_testset(data.test, trained.at(Scheme::robust));
  }

  for (Scheme s : c.schemes) {
    for (Kind k : c.conditions) {
      EvalResult r = evaluate(trained.at(s), conditions.at(k), c.lambda_f, c.workers);
      r.scheme = s;
      r.condition = k;
      b.results.push_back(std::move(r));
    }
  }

  auto add_test = [&](Scheme sa, Scheme sb, const std::string& label, const Vector& ja, const Vector& jb) {
    PairwiseTest t;
    t.scheme_a = sa;
    t.scheme_b = sb;
    t.condition = label;
    try {
      const WilcoxonResult w = wilcoxon_signed_rank(ja, jb);
      t.w = w.w;
      t.p = w.p;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::AllZeroDifferences) throw;
      t.w = 0.0;
      t.p = 1.0;
    }
    b.pairwise_tests.push_back(t);
  };
  for (Kind k : c.conditions) {
    for (std::size_t i = 0; i < c.schemes.size(); ++i) {
      for (std::size_t j = i + 1; j < c.schemes.size(); ++j) {
        add_test(c.schemes[i], c.schemes[j], to_string(k), b.find(c.schemes[i], k)->per_sample_j,
                 b.find(c.schemes[j], k)->per_sample_j);
      }
    }
  }
  if (conditions.count(Kind::orig) && conditions.count(Kind::adv)) {
    for (Scheme s : c.schemes) {
      add_test(s, s, "orig_vs_adv", b.find(s, Kind::orig)->per_sample_j, b.find(s, Kind::adv)->per_sample_j);
    }
  }

  if (want_robust) {
    for (Scheme s : c.schemes) {
      if (s == Scheme::robust) continue;
      for (Kind k : c.conditions) {
        Improvement m;
        m.baseline = s;
        m.condition = k;
        const double base_mean = b.find(s, k)->mean_j;
        if (base_mean > 0.0) m.pct = improvement_pct(base_mean, b.find(Scheme::robust, k)->mean_j);
        b.improvements.push_back(m);
      }
    }
  }

  if (want_robust && c.lne_enabled) {
    const GamePipeline& robust = trained.at(Scheme::robust);
    const Eigen::Index pf = robust.forecaster.param_count();
    const Eigen::Index pa = robust.adversary.param_count();
    if (pf > c.lne_max_params || pa > c.lne_max_params) {
      b.lne_note = "skipped: " + std::to_string(pf) + " forecaster and " + std::to_string(pa) +
                   " adversary parameters exceed the dense-Hessian cap of " + std::to_string(c.lne_max_params);
    } else {
      log(LogLevel::info, "local Nash check on " + std::to_string(pf) + " + " + std::to_string(pa) + " parameters");
      LneOptions lo;
      lo.fd_step = c.lne_fd_step;
      lo.max_params = c.lne_max_params;
      lo.workers = c.workers;
      b.lne = verify_lne(robust, data.train, lo);
    }
  } else if (want_robust) {
    b.lne_note = "disabled in config";
  }
  return art;
}

ReportBundle run_experiment(const ExperimentConfig& config) { return run_experiment_full(config).bundle; }

}  // namespace advcast
