#include "advcast/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "advcast/errors.hpp"
#include "advcast/util.hpp"

namespace advcast {

std::string to_string(Split s) { return s == Split::train ? "train" : "test"; }

std::string to_string(Kind k) {
  switch (k) {
    case Kind::orig: return "orig";
    case Kind::add: return "add";
    case Kind::rand: return "rand";
    case Kind::adv: return "adv";
    case Kind::ood: return "ood";
  }
  return "orig";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw Error(ErrorCode::ParseError, "unknown split '" + s + "'");
}

Kind kind_from_string(const std::string& s) {
  for (Kind k : {Kind::orig, Kind::add, Kind::rand, Kind::adv, Kind::ood}) {
    if (to_string(k) == s) return k;
  }
  throw Error(ErrorCode::ParseError, "unknown dataset kind '" + s + "'");
}

std::string to_string(Scheme s) {
  switch (s) {
    case Scheme::original: return "original";
    case Scheme::data_added: return "data_added";
    case Scheme::random: return "random";
    case Scheme::robust: return "robust";
  }
  return "original";
}

Scheme scheme_from_string(const std::string& s) {
  for (Scheme k : {Scheme::original, Scheme::data_added, Scheme::random, Scheme::robust}) {
    if (to_string(k) == s) return k;
  }
  throw Error(ErrorCode::ConfigInvalid, "unknown scheme '" + s + "'");
}

void Dataset::validate() const {
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = samples[i];
    if (s.s_h.rows() != dims.p_in || s.s_h.cols() != dims.history || s.s_f.rows() != dims.p_out ||
        s.s_f.cols() != dims.horizon || s.x0.size() != dims.state_dim) {
      throw Error(ErrorCode::DimsHeaderMismatch,
                  "sample " + std::to_string(i) + " does not match dataset dims");
    }
    if (!s.s_h.allFinite() || !s.s_f.allFinite() || !s.x0.allFinite()) {
      throw Error(ErrorCode::DimsHeaderMismatch, "sample " + std::to_string(i) + " has non-finite values");
    }
  }
}

// ---------------------------------------------------------------- ARIMA

ArimaParams draw_arima_coefficients(const ArimaParams& base, const ArimaPrior& prior,
                                    std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto draw = [&](std::pair<double, double> range) {
    return std::uniform_real_distribution<double>(range.first, range.second)(rng);
  };
  ArimaParams out = base;
  out.mu = draw(prior.mu);
  out.alpha = draw(prior.alpha);
  out.beta = draw(prior.beta);
  return out;
}

std::vector<double> arima_series(const ArimaParams& p, std::mt19937_64& rng) {
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<double> s(static_cast<std::size_t>(p.T));
  s[0] = p.s0;
  double w_prev = 0.0;
  for (int t = 0; t + 1 < p.T; ++t) {
    const double w = p.sigma > 0.0 ? p.sigma * noise(rng) : 0.0;
    const auto ut = static_cast<std::size_t>(t);
    s[ut + 1] = p.mu + p.alpha * s[ut] + p.beta * w_prev + w;
    w_prev = w;
  }
  return s;
}

Dataset arima_generate(const ArimaParams& p, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw Error(ErrorCode::InvalidParams, "arima_generate: N must be >= 1");
  if (!(p.sigma >= 0.0) || p.H < 1 || p.F < 1 || p.H + p.F != p.T) {
    throw Error(ErrorCode::InvalidParams, "arima_generate: need sigma >= 0 and H + F == T");
  }
  Dataset ds;
  ds.dims = {1, 1, p.H, p.F, 1};
  ds.seed = seed;
  ds.meta = {{"generator", "arima"},
             {"mu", format_decimal(p.mu)},
             {"alpha", format_decimal(p.alpha)},
             {"beta", format_decimal(p.beta)},
             {"sigma", format_decimal(p.sigma)},
             {"sigma_meaning", "noise standard deviation"},
             {"s0", format_decimal(p.s0)}};
  std::mt19937_64 rng(seed);
  ds.samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::vector<double> series = arima_series(p, rng);
    Sample s;
    s.s_h.resize(1, p.H);
    s.s_f.resize(1, p.F);
    for (int t = 0; t < p.H; ++t) s.s_h(0, t) = series[static_cast<std::size_t>(t)];
    for (int t = 0; t < p.F; ++t) s.s_f(0, t) = series[static_cast<std::size_t>(p.H + t)];
    s.x0 = Vector::Constant(1, p.x0);
    ds.samples.push_back(std::move(s));
  }
  ds.validate();
  return ds;
}

Dataset arima_generate_mixed(const ArimaParams& base, const ArimaPrior& prior, std::size_t n,
                             std::uint64_t seed) {
  if (n < 1) throw Error(ErrorCode::InvalidParams, "arima_generate_mixed: N must be >= 1");
  if (!(base.sigma >= 0.0) || base.H < 1 || base.F < 1 || base.H + base.F != base.T) {
    throw Error(ErrorCode::InvalidParams, "arima_generate_mixed: need sigma >= 0 and H + F == T");
  }
  Dataset ds;
  ds.dims = {1, 1, base.H, base.F, 1};
  ds.seed = seed;
  auto range = [](std::pair<double, double> r) { return format_decimal(r.first) + ":" + format_decimal(r.second); };
  ds.meta = {{"generator", "arima"},
             {"coefficients", "per_series"},
             {"mu_range", range(prior.mu)},
             {"alpha_range", range(prior.alpha)},
             {"beta_range", range(prior.beta)},
             {"sigma", format_decimal(base.sigma)},
             {"sigma_meaning", "noise standard deviation"},
             {"s0", format_decimal(base.s0)}};
  std::mt19937_64 rng(seed);
  auto draw = [&](std::pair<double, double> r) { return std::uniform_real_distribution<double>(r.first, r.second)(rng); };
  ds.samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    ArimaParams p = base;
    p.mu = draw(prior.mu);
    p.alpha = draw(prior.alpha);
    p.beta = draw(prior.beta);
    const std::vector<double> series = arima_series(p, rng);
    Sample s;
    s.s_h.resize(1, p.H);
    s.s_f.resize(1, p.F);
    for (int t = 0; t < p.H; ++t) s.s_h(0, t) = series[static_cast<std::size_t>(t)];
    for (int t = 0; t < p.F; ++t) s.s_f(0, t) = series[static_cast<std::size_t>(p.H + t)];
    s.x0 = Vector::Constant(1, p.x0);
    ds.samples.push_back(std::move(s));
  }
  ds.validate();
  return ds;
}

// ---------------------------------------------------------- lane change

namespace {

struct RoadState {
  double lon = 0.0, lat = 0.0, v_lon = 0.0, v_lat = 0.0;
};

// Lateral acceleration of a sinusoidal lane change of width `offset`
// starting at `start` and lasting `duration`; integrates to a displacement
// of `offset` with zero terminal lateral velocity.
double lateral_accel(double t, double start, double duration, double offset) {
  if (offset == 0.0 || t < start || t >= start + duration) return 0.0;
  const double w = 2.0 * std::numbers::pi / duration;
  return offset * w / duration * std::sin(w * (t - start));
}

}  // namespace

Dataset lane_change_generate(const LaneChangeParams& p, std::size_t n, std::uint64_t seed) {
  const auto range = p.use_ood_range ? p.speed_range_ood : p.speed_range_train;
  if (n < 1 || p.H < 1 || p.F < 1 || !(p.dt > 0.0) || !(range.first > 0.0) ||
      !(range.first <= range.second) || !(p.accel_std >= 0.0) || !(p.road_length > 0.0)) {
    throw Error(ErrorCode::InvalidParams, "lane_change_generate: invalid parameters");
  }
  Dataset ds;
  ds.dims = {8, 4, p.H, p.F, 4};
  ds.seed = seed;
  ds.meta = {{"generator", "lane_change"},
             {"dt", format_decimal(p.dt)},
             {"speed_lo", format_decimal(range.first)},
             {"speed_hi", format_decimal(range.second)}};
  std::mt19937_64 rng(seed);
  auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  std::normal_distribution<double> jitter(0.0, 1.0);

  const int steps = p.H + p.F;
  ds.samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    // Shared lane heading from the ego's velocity components.
    const double evx = uniform(range.first, range.second);
    const double evy = uniform(range.first, range.second);
    const double ego_speed = std::hypot(evx, evy);
    const double dx = evx / ego_speed;
    const double dy = evy / ego_speed;
    // Other vehicle moves parallel; the scale keeps its components in range.
    const double c_lo = range.first / std::min(evx, evy);
    const double c_hi = range.second / std::max(evx, evy);
    const double other_speed = ego_speed * uniform(c_lo, c_hi);

    RoadState ego{0.0, 0.0, ego_speed, 0.0};
    RoadState other{uniform(-p.max_gap, p.max_gap), p.lane_offset, other_speed, 0.0};
    const bool ego_leads = ego.lon >= other.lon;

    const double window = p.road_length / std::max(ego_speed, other_speed);
    const double duration = uniform(0.45, 0.6) * window;
    const double lead_start = uniform(p.first_start_time.first, p.first_start_time.second);
    const double follow_start = lead_start + uniform(0.2, 0.4) * window;
    const double ego_start = ego_leads ? lead_start : follow_start;
    const double other_start = ego_leads ? follow_start : lead_start;
    const bool maneuvers = p.lane_offset != 0.0;

    Matrix ego_traj(4, steps);
    Matrix other_traj(4, steps);
    auto store = [&](Matrix& traj, int k, const RoadState& s) {
      traj(0, k) = s.lon * dx - s.lat * dy;
      traj(1, k) = s.lon * dy + s.lat * dx;
      traj(2, k) = s.v_lon * dx - s.v_lat * dy;
      traj(3, k) = s.v_lon * dy + s.v_lat * dx;
    };
    auto advance = [&](RoadState& s, double a_lon, double a_lat) {
      s.lon += s.v_lon * p.dt + 0.5 * a_lon * p.dt * p.dt;
      s.lat += s.v_lat * p.dt + 0.5 * a_lat * p.dt * p.dt;
      s.v_lon += a_lon * p.dt;
      s.v_lat += a_lat * p.dt;
    };
    for (int k = 0; k < steps; ++k) {
      store(ego_traj, k, ego);
      store(other_traj, k, other);
      if (k + 1 == steps) break;
      const double t = k * p.dt;
      // The follower eases off while the leader is changing lanes.
      const double lead_start_t = lead_start;
      const bool leader_moving = maneuvers && t >= lead_start_t && t < lead_start_t + duration;
      const double ego_yield = (!ego_leads && leader_moving) ? -p.yield_decel : 0.0;
      const double other_yield = (ego_leads && leader_moving) ? -p.yield_decel : 0.0;
      const double ego_jitter = p.accel_std > 0.0 ? p.accel_std * jitter(rng) : 0.0;
      const double other_jitter = p.accel_std > 0.0 ? p.accel_std * jitter(rng) : 0.0;
      advance(ego, ego_jitter + ego_yield, lateral_accel(t, ego_start, duration, p.lane_offset));
      advance(other, other_jitter + other_yield,
              lateral_accel(t, other_start, duration, -p.lane_offset));
    }

    Sample s;
    s.s_h.resize(8, p.H);
    s.s_h.topRows(4) = ego_traj.leftCols(p.H);
    s.s_h.bottomRows(4) = other_traj.leftCols(p.H);
    s.s_f = ego_traj.rightCols(p.F);
    s.x0 = ego_traj.col(p.H - 1);
    ds.samples.push_back(std::move(s));
  }
  ds.validate();
  return ds;
}

std::pair<Dataset, Dataset> split_by_speed(const Dataset& dataset, double threshold,
                                           const VelocityChannels& channels) {
  for (auto c : channels.history) {
    if (c < 0 || c >= dataset.dims.p_in) {
      throw Error(ErrorCode::MissingChannels, "split_by_speed: history channel " + std::to_string(c));
    }
  }
  for (auto c : channels.future) {
    if (c < 0 || c >= dataset.dims.p_out) {
      throw Error(ErrorCode::MissingChannels, "split_by_speed: future channel " + std::to_string(c));
    }
  }
  Dataset in_dist;
  Dataset ood;
  for (Dataset* d : {&in_dist, &ood}) {
    d->dims = dataset.dims;
    d->split = dataset.split;
    d->seed = dataset.seed;
    d->meta = dataset.meta;
  }
  in_dist.kind = dataset.kind;
  ood.kind = Kind::ood;
  for (const Sample& s : dataset.samples) {
    double peak = 0.0;
    for (auto c : channels.history) peak = std::max(peak, s.s_h.row(c).cwiseAbs().maxCoeff());
    for (auto c : channels.future) peak = std::max(peak, s.s_f.row(c).cwiseAbs().maxCoeff());
    (peak > threshold ? ood : in_dist).samples.push_back(s);
  }
  return {std::move(in_dist), std::move(ood)};
}

// ------------------------------------------------------------- schemes

Dataset build_scheme(const Dataset& base, Scheme scheme, const SampleGenerator* generator,
                     std::uint64_t seed) {
  Dataset out = base;
  switch (scheme) {
    case Scheme::original:
      return out;
    case Scheme::data_added: {
      if (generator == nullptr || !*generator) {
        throw Error(ErrorCode::GeneratorRequired, "build_scheme: data_added needs a generator");
      }
      Dataset extra = (*generator)(base.size(), seed);
      if (!(extra.dims == base.dims)) {
        throw Error(ErrorCode::DimensionMismatch, "build_scheme: generator dims differ from base");
      }
      for (auto& s : extra.samples) out.samples.push_back(std::move(s));
      out.kind = Kind::add;
      out.meta["added_seed"] = std::to_string(seed);
      return out;
    }
    case Scheme::random: {
      std::mt19937_64 rng(seed);
      std::normal_distribution<double> noise(0.0, 1.0);
      out.samples.reserve(2 * base.size());
      for (const Sample& s : base.samples) {
        Sample noisy = s;
        for (Eigen::Index i = 0; i < noisy.s_h.size(); ++i) noisy.s_h.data()[i] += noise(rng);
        out.samples.push_back(std::move(noisy));
      }
      out.kind = Kind::rand;
      out.meta["noise_seed"] = std::to_string(seed);
      return out;
    }
    case Scheme::robust:
      break;
  }
  throw Error(ErrorCode::InvalidParams, "build_scheme: robust is trained by the game, not a dataset");
}

// ------------------------------------------------------- normalization

NormStats normalize_stats(const Dataset& dataset) {
  if (dataset.samples.empty()) throw Error(ErrorCode::EmptyDataset, "normalize_stats: empty dataset");
  const Eigen::Index p = dataset.dims.p_in;
  const double count = static_cast<double>(dataset.size()) * static_cast<double>(dataset.dims.history);
  NormStats st;
  st.mean = Vector::Zero(p);
  for (const Sample& s : dataset.samples) st.mean += s.s_h.rowwise().sum();
  st.mean /= count;
  Vector var = Vector::Zero(p);
  for (const Sample& s : dataset.samples) {
    var += (s.s_h.colwise() - st.mean).array().square().matrix().rowwise().sum();
  }
  var /= count;
  st.std = var.cwiseSqrt().cwiseMax(kStdFloor);
  return st;
}

// ------------------------------------------------------------------ io

std::string dataset_to_csv(const Dataset& ds) {
  std::ostringstream os;
  os << "#dims," << ds.dims.p_in << ',' << ds.dims.p_out << ',' << ds.dims.history << ','
     << ds.dims.horizon << ',' << ds.dims.state_dim << ',' << to_string(ds.split) << ','
     << to_string(ds.kind) << ',' << ds.seed << '\n';
  for (const auto& [k, v] : ds.meta) os << "#meta," << k << ',' << v << '\n';
  auto emit = [&](const char* tag, std::size_t i, const double* data, Eigen::Index count) {
    os << tag << ',' << i;
    for (Eigen::Index j = 0; j < count; ++j) os << ',' << format_decimal(data[j]);
    os << '\n';
  };
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const Sample& s = ds.samples[i];
    emit("SH", i, s.s_h.data(), s.s_h.size());
    emit("SF", i, s.s_f.data(), s.s_f.size());
    emit("X0", i, s.x0.data(), s.x0.size());
  }
  return os.str();
}

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

[[noreturn]] void parse_fail(std::size_t line, std::size_t column, const std::string& msg) {
  throw Error(ErrorCode::ParseError,
              "line " + std::to_string(line) + ", column " + std::to_string(column) + ": " + msg);
}

long parse_count(std::string_view field, std::size_t line, std::size_t column) {
  try {
    const double v = parse_decimal(field, "integer");
    if (v < 0 || v != std::floor(v)) parse_fail(line, column, "expected a non-negative integer");
    return static_cast<long>(v);
  } catch (const Error&) {
    parse_fail(line, column, "expected an integer, got '" + std::string(field) + "'");
  }
}

}  // namespace

Dataset dataset_from_csv(const std::string& text) {
  if (text.empty()) parse_fail(1, 1, "empty file");
  if (text.back() != '\n') {
    const auto lines = static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')) + 1;
    parse_fail(lines, 1, "file is truncated (last line not terminated)");
  }
  Dataset ds;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  bool have_header = false;
  enum class Expect { sh, sf, x0 } expect = Expect::sh;
  Sample current;
  while (pos < text.size()) {
    const std::size_t end = text.find('\n', pos);
    std::string_view line(text.data() + pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    const auto fields = split_fields(line);
    if (!have_header) {
      if (fields[0] != "#dims" || fields.size() != 9) parse_fail(line_no, 1, "expected #dims header with 8 fields");
      ds.dims.p_in = parse_count(fields[1], line_no, 2);
      ds.dims.p_out = parse_count(fields[2], line_no, 3);
      ds.dims.history = parse_count(fields[3], line_no, 4);
      ds.dims.horizon = parse_count(fields[4], line_no, 5);
      ds.dims.state_dim = parse_count(fields[5], line_no, 6);
      try {
        ds.split = split_from_string(std::string(fields[6]));
        ds.kind = kind_from_string(std::string(fields[7]));
      } catch (const Error& e) {
        parse_fail(line_no, 7, e.what());
      }
      ds.seed = static_cast<std::uint64_t>(parse_count(fields[8], line_no, 9));
      have_header = true;
      continue;
    }
    if (fields[0] == "#meta") {
      if (fields.size() < 3) parse_fail(line_no, 1, "#meta needs a key and a value");
      const std::size_t value_start = line.find(',', 6) + 1;
      ds.meta[std::string(fields[1])] = std::string(line.substr(value_start));
      continue;
    }
    const char* want = expect == Expect::sh ? "SH" : expect == Expect::sf ? "SF" : "X0";
    if (fields[0] != want) parse_fail(line_no, 1, std::string("expected record ") + want);
    if (fields.size() < 2) parse_fail(line_no, 2, "missing sample index");
    const long index = parse_count(fields[1], line_no, 2);
    if (static_cast<std::size_t>(index) != ds.samples.size()) {
      parse_fail(line_no, 2, "sample index out of sequence");
    }
    Eigen::Index rows = 0, cols = 1;
    if (expect == Expect::sh) {
      rows = ds.dims.p_in;
      cols = ds.dims.history;
    } else if (expect == Expect::sf) {
      rows = ds.dims.p_out;
      cols = ds.dims.horizon;
    } else {
      rows = ds.dims.state_dim;
    }
    const auto count = static_cast<std::size_t>(rows * cols);
    if (fields.size() - 2 != count) {
      throw Error(ErrorCode::DimsHeaderMismatch,
                  "line " + std::to_string(line_no) + ": " + want + " record has " +
                      std::to_string(fields.size() - 2) + " values, dims require " + std::to_string(count));
    }
    Matrix values(rows, cols);
    for (std::size_t j = 0; j < count; ++j) {
      try {
        values.data()[j] = parse_decimal(fields[j + 2], "value");
      } catch (const Error&) {
        parse_fail(line_no, j + 3, "bad number '" + std::string(fields[j + 2]) + "'");
      }
    }
    if (expect == Expect::sh) {
      current.s_h = std::move(values);
      expect = Expect::sf;
    } else if (expect == Expect::sf) {
      current.s_f = std::move(values);
      expect = Expect::x0;
    } else {
      current.x0 = Eigen::Map<const Vector>(values.data(), rows);
      ds.samples.push_back(std::move(current));
      current = Sample{};
      expect = Expect::sh;
    }
  }
  if (!have_header) parse_fail(line_no, 1, "missing #dims header");
  if (expect != Expect::sh) parse_fail(line_no + 1, 1, "file ends inside a sample record group");
  ds.validate();
  return ds;
}

void save_dataset(const Dataset& dataset, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
  out << dataset_to_csv(dataset);
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingInput, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return dataset_from_csv(ss.str());
}

}  // namespace advcast
