#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "advcast/linalg.hpp"

namespace advcast {

/// One training tuple: history (p_in x H), future (p_out x F), initial state.
struct Sample {
  Matrix s_h;
  Matrix s_f;
  Vector x0;
};

struct DatasetDims {
  Eigen::Index p_in = 1;
  Eigen::Index p_out = 1;
  Eigen::Index history = 1;
  Eigen::Index horizon = 1;
  Eigen::Index state_dim = 1;
  bool operator==(const DatasetDims&) const = default;
};

enum class Split { train, test };
enum class Kind { orig, add, rand, adv, ood };

std::string to_string(Split s);
std::string to_string(Kind k);
Split split_from_string(const std::string& s);
Kind kind_from_string(const std::string& s);

struct Dataset {
  std::vector<Sample> samples;
  DatasetDims dims;
  Split split = Split::train;
  Kind kind = Kind::orig;
  std::uint64_t seed = 0;
  /// Free-form provenance (generator coefficients, config hash).
  std::map<std::string, std::string> meta;

  std::size_t size() const { return samples.size(); }
  /// Throws DimsHeaderMismatch if any sample disagrees with `dims` or holds
  /// a non-finite value.
  void validate() const;
};

// ---------------------------------------------------------------- ARIMA

/// s_{t+1} = mu + alpha s_t + beta w_{t-1} + w_t,  w_t ~ Normal(0, sigma),
/// with w_{-1} = 0 and s_0 = s0.
struct ArimaParams {
  double mu = 0.0;
  double alpha = 0.8;
  double beta = 0.0;
  double sigma = 0.01;
  double s0 = 1.0;
  int T = 50;
  int H = 25;
  int F = 25;
  double x0 = 1.0;
};

/// Ranges the coefficients are drawn from when a dataset is "initialized
/// randomly".
struct ArimaPrior {
  std::pair<double, double> mu{-0.1, 0.1};
  std::pair<double, double> alpha{0.5, 0.95};
  std::pair<double, double> beta{-0.5, 0.5};
};

/// Fills mu, alpha, beta of `base` from the prior using `seed`.
ArimaParams draw_arima_coefficients(const ArimaParams& base, const ArimaPrior& prior,
                                    std::uint64_t seed);

/// The raw series (length T) for one draw of the noise stream.
std::vector<double> arima_series(const ArimaParams& params, std::mt19937_64& rng);

Dataset arima_generate(const ArimaParams& params, std::size_t n, std::uint64_t seed);

/// Like arima_generate, but every series draws its own mu, alpha, beta from
/// the prior (the noise level and lengths come from `base`).
Dataset arima_generate_mixed(const ArimaParams& base, const ArimaPrior& prior, std::size_t n,
                             std::uint64_t seed);

// ---------------------------------------------------------- lane change

/// Two vehicles on parallel lanes swap lanes. Each state is
/// (p_x, p_y, v_x, v_y); history rows are ego (0..3) then other (4..7), the
/// future is the ego state over the next F steps.
struct LaneChangeParams {
  double road_length = 135.0;
  double dt = 0.25;
  int H = 20;
  int F = 20;
  std::pair<double, double> speed_range_train{15.0, 35.0};
  std::pair<double, double> speed_range_ood{35.0, 50.0};
  bool use_ood_range = false;
  double accel_std = 0.5;
  double lane_offset = 3.7;
  double max_gap = 15.0;
  double yield_decel = 1.5;
  std::pair<double, double> first_start_time{3.0, 6.0};
};

Dataset lane_change_generate(const LaneChangeParams& params, std::size_t n, std::uint64_t seed);

struct VelocityChannels {
  std::vector<Eigen::Index> history{2, 3, 6, 7};
  std::vector<Eigen::Index> future{2, 3};
};

/// A sample is out-of-distribution iff any velocity channel exceeds the
/// threshold in magnitude anywhere in its history or future.
std::pair<Dataset, Dataset> split_by_speed(const Dataset& dataset, double threshold = 35.0,
                                           const VelocityChannels& channels = {});

// ------------------------------------------------------------- schemes

enum class Scheme { original, data_added, random, robust };
std::string to_string(Scheme s);
Scheme scheme_from_string(const std::string& s);

using SampleGenerator = std::function<Dataset(std::size_t n, std::uint64_t seed)>;

/// original: copy of base. data_added: base plus |base| fresh samples from
/// the generator. random: base plus copies whose histories carry Normal(0,1)
/// noise per entry (labels untouched). `robust` is not a dataset scheme.
Dataset build_scheme(const Dataset& base, Scheme scheme, const SampleGenerator* generator,
                     std::uint64_t seed);

// ------------------------------------------------------- normalization

struct NormStats {
  Vector mean;  // per input channel
  Vector std;   // per input channel, floored at 1e-8
};

inline constexpr double kStdFloor = 1e-8;

/// Population mean/std per history channel over all samples and steps.
NormStats normalize_stats(const Dataset& dataset);

// ------------------------------------------------------------------ io

void save_dataset(const Dataset& dataset, const std::string& path);
Dataset load_dataset(const std::string& path);
std::string dataset_to_csv(const Dataset& dataset);
Dataset dataset_from_csv(const std::string& text);

}  // namespace advcast
