#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "splinemix/criteria.hpp"
#include "splinemix/model.hpp"

namespace splinemix {

/// Deterministic generator for simulation substreams.
///
/// Algorithm: std::mt19937_64 seeded with a SplitMix64 hash of
/// (seed, stream_a, stream_b); uniforms use the top 53 bits; normals use the
/// Marsaglia polar method. Output is fully determined by the three keys.
class Rng {
 public:
  Rng(std::uint64_t seed, std::uint64_t stream_a, std::uint64_t stream_b);

  double uniform();  ///< in (0, 1)
  double normal();   ///< standard normal

  static std::uint64_t splitmix64(std::uint64_t x) noexcept;

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// How the noise variance is read from the scale c and range R: either
/// Var = c R^2 (variance) or sd = c R (sd).
enum class NoiseReading { variance, sd };
[[nodiscard]] std::string_view to_string(NoiseReading r) noexcept;

struct SimulationDesign {
  int n = 30;
  int points_per_subject = 50;
  int mf_true = 5;
  int mr_true = 8;
  Eigen::VectorXd beta_true;
  Eigen::MatrixXd gamma_cov_true;
  double noise_scale = 0.1;
  NoiseReading noise_reading = NoiseReading::variance;
  double domain_min = 0.01;
  double domain_max = 1.0;
  std::uint64_t seed = 20240101;
  int replications = 100;
  std::vector<int> mf_grid;
  std::vector<int> mr_grid;

  /// The reference design: beta = (-8, -2, 6, 5, 7), Sigma_r = (0.5^|j-k|)
  /// of size 8, 50 points on [0.01, 1], grid 4..10 for both counts.
  [[nodiscard]] static SimulationDesign reference(int n);

  void validate() const;
};

struct TrueCurves {
  std::vector<Eigen::VectorXd> values;  ///< u_a at each subject's times
};

struct GeneratedDataset {
  LongitudinalDataset data;
  TrueCurves truth;
  std::vector<Eigen::VectorXd> effects;  ///< the drawn gamma_a
};

/// Shared grid t_i = lo + (hi - lo)(i - 1)/(P - 1), i = 1..P, endpoints exact.
[[nodiscard]] std::vector<double> observation_grid(double lo, double hi, int points);

/// Subject a of replication r draws from substream (seed, r, a): first
/// gamma_a ~ N(0, Sigma_r) via its Cholesky factor, then the noise.
[[nodiscard]] GeneratedDataset generate_dataset(const SimulationDesign& design,
                                                int replication_index);

/// (1 / sum N_a) sum_a sum_i (x_hat_ai - u_ai)^2.
[[nodiscard]] double amse(std::span<const Eigen::VectorXd> fitted, const TrueCurves& truth);

/// A replication is ok when at least one criterion chose a model. A
/// criterion with no eligible candidate (for BIC_I, every candidate's
/// information matrix indefinite) leaves selected[c] false and is noted in
/// error; its chosen_* and amse entries are then meaningless.
struct ReplicationRecord {
  int replication = 0;
  bool ok = false;
  std::string error;
  std::array<bool, 3> selected{};
  std::array<int, 3> chosen_mf{};
  std::array<int, 3> chosen_mr{};
  std::array<double, 3> amse{};
  std::size_t failed_candidates = 0;
  std::size_t unconverged_candidates = 0;
};

struct StudyResult {
  int n = 0;
  int replications = 0;
  int failures = 0;
  /// Per criterion, the number of ok replications in which it chose a model.
  std::array<int, 3> selected{};
  /// Mean AMSE over the replications counted in selected, by Criterion.
  std::array<double, 3> mean_amse{};
  /// Selection counts per criterion, keyed by candidate value; counts in a
  /// row sum to selected[criterion].
  std::array<std::map<int, int>, 3> mf_freq;
  std::array<std::map<int, int>, 3> mr_freq;
  std::vector<ReplicationRecord> records;
};

struct StudyOptions {
  EmOptions em;
  int threads = 0;  ///< parallel replications; 0 = default_thread_count()
};

/// Replication r: generate, select over the grid, and score each
/// criterion's chosen fit against the noiseless curves.
[[nodiscard]] ReplicationRecord run_replication(const SimulationDesign& design, int replication,
                                                const EmOptions& em);

/// Runs every replication and aggregates. Throws Error(study_failed) when
/// more than 20% of replications fail.
[[nodiscard]] StudyResult run_study(const SimulationDesign& design, const StudyOptions& opts = {});

}  // namespace splinemix
