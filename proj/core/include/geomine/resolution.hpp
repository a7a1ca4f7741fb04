#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "geomine/clustering.hpp"
#include "geomine/corpus.hpp"

namespace geomine {

/// Row-stochastic map from clusters at one resolution to clusters at another.
struct SoftBridge {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> pi;  // rows x cols
  double t_scale = 20.0;

  double operator()(std::size_t i, std::size_t j) const { return pi[i * cols + j]; }
};

/// pi(j|i) = softmax_j(t_scale * cos(from_i, to_j)).
SoftBridge soft_bridge(const CentroidView& from, const CentroidView& to, double t_scale);

/// s_hat_i = sum_j pi(j|i) s_j.
std::vector<double> reconstruct(const SoftBridge& bridge, std::span<const double> scores);

/// Kendall tau-a: (concordant - discordant) / (K(K-1)/2); tied pairs count for neither.
double kendall_tau(std::span<const double> a, std::span<const double> b);

/// Fisher-style shrinkage toward zero:
/// tanh(atanh(tau) * tanh(lambda * sqrt(n_valid - 3))). Returns 0 when n_valid < 4.
double shrink(double tau, std::size_t n_valid, double lambda_shrink);

struct SelectKOptions {
  std::vector<std::size_t> k_values;
  std::vector<std::size_t> strides{2, 4, 6};
  std::vector<double> hop_weights{0.5, 0.3, 0.2};
  double t_scale = 20.0;
  double lambda_shrink = 1.0;
  std::size_t min_members = 3;
  std::size_t iters = 10;
  std::uint64_t seed = 0;
};

struct StabilityPoint {
  std::size_t k = 0;
  std::size_t k_effective = 0;  // clusters left after empty-cluster repair
  std::vector<double> j_hops;   // raw tau per stride
  double j_raw = 0.0;
  double j_final = 0.0;
  std::size_t n_valid = 0;
  bool degenerate_weights = false;
};

struct StabilityProfile {
  std::vector<StabilityPoint> per_k;  // ascending K
  std::size_t k_star = 0;
  std::vector<std::size_t> hop_strides;
  std::vector<double> hop_weights;
  double lambda_shrink = 1.0;
  double t_scale = 20.0;

  const StabilityPoint& at(std::size_t k) const;
};

/// Geometric score vector of a fitted model: raw features, stabilization,
/// spectral weights (uniform fallback below five clusters) and the score.
struct ResolutionScores {
  std::vector<double> scores;
  bool degenerate_weights = false;
};
ResolutionScores geometric_scores(const ClusterModel& model, const Corpus& corpus);

/// Sweeps candidate resolutions and returns the rank-stability profile.
StabilityProfile select_k(const Corpus& corpus, const SelectKOptions& options);

/// argmax of J_final, smallest K on ties.
std::size_t argmax_k(std::span<const StabilityPoint> points);

/// Inclusive arithmetic range.
std::vector<std::size_t> k_range(std::size_t k_min, std::size_t k_max, std::size_t k_step);

// Profile table: K, tau_h<stride>..., J_raw, J_final, n_valid.
void write_profile_table(const std::filesystem::path& path, const StabilityProfile& profile);
// Plot data: K, J_final, marginal delta J against the previous K (0 for the first row).
void write_stability_plot(const std::filesystem::path& path, const StabilityProfile& profile);

void to_json(nlohmann::json& j, const StabilityProfile& p);
void from_json(const nlohmann::json& j, StabilityProfile& p);

}  // namespace geomine
