#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "geomine/clustering.hpp"

namespace geomine {

/// Finite point cloud with probability masses.
class EmpiricalMeasure {
 public:
  EmpiricalMeasure() = default;
  /// Throws unless masses are nonnegative and sum to 1 within 1e-9.
  EmpiricalMeasure(std::size_t dim, std::vector<double> points, std::vector<double> masses);
  /// Uniform masses.
  static EmpiricalMeasure uniform(std::size_t dim, std::vector<double> points);
  /// Selected corpus rows, uniform or proportional to sample weights.
  static EmpiricalMeasure from_corpus(const Corpus& corpus, std::span<const std::size_t> rows,
                                      bool use_sample_weights = false);

  std::size_t size() const { return masses_.size(); }
  std::size_t dim() const { return dim_; }
  std::span<const double> point(std::size_t i) const { return {points_.data() + i * dim_, dim_}; }
  std::span<const double> points() const { return points_; }
  double mass(std::size_t i) const { return masses_[i]; }
  std::span<const double> masses() const { return masses_; }

 private:
  std::size_t dim_ = 0;
  std::vector<double> points_;
  std::vector<double> masses_;
};

inline constexpr std::size_t kMaxTransportPoints = 500;

double squared_distance(std::span<const double> a, std::span<const double> b);

/// Exact squared 2-Wasserstein distance by min-cost flow (successive shortest
/// paths with potentials). At most 500 points per side.
double w2_exact(const EmpiricalMeasure& a, const EmpiricalMeasure& b);

/// Centers for Voronoi assignment in Euclidean space.
struct Codebook {
  std::size_t k = 0;
  std::size_t dim = 0;
  std::vector<double> centers;

  static Codebook from_model(const ClusterModel& model);
  std::span<const double> center(std::size_t j) const { return {centers.data() + j * dim, dim}; }
  /// Nearest center by squared distance, lowest index on ties.
  std::size_t nearest(std::span<const double> x) const;
  Codebook subset(std::span<const std::size_t> ids) const;
};

/// Ids (ascending) of the centers that receive at least one point of `measure`.
std::vector<std::size_t> occupied_clusters(const Codebook& codebook, const EmpiricalMeasure& measure);

struct ClusterMoments {
  std::vector<double> alpha;     // mass per cluster
  std::vector<double> sigma_sq;  // mass-weighted mean squared distance to the center
  std::vector<std::size_t> assignment;
};

ClusterMoments cluster_moments(const Codebook& codebook, const EmpiricalMeasure& measure);
ClusterMoments cluster_moments(const ClusterModel& model, const EmpiricalMeasure& measure);

struct ClusterTerms {
  double alpha = 0.0;
  double sigma_sq = 0.0;
  double selected_sq = 0.0;  // mean squared distance of the selected points to the center
  double delta_gain = 0.0;   // sigma_sq - selected_sq
  std::size_t selected_points = 0;
};

struct DecompositionReport {
  double e_s = 0.0;
  double t1 = 0.0;
  double t2 = 0.0;
  double bound = 0.0;  // 2 t1 + 2 t2
  std::vector<ClusterTerms> per_cluster;

  double slack() const { return bound - e_s; }
};

/// The selected points are re-massed cluster by cluster so that cluster k
/// carries alpha_k, split in proportion to the given selected masses. Throws
/// when a cluster with mass has no selected point, and when the computed
/// transport cost exceeds 2 t1 + 2 t2 by more than 1e-9.
DecompositionReport decomposition(const EmpiricalMeasure& measure, const Codebook& codebook,
                                  const EmpiricalMeasure& selected);
DecompositionReport decomposition(const EmpiricalMeasure& measure, const ClusterModel& model,
                                  const EmpiricalMeasure& selected);

void to_json(nlohmann::json& j, const DecompositionReport& r);

struct ZadorPoint {
  std::size_t k = 0;
  double t1 = 0.0;
};

/// Euclidean k-means on n points uniform in [0, 1]^dim for every K; t1 is the
/// mean squared distance to the nearest center. Requires K <= n / 10.
std::vector<ZadorPoint> zador_trend(std::size_t dim, std::span<const std::size_t> k_list, std::size_t n,
                                    std::uint64_t seed);

/// Least-squares slope of log t1 against log K.
double log_log_slope(std::span<const ZadorPoint> points);

/// Best-of-restarts Lloyd iterations with k-means++ seeding.
Codebook euclidean_kmeans(std::size_t dim, std::span<const double> points, std::size_t k, std::uint64_t seed,
                          std::size_t restarts = 3, std::size_t max_iters = 200);

}  // namespace geomine
