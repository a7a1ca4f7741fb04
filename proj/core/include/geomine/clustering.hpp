#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "geomine/corpus.hpp"

namespace geomine {

/// Borrowed set of unit-norm centroids, row-major.
struct CentroidView {
  std::size_t k = 0;
  std::size_t dim = 0;
  std::span<const float> data;

  std::span<const float> row(std::size_t j) const { return data.subspan(j * dim, dim); }
};

/// Result of spherical k-means over a set of corpus rows.
struct ClusterModel {
  std::size_t k = 0;
  std::size_t dim = 0;
  std::vector<float> centroids;             // k x dim, unit-norm
  std::vector<std::uint32_t> assignments;   // one per fitted row, in [0, k)
  std::vector<std::vector<SampleId>> members;
  std::vector<std::size_t> sizes;

  // Fit diagnostics.
  std::vector<double> objective_trace;  // mean cosine distance after each assignment step
  std::size_t empty_repairs = 0;        // centroids reseeded during iterations
  std::size_t empty_dropped = 0;        // clusters removed after the final iteration
  bool minibatch = false;

  CentroidView centroid_view() const { return {k, dim, centroids}; }
  std::span<const float> centroid(std::size_t j) const { return {centroids.data() + j * dim, dim}; }
};

struct FitOptions {
  std::size_t k = 1;
  std::size_t iters = 10;
  std::uint64_t seed = 0;
  /// Above this many rows, fit switches to mini-batch updates.
  std::size_t minibatch_threshold = 1'000'000;
  std::size_t batch_size = 16384;
};

/// Spherical k-means over all rows of the corpus.
ClusterModel fit(const Corpus& corpus, std::size_t k, std::size_t iters, std::uint64_t seed);
/// Spherical k-means over the given rows; assignments follow `rows` order.
ClusterModel fit(const Corpus& corpus, std::span<const std::size_t> rows, const FitOptions& options);

/// Nearest centroid by cosine for every corpus row; ties go to the lowest index.
std::vector<std::uint32_t> assign(const CentroidView& centroids, const Corpus& corpus);
std::vector<std::uint32_t> assign(const ClusterModel& model, const Corpus& corpus);

/// Rebuilds a model over the full corpus from fixed centroids (used after
/// fitting on a probe subset). Empty clusters are dropped.
ClusterModel assign_model(const ClusterModel& model, const Corpus& corpus);

inline constexpr std::size_t kSubclusterIters = 5;
std::size_t subcluster_count(std::size_t cluster_size);

/// Child model over the members of one cluster with floor(sqrt(size))
/// sub-clusters and five iterations.
ClusterModel subcluster(const ClusterModel& model, std::size_t cluster_id, const Corpus& corpus,
                        std::uint64_t seed);

/// Mean cosine distance of members to their centroid.
double mean_cosine_distance(const ClusterModel& model, const Corpus& corpus);

// Binary layout: u64 k, u64 dim, k*dim f32 centroids, u64 n, n u32 assignments
// (all little-endian). Members are resolved against the corpus on load.
void save_model(const std::filesystem::path& path, const ClusterModel& model);
ClusterModel load_model(const std::filesystem::path& path, const Corpus& corpus);
ClusterModel load_model(const std::filesystem::path& path, const Corpus& corpus,
                        std::span<const std::size_t> rows);

}  // namespace geomine
