#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "geomine/clustering.hpp"
#include "geomine/corpus.hpp"

namespace geomine {

/// Four geometric proxies of one cluster. In a raw row `size` and `len` are
/// plain counts/means; in stabilized rows they are logarithms.
struct FeatureRow {
  double coh = 0.0;   // cohesion: inverse mean cosine distance to the centroid
  double size = 0.0;  // member count
  double len = 0.0;   // mean token length
  double ent = 0.0;   // Shannon entropy (nats) of member languages
};

inline constexpr double kCohesionFloor = 1e-6;
inline constexpr double kCohesionCap = 1e6;

struct ClusterFeatures {
  std::vector<FeatureRow> raw;
  std::vector<FeatureRow> stabilized;
  std::vector<FeatureRow> standardized;
  FeatureRow feature_means;  // moments of the stabilized columns
  FeatureRow feature_stds;   // sample standard deviation (K - 1 denominator)

  std::size_t clusters() const { return raw.size(); }
};

using Matrix4 = std::array<std::array<double, 4>, 4>;
using Vector4 = std::array<double, 4>;

/// Consensus weights. Covariance and eigenvector entries are ordered like
/// the polarity-aligned matrix: [cohesion, entropy, length, size].
struct ConsensusWeights {
  double coh = 0.25;
  double ent = 0.25;
  double len = 0.25;
  double size = 0.25;
  Matrix4 covariance{};
  Vector4 principal{};
  double eigenvalue = 0.0;
  double second_eigenvalue = 0.0;
  std::size_t iterations = 0;
  bool degenerate = false;  // uniform fallback was used
};

struct SpectralOptions {
  double tolerance = 1e-10;
  std::size_t max_iterations = 10000;
  double tie_ratio = 1.05;
  std::size_t min_clusters = 5;
};

struct PowerIterationResult {
  Vector4 vector{};
  double value = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
};

/// Dominant eigenpair of a symmetric 4x4 matrix. Stops when
/// ||A v - lambda v|| <= tolerance * |lambda|.
PowerIterationResult power_iteration(const Matrix4& a, Vector4 start, double tolerance, std::size_t max_iterations);

/// Geometric proxies of one member set against a centroid.
FeatureRow raw_features(std::span<const SampleId> members, std::span<const float> centroid, const Corpus& corpus);
double cohesion_of(std::span<const SampleId> members, std::span<const float> centroid, const Corpus& corpus);
double language_entropy(std::span<const SampleId> members, const Corpus& corpus);

std::vector<FeatureRow> extract_raw(const ClusterModel& model, const Corpus& corpus);

/// Log-stabilizes size and length, then Z-scores every column.
/// Zero-variance columns become all zeros.
ClusterFeatures stabilize_standardize(std::vector<FeatureRow> raw);

ConsensusWeights spectral_weights(const ClusterFeatures& features, const SpectralOptions& options = {});
ConsensusWeights consensus_from_covariance(const Matrix4& covariance, const SpectralOptions& options = {});
Matrix4 aligned_covariance(const ClusterFeatures& features);
ConsensusWeights uniform_weights();

/// s_k = w_coh*coh - (w_len*len + w_ent*ent + w_size*size) on the standardized rows.
std::vector<double> score(const ClusterFeatures& features, const ConsensusWeights& weights);
double score_row(const FeatureRow& standardized, const ConsensusWeights& weights);

void write_feature_table(const std::filesystem::path& path, const ClusterFeatures& features,
                         std::span<const double> scores);
struct FeatureTable {
  std::vector<FeatureRow> raw;
  std::vector<FeatureRow> standardized;
  std::vector<double> scores;
};
FeatureTable read_feature_table(const std::filesystem::path& path);
std::vector<double> read_feature_scores(const std::filesystem::path& path);

void to_json(nlohmann::json& j, const ConsensusWeights& w);
void from_json(const nlohmann::json& j, ConsensusWeights& w);

}  // namespace geomine
