#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "geomine/budget.hpp"
#include "geomine/clustering.hpp"
#include "geomine/corpus.hpp"
#include "geomine/features.hpp"
#include "geomine/scorer.hpp"

namespace geomine {

struct SubClusterRecord {
  std::size_t parent_id = 0;
  std::size_t sub_id = 0;
  std::vector<SampleId> member_ids;
  std::vector<float> centroid;
  FeatureRow features;  // raw: cohesion, size, mean length, language entropy
  std::vector<SampleId> probe_ids;

  double semantic_score = 0.0;  // P in [1, 5]
  bool scored = false;          // false: P was imputed from the parent median
  double struct_penalty = 0.0;
  double cohesion_gate = 0.5;
  double weight_unnormalized = 0.0;
  double weight = 0.0;

  std::size_t selected_count = 0;
  std::uint64_t selected_tokens = 0;
};

/// Reference moments for the structural penalty and cohesion gate.
struct ParentStats {
  double mu_len = 0.0;
  double sigma_len = 0.0;
  double mu_ent = 0.0;
  double sigma_ent = 0.0;
  double coh = 0.0;
};

enum class Aggregation { Mean, Min, Weighted };
Aggregation parse_aggregation(std::string_view name);
std::string_view to_string(Aggregation a);

/// Which statistics the penalty and gate compare a sub-cluster against.
enum class ReferenceMode {
  Parent,  // moments of the sibling sub-clusters and the parent's cohesion
  Global,  // moments over every sub-cluster and the whole-corpus cohesion
};

struct MinerOptions {
  double lambda = 0.5;
  double epsilon = 0.01;
  std::size_t probe_set_size = 8;
  Aggregation aggregation = Aggregation::Mean;
  std::array<double, 4> dimension_weights{0.25, 0.25, 0.25, 0.25};
  double penalty_cap = 16.0;  // per-feature contribution ceiling
};

inline constexpr double kDefaultPenaltyCap = 16.0;

/// Sum over {len, ent} of the squared positive part of (z - mu) / sigma.
/// A feature with sigma = 0 contributes `cap` when the deviation is positive;
/// every contribution is capped at `cap`.
double structural_penalty(const FeatureRow& sub_features, const ParentStats& parent, double cap = kDefaultPenaltyCap);

/// Logistic of (sub cohesion - parent cohesion).
double cohesion_gate(double sub_coh, double parent_coh);

/// The min(m, |S|) members most similar to the sub-cluster centroid
/// (ties broken by lower id).
std::vector<SampleId> probe_set(const SubClusterRecord& sub, const Corpus& corpus, std::size_t m);

/// Aggregated rating of a probe set; nullopt when no ratings are available.
std::optional<double> semantic_score(std::span<const ProbeRating> ratings, Aggregation aggregation = Aggregation::Mean,
                                     const std::array<double, 4>& dimension_weights = {0.25, 0.25, 0.25, 0.25});

/// Mean and population standard deviation of the sub-cluster length and
/// entropy means, each sub-cluster weighted by its member count, with `coh`
/// as the gate reference.
ParentStats parent_stats(std::span<const SubClusterRecord* const> subs, double reference_coh);

/// W = r_parent * P * exp(-lambda L) * (beta + eps), normalized over all records.
void hierarchical_weight(const BudgetVector& budget, std::vector<SubClusterRecord>& records, double lambda,
                         double epsilon);

/// Sub-cluster every macro cluster (floor(sqrt(size)) children, five
/// iterations) and compute each child's raw features.
std::vector<SubClusterRecord> subcluster_all(const ClusterModel& macro, const Corpus& corpus, std::uint64_t seed);

/// One record per cluster of `model`, all under `parent_id`.
std::vector<SubClusterRecord> flat_records(const ClusterModel& model, const Corpus& corpus, std::size_t parent_id = 0);

/// Probe sets, ratings and semantic scores. Unscored sub-clusters take the
/// median of their scored siblings (then the global median). Returns the
/// number of imputed records.
std::size_t attach_semantic_scores(std::vector<SubClusterRecord>& records, const Corpus& corpus, RatingSource& source,
                                   const MinerOptions& options);

/// Structural penalty and cohesion gate for every record.
/// `parent_coh[k]` is the cohesion of macro cluster k (Parent mode);
/// `global_coh` is used in Global mode.
void attach_geometry(std::vector<SubClusterRecord>& records, std::span<const double> parent_coh, double global_coh,
                     ReferenceMode mode, const MinerOptions& options);

/// Cohesion of the entire corpus around its normalized mean.
double corpus_cohesion(const Corpus& corpus);

struct SelectionPlan {
  std::vector<SubClusterRecord> records;
  std::vector<SampleId> sampled_ids;  // ascending
  std::uint64_t token_budget = 0;
  std::uint64_t realized_tokens = 0;
};

/// Token quotas by largest remainder, uniform draws without replacement
/// within each record, one proportional redistribution round for shortfalls.
SelectionPlan realize_sample(std::span<const SubClusterRecord> records, const Corpus& corpus,
                             std::uint64_t token_budget, std::uint64_t seed);

/// Quota allocation used by realize_sample; sums to `total` exactly.
std::vector<std::uint64_t> largest_remainder(std::span<const double> weights, std::uint64_t total);

// Plan table: parent_id, sub_id, size, P, L_struct, beta, W.
void write_plan_table(const std::filesystem::path& path, std::span<const SubClusterRecord> records);
void write_id_list(const std::filesystem::path& path, std::span<const SampleId> ids);
std::vector<SampleId> read_id_list(const std::filesystem::path& path);

void to_json(nlohmann::json& j, const SubClusterRecord& r);
void from_json(const nlohmann::json& j, SubClusterRecord& r);

}  // namespace geomine
