#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "geomine/budget.hpp"
#include "geomine/common.hpp"
#include "geomine/miner.hpp"
#include "geomine/resolution.hpp"
#include "geomine/scorer.hpp"
#include "geomine/transport.hpp"

namespace geomine {

enum class AblationMode { Full, WoStage1, WoStage2, ClusterRandom, WoHierarchy };
AblationMode parse_ablation(std::string_view name);
std::string_view to_string(AblationMode mode);

struct PipelineConfig {
  // paths
  std::filesystem::path store;
  std::filesystem::path output;
  std::filesystem::path offline_ratings;
  std::filesystem::path texts;
  std::string scorer_url;
  int scorer_timeout = 60;

  std::uint64_t seed = 0;

  // clustering
  std::size_t iters = 10;
  double probe_fraction = 0.1;

  // select_k; k_fixed > 0 skips the sweep
  std::size_t k_min = 2;
  std::size_t k_max = 30;
  std::size_t k_step = 2;
  std::size_t k_fixed = 0;
  std::vector<std::size_t> strides{2, 4, 6};
  std::vector<double> hop_weights{0.5, 0.3, 0.2};
  double t_scale = 20.0;
  double lambda_shrink = 1.0;
  std::size_t min_members = 3;

  double budget_temperature = 1.0;

  MinerOptions miner;
  FetchOptions fetch;

  // sample; token_budget = 0 means token_fraction of the corpus
  std::uint64_t token_budget = 0;
  double token_fraction = 0.2;

  AblationMode ablation = AblationMode::Full;
  std::size_t k_total = 0;  // flat modes; 0 derives it from the macro clustering

  bool evaluate = true;
  std::size_t eval_points = 300;
};

/// Parses the nested JSON document. Unknown keys and invalid values are
/// errors; relative paths resolve against `base_dir`.
PipelineConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
PipelineConfig load_config(const std::filesystem::path& path);
nlohmann::json config_to_json(const PipelineConfig& c);
void validate(const PipelineConfig& c);

/// Error raised inside a named pipeline stage.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& message);
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct StageRecord {
  std::string name;
  std::string key;
  bool reused = false;
};

struct RunResult {
  SelectionPlan plan;
  std::optional<StabilityProfile> profile;
  std::size_t k_star = 0;
  std::size_t k_total = 0;
  BudgetVector budget;
  std::optional<nlohmann::json> transport_report;
  std::vector<StageRecord> stages;
};

/// Runs every stage in order. Stage outputs live in
/// <output>/stages/<name>-<key>/ and are reused when their key matches; the
/// final tables are copied into <output>. `source` overrides the rating
/// source described by the config.
RunResult run(const PipelineConfig& config, RatingSource* source = nullptr);

/// Content fingerprint of a store directory.
std::string store_fingerprint(const std::filesystem::path& store_dir);

/// Rating source described by the config (offline file or HTTP scorer);
/// nullptr when neither is configured.
std::unique_ptr<RatingSource> make_rating_source(const PipelineConfig& config);

/// Exclusive ownership of an output directory for the lifetime of the object.
class DirectoryLock {
 public:
  explicit DirectoryLock(const std::filesystem::path& dir);
  ~DirectoryLock();
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

 private:
  std::filesystem::path path_;
};

}  // namespace geomine
