#include "geomine/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <memory>
#include <numeric>
#include <set>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "geomine/clustering.hpp"
#include "geomine/common.hpp"
#include "geomine/corpus.hpp"
#include "geomine/features.hpp"

namespace geomine {

namespace fs = std::filesystem;
using nlohmann::json;

AblationMode parse_ablation(std::string_view name) {
  if (name == "full") return AblationMode::Full;
  if (name == "wo_stage1") return AblationMode::WoStage1;
  if (name == "wo_stage2") return AblationMode::WoStage2;
  if (name == "cluster_random") return AblationMode::ClusterRandom;
  if (name == "wo_hierarchy") return AblationMode::WoHierarchy;
  throw Error(fmt::format("unknown ablation mode '{}' (expected full, wo_stage1, wo_stage2, cluster_random or wo_hierarchy)",
                          name));
}

std::string_view to_string(AblationMode mode) {
  switch (mode) {
    case AblationMode::Full: return "full";
    case AblationMode::WoStage1: return "wo_stage1";
    case AblationMode::WoStage2: return "wo_stage2";
    case AblationMode::ClusterRandom: return "cluster_random";
    case AblationMode::WoHierarchy: return "wo_hierarchy";
  }
  return "full";
}

StageError::StageError(std::string stage, const std::string& message)
    : Error(fmt::format("[stage {}] {}", stage, message)), stage_(std::move(stage)) {}

namespace {

// Reads `section[key]` into `out` and removes it from the copy so leftovers
// can be reported as unknown.
template <typename T>
void take(json& section, const char* key, T& out, std::string_view where) {
  auto it = section.find(key);
  if (it == section.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception& e) {
    throw Error(fmt::format("config: {}.{}: {}", where, key, e.what()));
  }
  section.erase(it);
}

json take_section(json& root, const char* name) {
  auto it = root.find(name);
  if (it == root.end()) return json::object();
  if (!it->is_object()) throw Error(fmt::format("config: section '{}' must be an object", name));
  json s = *it;
  root.erase(it);
  return s;
}

void reject_leftovers(const json& section, std::string_view where) {
  if (section.empty()) return;
  std::vector<std::string> keys;
  for (const auto& [k, _] : section.items()) keys.push_back(k);
  throw Error(fmt::format("config: unknown key(s) in {}: {}", where, fmt::join(keys, ", ")));
}

fs::path resolve(const std::string& p, const fs::path& base) {
  if (p.empty()) return {};
  fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

}  // namespace

PipelineConfig config_from_json(const json& j, const fs::path& base_dir) {
  if (!j.is_object()) throw Error("config: top level must be an object");
  PipelineConfig c;
  json root = j;

  {
    auto s = take_section(root, "paths");
    std::string store, output, ratings, texts;
    take(s, "store", store, "paths");
    take(s, "output", output, "paths");
    take(s, "offline_ratings", ratings, "paths");
    take(s, "texts", texts, "paths");
    reject_leftovers(s, "paths");
    c.store = resolve(store, base_dir);
    c.output = resolve(output, base_dir);
    c.offline_ratings = resolve(ratings, base_dir);
    c.texts = resolve(texts, base_dir);
  }
  {
    auto s = take_section(root, "scorer");
    take(s, "url", c.scorer_url, "scorer");
    take(s, "timeout", c.scorer_timeout, "scorer");
    take(s, "parallelism", c.fetch.parallelism, "scorer");
    take(s, "max_retries", c.fetch.max_retries, "scorer");
    reject_leftovers(s, "scorer");
  }
  take(root, "seed", c.seed, "config");
  {
    auto s = take_section(root, "clustering");
    take(s, "iters", c.iters, "clustering");
    take(s, "probe_fraction", c.probe_fraction, "clustering");
    reject_leftovers(s, "clustering");
  }
  {
    auto s = take_section(root, "select_k");
    take(s, "k_min", c.k_min, "select_k");
    take(s, "k_max", c.k_max, "select_k");
    take(s, "k_step", c.k_step, "select_k");
    take(s, "k", c.k_fixed, "select_k");
    take(s, "strides", c.strides, "select_k");
    take(s, "hop_weights", c.hop_weights, "select_k");
    take(s, "t_scale", c.t_scale, "select_k");
    take(s, "lambda_shrink", c.lambda_shrink, "select_k");
    take(s, "min_members", c.min_members, "select_k");
    reject_leftovers(s, "select_k");
  }
  {
    auto s = take_section(root, "budget");
    take(s, "temperature", c.budget_temperature, "budget");
    reject_leftovers(s, "budget");
  }
  {
    auto s = take_section(root, "miner");
    std::string agg(to_string(c.miner.aggregation));
    take(s, "lambda", c.miner.lambda, "miner");
    take(s, "epsilon", c.miner.epsilon, "miner");
    take(s, "probe_set_size", c.miner.probe_set_size, "miner");
    take(s, "aggregation", agg, "miner");
    take(s, "dimension_weights", c.miner.dimension_weights, "miner");
    take(s, "penalty_cap", c.miner.penalty_cap, "miner");
    reject_leftovers(s, "miner");
    c.miner.aggregation = parse_aggregation(agg);
  }
  {
    auto s = take_section(root, "sample");
    take(s, "token_budget", c.token_budget, "sample");
    take(s, "token_fraction", c.token_fraction, "sample");
    reject_leftovers(s, "sample");
  }
  {
    auto s = take_section(root, "ablation");
    std::string mode(to_string(c.ablation));
    take(s, "mode", mode, "ablation");
    take(s, "k_total", c.k_total, "ablation");
    reject_leftovers(s, "ablation");
    c.ablation = parse_ablation(mode);
  }
  {
    auto s = take_section(root, "evaluate");
    take(s, "enabled", c.evaluate, "evaluate");
    take(s, "max_points", c.eval_points, "evaluate");
    reject_leftovers(s, "evaluate");
  }
  reject_leftovers(root, "config");
  validate(c);
  return c;
}

PipelineConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(fmt::format("cannot open config {}", path.string()));
  const auto j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw Error(fmt::format("{}: invalid JSON", path.string()));
  return config_from_json(j, path.parent_path());
}

json config_to_json(const PipelineConfig& c) {
  return json{
      {"paths",
       {{"store", c.store.string()},
        {"output", c.output.string()},
        {"offline_ratings", c.offline_ratings.string()},
        {"texts", c.texts.string()}}},
      {"scorer",
       {{"url", c.scorer_url},
        {"timeout", c.scorer_timeout},
        {"parallelism", c.fetch.parallelism},
        {"max_retries", c.fetch.max_retries}}},
      {"seed", c.seed},
      {"clustering", {{"iters", c.iters}, {"probe_fraction", c.probe_fraction}}},
      {"select_k",
       {{"k_min", c.k_min},
        {"k_max", c.k_max},
        {"k_step", c.k_step},
        {"k", c.k_fixed},
        {"strides", c.strides},
        {"hop_weights", c.hop_weights},
        {"t_scale", c.t_scale},
        {"lambda_shrink", c.lambda_shrink},
        {"min_members", c.min_members}}},
      {"budget", {{"temperature", c.budget_temperature}}},
      {"miner",
       {{"lambda", c.miner.lambda},
        {"epsilon", c.miner.epsilon},
        {"probe_set_size", c.miner.probe_set_size},
        {"aggregation", to_string(c.miner.aggregation)},
        {"dimension_weights", c.miner.dimension_weights},
        {"penalty_cap", c.miner.penalty_cap}}},
      {"sample", {{"token_budget", c.token_budget}, {"token_fraction", c.token_fraction}}},
      {"ablation", {{"mode", to_string(c.ablation)}, {"k_total", c.k_total}}},
      {"evaluate", {{"enabled", c.evaluate}, {"max_points", c.eval_points}}},
  };
}

void validate(const PipelineConfig& c) {
  auto fail = [](const std::string& m) { throw Error("config: " + m); };
  if (c.store.empty()) fail("paths.store is required");
  if (c.output.empty()) fail("paths.output is required");
  if (c.iters < 1) fail("clustering.iters must be at least 1");
  if (!(c.probe_fraction > 0.0 && c.probe_fraction <= 1.0)) fail("clustering.probe_fraction must be in (0, 1]");
  if (c.k_fixed == 0) {
    if (c.k_min < 2) fail("select_k.k_min must be at least 2");
    if (c.k_max < c.k_min) fail("select_k.k_max must be >= k_min");
    if (c.k_step < 1) fail("select_k.k_step must be at least 1");
  }
  if (c.strides.empty() || c.strides.size() != c.hop_weights.size()) {
    fail("select_k.strides and hop_weights must be non-empty and of equal length");
  }
  for (auto s : c.strides) {
    if (s < 1) fail("select_k.strides must be positive");
  }
  for (auto w : c.hop_weights) {
    if (!(w > 0.0)) fail("select_k.hop_weights must be positive");
  }
  if (!(c.t_scale >= 0.0)) fail("select_k.t_scale must be >= 0");
  if (!(c.lambda_shrink > 0.0)) fail("select_k.lambda_shrink must be > 0");
  if (!(c.budget_temperature > 0.0)) fail("budget.temperature must be > 0");
  if (!(c.miner.lambda >= 0.0)) fail("miner.lambda must be >= 0");
  if (!(c.miner.epsilon > 0.0)) fail("miner.epsilon must be > 0");
  if (c.miner.probe_set_size < 1) fail("miner.probe_set_size must be at least 1");
  if (!(c.miner.penalty_cap > 0.0)) fail("miner.penalty_cap must be > 0");
  double wsum = 0.0;
  for (double w : c.miner.dimension_weights) {
    if (!(w >= 0.0)) fail("miner.dimension_weights must be nonnegative");
    wsum += w;
  }
  if (!(wsum > 0.0)) fail("miner.dimension_weights must not all be zero");
  if (c.token_budget == 0 && !(c.token_fraction > 0.0 && c.token_fraction <= 1.0)) {
    fail("sample.token_fraction must be in (0, 1]");
  }
  if (c.scorer_timeout < 1) fail("scorer.timeout must be at least 1");
  if (c.fetch.parallelism < 1) fail("scorer.parallelism must be at least 1");
  if (c.eval_points < 2 || c.eval_points > kMaxTransportPoints) {
    fail(fmt::format("evaluate.max_points must be in [2, {}]", kMaxTransportPoints));
  }
}

std::string store_fingerprint(const fs::path& store_dir) {
  Fnv1a h;
  std::vector<char> buf(1 << 20);
  for (const char* name : {kStoreMetaFile, kStoreEmbeddingFile}) {
    std::ifstream in(store_dir / name, std::ios::binary);
    if (!in) throw Error(fmt::format("store {} has no {}", store_dir.string(), name));
    h.update(name);
    while (in) {
      in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
      h.update(buf.data(), static_cast<std::size_t>(in.gcount()));
    }
  }
  return h.hex();
}

namespace {

std::string file_fingerprint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(fmt::format("cannot open {}", path.string()));
  Fnv1a h;
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    h.update(buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  return h.hex();
}

class HttpRatingSource : public RatingSource {
 public:
  HttpRatingSource(const PipelineConfig& c)
      : scorer_(c.scorer_url, c.scorer_timeout),
        inner_(scorer_, c.texts.empty() ? std::map<SampleId, std::string>{} : load_texts(c.texts),
               fmt::format("http:{}:{}", c.scorer_url, c.texts.empty() ? "" : file_fingerprint(c.texts)), c.fetch) {}

  std::vector<std::optional<ProbeRating>> rate(std::span<const SampleId> ids) override { return inner_.rate(ids); }
  std::string fingerprint() const override { return inner_.fingerprint(); }

 private:
  HttpScorer scorer_;
  ScorerRatingSource inner_;
};

}  // namespace

std::unique_ptr<RatingSource> make_rating_source(const PipelineConfig& c) {
  if (!c.offline_ratings.empty()) {
    return std::make_unique<OfflineRatingSource>(OfflineRatings::load(c.offline_ratings),
                                                 "offline:" + file_fingerprint(c.offline_ratings));
  }
  if (!c.scorer_url.empty()) return std::make_unique<HttpRatingSource>(c);
  return nullptr;
}

DirectoryLock::DirectoryLock(const fs::path& dir) : path_(dir / ".lock") {
  fs::create_directories(dir);
  std::FILE* f = std::fopen(path_.c_str(), "wx");
  if (f == nullptr) {
    throw Error(fmt::format("output directory {} is locked by another run (delete {} if it is stale)", dir.string(),
                            path_.string()));
  }
  std::fclose(f);
}

DirectoryLock::~DirectoryLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

namespace {

constexpr const char* kCompleteMarker = "COMPLETE";

struct StageRunner {
  fs::path root;
  std::vector<StageRecord>* log;

  // Runs `produce(dir)` into a fresh directory unless a completed one with the
  // same key exists, then returns the directory for reloading.
  fs::path operator()(const std::string& name, const std::string& key,
                      const std::function<void(const fs::path&)>& produce) const {
    const fs::path dir = root / fmt::format("{}-{}", name, key);
    const bool reused = fs::exists(dir / kCompleteMarker);
    if (!reused) {
      const fs::path tmp = root / fmt::format("{}-{}.tmp", name, key);
      fs::remove_all(tmp);
      fs::remove_all(dir);
      fs::create_directories(tmp);
      try {
        produce(tmp);
      } catch (const StageError&) {
        throw;
      } catch (const std::exception& e) {
        throw StageError(name, e.what());
      }
      std::ofstream(tmp / kCompleteMarker) << key << '\n';
      fs::rename(tmp, dir);
    }
    log->push_back({name, key, reused});
    return dir;
  }
};

std::string chain_key(const std::string& parent, std::string_view stage, const json& params) {
  Fnv1a h;
  h.update(parent).update("/").update(stage).update("/").update(params.dump());
  return h.hex();
}

template <typename F>
auto in_stage(const std::string& name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

std::vector<std::size_t> rows_of(const Corpus& corpus, std::span<const SampleId> ids) {
  std::vector<std::size_t> rows;
  rows.reserve(ids.size());
  for (auto id : ids) rows.push_back(corpus.row_of(id));
  return rows;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(fmt::format("cannot write {}", path.string()));
  out << j.dump(2) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(fmt::format("cannot open {}", path.string()));
  const auto j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw Error(fmt::format("{}: invalid JSON", path.string()));
  return j;
}

void copy_out(const fs::path& from, const fs::path& to) {
  fs::copy_file(from, to, fs::copy_options::overwrite_existing);
}

std::vector<std::size_t> subsample_rows(std::vector<std::size_t> rows, std::size_t max_points, std::uint64_t seed) {
  if (rows.size() <= max_points) return rows;
  const auto pick = probe_indices(rows.size(), static_cast<double>(max_points) / static_cast<double>(rows.size()), seed);
  std::vector<std::size_t> out;
  out.reserve(pick.size());
  for (auto i : pick) out.push_back(rows[i]);
  return out;
}

}  // namespace

RunResult run(const PipelineConfig& config, RatingSource* source) {
  validate(config);
  DirectoryLock lock(config.output);
  RunResult result;
  const fs::path stage_root = config.output / "stages";
  fs::create_directories(stage_root);
  StageRunner stage{stage_root, &result.stages};
  const auto mode = config.ablation;
  const bool flat = mode == AblationMode::ClusterRandom || mode == AblationMode::WoHierarchy;
  const bool needs_ratings = mode == AblationMode::Full || mode == AblationMode::WoStage1 || mode == AblationMode::WoHierarchy;

  const Corpus corpus = in_stage("ingest", [&] { return load_store(config.store); });
  const std::string store_key = in_stage("ingest", [&] { return store_fingerprint(config.store); });

  // probe
  const auto probe_key = chain_key(store_key, "probe", {{"fraction", config.probe_fraction}, {"seed", config.seed}});
  const auto probe_dir = stage("probe", probe_key, [&](const fs::path& dir) {
    const auto rows = probe_indices(corpus.size(), config.probe_fraction, derive_seed(config.seed, "probe"));
    std::vector<SampleId> ids;
    ids.reserve(rows.size());
    for (auto r : rows) ids.push_back(corpus.meta(r).id);
    write_id_list(dir / "probe_ids.txt", ids);
  });
  const Corpus probe = in_stage("probe", [&] {
    auto rows = rows_of(corpus, read_id_list(probe_dir / "probe_ids.txt"));
    std::sort(rows.begin(), rows.end());
    return corpus.subset(rows);
  });

  // select_k
  const json select_params = {{"k_min", config.k_min},         {"k_max", config.k_max},
                              {"k_step", config.k_step},       {"k", config.k_fixed},
                              {"strides", config.strides},     {"hop_weights", config.hop_weights},
                              {"t_scale", config.t_scale},     {"lambda_shrink", config.lambda_shrink},
                              {"min_members", config.min_members}, {"iters", config.iters},
                              {"seed", config.seed}};
  const auto select_key = chain_key(probe_key, "select_k", select_params);
  if (config.k_fixed > 0) {
    result.k_star = config.k_fixed;
  } else {
    const auto dir = stage("select_k", select_key, [&](const fs::path& out) {
      SelectKOptions o;
      o.k_values = k_range(config.k_min, config.k_max, config.k_step);
      o.strides = config.strides;
      o.hop_weights = config.hop_weights;
      o.t_scale = config.t_scale;
      o.lambda_shrink = config.lambda_shrink;
      o.min_members = config.min_members;
      o.iters = config.iters;
      o.seed = config.seed;
      const auto profile = select_k(probe, o);
      write_json(out / "profile.json", profile);
      write_profile_table(out / "profile.csv", profile);
      write_stability_plot(out / "stability_plot.csv", profile);
    });
    result.profile = in_stage("select_k", [&] { return read_json(dir / "profile.json").get<StabilityProfile>(); });
    result.k_star = result.profile->k_star;
    copy_out(dir / "profile.csv", config.output / "profile.csv");
    copy_out(dir / "stability_plot.csv", config.output / "stability_plot.csv");
  }

  // cluster: fit on the probe subset, assign the full corpus
  const auto cluster_key = chain_key(select_key, "cluster", {{"k", result.k_star}});
  const auto cluster_dir = stage("cluster", cluster_key, [&](const fs::path& out) {
    const auto fitted = fit(probe, result.k_star, config.iters, derive_seed(config.seed, "cluster"));
    save_model(out / "model.bin", assign_model(fitted, corpus));
  });
  const ClusterModel macro = in_stage("cluster", [&] { return load_model(cluster_dir / "model.bin", corpus); });

  // features
  const auto features_key = chain_key(cluster_key, "features", json::object());
  const auto features_dir = stage("features", features_key, [&](const fs::path& out) {
    const auto feats = stabilize_standardize(extract_raw(macro, corpus));
    ConsensusWeights w;
    if (macro.k >= SpectralOptions{}.min_clusters) {
      w = spectral_weights(feats);
    } else {
      warn(fmt::format("only {} clusters; using uniform consensus weights", macro.k));
      w = uniform_weights();
      w.degenerate = true;
    }
    write_feature_table(out / "features.csv", feats, score(feats, w));
    write_json(out / "consensus.json", w);
  });
  const FeatureTable features = in_stage("features", [&] { return read_feature_table(features_dir / "features.csv"); });
  copy_out(features_dir / "features.csv", config.output / "features.csv");

  // budget
  const bool uniform_r = mode == AblationMode::WoStage1;
  const auto budget_key =
      chain_key(features_key, "budget", {{"temperature", config.budget_temperature}, {"uniform", uniform_r}});
  const auto budget_dir = stage("budget", budget_key, [&](const fs::path& out) {
    const auto b = uniform_r ? uniform_budget(features.scores.size()) : allocate(features.scores, config.budget_temperature);
    write_budget_table(out / "budget.csv", features.scores, b);
  });
  result.budget = in_stage("budget", [&] { return read_budget_table(budget_dir / "budget.csv"); });
  copy_out(budget_dir / "budget.csv", config.output / "budget.csv");

  // flat clustering for the non-hierarchical ablations
  std::optional<ClusterModel> flat_model;
  std::string upstream_key = budget_key;
  if (flat) {
    std::size_t k_total = config.k_total;
    if (k_total == 0) {
      std::size_t sum = 0;
      for (auto s : macro.sizes) sum += subcluster_count(s);
      k_total = std::max<std::size_t>(1, sum);
    }
    result.k_total = k_total;
    const auto flat_key = chain_key(budget_key, "flat_cluster", {{"k_total", k_total}});
    const auto dir = stage("flat_cluster", flat_key, [&](const fs::path& out) {
      std::vector<std::size_t> rows(corpus.size());
      std::iota(rows.begin(), rows.end(), std::size_t{0});
      FitOptions o;
      o.k = k_total;
      o.iters = config.iters;
      o.seed = derive_seed(config.seed, "flat_cluster");
      save_model(out / "model.bin", fit(corpus, rows, o));
    });
    flat_model = in_stage("flat_cluster", [&] { return load_model(dir / "model.bin", corpus); });
    upstream_key = flat_key;
  }

  // mine
  std::unique_ptr<RatingSource> owned;
  if (source == nullptr && needs_ratings) {
    owned = in_stage("mine", [&] { return make_rating_source(config); });
    source = owned.get();
    if (source == nullptr) {
      throw StageError("mine", "no rating source: set paths.offline_ratings, scorer.url or the scorer URL variable");
    }
  }
  json mine_params = {{"mode", to_string(mode)},
                      {"lambda", config.miner.lambda},
                      {"epsilon", config.miner.epsilon},
                      {"probe_set_size", config.miner.probe_set_size},
                      {"aggregation", to_string(config.miner.aggregation)},
                      {"dimension_weights", config.miner.dimension_weights},
                      {"penalty_cap", config.miner.penalty_cap},
                      {"seed", config.seed}};
  if (needs_ratings) mine_params["ratings"] = source->fingerprint();
  const auto mine_key = chain_key(upstream_key, "mine", mine_params);
  const auto mine_dir = stage("mine", mine_key, [&](const fs::path& out) {
    std::vector<SubClusterRecord> records;
    switch (mode) {
      case AblationMode::Full:
      case AblationMode::WoStage1: {
        records = subcluster_all(macro, corpus, derive_seed(config.seed, "subcluster"));
        attach_semantic_scores(records, corpus, *source, config.miner);
        std::vector<double> parent_coh;
        for (const auto& r : features.raw) parent_coh.push_back(r.coh);
        const double global_coh = mode == AblationMode::WoStage1 ? corpus_cohesion(corpus) : 0.0;
        attach_geometry(records, parent_coh, global_coh,
                        mode == AblationMode::WoStage1 ? ReferenceMode::Global : ReferenceMode::Parent, config.miner);
        hierarchical_weight(result.budget, records, config.miner.lambda, config.miner.epsilon);
        break;
      }
      case AblationMode::WoStage2: {
        records = flat_records(macro, corpus, 0);
        for (std::size_t k = 0; k < records.size(); ++k) {
          records[k].parent_id = k;
          records[k].sub_id = 0;
          records[k].weight_unnormalized = result.budget[k];
          records[k].weight = result.budget[k];
        }
        break;
      }
      case AblationMode::ClusterRandom: {
        records = flat_records(*flat_model, corpus, 0);
        double total = 0.0;
        for (auto& r : records) {
          double tokens = 0.0;
          for (auto id : r.member_ids) tokens += corpus.meta(corpus.row_of(id)).token_length;
          r.weight_unnormalized = tokens;
          total += tokens;
        }
        for (auto& r : records) r.weight = r.weight_unnormalized / total;
        break;
      }
      case AblationMode::WoHierarchy: {
        records = flat_records(*flat_model, corpus, 0);
        attach_semantic_scores(records, corpus, *source, config.miner);
        attach_geometry(records, {}, corpus_cohesion(corpus), ReferenceMode::Global, config.miner);
        hierarchical_weight(BudgetVector{{1.0}}, records, config.miner.lambda, config.miner.epsilon);
        break;
      }
    }
    write_json(out / "records.json", records);
    write_plan_table(out / "plan.csv", records);
  });
  const auto records =
      in_stage("mine", [&] { return read_json(mine_dir / "records.json").get<std::vector<SubClusterRecord>>(); });

  // sample
  const std::uint64_t token_budget =
      config.token_budget > 0 ? config.token_budget
                              : static_cast<std::uint64_t>(std::llround(config.token_fraction *
                                                                        static_cast<double>(corpus.total_tokens())));
  const auto sample_key = chain_key(mine_key, "sample", {{"token_budget", token_budget}});
  const auto sample_dir = stage("sample", sample_key, [&](const fs::path& out) {
    const auto plan = realize_sample(records, corpus, token_budget, derive_seed(config.seed, "sample"));
    write_id_list(out / "sampled_ids.txt", plan.sampled_ids);
    write_json(out / "selection.json", json{{"token_budget", plan.token_budget},
                                            {"realized_tokens", plan.realized_tokens},
                                            {"records", plan.records}});
  });
  in_stage("sample", [&] {
    const auto sel = read_json(sample_dir / "selection.json");
    result.plan.records = sel.at("records").get<std::vector<SubClusterRecord>>();
    result.plan.token_budget = sel.at("token_budget").get<std::uint64_t>();
    result.plan.realized_tokens = sel.at("realized_tokens").get<std::uint64_t>();
    result.plan.sampled_ids = read_id_list(sample_dir / "sampled_ids.txt");
  });
  copy_out(sample_dir / "sampled_ids.txt", config.output / "sampled_ids.txt");
  copy_out(mine_dir / "plan.csv", config.output / "plan.csv");

  // evaluate: the Voronoi cells are those of the clusters the selection reaches
  if (config.evaluate) {
    const ClusterModel& active_model = flat_model ? *flat_model : macro;
    const auto eval_key = chain_key(sample_key, "evaluate", {{"max_points", config.eval_points}});
    const auto dir = stage("evaluate", eval_key, [&](const fs::path& out) {
      std::vector<std::size_t> all(corpus.size());
      std::iota(all.begin(), all.end(), std::size_t{0});
      const auto full_rows = subsample_rows(all, config.eval_points, derive_seed(config.seed, "eval_full"));
      const auto sel_rows = subsample_rows(rows_of(corpus, result.plan.sampled_ids), config.eval_points,
                                           derive_seed(config.seed, "eval_selected"));
      const auto mu = EmpiricalMeasure::from_corpus(corpus, full_rows);
      const auto sel = EmpiricalMeasure::from_corpus(corpus, sel_rows);
      const auto codebook = Codebook::from_model(active_model);
      const auto kept = occupied_clusters(codebook, sel);
      json report = decomposition(mu, codebook.subset(kept), sel);
      report["clusters"] = kept;
      report["w2_selected"] = w2_exact(mu, sel);
      report["points"] = {{"full", full_rows.size()}, {"selected", sel_rows.size()}};
      write_json(out / "transport_report.json", report);
    });
    result.transport_report = in_stage("evaluate", [&] { return read_json(dir / "transport_report.json"); });
    copy_out(dir / "transport_report.json", config.output / "transport_report.json");
  }

  json summary = {{"k_star", result.k_star},
                  {"k_total", result.k_total},
                  {"token_budget", result.plan.token_budget},
                  {"realized_tokens", result.plan.realized_tokens},
                  {"sampled", result.plan.sampled_ids.size()},
                  {"config", config_to_json(config)}};
  auto stages = json::array();
  for (const auto& s : result.stages) stages.push_back({{"name", s.name}, {"key", s.key}});
  summary["stages"] = stages;
  write_json(config.output / "run.json", summary);
  return result;
}

}  // namespace geomine
