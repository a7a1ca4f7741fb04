#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "geomine/budget.hpp"
#include "geomine/clustering.hpp"
#include "geomine/corpus.hpp"
#include "geomine/features.hpp"
#include "geomine/miner.hpp"
#include "geomine/pipeline.hpp"
#include "geomine/resolution.hpp"
#include "geomine/synth.hpp"
#include "geomine/transport.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace geomine;

namespace {

constexpr const char* kScorerUrlVar = "GEOMINE_SCORER_URL";

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(fmt::format("cannot write {}", path.string()));
  out << j.dump(2) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(fmt::format("cannot open {}", path.string()));
  auto j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw Error(fmt::format("{}: invalid JSON", path.string()));
  return j;
}

std::vector<std::size_t> all_rows(const Corpus& c) {
  std::vector<std::size_t> rows(c.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return rows;
}

std::string env_scorer_url() {
  const char* v = std::getenv(kScorerUrlVar);
  return v == nullptr ? std::string{} : std::string(v);
}

std::vector<std::size_t> parse_size_list(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoul(item));
  return out;
}

std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stod(item));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Geometric corpus curation toolkit"};
  app.require_subcommand(1);
  std::string stage_name;
  std::function<void()> action;

  // ingest
  auto* ingest_cmd = app.add_subcommand("ingest", "Validate and normalize an embedded corpus into a store");
  std::string meta_path, emb_path, store_out;
  ingest_cmd->add_option("--meta", meta_path, "Metadata JSON lines")->required();
  ingest_cmd->add_option("--emb", emb_path, "Embedding shard")->required();
  ingest_cmd->add_option("--out", store_out, "Store directory")->required();
  ingest_cmd->callback([&] {
    stage_name = "ingest";
    action = [&] {
      const auto corpus = ingest(meta_path, emb_path);
      export_store(corpus, store_out);
      fmt::print("{} samples, dim {}, {} languages -> {}\n", corpus.size(), corpus.dim(),
                 corpus.language_vocab().size(), store_out);
    };
  });

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "Generate a planted synthetic corpus");
  SynthSpec spec;
  std::string synth_out, synth_ratings;
  double log_mean = 5.0, log_std = 0.5;
  std::size_t langs_per_component = 1;
  synth_cmd->add_option("--out", synth_out, "Output directory (meta.jsonl, embeddings.bin, truth.json)")->required();
  synth_cmd->add_option("--dim", spec.dim)->capture_default_str();
  synth_cmd->add_option("--k-true", spec.k_true)->capture_default_str();
  synth_cmd->add_option("--kappa", spec.concentration)->capture_default_str();
  synth_cmd->add_option("--n", spec.n)->capture_default_str();
  synth_cmd->add_option("--outliers", spec.outlier_fraction, "Outlier fraction in [0, 0.5]")->capture_default_str();
  synth_cmd->add_option("--length-log-mean", log_mean)->capture_default_str();
  synth_cmd->add_option("--length-log-std", log_std)->capture_default_str();
  synth_cmd->add_option("--langs-per-component", langs_per_component)->capture_default_str();
  synth_cmd->add_option("--languages", spec.language_count)->capture_default_str();
  synth_cmd->add_option("--seed", spec.seed)->capture_default_str();
  synth_cmd->add_option("--ratings", synth_ratings, "Also write stub offline ratings here");
  synth_cmd->callback([&] {
    stage_name = "synth";
    action = [&] {
      spec.length_log_mean = {log_mean};
      spec.length_log_std = {log_std};
      spec.languages_per_component = {langs_per_component};
      const auto s = generate(spec);
      write_synth(s, synth_out);
      if (!synth_ratings.empty()) write_stub_ratings(synth_ratings, s.truth);
      fmt::print("{} samples ({} outliers) -> {}\n", s.corpus.size(), s.outlier_count(), synth_out);
    };
  });

  // cluster
  auto* cluster_cmd = app.add_subcommand("cluster", "Spherical k-means on a probe subset, assigned to the full corpus");
  std::string cl_store, cl_out;
  std::size_t cl_k = 0, cl_iters = 10;
  std::uint64_t cl_seed = 0;
  double cl_probe = 1.0;
  cluster_cmd->add_option("--store", cl_store)->required();
  cluster_cmd->add_option("--k", cl_k)->required();
  cluster_cmd->add_option("--iters", cl_iters)->capture_default_str();
  cluster_cmd->add_option("--seed", cl_seed)->capture_default_str();
  cluster_cmd->add_option("--probe-fraction", cl_probe)->capture_default_str();
  cluster_cmd->add_option("--out", cl_out, "Model file")->required();
  cluster_cmd->callback([&] {
    stage_name = "cluster";
    action = [&] {
      const auto corpus = load_store(cl_store);
      const auto probe = probe_subset(corpus, cl_probe, derive_seed(cl_seed, "probe"));
      const auto model = assign_model(fit(probe, cl_k, cl_iters, derive_seed(cl_seed, "cluster")), corpus);
      save_model(cl_out, model);
      fmt::print("k = {} (requested {}), objective {:.6f} -> {}\n", model.k, cl_k, mean_cosine_distance(model, corpus),
                 cl_out);
    };
  });

  // select-k
  auto* sk_cmd = app.add_subcommand("select-k", "Rank-stability sweep over cluster resolutions");
  std::string sk_store, sk_out, sk_strides = "2,4,6", sk_weights = "0.5,0.3,0.2";
  std::size_t sk_min = 2, sk_max = 30, sk_step = 2, sk_iters = 10;
  double sk_t = 20.0, sk_lambda = 1.0, sk_probe = 1.0;
  std::uint64_t sk_seed = 0;
  sk_cmd->add_option("--store", sk_store)->required();
  sk_cmd->add_option("--k-min", sk_min)->capture_default_str();
  sk_cmd->add_option("--k-max", sk_max)->capture_default_str();
  sk_cmd->add_option("--k-step", sk_step)->capture_default_str();
  sk_cmd->add_option("--strides", sk_strides)->capture_default_str();
  sk_cmd->add_option("--hop-weights", sk_weights)->capture_default_str();
  sk_cmd->add_option("--t-scale", sk_t)->capture_default_str();
  sk_cmd->add_option("--lambda-shrink", sk_lambda)->capture_default_str();
  sk_cmd->add_option("--iters", sk_iters)->capture_default_str();
  sk_cmd->add_option("--probe-fraction", sk_probe)->capture_default_str();
  sk_cmd->add_option("--seed", sk_seed)->capture_default_str();
  sk_cmd->add_option("--out", sk_out, "Output directory")->required();
  sk_cmd->callback([&] {
    stage_name = "select_k";
    action = [&] {
      const auto corpus = load_store(sk_store);
      const auto probe = probe_subset(corpus, sk_probe, derive_seed(sk_seed, "probe"));
      SelectKOptions o;
      o.k_values = k_range(sk_min, sk_max, sk_step);
      o.strides = parse_size_list(sk_strides);
      o.hop_weights = parse_double_list(sk_weights);
      o.t_scale = sk_t;
      o.lambda_shrink = sk_lambda;
      o.iters = sk_iters;
      o.seed = sk_seed;
      const auto profile = select_k(probe, o);
      fs::create_directories(sk_out);
      write_json(fs::path(sk_out) / "profile.json", profile);
      write_profile_table(fs::path(sk_out) / "profile.csv", profile);
      write_stability_plot(fs::path(sk_out) / "stability_plot.csv", profile);
      fmt::print("K* = {}\n", profile.k_star);
    };
  });

  // features
  auto* ft_cmd = app.add_subcommand("features", "Geometric features, consensus weights and cluster scores");
  std::string ft_store, ft_model, ft_out;
  ft_cmd->add_option("--store", ft_store)->required();
  ft_cmd->add_option("--model", ft_model)->required();
  ft_cmd->add_option("--out", ft_out, "Feature table (consensus.json is written alongside)")->required();
  ft_cmd->callback([&] {
    stage_name = "features";
    action = [&] {
      const auto corpus = load_store(ft_store);
      const auto model = load_model(ft_model, corpus);
      const auto feats = stabilize_standardize(extract_raw(model, corpus));
      ConsensusWeights w = model.k >= SpectralOptions{}.min_clusters ? spectral_weights(feats) : uniform_weights();
      if (model.k < SpectralOptions{}.min_clusters) {
        warn(fmt::format("only {} clusters; using uniform consensus weights", model.k));
        w.degenerate = true;
      }
      write_feature_table(ft_out, feats, score(feats, w));
      write_json(fs::path(ft_out).parent_path() / "consensus.json", w);
      fmt::print("w = (coh {:.4f}, ent {:.4f}, len {:.4f}, size {:.4f}){}\n", w.coh, w.ent, w.len, w.size,
                 w.degenerate ? " [uniform fallback]" : "");
    };
  });

  // budget
  auto* bd_cmd = app.add_subcommand("budget", "Softmax mixing budget over cluster scores");
  std::string bd_features, bd_out;
  double bd_temp = 1.0;
  bool bd_uniform = false;
  bd_cmd->add_option("--features", bd_features)->required();
  bd_cmd->add_option("--temperature", bd_temp)->capture_default_str();
  bd_cmd->add_flag("--uniform", bd_uniform, "r_k = 1/K");
  bd_cmd->add_option("--out", bd_out)->required();
  bd_cmd->callback([&] {
    stage_name = "budget";
    action = [&] {
      const auto scores = read_feature_scores(bd_features);
      const auto b = bd_uniform ? uniform_budget(scores.size()) : allocate(scores, bd_temp);
      write_budget_table(bd_out, scores, b);
    };
  });

  // mine
  auto* mn_cmd = app.add_subcommand("mine", "Sub-cluster, score, penalize, gate and weight");
  std::string mn_store, mn_model, mn_features, mn_budget, mn_out, mn_ratings, mn_texts, mn_agg = "mean";
  MinerOptions mo;
  std::uint64_t mn_seed = 0;
  bool mn_global = false;
  mn_cmd->add_option("--store", mn_store)->required();
  mn_cmd->add_option("--model", mn_model)->required();
  mn_cmd->add_option("--features", mn_features)->required();
  mn_cmd->add_option("--budget", mn_budget)->required();
  mn_cmd->add_option("--offline-ratings", mn_ratings, "JSON lines of ratings keyed by id");
  mn_cmd->add_option("--texts", mn_texts, "JSON lines {id, content} for the HTTP scorer");
  mn_cmd->add_option("--lambda", mo.lambda)->capture_default_str();
  mn_cmd->add_option("--epsilon", mo.epsilon)->capture_default_str();
  mn_cmd->add_option("--m", mo.probe_set_size, "Probe set size")->capture_default_str();
  mn_cmd->add_option("--aggregation", mn_agg)->check(CLI::IsMember({"mean", "min", "weighted"}))->capture_default_str();
  mn_cmd->add_flag("--global-reference", mn_global, "Compare against corpus-wide statistics");
  mn_cmd->add_option("--seed", mn_seed)->capture_default_str();
  mn_cmd->add_option("--out", mn_out, "Output directory (records.json, plan.csv)")->required();
  mn_cmd->callback([&] {
    stage_name = "mine";
    action = [&] {
      const auto corpus = load_store(mn_store);
      const auto model = load_model(mn_model, corpus);
      const auto table = read_feature_table(mn_features);
      const auto budget = read_budget_table(mn_budget);
      mo.aggregation = parse_aggregation(mn_agg);
      PipelineConfig c;
      c.offline_ratings = mn_ratings;
      c.texts = mn_texts;
      c.scorer_url = env_scorer_url();
      auto source = make_rating_source(c);
      if (!source) throw Error(fmt::format("no rating source: pass --offline-ratings or set {}", kScorerUrlVar));
      auto records = subcluster_all(model, corpus, derive_seed(mn_seed, "subcluster"));
      const auto imputed = attach_semantic_scores(records, corpus, *source, mo);
      std::vector<double> parent_coh;
      for (const auto& r : table.raw) parent_coh.push_back(r.coh);
      attach_geometry(records, parent_coh, mn_global ? corpus_cohesion(corpus) : 0.0,
                      mn_global ? ReferenceMode::Global : ReferenceMode::Parent, mo);
      hierarchical_weight(budget, records, mo.lambda, mo.epsilon);
      fs::create_directories(mn_out);
      write_json(fs::path(mn_out) / "records.json", records);
      write_plan_table(fs::path(mn_out) / "plan.csv", records);
      fmt::print("{} sub-clusters ({} imputed) -> {}\n", records.size(), imputed, mn_out);
    };
  });

  // sample
  auto* sp_cmd = app.add_subcommand("sample", "Realize a token-budgeted sample from weighted sub-clusters");
  std::string sp_store, sp_records, sp_out;
  std::uint64_t sp_budget = 0, sp_seed = 0;
  double sp_fraction = 0.2;
  sp_cmd->add_option("--store", sp_store)->required();
  sp_cmd->add_option("--records", sp_records, "records.json from mine")->required();
  sp_cmd->add_option("--token-budget", sp_budget, "Absolute token budget (overrides --token-fraction)");
  sp_cmd->add_option("--token-fraction", sp_fraction)->capture_default_str();
  sp_cmd->add_option("--seed", sp_seed)->capture_default_str();
  sp_cmd->add_option("--out", sp_out, "Output directory (sampled_ids.txt, selection.json)")->required();
  sp_cmd->callback([&] {
    stage_name = "sample";
    action = [&] {
      const auto corpus = load_store(sp_store);
      const auto records = read_json(sp_records).get<std::vector<SubClusterRecord>>();
      const std::uint64_t budget =
          sp_budget > 0 ? sp_budget
                        : static_cast<std::uint64_t>(std::llround(sp_fraction * static_cast<double>(corpus.total_tokens())));
      const auto plan = realize_sample(records, corpus, budget, derive_seed(sp_seed, "sample"));
      fs::create_directories(sp_out);
      write_id_list(fs::path(sp_out) / "sampled_ids.txt", plan.sampled_ids);
      write_json(fs::path(sp_out) / "selection.json",
                 json{{"token_budget", plan.token_budget}, {"realized_tokens", plan.realized_tokens}, {"records", plan.records}});
      fmt::print("{} samples, {} of {} tokens\n", plan.sampled_ids.size(), plan.realized_tokens, plan.token_budget);
    };
  });

  // evaluate
  auto* ev_cmd = app.add_subcommand("evaluate", "Exact transport report on a subsampled instance");
  std::string ev_store, ev_model, ev_selected, ev_out;
  std::size_t ev_points = 300;
  std::uint64_t ev_seed = 0;
  ev_cmd->add_option("--store", ev_store)->required();
  ev_cmd->add_option("--model", ev_model)->required();
  ev_cmd->add_option("--selected", ev_selected, "Sampled id list")->required();
  ev_cmd->add_option("--max-points", ev_points)->capture_default_str();
  ev_cmd->add_option("--seed", ev_seed)->capture_default_str();
  ev_cmd->add_option("--out", ev_out, "Report JSON")->required();
  ev_cmd->callback([&] {
    stage_name = "evaluate";
    action = [&] {
      const auto corpus = load_store(ev_store);
      const auto model = load_model(ev_model, corpus);
      std::vector<std::size_t> sel_rows;
      for (auto id : read_id_list(ev_selected)) sel_rows.push_back(corpus.row_of(id));
      auto sub = [&](std::vector<std::size_t> rows, std::string_view stream) {
        if (rows.size() <= ev_points) return rows;
        std::vector<std::size_t> out;
        for (auto i : probe_indices(rows.size(), static_cast<double>(ev_points) / static_cast<double>(rows.size()),
                                    derive_seed(ev_seed, stream))) {
          out.push_back(rows[i]);
        }
        return out;
      };
      const auto mu = EmpiricalMeasure::from_corpus(corpus, sub(all_rows(corpus), "eval_full"));
      const auto sel = EmpiricalMeasure::from_corpus(corpus, sub(sel_rows, "eval_selected"));
      const auto codebook = Codebook::from_model(model);
      const auto kept = occupied_clusters(codebook, sel);
      json report = decomposition(mu, codebook.subset(kept), sel);
      report["clusters"] = kept;
      report["w2_selected"] = w2_exact(mu, sel);
      write_json(ev_out, report);
      fmt::print("e_s = {:.6g}, 2 t1 + 2 t2 = {:.6g}\n", report["e_s"].get<double>(),
                 report["bound_2t1_2t2"].get<double>());
    };
  });

  // run
  auto* run_cmd = app.add_subcommand("run", "Run the full pipeline from a config file");
  std::string run_config, run_ratings, run_output;
  run_cmd->add_option("--config", run_config)->required();
  run_cmd->add_option("--offline-ratings", run_ratings, "Overrides paths.offline_ratings");
  run_cmd->add_option("--output", run_output, "Overrides paths.output");
  run_cmd->callback([&] {
    stage_name = "config";
    action = [&] {
      auto config = load_config(run_config);
      if (!run_ratings.empty()) config.offline_ratings = run_ratings;
      if (!run_output.empty()) config.output = run_output;
      if (const auto url = env_scorer_url(); !url.empty()) config.scorer_url = url;
      stage_name = "run";
      const auto result = run(config);
      for (const auto& s : result.stages) fmt::print("{:<13} {} {}\n", s.name, s.key, s.reused ? "reused" : "done");
      fmt::print("K* = {}, {} samples, {} of {} tokens -> {}\n", result.k_star, result.plan.sampled_ids.size(),
                 result.plan.realized_tokens, result.plan.token_budget, config.output.string());
    };
  });

  CLI11_PARSE(app, argc, argv);

  try {
    action();
  } catch (const StageError& e) {
    fmt::print(stderr, "geomine: {}\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    fmt::print(stderr, "geomine: [stage {}] {}\n", stage_name, e.what());
    return 1;
  }
  return 0;
}
