#include "geomine/miner.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "geomine/common.hpp"

namespace geomine {

namespace {

bool zero_spread(double sigma, double mu) { return sigma <= 1e-12 * std::max(1.0, std::abs(mu)); }

double penalty_term(double z, double mu, double sigma, double cap) {
  const double dev = z - mu;
  if (zero_spread(sigma, mu)) return dev > 1e-12 * std::max(1.0, std::abs(mu)) ? cap : 0.0;
  const double t = std::max(0.0, dev / sigma);
  return std::min(cap, t * t);
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

Aggregation parse_aggregation(std::string_view name) {
  if (name == "mean") return Aggregation::Mean;
  if (name == "min") return Aggregation::Min;
  if (name == "weighted") return Aggregation::Weighted;
  throw Error(fmt::format("unknown aggregation '{}' (expected mean, min or weighted)", name));
}

std::string_view to_string(Aggregation a) {
  switch (a) {
    case Aggregation::Mean: return "mean";
    case Aggregation::Min: return "min";
    case Aggregation::Weighted: return "weighted";
  }
  return "mean";
}

double structural_penalty(const FeatureRow& sub, const ParentStats& parent, double cap) {
  return penalty_term(sub.len, parent.mu_len, parent.sigma_len, cap) +
         penalty_term(sub.ent, parent.mu_ent, parent.sigma_ent, cap);
}

double cohesion_gate(double sub_coh, double parent_coh) {
  const double x = sub_coh - parent_coh;
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::vector<SampleId> probe_set(const SubClusterRecord& sub, const Corpus& corpus, std::size_t m) {
  if (m < 1) throw Error("probe set size must be at least 1");
  std::vector<std::pair<double, SampleId>> ranked;
  ranked.reserve(sub.member_ids.size());
  for (auto id : sub.member_ids) ranked.emplace_back(cosine(corpus.embedding(corpus.row_of(id)), sub.centroid), id);
  const std::size_t take = std::min(m, ranked.size());
  std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(take), ranked.end(),
                    [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
  std::vector<SampleId> out;
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) out.push_back(ranked[i].second);
  return out;
}

std::optional<double> semantic_score(std::span<const ProbeRating> ratings, Aggregation aggregation,
                                     const std::array<double, 4>& dimension_weights) {
  if (ratings.empty()) return std::nullopt;
  std::vector<double> per_probe;
  per_probe.reserve(ratings.size());
  const double wsum = std::accumulate(dimension_weights.begin(), dimension_weights.end(), 0.0);
  for (const auto& r : ratings) {
    if (aggregation == Aggregation::Weighted) {
      if (!(wsum > 0.0)) throw Error("dimension weights must have a positive sum");
      const auto v = r.values();
      double acc = 0.0;
      for (std::size_t d = 0; d < 4; ++d) acc += dimension_weights[d] * v[d];
      per_probe.push_back(acc / wsum);
    } else {
      per_probe.push_back(r.mean());
    }
  }
  if (aggregation == Aggregation::Min) return *std::min_element(per_probe.begin(), per_probe.end());
  return std::accumulate(per_probe.begin(), per_probe.end(), 0.0) / static_cast<double>(per_probe.size());
}

ParentStats parent_stats(std::span<const SubClusterRecord* const> subs, double reference_coh) {
  ParentStats s;
  s.coh = reference_coh;
  double total = 0.0;
  for (const auto* r : subs) {
    const auto w = static_cast<double>(r->member_ids.size());
    s.mu_len += w * r->features.len;
    s.mu_ent += w * r->features.ent;
    total += w;
  }
  if (!(total > 0.0)) return ParentStats{0.0, 0.0, 0.0, 0.0, reference_coh};
  s.mu_len /= total;
  s.mu_ent /= total;
  double vl = 0.0;
  double ve = 0.0;
  for (const auto* r : subs) {
    const auto w = static_cast<double>(r->member_ids.size());
    vl += w * (r->features.len - s.mu_len) * (r->features.len - s.mu_len);
    ve += w * (r->features.ent - s.mu_ent) * (r->features.ent - s.mu_ent);
  }
  s.sigma_len = std::sqrt(vl / total);
  s.sigma_ent = std::sqrt(ve / total);
  return s;
}

void hierarchical_weight(const BudgetVector& budget, std::vector<SubClusterRecord>& records, double lambda,
                         double epsilon) {
  if (!(lambda >= 0.0)) throw Error("lambda must be nonnegative");
  if (!(epsilon > 0.0)) throw Error("epsilon must be positive");
  double total = 0.0;
  for (auto& r : records) {
    if (r.parent_id >= budget.size()) {
      throw Error(fmt::format("record parent {} outside budget of size {}", r.parent_id, budget.size()));
    }
    r.weight_unnormalized =
        budget[r.parent_id] * r.semantic_score * std::exp(-lambda * r.struct_penalty) * (r.cohesion_gate + epsilon);
    total += r.weight_unnormalized;
  }
  if (!(total > 0.0)) throw Error("total sampling weight is zero");
  for (auto& r : records) r.weight = r.weight_unnormalized / total;
}

std::vector<SubClusterRecord> subcluster_all(const ClusterModel& macro, const Corpus& corpus, std::uint64_t seed) {
  std::vector<std::vector<SubClusterRecord>> per_parent(macro.k);
  parallel_for_chunks(macro.k, 1, [&](std::size_t, std::size_t begin, std::size_t end) {
    for (std::size_t k = begin; k < end; ++k) {
      const auto child = subcluster(macro, k, corpus, derive_seed(seed, k));
      auto recs = flat_records(child, corpus, k);
      per_parent[k] = std::move(recs);
    }
  });
  std::vector<SubClusterRecord> all;
  for (auto& v : per_parent) {
    for (auto& r : v) all.push_back(std::move(r));
  }
  return all;
}

std::vector<SubClusterRecord> flat_records(const ClusterModel& model, const Corpus& corpus, std::size_t parent_id) {
  std::vector<SubClusterRecord> out;
  out.reserve(model.k);
  for (std::size_t j = 0; j < model.k; ++j) {
    SubClusterRecord r;
    r.parent_id = parent_id;
    r.sub_id = j;
    r.member_ids = model.members[j];
    auto c = model.centroid(j);
    r.centroid.assign(c.begin(), c.end());
    r.features = raw_features(r.member_ids, c, corpus);
    out.push_back(std::move(r));
  }
  return out;
}

std::size_t attach_semantic_scores(std::vector<SubClusterRecord>& records, const Corpus& corpus, RatingSource& source,
                                   const MinerOptions& options) {
  std::vector<SampleId> all_probes;
  std::vector<std::size_t> offsets{0};
  for (auto& r : records) {
    r.probe_ids = probe_set(r, corpus, options.probe_set_size);
    all_probes.insert(all_probes.end(), r.probe_ids.begin(), r.probe_ids.end());
    offsets.push_back(all_probes.size());
  }
  const auto ratings = source.rate(all_probes);
  if (ratings.size() != all_probes.size()) throw Error("rating source returned the wrong number of ratings");

  std::map<std::size_t, std::vector<double>> scored_by_parent;
  std::vector<double> scored_all;
  for (std::size_t i = 0; i < records.size(); ++i) {
    std::vector<ProbeRating> got;
    for (std::size_t p = offsets[i]; p < offsets[i + 1]; ++p) {
      if (ratings[p]) got.push_back(*ratings[p]);
    }
    auto& r = records[i];
    if (auto s = semantic_score(got, options.aggregation, options.dimension_weights)) {
      r.semantic_score = *s;
      r.scored = true;
      scored_by_parent[r.parent_id].push_back(*s);
      scored_all.push_back(*s);
    } else {
      r.scored = false;
    }
  }

  std::size_t imputed = 0;
  for (auto& r : records) {
    if (r.scored) continue;
    ++imputed;
    auto it = scored_by_parent.find(r.parent_id);
    if (it != scored_by_parent.end()) {
      r.semantic_score = median(it->second);
    } else if (!scored_all.empty()) {
      r.semantic_score = median(scored_all);
    } else {
      r.semantic_score = 3.0;
    }
  }
  if (imputed > 0) {
    warn(fmt::format("{} of {} sub-clusters had no valid probe ratings; imputed from the parent median", imputed,
                     records.size()));
  }
  return imputed;
}

void attach_geometry(std::vector<SubClusterRecord>& records, std::span<const double> parent_coh, double global_coh,
                     ReferenceMode mode, const MinerOptions& options) {
  std::map<std::size_t, std::vector<const SubClusterRecord*>> groups;
  std::vector<const SubClusterRecord*> everyone;
  for (const auto& r : records) {
    groups[r.parent_id].push_back(&r);
    everyone.push_back(&r);
  }
  std::map<std::size_t, ParentStats> stats;
  if (mode == ReferenceMode::Global) {
    const auto g = parent_stats(everyone, global_coh);
    for (const auto& [k, _] : groups) stats[k] = g;
  } else {
    for (const auto& [k, subs] : groups) {
      if (k >= parent_coh.size()) throw Error(fmt::format("no cohesion reference for parent {}", k));
      stats[k] = parent_stats(subs, parent_coh[k]);
    }
  }
  for (auto& r : records) {
    const auto& s = stats.at(r.parent_id);
    r.struct_penalty = structural_penalty(r.features, s, options.penalty_cap);
    r.cohesion_gate = cohesion_gate(r.features.coh, s.coh);
  }
}

double corpus_cohesion(const Corpus& corpus) {
  std::vector<double> mean(corpus.dim(), 0.0);
  for (std::size_t r = 0; r < corpus.size(); ++r) {
    auto e = corpus.embedding(r);
    for (std::size_t t = 0; t < corpus.dim(); ++t) mean[t] += e[t];
  }
  double sq = 0.0;
  for (double v : mean) sq += v * v;
  std::vector<float> centroid(corpus.dim(), 0.0F);
  if (sq > 0.0) {
    for (std::size_t t = 0; t < corpus.dim(); ++t) centroid[t] = static_cast<float>(mean[t] / std::sqrt(sq));
  }
  std::vector<SampleId> ids;
  ids.reserve(corpus.size());
  for (const auto& m : corpus.meta()) ids.push_back(m.id);
  return cohesion_of(ids, centroid, corpus);
}

std::vector<std::uint64_t> largest_remainder(std::span<const double> weights, std::uint64_t total) {
  std::vector<std::uint64_t> out(weights.size(), 0);
  if (weights.empty()) return out;
  const double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (!(wsum > 0.0)) throw Error("largest remainder needs a positive weight sum");
  std::vector<double> frac(weights.size());
  std::uint64_t assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double exact = static_cast<double>(total) * (weights[i] / wsum);
    const auto whole = static_cast<std::uint64_t>(std::floor(exact));
    out[i] = whole;
    frac[i] = exact - static_cast<double>(whole);
    assigned += whole;
  }
  // Floating error can push the floors past the total; trim from the smallest fractions.
  std::vector<std::size_t> order(weights.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
  for (std::size_t i = 0; assigned < total; i = (i + 1) % order.size()) {
    ++out[order[i]];
    ++assigned;
  }
  for (std::size_t i = order.size(); assigned > total && i-- > 0;) {
    if (out[order[i]] > 0) {
      --out[order[i]];
      --assigned;
    }
  }
  return out;
}

SelectionPlan realize_sample(std::span<const SubClusterRecord> records, const Corpus& corpus,
                             std::uint64_t token_budget, std::uint64_t seed) {
  SelectionPlan plan;
  plan.records.assign(records.begin(), records.end());
  plan.token_budget = token_budget;
  if (records.empty()) throw Error("no sub-clusters to sample from");

  std::uint64_t available = 0;
  std::uint32_t longest = 0;
  for (const auto& r : records) {
    for (auto id : r.member_ids) {
      const auto len = corpus.meta(corpus.row_of(id)).token_length;
      available += len;
      longest = std::max(longest, len);
    }
  }
  if (available < token_budget) {
    throw Error(fmt::format("corpus holds {} tokens, fewer than the budget of {}", available, token_budget));
  }
  if (token_budget < longest) {
    throw Error(fmt::format("token budget {} is smaller than the longest sample ({} tokens)", token_budget, longest));
  }

  const std::size_t n = records.size();
  std::vector<std::vector<SampleId>> order(n);
  std::vector<std::size_t> cursor(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    order[i] = records[i].member_ids;
    std::mt19937_64 rng(derive_seed(derive_seed(seed, records[i].parent_id), records[i].sub_id));
    std::shuffle(order[i].begin(), order[i].end(), rng);
  }

  std::vector<std::uint64_t> taken(n, 0);
  // Adds members while doing so moves the running total closer to the quota.
  auto draw = [&](std::size_t i, std::uint64_t quota) {
    auto& rec = plan.records[i];
    while (cursor[i] < order[i].size()) {
      const auto len = corpus.meta(corpus.row_of(order[i][cursor[i]])).token_length;
      if (taken[i] >= quota || 2 * (quota - taken[i]) < len) break;
      taken[i] += len;
      plan.sampled_ids.push_back(order[i][cursor[i]++]);
      ++rec.selected_count;
    }
  };

  std::vector<double> weights(n);
  for (std::size_t i = 0; i < n; ++i) weights[i] = records[i].weight;
  const auto quota = largest_remainder(weights, token_budget);
  for (std::size_t i = 0; i < n; ++i) draw(i, quota[i]);

  const std::uint64_t realized = std::accumulate(taken.begin(), taken.end(), std::uint64_t{0});
  if (realized < token_budget) {
    std::vector<double> open(n, 0.0);
    bool any = false;
    for (std::size_t i = 0; i < n; ++i) {
      if (cursor[i] < order[i].size() && weights[i] > 0.0) {
        open[i] = weights[i];
        any = true;
      }
    }
    if (any) {
      const auto extra = largest_remainder(open, token_budget - realized);
      for (std::size_t i = 0; i < n; ++i) {
        if (extra[i] > 0) draw(i, taken[i] + extra[i]);
      }
    }
  }

  for (std::size_t i = 0; i < n; ++i) plan.records[i].selected_tokens = taken[i];
  plan.realized_tokens = std::accumulate(taken.begin(), taken.end(), std::uint64_t{0});
  std::sort(plan.sampled_ids.begin(), plan.sampled_ids.end());
  return plan;
}

void write_plan_table(const std::filesystem::path& path, std::span<const SubClusterRecord> records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(fmt::format("cannot write {}", path.string()));
  out << "parent_id,sub_id,size,P,L_struct,beta,W\n";
  for (const auto& r : records) {
    out << fmt::format("{},{},{},{:.17g},{:.17g},{:.17g},{:.17g}\n", r.parent_id, r.sub_id, r.member_ids.size(),
                       r.semantic_score, r.struct_penalty, r.cohesion_gate, r.weight);
  }
}

void write_id_list(const std::filesystem::path& path, std::span<const SampleId> ids) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(fmt::format("cannot write {}", path.string()));
  for (auto id : ids) out << id << '\n';
}

std::vector<SampleId> read_id_list(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(fmt::format("cannot open {}", path.string()));
  std::vector<SampleId> ids;
  SampleId id = 0;
  while (in >> id) ids.push_back(id);
  if (!in.eof()) throw Error(fmt::format("{}: malformed id list", path.string()));
  return ids;
}

void to_json(nlohmann::json& j, const SubClusterRecord& r) {
  j = nlohmann::json{{"parent_id", r.parent_id},
                     {"sub_id", r.sub_id},
                     {"member_ids", r.member_ids},
                     {"centroid", r.centroid},
                     {"features", {r.features.coh, r.features.size, r.features.len, r.features.ent}},
                     {"probe_ids", r.probe_ids},
                     {"semantic_score", r.semantic_score},
                     {"scored", r.scored},
                     {"struct_penalty", r.struct_penalty},
                     {"cohesion_gate", r.cohesion_gate},
                     {"weight_unnormalized", r.weight_unnormalized},
                     {"weight", r.weight},
                     {"selected_count", r.selected_count},
                     {"selected_tokens", r.selected_tokens}};
}

void from_json(const nlohmann::json& j, SubClusterRecord& r) {
  j.at("parent_id").get_to(r.parent_id);
  j.at("sub_id").get_to(r.sub_id);
  j.at("member_ids").get_to(r.member_ids);
  j.at("centroid").get_to(r.centroid);
  const auto f = j.at("features").get<std::array<double, 4>>();
  r.features = {f[0], f[1], f[2], f[3]};
  j.at("probe_ids").get_to(r.probe_ids);
  j.at("semantic_score").get_to(r.semantic_score);
  j.at("scored").get_to(r.scored);
  j.at("struct_penalty").get_to(r.struct_penalty);
  j.at("cohesion_gate").get_to(r.cohesion_gate);
  j.at("weight_unnormalized").get_to(r.weight_unnormalized);
  j.at("weight").get_to(r.weight);
  j.at("selected_count").get_to(r.selected_count);
  j.at("selected_tokens").get_to(r.selected_tokens);
}

}  // namespace geomine
