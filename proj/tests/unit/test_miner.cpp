#include <cmath>
#include <map>
#include <set>

#include <doctest.h>
#include <nlohmann/json.hpp>

#include <geomine/miner.hpp>
#include <geomine/synth.hpp>

#include "helpers.hpp"

using namespace geomine;

namespace {

SubClusterRecord record(std::size_t parent, std::size_t sub, std::vector<SampleId> ids, double p, double l,
                        double beta) {
  SubClusterRecord r;
  r.parent_id = parent;
  r.sub_id = sub;
  r.member_ids = std::move(ids);
  r.semantic_score = p;
  r.struct_penalty = l;
  r.cohesion_gate = beta;
  return r;
}

// n samples of equal length on distinct axes-ish directions.
Corpus flat_corpus(std::size_t n, std::uint32_t len) {
  std::vector<Sample> s;
  for (SampleId i = 0; i < n; ++i) {
    std::vector<float> e(4, 0.1f);
    e[i % 4] = 1.0f + static_cast<float>(i) * 1e-3f;
    s.push_back(testing::sample(i, e, len));
  }
  return Corpus::from_samples(4, s);
}

std::vector<SampleId> iota_ids(SampleId from, SampleId to) {
  std::vector<SampleId> v;
  for (SampleId i = from; i < to; ++i) v.push_back(i);
  return v;
}

}  // namespace

TEST_CASE("structural penalty") {
  const ParentStats p{100.0, 10.0, 1.0, 0.5, 5.0};
  CHECK(structural_penalty({0, 0, 100.0, 1.0}, p) == 0.0);
  CHECK(structural_penalty({0, 0, 80.0, 0.2}, p) == 0.0);
  CHECK(structural_penalty({0, 0, 120.0, 1.0}, p) == doctest::Approx(4.0));
  CHECK(std::exp(-0.5 * structural_penalty({0, 0, 120.0, 1.0}, p)) == doctest::Approx(std::exp(-2.0)).epsilon(1e-12));
  CHECK(structural_penalty({0, 0, 110.0, 1.5}, p) == doctest::Approx(2.0));
  CHECK(structural_penalty({0, 0, 1000.0, 1.0}, p) == 16.0);
  CHECK(structural_penalty({0, 0, 1000.0, 1.0}, p, 9.0) == 9.0);

  const ParentStats flat{100.0, 0.0, 1.0, 0.0, 5.0};
  CHECK(structural_penalty({0, 0, 100.0, 1.0}, flat) == 0.0);
  CHECK(structural_penalty({0, 0, 101.0, 1.0}, flat) == 16.0);
  CHECK(structural_penalty({0, 0, 99.0, 1.0}, flat) == 0.0);
  CHECK(structural_penalty({0, 0, 101.0, 2.0}, flat) == 32.0);
}

TEST_CASE("rectification ignores features below the parent") {
  const ParentStats p{50.0, 5.0, 1.2, 0.3, 1.0};
  for (double len : {10.0, 30.0, 49.9}) {
    for (double ent : {0.0, 0.5, 1.1}) CHECK(structural_penalty({0, 0, len, ent}, p) == 0.0);
  }
}

TEST_CASE("cohesion gate") {
  CHECK(cohesion_gate(3.0, 3.0) == 0.5);
  CHECK(cohesion_gate(12.0, 2.0) == doctest::Approx(0.9999546).epsilon(1e-6));
  CHECK(cohesion_gate(2.0, 12.0) == doctest::Approx(4.5397868702e-5).epsilon(1e-8));
  CHECK(cohesion_gate(1e6, 1.0) <= 1.0);
  CHECK(cohesion_gate(1.0, 1e6) >= 0.0);
  CHECK(cohesion_gate(4.0, 3.0) < cohesion_gate(5.0, 3.0));
}

TEST_CASE("probe set picks members nearest the centroid") {
  using testing::sample;
  const auto c = Corpus::from_samples(3, {sample(10, {1, 0, 0}), sample(11, {1, 0.1f, 0}), sample(12, {1, 0.3f, 0}),
                                          sample(13, {0, 0, 1}), sample(14, {1, 0, 0})});
  SubClusterRecord r;
  r.member_ids = {10, 11, 12, 13, 14};
  r.centroid = {1, 0, 0};
  CHECK(probe_set(r, c, 1) == std::vector<SampleId>{10});
  CHECK(probe_set(r, c, 4) == std::vector<SampleId>{10, 14, 11, 12});
  CHECK(probe_set(r, c, 8).size() == 5);
  r.member_ids = {11, 12, 13};
  CHECK(probe_set(r, c, 8).size() == 3);
  CHECK_THROWS_AS(probe_set(r, c, 0), Error);
}

TEST_CASE("semantic score aggregation") {
  const std::vector<ProbeRating> one = {{5, 5, 5, 5}};
  CHECK(*semantic_score(one) == 5.0);
  const std::vector<ProbeRating> two = {{1, 1, 1, 1}, {5, 5, 5, 5}};
  CHECK(*semantic_score(two) == 3.0);
  const std::vector<ProbeRating> three = {{4, 3, 5, 4}, {5, 4, 5, 5}, {3, 3, 4, 4}};
  CHECK(*semantic_score(three) == doctest::Approx((16.0 + 19.0 + 14.0) / 12.0).epsilon(1e-15));
  CHECK(*semantic_score(two, Aggregation::Min) == 1.0);
  const std::vector<ProbeRating> skew = {{1, 5, 5, 5}};
  CHECK(*semantic_score(skew, Aggregation::Weighted, {1, 0, 0, 0}) == 1.0);
  CHECK_FALSE(semantic_score(std::vector<ProbeRating>{}).has_value());
  CHECK(parse_aggregation("min") == Aggregation::Min);
  CHECK_THROWS_AS(parse_aggregation("median"), Error);
}

TEST_CASE("parent stats weight sub-cluster means by size") {
  std::vector<SubClusterRecord> subs(3);
  subs[0].member_ids = iota_ids(0, 8);
  subs[0].features = {0, 8, 100.0, 1.0};
  subs[1].member_ids = iota_ids(8, 10);
  subs[1].features = {0, 2, 200.0, 0.0};
  subs[2].member_ids = {};
  subs[2].features = {0, 0, 9999.0, 9.0};
  std::vector<const SubClusterRecord*> ptrs = {&subs[0], &subs[1], &subs[2]};
  const auto s = parent_stats(ptrs, 4.0);
  CHECK(s.mu_len == doctest::Approx(120.0));
  CHECK(s.sigma_len == doctest::Approx(40.0));
  CHECK(s.mu_ent == doctest::Approx(0.8));
  CHECK(s.sigma_ent == doctest::Approx(0.4));
  CHECK(s.coh == 4.0);
}

TEST_CASE("hierarchical weight") {
  const BudgetVector b{{0.25, 0.75}};
  std::vector<SubClusterRecord> recs = {record(0, 0, {}, 3, 0, 0.5), record(0, 1, {}, 3, 0, 0.5),
                                        record(1, 0, {}, 3, 0, 0.5), record(1, 1, {}, 3, 0, 0.5),
                                        record(1, 2, {}, 3, 0, 0.5)};
  hierarchical_weight(b, recs, 0.0, 0.01);
  CHECK(recs[0].weight == doctest::Approx(recs[1].weight));
  CHECK(recs[2].weight == doctest::Approx(recs[4].weight));
  CHECK(recs[0].weight / recs[2].weight == doctest::Approx(1.0 / 3.0));
  double total = 0.0;
  for (const auto& r : recs) total += r.weight;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));

  std::vector<SubClusterRecord> pq = {record(0, 0, {}, 2, 1.0, 0.3), record(0, 1, {}, 4, 1.0, 0.3)};
  hierarchical_weight(BudgetVector{{1.0}}, pq, 0.5, 0.01);
  CHECK(pq[1].weight / pq[0].weight == doctest::Approx(2.0).epsilon(1e-14));

  std::vector<SubClusterRecord> pen = {record(0, 0, {}, 3, 0.0, 0.5), record(0, 1, {}, 3, 4.0, 0.5)};
  hierarchical_weight(BudgetVector{{1.0}}, pen, 0.5, 0.01);
  CHECK(pen[1].weight / pen[0].weight == doctest::Approx(std::exp(-2.0)).epsilon(1e-12));

  CHECK_THROWS_AS(hierarchical_weight(BudgetVector{{1.0}}, pen, -1.0, 0.01), Error);
  CHECK_THROWS_AS(hierarchical_weight(BudgetVector{{1.0}}, pen, 0.5, 0.0), Error);
  std::vector<SubClusterRecord> orphan = {record(3, 0, {}, 3, 0, 0.5)};
  CHECK_THROWS_AS(hierarchical_weight(BudgetVector{{1.0}}, orphan, 0.5, 0.01), Error);
}

TEST_CASE("weights move monotonically and never vanish") {
  auto base = [] {
    return std::vector<SubClusterRecord>{record(0, 0, {}, 3, 2.0, 0.4), record(0, 1, {}, 3, 2.0, 0.4)};
  };
  auto w_of = [](std::vector<SubClusterRecord> r) {
    hierarchical_weight(BudgetVector{{1.0}}, r, 0.5, 0.01);
    return r[0].weight_unnormalized;
  };
  const double w0 = w_of(base());
  auto more_l = base();
  more_l[0].struct_penalty = 3.0;
  CHECK(w_of(more_l) < w0);
  auto more_p = base();
  more_p[0].semantic_score = 4.0;
  CHECK(w_of(more_p) > w0);
  auto more_b = base();
  more_b[0].cohesion_gate = 0.6;
  CHECK(w_of(more_b) > w0);

  std::vector<SubClusterRecord> worst = {record(0, 0, {}, 1, 32.0, 0.0), record(0, 1, {}, 5, 0, 1.0)};
  hierarchical_weight(BudgetVector{{1.0}}, worst, 0.5, 0.01);
  const double z = worst[0].weight_unnormalized + worst[1].weight_unnormalized;
  CHECK(worst[0].weight >= 1.0 * 1.0 * std::exp(-0.5 * 32.0) * 0.01 / z * (1 - 1e-12));
  CHECK(worst[0].weight > 0.0);
}

TEST_CASE("largest remainder") {
  CHECK(largest_remainder(std::vector<double>{0.5, 0.5}, 11) == std::vector<std::uint64_t>{6, 5});
  CHECK(largest_remainder(std::vector<double>{1, 1, 1}, 10) == std::vector<std::uint64_t>{4, 3, 3});
  CHECK(largest_remainder(std::vector<double>{0.7, 0.2, 0.1}, 100) == std::vector<std::uint64_t>{70, 20, 10});
  std::uint64_t s = 0;
  for (auto q : largest_remainder(std::vector<double>{0.1234, 0.55, 0.3266, 1e-9}, 987654)) s += q;
  CHECK(s == 987654);
  CHECK_THROWS_AS(largest_remainder(std::vector<double>{0, 0}, 3), Error);
}

TEST_CASE("one sub-cluster with the whole budget takes everything") {
  const auto c = flat_corpus(20, 7);
  std::vector<SubClusterRecord> recs = {record(0, 0, iota_ids(0, 20), 3, 0, 0.5)};
  recs[0].weight = 1.0;
  const auto plan = realize_sample(recs, c, c.total_tokens(), 1);
  CHECK(plan.sampled_ids == iota_ids(0, 20));
  CHECK(plan.realized_tokens == c.total_tokens());
}

TEST_CASE("equal weights give counts within one") {
  const auto c = flat_corpus(40, 10);
  std::vector<SubClusterRecord> recs = {record(0, 0, iota_ids(0, 20), 3, 0, 0.5),
                                        record(0, 1, iota_ids(20, 40), 3, 0, 0.5)};
  recs[0].weight = recs[1].weight = 0.5;
  for (std::uint64_t budget : {100, 110, 150, 230}) {
    const auto plan = realize_sample(recs, c, budget, 3);
    const auto a = static_cast<long>(plan.records[0].selected_count);
    const auto b = static_cast<long>(plan.records[1].selected_count);
    CHECK(std::abs(a - b) <= 1);
    std::set<SampleId> uniq(plan.sampled_ids.begin(), plan.sampled_ids.end());
    CHECK(uniq.size() == plan.sampled_ids.size());
    CHECK(std::is_sorted(plan.sampled_ids.begin(), plan.sampled_ids.end()));
  }
}

TEST_CASE("shortfall is redistributed and budget conserved") {
  SynthSpec s;
  s.n = 2000;
  s.k_true = 5;
  s.seed = 4;
  const auto syn = generate(s);
  const auto macro = fit(syn.corpus, 5, 10, 0);
  auto recs = subcluster_all(macro, syn.corpus, 2);
  for (auto& r : recs) {
    r.semantic_score = 3;
    r.cohesion_gate = 0.5;
  }
  recs[0].semantic_score = 5000;  // most of the budget on a small record
  hierarchical_weight(uniform_budget(macro.k), recs, 0.5, 0.01);
  const auto budget = syn.corpus.total_tokens() / 5;
  const auto plan = realize_sample(recs, syn.corpus, budget, 9);
  CHECK(plan.records[0].selected_count == recs[0].member_ids.size());
  CHECK(plan.realized_tokens >= 0.95 * budget);
  CHECK(plan.realized_tokens <= 1.02 * budget);
  const auto again = realize_sample(recs, syn.corpus, budget, 9);
  CHECK(again.sampled_ids == plan.sampled_ids);
  const auto other = realize_sample(recs, syn.corpus, budget, 10);
  CHECK(other.sampled_ids != plan.sampled_ids);
}

TEST_CASE("realize_sample preconditions") {
  const auto c = flat_corpus(10, 10);
  std::vector<SubClusterRecord> recs = {record(0, 0, iota_ids(0, 10), 3, 0, 0.5)};
  recs[0].weight = 1.0;
  CHECK_THROWS_AS(realize_sample(recs, c, 101, 0), Error);
  CHECK_THROWS_AS(realize_sample(recs, c, 9, 0), Error);
  CHECK_THROWS_AS(realize_sample({}, c, 10, 0), Error);
}

TEST_CASE("an off-manifold sub-cluster with high penalty is nearly skipped") {
  std::vector<Sample> samples;
  for (SampleId i = 0; i < 250; ++i) {
    const bool outlier = i >= 200;
    std::vector<float> e = {1.0f, static_cast<float>(i % 7) * 0.01f, 0.0f};
    samples.push_back(testing::sample(i, e, outlier ? 400 : 100));
  }
  const auto c = Corpus::from_samples(3, samples);
  std::vector<SubClusterRecord> recs;
  for (std::size_t j = 0; j < 5; ++j) {
    SubClusterRecord r;
    r.parent_id = 0;
    r.sub_id = j;
    r.member_ids = iota_ids(j * 50, (j + 1) * 50);
    r.centroid = {1, 0, 0};
    r.features = raw_features(r.member_ids, r.centroid, c);
    r.semantic_score = 4.0;
    recs.push_back(r);
  }
  const std::vector<double> parent_coh = {recs[0].features.coh};
  attach_geometry(recs, parent_coh, 0.0, ReferenceMode::Parent, MinerOptions{});
  CHECK(recs[4].struct_penalty == doctest::Approx(4.0));
  hierarchical_weight(BudgetVector{{1.0}}, recs, 0.5, 0.01);
  const auto budget = c.total_tokens() / 4;
  const auto plan = realize_sample(recs, c, budget, 1);
  const double share_by_size = 50.0 / 250.0;
  const double got = static_cast<double>(plan.records[4].selected_count) / static_cast<double>(plan.sampled_ids.size());
  CHECK(got < 0.2 * share_by_size);
}

TEST_CASE("semantic scores from a rating source with imputation") {
  SynthSpec s;
  s.n = 600;
  s.k_true = 3;
  s.seed = 8;
  const auto syn = generate(s);
  const auto macro = fit(syn.corpus, 3, 10, 0);
  auto recs = subcluster_all(macro, syn.corpus, 1);
  std::set<SampleId> first_members(recs[0].member_ids.begin(), recs[0].member_ids.end());
  FunctionRatingSource src(
      [&](SampleId id) -> std::optional<ProbeRating> {
        if (first_members.count(id)) return std::nullopt;
        return ProbeRating{4, 4, 4, 4};
      },
      "test");
  testing::WarningCapture warnings;
  const auto imputed = attach_semantic_scores(recs, syn.corpus, src, MinerOptions{});
  CHECK(imputed == 1);
  CHECK_FALSE(recs[0].scored);
  CHECK(recs[0].semantic_score == 4.0);
  CHECK(recs[1].probe_ids.size() == std::min<std::size_t>(8, recs[1].member_ids.size()));
  CHECK(warnings.contains("imputed"));
}

TEST_CASE("plan exports") {
  testing::TempDir dir("plan");
  std::vector<SubClusterRecord> recs = {record(2, 1, {5, 6}, 3.5, 0.25, 0.75)};
  recs[0].weight = 1.0;
  write_plan_table(dir / "plan.csv", recs);
  CHECK(testing::read_file(dir / "plan.csv").rfind("parent_id,sub_id,size,P,L_struct,beta,W\n2,1,2,", 0) == 0);
  const std::vector<SampleId> ids = {3, 9, 12};
  write_id_list(dir / "ids.txt", ids);
  CHECK(read_id_list(dir / "ids.txt") == ids);
  nlohmann::json j = recs[0];
  const auto back = j.get<SubClusterRecord>();
  CHECK(back.member_ids == recs[0].member_ids);
  CHECK(back.cohesion_gate == 0.75);
}
