#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/chi_squared.hpp>
#include <fmt/format.h>

#include <geomine/budget.hpp>
#include <geomine/clustering.hpp>
#include <geomine/features.hpp>
#include <geomine/miner.hpp>
#include <geomine/pipeline.hpp>
#include <geomine/resolution.hpp>
#include <geomine/synth.hpp>
#include <geomine/transport.hpp>

using namespace geomine;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

fs::path scratch_root() {
  std::random_device rd;
  return fs::temp_directory_path() / fmt::format("geomine-acceptance-{}", rd());
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Hungarian method on a square cost matrix; returns the minimum total cost.
double min_cost_assignment(const std::vector<std::vector<double>>& cost) {
  const std::size_t n = cost.size();
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  double total = 0.0;
  for (std::size_t j = 1; j <= n; ++j) total += cost[p[j] - 1][j - 1];
  return total;
}

std::vector<double> gaussian_cloud(std::size_t n, std::size_t dim, double spread, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, spread);
  std::uniform_real_distribution<double> shift(-2.0, 2.0);
  const double offset = shift(rng);
  std::vector<double> pts(n * dim);
  for (auto& x : pts) x = g(rng) + offset;
  return pts;
}

EmpiricalMeasure random_masses(std::size_t n, std::size_t dim, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.1, 1.0);
  std::vector<double> m(n);
  for (auto& x : m) x = u(rng);
  const double s = std::accumulate(m.begin(), m.end(), 0.0);
  for (auto& x : m) x /= s;
  auto pts = gaussian_cloud(n, dim, 1.0, rng);
  return EmpiricalMeasure(dim, std::move(pts), std::move(m));
}

double tau_by_pairs(const std::vector<double>& a, const std::vector<double>& b) {
  long concordant = 0, discordant = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = i + 1; j < a.size(); ++j) {
      const double s = (a[i] - a[j]) * (b[i] - b[j]);
      if (s > 0) ++concordant;
      if (s < 0) ++discordant;
    }
  }
  const double pairs = static_cast<double>(a.size() * (a.size() - 1) / 2);
  return static_cast<double>(concordant - discordant) / pairs;
}

std::vector<FeatureRow> single_factor_rows(std::size_t k, double noise, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> load(0.5, 1.0);
  const double l0 = load(rng), l1 = load(rng), l2 = load(rng), l3 = load(rng);
  std::vector<FeatureRow> rows;
  for (std::size_t i = 0; i < k; ++i) {
    const double f = g(rng);
    FeatureRow r;
    r.coh = 50.0 + 10.0 * (l0 * f + noise * g(rng));
    r.ent = 1.0 - 0.2 * (l1 * f + noise * g(rng));
    r.len = std::exp(5.0 - 0.5 * (l2 * f + noise * g(rng)));
    r.size = std::exp(6.0 - 0.7 * (l3 * f + noise * g(rng)));
    rows.push_back(r);
  }
  return rows;
}

Outcome multiplier_fidelity() {
  const ParentStats parent{100.0, 10.0, 1.0, 0.5, 5.0};
  FeatureRow sub;
  sub.len = 120.0;
  sub.ent = 1.0;
  const double l = structural_penalty(sub, parent);
  const double lambda = 0.5;
  SubClusterRecord a, b;
  a.parent_id = b.parent_id = 0;
  a.sub_id = 0;
  b.sub_id = 1;
  a.semantic_score = b.semantic_score = 4.0;
  a.cohesion_gate = b.cohesion_gate = 0.5;
  a.struct_penalty = 0.0;
  b.struct_penalty = l;
  std::vector<SubClusterRecord> recs = {a, b};
  hierarchical_weight(BudgetVector{{1.0}}, recs, lambda, 0.01);
  const double multiplier = recs[1].weight / recs[0].weight;
  const double err = std::abs(multiplier - std::exp(-2.0));
  return {err <= 1e-9, fmt::format("multiplier {:.12f}, |err| {:.2e}", multiplier, err)};
}

Outcome kendall_exactness() {
  const std::vector<double> a = {0.3, -1.2, 4.0, 2.5};
  std::vector<double> sorted = a;
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> desc(sorted.rbegin(), sorted.rend());
  bool ok = kendall_tau(a, a) == 1.0 && kendall_tau(sorted, desc) == -1.0;
  std::vector<int> perm = {0, 1, 2, 3};
  int checked = 0;
  do {
    std::vector<double> b(4);
    for (int i = 0; i < 4; ++i) b[i] = a[perm[i]];
    ok = ok && kendall_tau(a, b) == tau_by_pairs(a, b);
    ++checked;
  } while (std::next_permutation(perm.begin(), perm.end()));
  return {ok && checked == 24, fmt::format("{} permutations checked", checked)};
}

Outcome shrink_limits() {
  double worst_limit = 0.0;
  for (double tau : {-0.9, -0.4, 0.1, 0.5, 0.95}) {
    worst_limit = std::max(worst_limit, std::abs(shrink(tau, 1'000'000, 1.0) - tau));
    worst_limit = std::max(worst_limit, std::abs(shrink(tau, 10'000'000, 1.0) - tau));
  }
  bool bounded = true;
  int points = 0;
  for (int i = 0; i < 10; ++i) {
    const double tau = -0.99 + 1.98 * i / 9.0;
    for (std::size_t n : {4, 5, 8, 12, 20, 50, 100, 1000, 100000, 1000000}) {
      bounded = bounded && std::abs(shrink(tau, n, 1.0)) <= std::abs(tau);
      ++points;
    }
  }
  return {worst_limit <= 1e-6 && bounded,
          fmt::format("max |shrink - tau| at large n {:.2e}; {} grid points bounded: {}", worst_limit, points, bounded)};
}

Outcome softmax_budget() {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> log_mag(-2.0, 4.0);
  std::uniform_int_distribution<std::size_t> len(1, 80);
  double worst_shift = 0.0, worst_sum = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const double mag = std::pow(10.0, log_mag(rng));
    std::vector<double> s(len(rng));
    for (auto& x : s) x = mag * u(rng);
    const double c = 100.0 * u(rng);
    std::vector<double> shifted(s);
    for (auto& x : shifted) x += c;
    const auto r = allocate(s);
    const auto q = allocate(shifted);
    double sum = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      worst_shift = std::max(worst_shift, std::abs(r[i] - q[i]));
      sum += r[i];
    }
    worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
  }
  return {worst_shift <= 1e-12 && worst_sum <= 1e-9,
          fmt::format("max shift deviation {:.2e}, max |sum - 1| {:.2e}", worst_shift, worst_sum)};
}

Outcome spectral_consensus() {
  double worst_residual = 0.0, worst_l1 = 0.0, worst_eig = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto table = stabilize_standardize(single_factor_rows(72, 0.3, seed));
    const auto w = spectral_weights(table);
    Eigen::Matrix4d sigma;
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 4; ++j) sigma(i, j) = w.covariance[i][j];
    }
    const Eigen::Vector4d v(w.principal[0], w.principal[1], w.principal[2], w.principal[3]);
    worst_residual = std::max(worst_residual, (sigma * v - w.eigenvalue * v).norm() / w.eigenvalue);
    worst_l1 = std::max(worst_l1, std::abs(std::abs(w.coh) + std::abs(w.ent) + std::abs(w.len) + std::abs(w.size) - 1.0));
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> es(sigma);
    worst_eig = std::max(worst_eig, std::abs(es.eigenvalues()(3) - w.eigenvalue) / es.eigenvalues()(3));
  }
  const Matrix4 corr = {{{1.0, 0.60, 0.30, 0.25}, {0.60, 1.0, 0.35, 0.20}, {0.30, 0.35, 1.0, 0.15},
                         {0.25, 0.20, 0.15, 1.0}}};
  const auto w = consensus_from_covariance(corr);
  const bool top_two = std::min(w.coh, w.ent) > std::max(w.len, w.size);
  return {worst_residual <= 1e-8 && worst_l1 <= 1e-9 && worst_eig <= 1e-9 && top_two,
          fmt::format("residual {:.2e}, |L1 - 1| {:.2e}; structured weights coh {:.3f} ent {:.3f} len {:.3f} size {:.3f}",
                      worst_residual, worst_l1, w.coh, w.ent, w.len, w.size)};
}

Outcome transport_oracle() {
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<std::size_t> size(2, 50);
  std::uniform_int_distribution<std::size_t> dim(1, 6);
  double worst = 0.0;
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = size(rng), d = dim(rng);
    const auto a = EmpiricalMeasure::uniform(d, gaussian_cloud(n, d, 1.0, rng));
    const auto b = EmpiricalMeasure::uniform(d, gaussian_cloud(n, d, 1.5, rng));
    std::vector<std::vector<double>> cost(n, std::vector<double>(n));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) cost[i][j] = squared_distance(a.point(i), b.point(j));
    }
    const double oracle = min_cost_assignment(cost) / static_cast<double>(n);
    worst = std::max(worst, std::abs(w2_exact(a, b) - oracle));
  }

  bool axioms = true;
  for (int t = 0; t < 20; ++t) {
    const auto a = random_masses(5 + t % 17, 3, rng);
    const auto b = random_masses(7 + t % 11, 3, rng);
    const auto c = random_masses(4 + t % 13, 3, rng);
    const double ab = w2_exact(a, b), ba = w2_exact(b, a);
    const double ac = std::sqrt(w2_exact(a, c)), bc = std::sqrt(w2_exact(b, c));
    axioms = axioms && ab >= 0.0 && std::abs(ab - ba) <= 1e-9 && std::abs(w2_exact(a, a)) <= 1e-12 &&
             ac <= std::sqrt(ab) + bc + 1e-9;
  }
  return {worst <= 1e-8 && axioms, fmt::format("max |w2 - oracle| {:.2e}; metric axioms hold: {}", worst, axioms)};
}

Outcome decomposition_inequality() {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<std::size_t> size(20, 200);
  std::uniform_int_distribution<std::size_t> kdist(2, 8);
  std::uniform_int_distribution<std::size_t> dim(2, 5);
  bool holds = true, gains = true;
  double min_slack = std::numeric_limits<double>::infinity(), max_slack = 0.0;
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = size(rng), d = dim(rng), k = std::min(kdist(rng), n / 4);
    std::vector<double> pts;
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<std::vector<double>> centers(k, std::vector<double>(d));
    for (auto& c : centers) {
      for (auto& x : c) x = 4.0 * g(rng);
    }
    for (std::size_t i = 0; i < n; ++i) {
      const auto& c = centers[i % k];
      for (std::size_t t2 = 0; t2 < d; ++t2) pts.push_back(c[t2] + g(rng));
    }
    const auto mu = EmpiricalMeasure::uniform(d, pts);
    const auto cb = euclidean_kmeans(d, pts, k, derive_seed(7, t));
    const auto mom = cluster_moments(cb, mu);

    std::vector<std::vector<std::pair<double, std::size_t>>> by_cluster(cb.k);
    for (std::size_t i = 0; i < n; ++i) {
      by_cluster[mom.assignment[i]].emplace_back(squared_distance(mu.point(i), cb.center(mom.assignment[i])), i);
    }

    // random selection with at least one point per occupied cluster
    std::vector<std::size_t> chosen;
    std::bernoulli_distribution keep(0.4);
    for (auto& members : by_cluster) {
      if (members.empty()) continue;
      std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
      const std::size_t forced = pick(rng);
      for (std::size_t m = 0; m < members.size(); ++m) {
        if (m == forced || keep(rng)) chosen.push_back(members[m].second);
      }
    }
    std::vector<double> sel_pts;
    for (auto i : chosen) sel_pts.insert(sel_pts.end(), mu.point(i).begin(), mu.point(i).end());
    try {
      const auto rep = decomposition(mu, cb, EmpiricalMeasure::uniform(d, sel_pts));
      holds = holds && rep.e_s <= rep.bound + 1e-9;
      min_slack = std::min(min_slack, rep.slack());
      max_slack = std::max(max_slack, rep.slack());
    } catch (const Error&) {
      holds = false;
    }

    // farthest half of each cluster pruned
    std::vector<double> near_pts;
    for (auto& members : by_cluster) {
      if (members.empty()) continue;
      std::sort(members.begin(), members.end());
      const std::size_t keep_n = std::max<std::size_t>(1, (members.size() + 1) / 2);
      for (std::size_t m = 0; m < keep_n; ++m) {
        const auto p = mu.point(members[m].second);
        near_pts.insert(near_pts.end(), p.begin(), p.end());
      }
    }
    const auto pruned = decomposition(mu, cb, EmpiricalMeasure::uniform(d, near_pts));
    holds = holds && pruned.e_s <= pruned.bound + 1e-9;
    for (const auto& c : pruned.per_cluster) gains = gains && c.delta_gain >= -1e-12;
  }
  return {holds && gains, fmt::format("bound holds on 50 instances: {}, slack in [{:.4f}, {:.4f}]; pruned gains >= 0: {}",
                                      holds, min_slack, max_slack, gains)};
}

Outcome zador_trend_check() {
  const std::vector<std::size_t> ks = {8, 16, 32, 64};
  std::vector<std::string> slopes;
  bool ok = true;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto pts = zador_trend(2, ks, 4000, seed);
    const double slope = log_log_slope(pts);
    ok = ok && slope >= -1.3 && slope <= -0.7;
    slopes.push_back(fmt::format("{:.3f}", slope));
  }
  return {ok, fmt::format("slopes {}", fmt::join(slopes, " "))};
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

Outcome resolution_recovery() {
  const auto ks = k_range(4, 24, 2);
  std::vector<std::vector<double>> curves(ks.size());
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    SynthSpec s;
    s.k_true = 12;
    s.concentration = 100;
    s.n = 6000;
    s.dim = 32;
    s.seed = seed;
    s.length_log_mean.clear();
    s.languages_per_component.clear();
    for (std::size_t c = 0; c < 12; ++c) {
      s.length_log_mean.push_back(4.0 + 2.0 * static_cast<double>(c) / 11.0);
      s.languages_per_component.push_back(1 + c / 2);
    }
    const auto syn = generate(s);
    SelectKOptions o;
    o.k_values = ks;
    o.seed = seed;
    const auto profile = select_k(syn.corpus, o);
    for (std::size_t i = 0; i < ks.size(); ++i) curves[i].push_back(profile.per_k[i].j_final);
  }
  std::vector<double> med(ks.size());
  for (std::size_t i = 0; i < ks.size(); ++i) med[i] = median(curves[i]);
  const auto idx = [&](std::size_t k) { return static_cast<std::size_t>(std::find(ks.begin(), ks.end(), k) - ks.begin()); };
  const bool rises = med[idx(12)] > med[idx(4)];

  const std::size_t arg = static_cast<std::size_t>(std::max_element(med.begin(), med.end()) - med.begin());
  double peak = 0.0;
  for (std::size_t i = 1; i <= arg; ++i) peak = std::max(peak, med[i] - med[i - 1]);
  double beyond = 0.0;
  for (std::size_t i = arg + 1; i < med.size(); ++i) beyond = std::max(beyond, std::abs(med[i] - med[i - 1]));
  const bool plateau = arg > 0 && peak > 0.0 && beyond < 0.25 * peak;

  std::vector<std::string> curve;
  for (std::size_t i = 0; i < ks.size(); ++i) curve.push_back(fmt::format("{}:{:.3f}", ks[i], med[i]));
  return {rises && plateau, fmt::format("median J {}; argmax K={} peak dJ {:.3f}, max |dJ| beyond {:.3f}",
                                        fmt::join(curve, " "), ks[arg], peak, beyond)};
}

Outcome curation_win(const fs::path& root) {
  int wins = 0;
  double selected_outliers = 0.0, random_outliers = 0.0;
  for (int t = 0; t < 20; ++t) {
    SynthSpec s;
    s.outlier_fraction = 0.15;
    s.seed = 100 + static_cast<std::uint64_t>(t);
    const auto syn = generate(s);
    const fs::path dir = root / fmt::format("curation-{}", t);
    write_synth(syn, dir / "store");
    std::map<SampleId, GroundTruth> truth;
    for (const auto& g : syn.truth) truth[g.id] = g;
    FunctionRatingSource source([&](SampleId id) { return std::optional(stub_rating(truth.at(id))); }, "stub");

    PipelineConfig c;
    c.store = dir / "store";
    c.output = dir / "out";
    c.seed = static_cast<std::uint64_t>(t);
    c.k_min = 4;
    c.k_max = 20;
    c.k_step = 2;
    c.probe_fraction = 0.2;
    c.token_fraction = 0.2;
    c.evaluate = false;
    const auto result = run(c, &source);

    const auto& corpus = syn.corpus;
    std::vector<std::size_t> clean, selected;
    for (std::size_t r = 0; r < corpus.size(); ++r) {
      if (!syn.truth[r].is_outlier) clean.push_back(r);
    }
    for (auto id : result.plan.sampled_ids) selected.push_back(corpus.row_of(id));
    std::vector<std::size_t> all(corpus.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    std::mt19937_64 rng(derive_seed(static_cast<std::uint64_t>(t), "random"));
    std::shuffle(all.begin(), all.end(), rng);
    const std::vector<std::size_t> random_rows(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(selected.size()));

    const auto subsample = [](std::vector<std::size_t> rows, std::uint64_t seed) {
      std::mt19937_64 g(seed);
      std::shuffle(rows.begin(), rows.end(), g);
      rows.resize(std::min<std::size_t>(300, rows.size()));
      return rows;
    };
    const auto reference = EmpiricalMeasure::from_corpus(corpus, subsample(clean, 1));
    const double w_sel = w2_exact(reference, EmpiricalMeasure::from_corpus(corpus, subsample(selected, 2)));
    const double w_rnd = w2_exact(reference, EmpiricalMeasure::from_corpus(corpus, subsample(random_rows, 3)));
    wins += w_sel < w_rnd;
    for (auto r : selected) selected_outliers += syn.truth[r].is_outlier;
    for (auto r : random_rows) random_outliers += syn.truth[r].is_outlier;
    fs::remove_all(dir);
  }
  const double ratio = random_outliers > 0 ? selected_outliers / random_outliers : 0.0;
  return {wins >= 16 && ratio <= 1.0 / 3.0,
          fmt::format("{}/20 trials closer to clean than random; outlier mass ratio {:.3f}", wins, ratio)};
}

Outcome ablation_behavior(const fs::path& root) {
  SynthSpec s;
  s.n = 6000;
  s.seed = 21;
  const auto syn = generate(s);
  const fs::path dir = root / "ablation";
  export_store(syn.corpus, dir / "store");

  PipelineConfig c;
  c.store = dir / "store";
  c.k_fixed = 20;
  c.probe_fraction = 0.2;
  c.token_fraction = 0.3;
  c.evaluate = false;
  c.seed = 5;

  c.output = dir / "wo_stage1";
  c.ablation = AblationMode::WoStage1;
  std::map<SampleId, GroundTruth> truth;
  for (const auto& g : syn.truth) truth[g.id] = g;
  FunctionRatingSource source([&](SampleId id) { return std::optional(stub_rating(truth.at(id))); }, "stub");
  const auto r1 = run(c, &source);
  bool uniform = !r1.budget.r.empty();
  for (double r : r1.budget.r) uniform = uniform && r == 1.0 / static_cast<double>(r1.budget.size());

  c.output = dir / "wo_stage2";
  c.ablation = AblationMode::WoStage2;
  const auto r2 = run(c, &source);
  const auto& corpus = syn.corpus;
  std::vector<bool> picked(corpus.size(), false);
  for (auto id : r2.plan.sampled_ids) picked[corpus.row_of(id)] = true;

  constexpr std::size_t kBins = 5;
  int tested = 0, rejected = 0;
  double min_p = 1.0;
  for (const auto& rec : r2.plan.records) {
    std::vector<std::pair<double, std::size_t>> sims;
    for (auto id : rec.member_ids) {
      const auto row = corpus.row_of(id);
      const auto e = corpus.embedding(row);
      double dot = 0.0;
      for (std::size_t t = 0; t < corpus.dim(); ++t) dot += static_cast<double>(e[t]) * rec.centroid[t];
      sims.emplace_back(dot, row);
    }
    std::sort(sims.begin(), sims.end());
    std::size_t n_sel = 0;
    for (const auto& [_, row] : sims) n_sel += picked[row];
    if (n_sel < 5 * kBins) continue;
    double stat = 0.0;
    for (std::size_t b = 0; b < kBins; ++b) {
      const std::size_t lo = b * sims.size() / kBins, hi = (b + 1) * sims.size() / kBins;
      std::size_t observed = 0;
      for (std::size_t i = lo; i < hi; ++i) observed += picked[sims[i].second];
      const double expected = static_cast<double>(n_sel) * static_cast<double>(hi - lo) / static_cast<double>(sims.size());
      stat += (observed - expected) * (observed - expected) / expected;
    }
    const boost::math::chi_squared dist(kBins - 1);
    const double p = boost::math::cdf(boost::math::complement(dist, stat));
    min_p = std::min(min_p, p);
    ++tested;
    rejected += p < 0.01;
  }
  fs::remove_all(dir);
  return {uniform && tested == 20 && rejected == 0,
          fmt::format("wo_stage1 r_k = 1/K exactly: {}; wo_stage2 {} clusters tested, {} rejected at 0.01 (min p {:.3f})",
                      uniform, tested, rejected, min_p)};
}

Outcome determinism(const fs::path& root) {
  SynthSpec s;
  s.n = 3000;
  s.outlier_fraction = 0.1;
  s.seed = 31;
  const auto syn = generate(s);
  const fs::path dir = root / "determinism";
  write_synth(syn, dir / "store");
  write_stub_ratings(dir / "ratings.jsonl", syn.truth);

  const auto config_for = [&](const std::string& out) {
    PipelineConfig c;
    c.store = dir / "store";
    c.output = dir / out;
    c.offline_ratings = dir / "ratings.jsonl";
    c.k_min = 4;
    c.k_max = 16;
    c.probe_fraction = 0.3;
    c.eval_points = 150;
    c.seed = 9;
    return c;
  };
  run(config_for("a"));
  run(config_for("b"));
  const std::vector<std::string> files = {"sampled_ids.txt", "features.csv", "budget.csv", "plan.csv",
                                          "transport_report.json"};
  std::vector<std::string> differing;
  std::size_t compared = 0;
  for (const auto& f : files) {
    ++compared;
    if (read_file(dir / "a" / f) != read_file(dir / "b" / f)) differing.push_back(f);
  }
  for (const auto& entry : fs::directory_iterator(dir / "a" / "stages")) {
    for (const auto& file : fs::recursive_directory_iterator(entry.path())) {
      if (!file.is_regular_file()) continue;
      const auto rel = fs::relative(file.path(), dir / "a");
      ++compared;
      if (read_file(file.path()) != read_file(dir / "b" / rel)) differing.push_back(rel.string());
    }
  }
  const bool nonempty = !read_file(dir / "a" / "sampled_ids.txt").empty();
  fs::remove_all(dir);
  return {differing.empty() && nonempty,
          differing.empty() ? fmt::format("{} files byte-identical", compared)
                            : fmt::format("differing: {}", fmt::join(differing, ", "))};
}

}  // namespace

int main() {
  set_warning_sink([](std::string_view) {});
  const fs::path root = scratch_root();
  fs::create_directories(root);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"score multiplier at +2 sigma", multiplier_fidelity},
      {"kendall tau exactness", kendall_exactness},
      {"shrinkage limits", shrink_limits},
      {"softmax budget", softmax_budget},
      {"spectral consensus", spectral_consensus},
      {"exact transport oracle", transport_oracle},
      {"decomposition inequality", decomposition_inequality},
      {"quantization decay", zador_trend_check},
      {"resolution recovery", resolution_recovery},
      {"end-to-end curation", [&] { return curation_win(root); }},
      {"ablation behavior", [&] { return ablation_behavior(root); }},
      {"determinism", [&] { return determinism(root); }},
  };

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, fmt::format("error: {}", e.what())};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    fmt::print("{} criterion {:>2} {} ({:.1f}s): {}\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, secs,
               o.detail);
    std::fflush(stdout);
    failures += !o.pass;
  }
  std::error_code ec;
  fs::remove_all(root, ec);
  return failures == 0 ? 0 : 1;
}
