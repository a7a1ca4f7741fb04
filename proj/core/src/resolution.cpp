#include "geomine/resolution.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <fstream>
#include <set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "geomine/common.hpp"
#include "geomine/features.hpp"

namespace geomine {

SoftBridge soft_bridge(const CentroidView& from, const CentroidView& to, double t_scale) {
  if (from.dim != to.dim) {
    throw Error(fmt::format("dimension mismatch: bridge endpoints have dims {} and {}", from.dim, to.dim));
  }
  if (from.k == 0 || to.k == 0) throw Error("soft bridge needs non-empty centroid sets");
  SoftBridge b;
  b.rows = from.k;
  b.cols = to.k;
  b.t_scale = t_scale;
  b.pi.resize(from.k * to.k);
  std::vector<double> logits(to.k);
  for (std::size_t i = 0; i < from.k; ++i) {
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < to.k; ++j) {
      logits[j] = t_scale * cosine(from.row(i), to.row(j));
      peak = std::max(peak, logits[j]);
    }
    double total = 0.0;
    for (std::size_t j = 0; j < to.k; ++j) {
      logits[j] = std::exp(logits[j] - peak);
      total += logits[j];
    }
    for (std::size_t j = 0; j < to.k; ++j) b.pi[i * to.k + j] = logits[j] / total;
  }
  return b;
}

std::vector<double> reconstruct(const SoftBridge& bridge, std::span<const double> scores) {
  if (scores.size() != bridge.cols) {
    throw Error(fmt::format("length mismatch: bridge has {} columns, got {} scores", bridge.cols, scores.size()));
  }
  const auto [lo, hi] = std::minmax_element(scores.begin(), scores.end());
  std::vector<double> out(bridge.rows, 0.0);
  for (std::size_t i = 0; i < bridge.rows; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < bridge.cols; ++j) acc += bridge(i, j) * scores[j];
    out[i] = std::clamp(acc, *lo, *hi);
  }
  return out;
}

double kendall_tau(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error("kendall_tau needs equal-length vectors");
  const std::size_t k = a.size();
  if (k < 2) throw Error("kendall_tau needs at least two entries");
  long long conc = 0;
  long long disc = 0;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i + 1; j < k; ++j) {
      const double da = a[i] - a[j];
      const double db = b[i] - b[j];
      const int sa = (da > 0) - (da < 0);
      const int sb = (db > 0) - (db < 0);
      const int prod = sa * sb;
      if (prod > 0) {
        ++conc;
      } else if (prod < 0) {
        ++disc;
      }
    }
  }
  const double pairs = static_cast<double>(k) * static_cast<double>(k - 1) / 2.0;
  return static_cast<double>(conc - disc) / pairs;
}

double shrink(double tau, std::size_t n_valid, double lambda_shrink) {
  if (n_valid < 4) {
    warn(fmt::format("only {} valid clusters; stability set to 0 (insufficient evidence)", n_valid));
    return 0.0;
  }
  constexpr double kClamp = 1.0 - 1e-12;
  const double t = std::clamp(tau, -kClamp, kClamp);
  const double z = std::atanh(t) * std::tanh(lambda_shrink * std::sqrt(static_cast<double>(n_valid - 3)));
  return std::tanh(z);
}

const StabilityPoint& StabilityProfile::at(std::size_t k) const {
  for (const auto& p : per_k) {
    if (p.k == k) return p;
  }
  throw Error(fmt::format("resolution K={} not in profile", k));
}

ResolutionScores geometric_scores(const ClusterModel& model, const Corpus& corpus) {
  const auto features = stabilize_standardize(extract_raw(model, corpus));
  ResolutionScores r;
  ConsensusWeights w;
  if (features.clusters() < SpectralOptions{}.min_clusters) {
    warn(fmt::format("only {} clusters; spectral consensus undefined, using uniform weights", features.clusters()));
    w = uniform_weights();
    w.degenerate = true;
  } else {
    w = spectral_weights(features);
  }
  r.scores = score(features, w);
  r.degenerate_weights = w.degenerate;
  return r;
}

std::size_t argmax_k(std::span<const StabilityPoint> points) {
  if (points.empty()) throw Error("empty stability profile");
  const StabilityPoint* best = &points.front();
  for (const auto& p : points) {
    if (p.j_final > best->j_final || (p.j_final == best->j_final && p.k < best->k)) best = &p;
  }
  return best->k;
}

std::vector<std::size_t> k_range(std::size_t k_min, std::size_t k_max, std::size_t k_step) {
  if (k_step == 0) throw Error("k step must be positive");
  if (k_min > k_max) throw Error("k_min exceeds k_max");
  std::vector<std::size_t> ks;
  for (std::size_t k = k_min; k <= k_max; k += k_step) ks.push_back(k);
  return ks;
}

StabilityProfile select_k(const Corpus& corpus, const SelectKOptions& o) {
  if (o.k_values.empty()) throw Error("k range is empty");
  if (o.strides.empty() || o.strides.size() != o.hop_weights.size()) {
    throw Error("strides and hop weights must be non-empty and of equal length");
  }
  for (double g : o.hop_weights) {
    if (!(g > 0.0)) throw Error("hop weights must be positive");
  }
  std::set<std::size_t> ks(o.k_values.begin(), o.k_values.end());
  if (*ks.begin() < 2) throw Error("candidate resolutions must be >= 2");
  const std::size_t max_stride = *std::max_element(o.strides.begin(), o.strides.end());
  if (*ks.rbegin() + max_stride > corpus.size()) {
    throw Error(fmt::format("max K ({}) + max stride ({}) exceeds corpus size ({})", *ks.rbegin(), max_stride,
                            corpus.size()));
  }

  // One fit per distinct resolution; seeds derive from (seed, K) so a K shared
  // between a candidate and a hop target is fitted identically.
  std::set<std::size_t> needed = ks;
  for (auto k : ks) {
    for (auto h : o.strides) needed.insert(k + h);
  }
  struct Fitted {
    ClusterModel model;
    ResolutionScores scores;
  };
  std::map<std::size_t, Fitted> fits;
  const auto sweep_seed = derive_seed(o.seed, "select_k");
  for (auto k : needed) {
    auto model = fit(corpus, k, o.iters, derive_seed(sweep_seed, k));
    auto scores = geometric_scores(model, corpus);
    fits.emplace(k, Fitted{std::move(model), std::move(scores)});
  }

  double gamma_total = 0.0;
  for (double g : o.hop_weights) gamma_total += g;

  StabilityProfile profile;
  profile.hop_strides = o.strides;
  profile.hop_weights = o.hop_weights;
  profile.lambda_shrink = o.lambda_shrink;
  profile.t_scale = o.t_scale;
  for (auto k : ks) {
    const auto& base = fits.at(k);
    StabilityPoint p;
    p.k = k;
    p.k_effective = base.model.k;
    p.degenerate_weights = base.scores.degenerate_weights;
    for (auto s : base.model.sizes) p.n_valid += s >= o.min_members ? 1 : 0;
    double acc = 0.0;
    for (std::size_t h = 0; h < o.strides.size(); ++h) {
      const auto& next = fits.at(k + o.strides[h]);
      double tau = 0.0;
      if (base.model.k >= 2) {
        const auto bridge = soft_bridge(base.model.centroid_view(), next.model.centroid_view(), o.t_scale);
        const auto rec = reconstruct(bridge, next.scores.scores);
        tau = kendall_tau(base.scores.scores, rec);
      }
      p.j_hops.push_back(tau);
      acc += o.hop_weights[h] * tau;
    }
    p.j_raw = acc / gamma_total;
    p.j_final = shrink(p.j_raw, p.n_valid, o.lambda_shrink);
    profile.per_k.push_back(std::move(p));
  }
  profile.k_star = argmax_k(profile.per_k);
  return profile;
}

void write_profile_table(const std::filesystem::path& path, const StabilityProfile& profile) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(fmt::format("cannot write {}", path.string()));
  out << "K";
  for (auto h : profile.hop_strides) out << ",tau_h" << h;
  out << ",J_raw,J_final,n_valid\n";
  for (const auto& p : profile.per_k) {
    out << p.k;
    for (double t : p.j_hops) out << fmt::format(",{:.17g}", t);
    out << fmt::format(",{:.17g},{:.17g},{}\n", p.j_raw, p.j_final, p.n_valid);
  }
}

void write_stability_plot(const std::filesystem::path& path, const StabilityProfile& profile) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(fmt::format("cannot write {}", path.string()));
  out << "K,J_final,delta_J\n";
  for (std::size_t i = 0; i < profile.per_k.size(); ++i) {
    const auto& p = profile.per_k[i];
    const double delta = i == 0 ? 0.0 : p.j_final - profile.per_k[i - 1].j_final;
    out << fmt::format("{},{:.17g},{:.17g}\n", p.k, p.j_final, delta);
  }
}

void to_json(nlohmann::json& j, const StabilityProfile& p) {
  auto rows = nlohmann::json::array();
  for (const auto& s : p.per_k) {
    rows.push_back({{"k", s.k},
                    {"k_effective", s.k_effective},
                    {"j_hops", s.j_hops},
                    {"j_raw", s.j_raw},
                    {"j_final", s.j_final},
                    {"n_valid", s.n_valid},
                    {"degenerate_weights", s.degenerate_weights}});
  }
  j = nlohmann::json{{"per_k", rows},
                     {"k_star", p.k_star},
                     {"hop_strides", p.hop_strides},
                     {"hop_weights", p.hop_weights},
                     {"lambda_shrink", p.lambda_shrink},
                     {"t_scale", p.t_scale}};
}

void from_json(const nlohmann::json& j, StabilityProfile& p) {
  p.per_k.clear();
  for (const auto& r : j.at("per_k")) {
    StabilityPoint s;
    r.at("k").get_to(s.k);
    r.at("k_effective").get_to(s.k_effective);
    r.at("j_hops").get_to(s.j_hops);
    r.at("j_raw").get_to(s.j_raw);
    r.at("j_final").get_to(s.j_final);
    r.at("n_valid").get_to(s.n_valid);
    r.at("degenerate_weights").get_to(s.degenerate_weights);
    p.per_k.push_back(std::move(s));
  }
  j.at("k_star").get_to(p.k_star);
  j.at("hop_strides").get_to(p.hop_strides);
  j.at("hop_weights").get_to(p.hop_weights);
  j.at("lambda_shrink").get_to(p.lambda_shrink);
  j.at("t_scale").get_to(p.t_scale);
}

}  // namespace geomine
