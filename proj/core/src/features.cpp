#include "geomine/features.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "geomine/common.hpp"

namespace geomine {

namespace {

Vector4 multiply(const Matrix4& a, const Vector4& v) {
  Vector4 out{};
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) out[i] += a[i][j] * v[j];
  }
  return out;
}

double dot4(const Vector4& a, const Vector4& b) {
  double s = 0.0;
  for (int i = 0; i < 4; ++i) s += a[i] * b[i];
  return s;
}

double norm4(const Vector4& a) { return std::sqrt(dot4(a, a)); }

// Column accessors in aligned order [coh, ent, len, size].
std::array<double, 4> aligned(const FeatureRow& r) { return {r.coh, -r.ent, -r.len, -r.size}; }

bool is_zero_spread(double sd, double mean) { return sd <= 1e-12 * std::max(1.0, std::abs(mean)); }

}  // namespace

PowerIterationResult power_iteration(const Matrix4& a, Vector4 start, double tolerance, std::size_t max_iterations) {
  PowerIterationResult r;
  double n0 = norm4(start);
  if (n0 == 0.0) throw Error("power iteration needs a nonzero start vector");
  for (auto& x : start) x /= n0;
  Vector4 v = start;
  for (std::size_t it = 1; it <= max_iterations; ++it) {
    const Vector4 av = multiply(a, v);
    const double lambda = dot4(v, av);
    Vector4 residual;
    for (int i = 0; i < 4; ++i) residual[i] = av[i] - lambda * v[i];
    r.vector = v;
    r.value = lambda;
    r.iterations = it;
    if (norm4(residual) <= tolerance * std::abs(lambda)) {
      r.converged = true;
      return r;
    }
    const double n = norm4(av);
    if (n == 0.0) return r;  // v is in the null space; nothing dominant
    for (int i = 0; i < 4; ++i) v[i] = av[i] / n;
  }
  return r;
}

double cohesion_of(std::span<const SampleId> members, std::span<const float> centroid, const Corpus& corpus) {
  double total = 0.0;
  for (auto id : members) total += std::max(0.0, 1.0 - cosine(corpus.embedding(corpus.row_of(id)), centroid));
  const double mean = members.empty() ? 0.0 : total / static_cast<double>(members.size());
  return std::min(kCohesionCap, 1.0 / (kCohesionFloor + mean));
}

double language_entropy(std::span<const SampleId> members, const Corpus& corpus) {
  if (members.empty()) return 0.0;
  std::map<std::uint32_t, std::size_t> counts;
  for (auto id : members) ++counts[corpus.meta(corpus.row_of(id)).language];
  const double n = static_cast<double>(members.size());
  double h = 0.0;
  for (const auto& [lang, c] : counts) {
    const double p = static_cast<double>(c) / n;
    h -= p * std::log(p);
  }
  return std::max(0.0, h);
}

FeatureRow raw_features(std::span<const SampleId> members, std::span<const float> centroid, const Corpus& corpus) {
  FeatureRow f;
  f.coh = cohesion_of(members, centroid, corpus);
  f.size = static_cast<double>(members.size());
  double len = 0.0;
  for (auto id : members) len += corpus.meta(corpus.row_of(id)).token_length;
  f.len = members.empty() ? 0.0 : len / static_cast<double>(members.size());
  f.ent = language_entropy(members, corpus);
  return f;
}

std::vector<FeatureRow> extract_raw(const ClusterModel& model, const Corpus& corpus) {
  std::vector<FeatureRow> rows(model.k);
  parallel_for_chunks(model.k, 1, [&](std::size_t, std::size_t begin, std::size_t end) {
    for (std::size_t j = begin; j < end; ++j) rows[j] = raw_features(model.members[j], model.centroid(j), corpus);
  });
  return rows;
}

ClusterFeatures stabilize_standardize(std::vector<FeatureRow> raw) {
  ClusterFeatures f;
  const std::size_t k = raw.size();
  f.stabilized.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    const auto& r = raw[i];
    if (!(r.size >= 1.0) || !(r.len >= 1.0)) {
      throw Error(fmt::format("cluster {}: size and length must be >= 1 before log stabilization", i));
    }
    f.stabilized.push_back({r.coh, std::log(r.size), std::log(r.len), r.ent});
  }
  f.raw = std::move(raw);

  auto column_moments = [&](auto get) {
    double mean = 0.0;
    for (const auto& r : f.stabilized) mean += get(r);
    mean /= static_cast<double>(std::max<std::size_t>(k, 1));
    double ss = 0.0;
    for (const auto& r : f.stabilized) ss += (get(r) - mean) * (get(r) - mean);
    const double sd = k > 1 ? std::sqrt(ss / static_cast<double>(k - 1)) : 0.0;
    return std::pair{mean, sd};
  };
  auto [m_coh, s_coh] = column_moments([](const FeatureRow& r) { return r.coh; });
  auto [m_size, s_size] = column_moments([](const FeatureRow& r) { return r.size; });
  auto [m_len, s_len] = column_moments([](const FeatureRow& r) { return r.len; });
  auto [m_ent, s_ent] = column_moments([](const FeatureRow& r) { return r.ent; });
  f.feature_means = {m_coh, m_size, m_len, m_ent};
  f.feature_stds = {s_coh, s_size, s_len, s_ent};

  auto z = [](double x, double mean, double sd) { return is_zero_spread(sd, mean) ? 0.0 : (x - mean) / sd; };
  f.standardized.reserve(k);
  for (const auto& r : f.stabilized) {
    f.standardized.push_back(
        {z(r.coh, m_coh, s_coh), z(r.size, m_size, s_size), z(r.len, m_len, s_len), z(r.ent, m_ent, s_ent)});
  }
  return f;
}

Matrix4 aligned_covariance(const ClusterFeatures& features) {
  Matrix4 cov{};
  const std::size_t k = features.standardized.size();
  for (const auto& row : features.standardized) {
    const auto x = aligned(row);
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 4; ++j) cov[i][j] += x[i] * x[j];
    }
  }
  const double denom = k > 1 ? static_cast<double>(k - 1) : 1.0;
  for (auto& r : cov) {
    for (auto& v : r) v /= denom;
  }
  return cov;
}

ConsensusWeights uniform_weights() { return ConsensusWeights{}; }

ConsensusWeights consensus_from_covariance(const Matrix4& covariance, const SpectralOptions& options) {
  ConsensusWeights w;
  w.covariance = covariance;
  const auto first = power_iteration(covariance, {1.0, 0.93, 0.87, 0.81}, options.tolerance, options.max_iterations);
  w.principal = first.vector;
  w.eigenvalue = first.value;
  w.iterations = first.iterations;

  // Second eigenvalue from the deflated matrix, started orthogonal to v1.
  Matrix4 deflated = covariance;
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) deflated[i][j] -= first.value * first.vector[i] * first.vector[j];
  }
  Vector4 start{0.81, -0.87, 0.93, -1.0};
  const double proj = dot4(start, first.vector);
  for (int i = 0; i < 4; ++i) start[i] -= proj * first.vector[i];
  if (norm4(start) < 1e-12) start = {1.0, -1.0, 1.0, -1.0};
  const auto second = power_iteration(deflated, start, options.tolerance, options.max_iterations);
  w.second_eigenvalue = std::max(0.0, second.value);

  const bool no_signal = !(first.value > 1e-12);
  const bool tied = w.second_eigenvalue > 0.0 && first.value / w.second_eigenvalue < options.tie_ratio;
  if (no_signal || tied) {
    warn(fmt::format("spectral consensus is degenerate (lambda1={:.6g}, lambda2={:.6g}); using uniform weights",
                     first.value, w.second_eigenvalue));
    w.degenerate = true;
    w.coh = w.ent = w.len = w.size = 0.25;
    return w;
  }
  if (!first.converged) {
    throw Error(fmt::format("power iteration did not converge within {} iterations", options.max_iterations));
  }

  Vector4 v = first.vector;
  const double sum = v[0] + v[1] + v[2] + v[3];
  if (sum < 0.0 || (sum == 0.0 && v[0] < 0.0)) {
    for (auto& x : v) x = -x;
  }
  w.principal = v;
  const double l1 = std::abs(v[0]) + std::abs(v[1]) + std::abs(v[2]) + std::abs(v[3]);
  w.coh = v[0] / l1;
  w.ent = v[1] / l1;
  w.len = v[2] / l1;
  w.size = v[3] / l1;
  return w;
}

ConsensusWeights spectral_weights(const ClusterFeatures& features, const SpectralOptions& options) {
  if (features.standardized.size() < options.min_clusters) {
    throw Error(fmt::format("spectral weights need at least {} clusters, got {}", options.min_clusters,
                            features.standardized.size()));
  }
  return consensus_from_covariance(aligned_covariance(features), options);
}

double score_row(const FeatureRow& z, const ConsensusWeights& w) {
  return w.coh * z.coh - (w.len * z.len + w.ent * z.ent + w.size * z.size);
}

std::vector<double> score(const ClusterFeatures& features, const ConsensusWeights& weights) {
  std::vector<double> s;
  s.reserve(features.standardized.size());
  for (const auto& z : features.standardized) s.push_back(score_row(z, weights));
  return s;
}

void write_feature_table(const std::filesystem::path& path, const ClusterFeatures& features,
                         std::span<const double> scores) {
  if (scores.size() != features.clusters()) throw Error("score vector length does not match feature table");
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(fmt::format("cannot write {}", path.string()));
  out << "cluster_id,coh,size,len,ent,coh_std,size_std,len_std,ent_std,score\n";
  for (std::size_t k = 0; k < features.clusters(); ++k) {
    const auto& r = features.raw[k];
    const auto& z = features.standardized[k];
    out << fmt::format("{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g}\n", k, r.coh,
                       r.size, r.len, r.ent, z.coh, z.size, z.len, z.ent, scores[k]);
  }
}

FeatureTable read_feature_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(fmt::format("cannot open {}", path.string()));
  std::string line;
  std::getline(in, line);
  if (line.rfind("cluster_id,", 0) != 0) throw Error(fmt::format("{}: not a feature table", path.string()));
  FeatureTable t;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::array<double, 10> v{};
    std::size_t field = 0;
    std::size_t pos = 0;
    try {
      while (field < v.size()) {
        const auto comma = line.find(',', pos);
        v[field++] = std::stod(line.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos));
        if (comma == std::string::npos) break;
        pos = comma + 1;
      }
    } catch (const std::exception&) {
      field = 0;
    }
    if (field != v.size()) throw Error(fmt::format("{}:{}: malformed row", path.string(), line_no));
    t.raw.push_back({v[1], v[2], v[3], v[4]});
    t.standardized.push_back({v[5], v[6], v[7], v[8]});
    t.scores.push_back(v[9]);
  }
  return t;
}

std::vector<double> read_feature_scores(const std::filesystem::path& path) { return read_feature_table(path).scores; }

void to_json(nlohmann::json& j, const ConsensusWeights& w) {
  j = nlohmann::json{{"w_coh", w.coh},
                     {"w_ent", w.ent},
                     {"w_len", w.len},
                     {"w_size", w.size},
                     {"covariance", w.covariance},
                     {"principal", w.principal},
                     {"eigenvalue", w.eigenvalue},
                     {"second_eigenvalue", w.second_eigenvalue},
                     {"iterations", w.iterations},
                     {"degenerate", w.degenerate}};
}

void from_json(const nlohmann::json& j, ConsensusWeights& w) {
  j.at("w_coh").get_to(w.coh);
  j.at("w_ent").get_to(w.ent);
  j.at("w_len").get_to(w.len);
  j.at("w_size").get_to(w.size);
  j.at("covariance").get_to(w.covariance);
  j.at("principal").get_to(w.principal);
  j.at("eigenvalue").get_to(w.eigenvalue);
  j.at("second_eigenvalue").get_to(w.second_eigenvalue);
  j.at("iterations").get_to(w.iterations);
  j.at("degenerate").get_to(w.degenerate);
}

}  // namespace geomine
