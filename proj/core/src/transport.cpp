#include "geomine/transport.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "geomine/common.hpp"

namespace geomine {

namespace {

constexpr double kMassEps = 1e-14;
constexpr double kInf = std::numeric_limits<double>::infinity();

}  // namespace

EmpiricalMeasure::EmpiricalMeasure(std::size_t dim, std::vector<double> points, std::vector<double> masses)
    : dim_(dim), points_(std::move(points)), masses_(std::move(masses)) {
  if (dim_ == 0) throw Error("measure dimension must be positive");
  if (masses_.empty()) throw Error("measure needs at least one point");
  if (points_.size() != masses_.size() * dim_) {
    throw Error(fmt::format("measure has {} coordinates for {} points of dim {}", points_.size(), masses_.size(), dim_));
  }
  double total = 0.0;
  for (double m : masses_) {
    if (!(m >= 0.0) || !std::isfinite(m)) throw Error("measure masses must be finite and nonnegative");
    total += m;
  }
  if (std::abs(total - 1.0) > 1e-9) throw Error(fmt::format("measure masses sum to {}, not 1", total));
  for (double x : points_) {
    if (!std::isfinite(x)) throw Error("measure points must be finite");
  }
}

EmpiricalMeasure EmpiricalMeasure::uniform(std::size_t dim, std::vector<double> points) {
  const std::size_t n = dim == 0 ? 0 : points.size() / dim;
  if (n == 0) throw Error("measure needs at least one point");
  return EmpiricalMeasure(dim, std::move(points), std::vector<double>(n, 1.0 / static_cast<double>(n)));
}

EmpiricalMeasure EmpiricalMeasure::from_corpus(const Corpus& corpus, std::span<const std::size_t> rows,
                                               bool use_sample_weights) {
  if (rows.empty()) throw Error("measure needs at least one point");
  std::vector<double> pts;
  pts.reserve(rows.size() * corpus.dim());
  std::vector<double> masses;
  masses.reserve(rows.size());
  double total = 0.0;
  for (auto r : rows) {
    auto e = corpus.embedding(r);
    pts.insert(pts.end(), e.begin(), e.end());
    const double w = use_sample_weights ? corpus.meta(r).weight : 1.0;
    masses.push_back(w);
    total += w;
  }
  if (!(total > 0.0)) throw Error("selected sample weights sum to zero");
  for (auto& m : masses) m /= total;
  return EmpiricalMeasure(corpus.dim(), std::move(pts), std::move(masses));
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

double w2_exact(const EmpiricalMeasure& a, const EmpiricalMeasure& b) {
  if (a.dim() != b.dim()) throw Error(fmt::format("dimension mismatch: {} vs {}", a.dim(), b.dim()));
  if (a.size() > kMaxTransportPoints || b.size() > kMaxTransportPoints) {
    throw Error(fmt::format("exact transport is limited to {} points per side (got {} and {})", kMaxTransportPoints,
                            a.size(), b.size()));
  }
  const std::size_t n = a.size();
  const std::size_t m = b.size();
  std::vector<double> cost(n * m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) cost[i * m + j] = squared_distance(a.point(i), b.point(j));
  }

  const double sa = std::accumulate(a.masses().begin(), a.masses().end(), 0.0);
  const double sb = std::accumulate(b.masses().begin(), b.masses().end(), 0.0);
  std::vector<double> supply(n);
  std::vector<double> demand(m);
  for (std::size_t i = 0; i < n; ++i) supply[i] = a.mass(i) / sa;
  for (std::size_t j = 0; j < m; ++j) demand[j] = b.mass(j) / sb;

  std::vector<double> flow(n * m, 0.0);
  // Nodes 0..n-1 are sources, n..n+m-1 are sinks.
  const std::size_t v = n + m;
  std::vector<double> potential(v, 0.0);
  std::vector<double> dist(v);
  std::vector<std::size_t> parent(v);
  std::vector<char> done(v);
  constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

  auto remaining = [&] {
    double r = 0.0;
    for (double s : supply) r += s;
    return r;
  };

  while (remaining() > kMassEps) {
    std::fill(dist.begin(), dist.end(), kInf);
    std::fill(parent.begin(), parent.end(), kNone);
    std::fill(done.begin(), done.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      if (supply[i] > kMassEps) dist[i] = 0.0;
    }
    for (std::size_t step = 0; step < v; ++step) {
      std::size_t u = kNone;
      for (std::size_t x = 0; x < v; ++x) {
        if (!done[x] && dist[x] < kInf && (u == kNone || dist[x] < dist[u])) u = x;
      }
      if (u == kNone) break;
      done[u] = 1;
      if (u < n) {
        for (std::size_t j = 0; j < m; ++j) {
          const std::size_t t = n + j;
          if (done[t]) continue;
          const double rc = std::max(0.0, cost[u * m + j] + potential[u] - potential[t]);
          if (dist[u] + rc < dist[t]) {
            dist[t] = dist[u] + rc;
            parent[t] = u;
          }
        }
      } else {
        const std::size_t j = u - n;
        for (std::size_t i = 0; i < n; ++i) {
          if (done[i] || flow[i * m + j] <= kMassEps) continue;
          const double rc = std::max(0.0, -cost[i * m + j] + potential[u] - potential[i]);
          if (dist[u] + rc < dist[i]) {
            dist[i] = dist[u] + rc;
            parent[i] = u;
          }
        }
      }
    }

    std::size_t sink = kNone;
    for (std::size_t j = 0; j < m; ++j) {
      if (demand[j] > kMassEps && dist[n + j] < kInf && (sink == kNone || dist[n + j] < dist[sink])) sink = n + j;
    }
    if (sink == kNone) throw Error("transport solver found no augmenting path");

    double reached_max = 0.0;
    for (std::size_t x = 0; x < v; ++x) {
      if (dist[x] < kInf) reached_max = std::max(reached_max, dist[x]);
    }
    for (std::size_t x = 0; x < v; ++x) potential[x] += dist[x] < kInf ? dist[x] : reached_max;

    double bottleneck = demand[sink - n];
    std::size_t x = sink;
    while (parent[x] != kNone) {
      const std::size_t p = parent[x];
      if (p >= n) bottleneck = std::min(bottleneck, flow[x * m + (p - n)]);
      x = p;
    }
    const std::size_t source = x;
    bottleneck = std::min(bottleneck, supply[source]);

    x = sink;
    while (parent[x] != kNone) {
      const std::size_t p = parent[x];
      if (p < n) {
        flow[p * m + (x - n)] += bottleneck;
      } else {
        double& f = flow[x * m + (p - n)];
        f -= bottleneck;
        if (f < kMassEps) f = 0.0;
      }
      x = p;
    }
    supply[source] -= bottleneck;
    demand[sink - n] -= bottleneck;
    if (supply[source] < kMassEps) supply[source] = 0.0;
    if (demand[sink - n] < kMassEps) demand[sink - n] = 0.0;
  }

  double total = 0.0;
  for (std::size_t k = 0; k < n * m; ++k) total += flow[k] * cost[k];
  return std::max(0.0, total);
}

Codebook Codebook::from_model(const ClusterModel& model) {
  Codebook c;
  c.k = model.k;
  c.dim = model.dim;
  c.centers.assign(model.centroids.begin(), model.centroids.end());
  return c;
}

std::size_t Codebook::nearest(std::span<const double> x) const {
  std::size_t best = 0;
  double best_d = kInf;
  for (std::size_t j = 0; j < k; ++j) {
    const double d = squared_distance(x, center(j));
    if (d < best_d) {
      best_d = d;
      best = j;
    }
  }
  return best;
}

Codebook Codebook::subset(std::span<const std::size_t> ids) const {
  Codebook out{ids.size(), dim, {}};
  out.centers.reserve(ids.size() * dim);
  for (auto j : ids) {
    if (j >= k) throw Error(fmt::format("codebook has no center {}", j));
    auto c = center(j);
    out.centers.insert(out.centers.end(), c.begin(), c.end());
  }
  return out;
}

std::vector<std::size_t> occupied_clusters(const Codebook& codebook, const EmpiricalMeasure& measure) {
  std::vector<char> hit(codebook.k, 0);
  for (std::size_t i = 0; i < measure.size(); ++i) hit[codebook.nearest(measure.point(i))] = 1;
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < codebook.k; ++j) {
    if (hit[j]) out.push_back(j);
  }
  return out;
}

ClusterMoments cluster_moments(const Codebook& codebook, const EmpiricalMeasure& measure) {
  if (codebook.dim != measure.dim()) {
    throw Error(fmt::format("dimension mismatch: codebook {} vs measure {}", codebook.dim, measure.dim()));
  }
  if (codebook.k == 0) throw Error("codebook has no centers");
  ClusterMoments out;
  out.alpha.assign(codebook.k, 0.0);
  out.sigma_sq.assign(codebook.k, 0.0);
  out.assignment.resize(measure.size());
  for (std::size_t i = 0; i < measure.size(); ++i) {
    const auto c = codebook.nearest(measure.point(i));
    out.assignment[i] = c;
    out.alpha[c] += measure.mass(i);
    out.sigma_sq[c] += measure.mass(i) * squared_distance(measure.point(i), codebook.center(c));
  }
  for (std::size_t c = 0; c < codebook.k; ++c) {
    out.sigma_sq[c] = out.alpha[c] > 0.0 ? out.sigma_sq[c] / out.alpha[c] : 0.0;
  }
  return out;
}

ClusterMoments cluster_moments(const ClusterModel& model, const EmpiricalMeasure& measure) {
  return cluster_moments(Codebook::from_model(model), measure);
}

DecompositionReport decomposition(const EmpiricalMeasure& measure, const Codebook& codebook,
                                  const EmpiricalMeasure& selected) {
  if (selected.dim() != measure.dim()) throw Error("selected measure has a different dimension");
  const auto full = cluster_moments(codebook, measure);
  const auto sel = cluster_moments(codebook, selected);

  DecompositionReport report;
  report.per_cluster.resize(codebook.k);
  std::vector<double> masses(selected.size(), 0.0);
  for (std::size_t c = 0; c < codebook.k; ++c) {
    auto& t = report.per_cluster[c];
    t.alpha = full.alpha[c];
    t.sigma_sq = full.sigma_sq[c];
    t.selected_points = static_cast<std::size_t>(std::count(sel.assignment.begin(), sel.assignment.end(), c));
    if (t.alpha > 0.0 && (t.selected_points == 0 || !(sel.alpha[c] > 0.0))) {
      throw Error(fmt::format("cluster {} carries mass {} but no selected point", c, t.alpha));
    }
    t.selected_sq = t.selected_points > 0 ? sel.sigma_sq[c] : 0.0;
    t.delta_gain = t.selected_points > 0 ? t.sigma_sq - t.selected_sq : 0.0;
    report.t1 += t.alpha * t.sigma_sq;
    report.t2 += t.alpha * t.selected_sq;
  }
  for (std::size_t i = 0; i < selected.size(); ++i) {
    const auto c = sel.assignment[i];
    if (sel.alpha[c] > 0.0) masses[i] = full.alpha[c] * selected.mass(i) / sel.alpha[c];
  }
  const double total = std::accumulate(masses.begin(), masses.end(), 0.0);
  for (auto& m : masses) m /= total;
  const EmpiricalMeasure mixed(selected.dim(), std::vector<double>(selected.points().begin(), selected.points().end()),
                               std::move(masses));
  report.e_s = w2_exact(measure, mixed);
  report.bound = 2.0 * report.t1 + 2.0 * report.t2;
  if (report.e_s > report.bound + 1e-9) {
    throw Error(fmt::format("decomposition bound violated: e_s = {:.12g} > 2 t1 + 2 t2 = {:.12g}", report.e_s,
                            report.bound));
  }
  return report;
}

DecompositionReport decomposition(const EmpiricalMeasure& measure, const ClusterModel& model,
                                  const EmpiricalMeasure& selected) {
  return decomposition(measure, Codebook::from_model(model), selected);
}

void to_json(nlohmann::json& j, const DecompositionReport& r) {
  auto per = nlohmann::json::array();
  for (const auto& c : r.per_cluster) {
    per.push_back({{"alpha", c.alpha}, {"sigma_sq", c.sigma_sq}, {"delta_gain", c.delta_gain}});
  }
  j = nlohmann::json{{"e_s", r.e_s}, {"t1", r.t1}, {"t2", r.t2}, {"bound_2t1_2t2", r.bound}, {"per_cluster", per}};
}

namespace {

double lloyd(std::size_t dim, std::span<const double> pts, std::vector<double>& centers, std::size_t k,
             std::size_t max_iters) {
  const std::size_t n = pts.size() / dim;
  std::vector<std::size_t> assign(n, 0);
  double objective = kInf;
  for (std::size_t it = 0; it < max_iters; ++it) {
    double obj = 0.0;
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      std::span<const double> x(pts.data() + i * dim, dim);
      std::size_t best = 0;
      double best_d = kInf;
      for (std::size_t j = 0; j < k; ++j) {
        const double d = squared_distance(x, {centers.data() + j * dim, dim});
        if (d < best_d) {
          best_d = d;
          best = j;
        }
      }
      changed |= it == 0 || assign[i] != best;
      assign[i] = best;
      obj += best_d;
    }
    objective = obj / static_cast<double>(n);
    if (!changed) break;
    std::vector<double> sums(k * dim, 0.0);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[assign[i]];
      for (std::size_t t = 0; t < dim; ++t) sums[assign[i] * dim + t] += pts[i * dim + t];
    }
    for (std::size_t j = 0; j < k; ++j) {
      if (counts[j] == 0) continue;
      for (std::size_t t = 0; t < dim; ++t) centers[j * dim + t] = sums[j * dim + t] / static_cast<double>(counts[j]);
    }
  }
  return objective;
}

}  // namespace

Codebook euclidean_kmeans(std::size_t dim, std::span<const double> points, std::size_t k, std::uint64_t seed,
                          std::size_t restarts, std::size_t max_iters) {
  const std::size_t n = dim == 0 ? 0 : points.size() / dim;
  if (k == 0 || k > n) throw Error(fmt::format("cannot fit {} centers to {} points", k, n));
  Codebook best{k, dim, {}};
  double best_obj = kInf;
  for (std::size_t r = 0; r < std::max<std::size_t>(1, restarts); ++r) {
    std::mt19937_64 rng(derive_seed(seed, r));
    std::vector<double> centers;
    centers.reserve(k * dim);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    std::size_t first = pick(rng);
    centers.insert(centers.end(), points.begin() + first * dim, points.begin() + (first + 1) * dim);
    std::vector<double> d2(n, kInf);
    for (std::size_t c = 1; c < k; ++c) {
      std::span<const double> last(centers.data() + (c - 1) * dim, dim);
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        d2[i] = std::min(d2[i], squared_distance({points.data() + i * dim, dim}, last));
        total += d2[i];
      }
      std::size_t chosen = n - 1;
      if (total > 0.0) {
        double u = std::uniform_real_distribution<double>(0.0, total)(rng);
        for (std::size_t i = 0; i < n; ++i) {
          u -= d2[i];
          if (u < 0.0) {
            chosen = i;
            break;
          }
        }
      } else {
        chosen = pick(rng);
      }
      centers.insert(centers.end(), points.begin() + chosen * dim, points.begin() + (chosen + 1) * dim);
    }
    const double obj = lloyd(dim, points, centers, k, max_iters);
    if (obj < best_obj) {
      best_obj = obj;
      best.centers = std::move(centers);
    }
  }
  return best;
}

std::vector<ZadorPoint> zador_trend(std::size_t dim, std::span<const std::size_t> k_list, std::size_t n,
                                    std::uint64_t seed) {
  if (dim == 0) throw Error("dimension must be positive");
  for (auto k : k_list) {
    if (k == 0 || k * 10 > n) throw Error(fmt::format("K = {} requires at least {} points (have {})", k, 10 * k, n));
  }
  std::mt19937_64 rng(derive_seed(seed, "zador_points"));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> pts(n * dim);
  for (auto& x : pts) x = u(rng);
  const auto measure = EmpiricalMeasure::uniform(dim, pts);

  std::vector<ZadorPoint> out(k_list.size());
  parallel_for_chunks(k_list.size(), 1, [&](std::size_t, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto cb = euclidean_kmeans(dim, pts, k_list[i], derive_seed(derive_seed(seed, "zador_fit"), k_list[i]));
      const auto mom = cluster_moments(cb, measure);
      double t1 = 0.0;
      for (std::size_t c = 0; c < cb.k; ++c) t1 += mom.alpha[c] * mom.sigma_sq[c];
      out[i] = {k_list[i], t1};
    }
  });
  return out;
}

double log_log_slope(std::span<const ZadorPoint> points) {
  if (points.size() < 2) throw Error("slope needs at least two points");
  double mx = 0.0;
  double my = 0.0;
  for (const auto& p : points) {
    mx += std::log(static_cast<double>(p.k));
    my += std::log(p.t1);
  }
  mx /= static_cast<double>(points.size());
  my /= static_cast<double>(points.size());
  double sxy = 0.0;
  double sxx = 0.0;
  for (const auto& p : points) {
    const double dx = std::log(static_cast<double>(p.k)) - mx;
    sxy += dx * (std::log(p.t1) - my);
    sxx += dx * dx;
  }
  if (!(sxx > 0.0)) throw Error("slope needs at least two distinct K");
  return sxy / sxx;
}

}  // namespace geomine
