#include "geomine/clustering.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "geomine/common.hpp"

namespace geomine {

namespace {

constexpr std::size_t kAssignChunk = 2048;

struct Assignment {
  std::vector<std::uint32_t> label;
  std::vector<double> best_cos;
};

// Nearest centroid for each listed row. Strict '>' keeps the lowest index on ties.
template <typename CentroidT>
Assignment assign_rows(const Corpus& corpus, std::span<const std::size_t> rows, std::size_t k,
                       const std::vector<CentroidT>& centroids) {
  const std::size_t dim = corpus.dim();
  Assignment out;
  out.label.resize(rows.size());
  out.best_cos.resize(rows.size());
  parallel_for_chunks(rows.size(), kAssignChunk, [&](std::size_t, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const float* x = corpus.embedding(rows[i]).data();
      double best = -std::numeric_limits<double>::infinity();
      std::uint32_t arg = 0;
      for (std::size_t j = 0; j < k; ++j) {
        const CentroidT* c = centroids.data() + j * dim;
        double acc = 0.0;
        for (std::size_t t = 0; t < dim; ++t) acc += static_cast<double>(x[t]) * c[t];
        if (acc > best) {
          best = acc;
          arg = static_cast<std::uint32_t>(j);
        }
      }
      out.label[i] = arg;
      out.best_cos[i] = best;
    }
  });
  return out;
}

bool normalize(std::span<double> v) {
  double sq = 0.0;
  for (double x : v) sq += x * x;
  if (sq <= 0.0) return false;
  const double inv = 1.0 / std::sqrt(sq);
  for (double& x : v) x *= inv;
  return true;
}

// k-means++ seeding with D(x) = 1 - max cos to the chosen centroids.
std::vector<double> plus_plus_init(const Corpus& corpus, std::span<const std::size_t> rows, std::size_t k,
                                   std::mt19937_64& rng) {
  const std::size_t n = rows.size();
  const std::size_t dim = corpus.dim();
  std::vector<double> centroids(k * dim);
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  std::vector<char> chosen(n, 0);

  auto place = [&](std::size_t slot, std::size_t i) {
    chosen[i] = 1;
    auto x = corpus.embedding(rows[i]);
    std::copy(x.begin(), x.end(), centroids.begin() + static_cast<std::ptrdiff_t>(slot * dim));
    normalize(std::span<double>(centroids.data() + slot * dim, dim));
    const double* c = centroids.data() + slot * dim;
    parallel_for_chunks(n, kAssignChunk, [&](std::size_t, std::size_t begin, std::size_t end) {
      for (std::size_t r = begin; r < end; ++r) {
        auto y = corpus.embedding(rows[r]);
        double acc = 0.0;
        for (std::size_t t = 0; t < dim; ++t) acc += static_cast<double>(y[t]) * c[t];
        dist[r] = std::min(dist[r], std::max(0.0, 1.0 - acc));
      }
    });
  };

  std::uniform_int_distribution<std::size_t> first(0, n - 1);
  place(0, first(rng));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t slot = 1; slot < k; ++slot) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!chosen[i]) total += dist[i] * dist[i];
    }
    std::size_t pick = n;
    if (total > 0.0) {
      const double target = unit(rng) * total;
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (chosen[i]) continue;
        acc += dist[i] * dist[i];
        pick = i;
        if (acc > target) break;
      }
    } else {
      // Every remaining point coincides with a chosen centroid.
      for (std::size_t i = 0; i < n; ++i) {
        if (!chosen[i]) {
          pick = i;
          break;
        }
      }
    }
    place(slot, pick);
  }
  return centroids;
}

std::vector<float> to_float_unit(const std::vector<double>& centroids, std::size_t k, std::size_t dim) {
  std::vector<float> out(k * dim);
  for (std::size_t j = 0; j < k; ++j) {
    std::vector<double> row(centroids.begin() + static_cast<std::ptrdiff_t>(j * dim),
                            centroids.begin() + static_cast<std::ptrdiff_t>((j + 1) * dim));
    normalize(row);
    for (std::size_t t = 0; t < dim; ++t) out[j * dim + t] = static_cast<float>(row[t]);
  }
  return out;
}

// Builds the returned model from final assignments, dropping empty clusters.
ClusterModel finalize(const Corpus& corpus, std::span<const std::size_t> rows, std::size_t k, std::size_t dim,
                      const std::vector<float>& centroids, const std::vector<std::uint32_t>& labels) {
  std::vector<std::size_t> counts(k, 0);
  for (auto l : labels) ++counts[l];
  std::vector<std::uint32_t> remap(k, 0);
  ClusterModel m;
  m.dim = dim;
  for (std::size_t j = 0; j < k; ++j) {
    if (counts[j] == 0) {
      ++m.empty_dropped;
      continue;
    }
    remap[j] = static_cast<std::uint32_t>(m.k++);
    m.centroids.insert(m.centroids.end(), centroids.begin() + static_cast<std::ptrdiff_t>(j * dim),
                       centroids.begin() + static_cast<std::ptrdiff_t>((j + 1) * dim));
  }
  m.assignments.resize(labels.size());
  m.members.assign(m.k, {});
  m.sizes.assign(m.k, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto c = remap[labels[i]];
    m.assignments[i] = c;
    m.members[c].push_back(corpus.meta(rows[i]).id);
    ++m.sizes[c];
  }
  return m;
}

void check_fit_args(std::size_t n, const FitOptions& o) {
  if (o.k < 1) throw Error("k must be at least 1");
  if (o.k > n) throw Error(fmt::format("k = {} exceeds the number of samples ({})", o.k, n));
  if (o.iters < 1) throw Error("iters must be at least 1");
}

ClusterModel fit_exact(const Corpus& corpus, std::span<const std::size_t> rows, const FitOptions& o) {
  const std::size_t n = rows.size();
  const std::size_t dim = corpus.dim();
  const std::size_t k = o.k;
  std::mt19937_64 rng(o.seed);
  auto centroids = plus_plus_init(corpus, rows, k, rng);

  std::vector<double> trace;
  std::size_t repairs = 0;
  std::vector<double> sums(k * dim);
  std::vector<std::size_t> counts(k);
  for (std::size_t it = 0; it < o.iters; ++it) {
    const auto a = assign_rows(corpus, rows, k, centroids);
    double obj = 0.0;
    for (double c : a.best_cos) obj += 1.0 - c;
    trace.push_back(obj / static_cast<double>(n));

    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto l = a.label[i];
      ++counts[l];
      auto x = corpus.embedding(rows[i]);
      double* s = sums.data() + l * dim;
      for (std::size_t t = 0; t < dim; ++t) s[t] += x[t];
    }
    std::vector<std::size_t> order;  // rows by ascending similarity to their centroid
    std::size_t next_far = 0;
    for (std::size_t j = 0; j < k; ++j) {
      std::span<double> c(centroids.data() + j * dim, dim);
      if (counts[j] > 0) {
        std::vector<double> s(sums.begin() + static_cast<std::ptrdiff_t>(j * dim),
                              sums.begin() + static_cast<std::ptrdiff_t>((j + 1) * dim));
        if (normalize(s)) std::copy(s.begin(), s.end(), c.begin());
        continue;
      }
      // Empty cluster: reseed at the sample farthest from its own centroid.
      if (order.empty()) {
        order.resize(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t x, std::size_t y) { return a.best_cos[x] < a.best_cos[y]; });
      }
      if (next_far < n) {
        auto x = corpus.embedding(rows[order[next_far++]]);
        std::copy(x.begin(), x.end(), c.begin());
        normalize(c);
        ++repairs;
      }
    }
  }

  const auto final_centroids = to_float_unit(centroids, k, dim);
  const auto final_assign = assign_rows(corpus, rows, k, final_centroids);
  auto model = finalize(corpus, rows, k, dim, final_centroids, final_assign.label);
  model.objective_trace = std::move(trace);
  model.empty_repairs = repairs;
  return model;
}

ClusterModel fit_minibatch(const Corpus& corpus, std::span<const std::size_t> rows, const FitOptions& o) {
  const std::size_t n = rows.size();
  const std::size_t dim = corpus.dim();
  const std::size_t k = o.k;
  const std::size_t batch = std::max<std::size_t>(1, o.batch_size);
  std::mt19937_64 rng(o.seed);
  auto centroids = plus_plus_init(corpus, rows, k, rng);
  std::vector<double> seen(k, 0.0);
  std::vector<double> trace;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 0; epoch < o.iters; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double obj = 0.0;
    for (std::size_t b = 0; b < n; b += batch) {
      const std::size_t e = std::min(n, b + batch);
      std::vector<std::size_t> batch_rows(e - b);
      for (std::size_t i = b; i < e; ++i) batch_rows[i - b] = rows[order[i]];
      const auto a = assign_rows(corpus, batch_rows, k, centroids);
      std::vector<char> touched(k, 0);
      for (std::size_t i = 0; i < batch_rows.size(); ++i) {
        const auto l = a.label[i];
        obj += 1.0 - a.best_cos[i];
        seen[l] += 1.0;
        const double eta = 1.0 / seen[l];
        auto x = corpus.embedding(batch_rows[i]);
        double* c = centroids.data() + l * dim;
        for (std::size_t t = 0; t < dim; ++t) c[t] += eta * (x[t] - c[t]);
        touched[l] = 1;
      }
      for (std::size_t j = 0; j < k; ++j) {
        if (touched[j]) normalize(std::span<double>(centroids.data() + j * dim, dim));
      }
    }
    trace.push_back(obj / static_cast<double>(n));
  }

  const auto final_centroids = to_float_unit(centroids, k, dim);
  const auto final_assign = assign_rows(corpus, rows, k, final_centroids);
  auto model = finalize(corpus, rows, k, dim, final_centroids, final_assign.label);
  model.objective_trace = std::move(trace);
  model.minibatch = true;
  return model;
}

}  // namespace

ClusterModel fit(const Corpus& corpus, std::size_t k, std::size_t iters, std::uint64_t seed) {
  std::vector<std::size_t> rows(corpus.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  FitOptions o;
  o.k = k;
  o.iters = iters;
  o.seed = seed;
  return fit(corpus, rows, o);
}

ClusterModel fit(const Corpus& corpus, std::span<const std::size_t> rows, const FitOptions& options) {
  check_fit_args(rows.size(), options);
  if (rows.size() > options.minibatch_threshold) return fit_minibatch(corpus, rows, options);
  return fit_exact(corpus, rows, options);
}

std::vector<std::uint32_t> assign(const CentroidView& centroids, const Corpus& corpus) {
  if (centroids.dim != corpus.dim()) {
    throw Error(fmt::format("dimension mismatch: centroids have dim {}, corpus has dim {}", centroids.dim,
                            corpus.dim()));
  }
  std::vector<std::size_t> rows(corpus.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  std::vector<float> c(centroids.data.begin(), centroids.data.end());
  return assign_rows(corpus, rows, centroids.k, c).label;
}

std::vector<std::uint32_t> assign(const ClusterModel& model, const Corpus& corpus) {
  return assign(model.centroid_view(), corpus);
}

ClusterModel assign_model(const ClusterModel& model, const Corpus& corpus) {
  auto labels = assign(model, corpus);
  std::vector<std::size_t> rows(corpus.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return finalize(corpus, rows, model.k, model.dim, model.centroids, labels);
}

std::size_t subcluster_count(std::size_t cluster_size) {
  auto s = static_cast<std::size_t>(std::sqrt(static_cast<double>(cluster_size)));
  while ((s + 1) * (s + 1) <= cluster_size) ++s;
  while (s * s > cluster_size) --s;
  return std::max<std::size_t>(1, s);
}

ClusterModel subcluster(const ClusterModel& model, std::size_t cluster_id, const Corpus& corpus,
                        std::uint64_t seed) {
  if (cluster_id >= model.k) {
    throw Error(fmt::format("unknown cluster id {} (model has {} clusters)", cluster_id, model.k));
  }
  const auto& ids = model.members[cluster_id];
  if (ids.empty()) throw Error(fmt::format("cluster {} has no members", cluster_id));
  std::vector<std::size_t> rows;
  rows.reserve(ids.size());
  for (auto id : ids) rows.push_back(corpus.row_of(id));
  FitOptions o;
  o.k = subcluster_count(ids.size());
  o.iters = kSubclusterIters;
  o.seed = seed;
  return fit(corpus, rows, o);
}

double mean_cosine_distance(const ClusterModel& model, const Corpus& corpus) {
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t j = 0; j < model.k; ++j) {
    for (auto id : model.members[j]) {
      total += 1.0 - cosine(corpus.embedding(corpus.row_of(id)), model.centroid(j));
      ++n;
    }
  }
  return n == 0 ? 0.0 : total / static_cast<double>(n);
}

void save_model(const std::filesystem::path& path, const ClusterModel& model) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(fmt::format("cannot write model file {}", path.string()));
  static_assert(std::endian::native == std::endian::little, "model files are written little-endian");
  const std::uint64_t header[2] = {model.k, model.dim};
  out.write(reinterpret_cast<const char*>(header), sizeof(header));
  out.write(reinterpret_cast<const char*>(model.centroids.data()),
            static_cast<std::streamsize>(model.centroids.size() * sizeof(float)));
  const std::uint64_t n = model.assignments.size();
  out.write(reinterpret_cast<const char*>(&n), sizeof(n));
  out.write(reinterpret_cast<const char*>(model.assignments.data()),
            static_cast<std::streamsize>(model.assignments.size() * sizeof(std::uint32_t)));
  if (!out) throw Error(fmt::format("write failed for {}", path.string()));
}

ClusterModel load_model(const std::filesystem::path& path, const Corpus& corpus) {
  std::vector<std::size_t> rows(corpus.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return load_model(path, corpus, rows);
}

ClusterModel load_model(const std::filesystem::path& path, const Corpus& corpus,
                        std::span<const std::size_t> rows) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(fmt::format("cannot open model file {}", path.string()));
  std::uint64_t header[2];
  if (!in.read(reinterpret_cast<char*>(header), sizeof(header))) throw Error("truncated model header");
  const std::size_t k = header[0];
  const std::size_t dim = header[1];
  if (dim != corpus.dim()) {
    throw Error(fmt::format("dimension mismatch: model dim {} vs corpus dim {}", dim, corpus.dim()));
  }
  std::vector<float> centroids(k * dim);
  in.read(reinterpret_cast<char*>(centroids.data()), static_cast<std::streamsize>(centroids.size() * sizeof(float)));
  std::uint64_t n = 0;
  in.read(reinterpret_cast<char*>(&n), sizeof(n));
  if (!in) throw Error("truncated model file");
  if (n != rows.size()) {
    throw Error(fmt::format("model holds {} assignments but {} rows were supplied", n, rows.size()));
  }
  std::vector<std::uint32_t> labels(n);
  in.read(reinterpret_cast<char*>(labels.data()), static_cast<std::streamsize>(n * sizeof(std::uint32_t)));
  if (!in) throw Error("truncated model assignments");
  for (auto l : labels) {
    if (l >= k) throw Error("model assignment out of range");
  }
  auto model = finalize(corpus, rows, k, dim, centroids, labels);
  if (model.k != k) throw Error("model file contains empty clusters");
  return model;
}

}  // namespace geomine
