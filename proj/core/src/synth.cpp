#include "geomine/synth.hpp"

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

using nlohmann::json;

namespace {

template <typename Rng>
std::vector<double> gaussian_unit(std::size_t dim, Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> v(dim);
  double sq = 0.0;
  do {
    sq = 0.0;
    for (auto& x : v) {
      x = g(rng);
      sq += x * x;
    }
  } while (!(sq > 1e-24));
  const double inv = 1.0 / std::sqrt(sq);
  for (auto& x : v) x *= inv;
  return v;
}

template <typename T>
T pick(const std::vector<T>& values, std::size_t c) {
  return values.size() == 1 ? values[0] : values[c];
}

}  // namespace

template <typename Rng>
std::vector<double> sample_vmf(std::span<const double> mean, double kappa, Rng& rng) {
  const std::size_t dim = mean.size();
  const double p1 = static_cast<double>(dim) - 1.0;
  double w = 1.0;
  if (dim == 1) {
    return {mean[0]};
  }
  const double b = (-2.0 * kappa + std::sqrt(4.0 * kappa * kappa + p1 * p1)) / p1;
  const double x0 = (1.0 - b) / (1.0 + b);
  const double c = kappa * x0 + p1 * std::log(1.0 - x0 * x0);
  std::gamma_distribution<double> ga(p1 / 2.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (;;) {
    const double g1 = ga(rng);
    const double g2 = ga(rng);
    const double z = g1 / (g1 + g2);
    w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
    const double uu = u(rng);
    if (uu > 0.0 && kappa * w + p1 * std::log(1.0 - x0 * w) - c >= std::log(uu)) break;
  }
  // Tangent direction: a Gaussian vector with its component along the mean removed.
  std::vector<double> v;
  double sq = 0.0;
  do {
    v = gaussian_unit(dim, rng);
    double proj = 0.0;
    for (std::size_t t = 0; t < dim; ++t) proj += v[t] * mean[t];
    sq = 0.0;
    for (std::size_t t = 0; t < dim; ++t) {
      v[t] -= proj * mean[t];
      sq += v[t] * v[t];
    }
  } while (!(sq > 1e-20));
  const double s = std::sqrt(std::max(0.0, 1.0 - w * w)) / std::sqrt(sq);
  std::vector<double> out(dim);
  for (std::size_t t = 0; t < dim; ++t) out[t] = w * mean[t] + s * v[t];
  return out;
}

template std::vector<double> sample_vmf<std::mt19937_64>(std::span<const double>, double, std::mt19937_64&);

void validate(const SynthSpec& s) {
  if (s.dim < 2) throw Error("synth: dim must be at least 2");
  if (s.k_true < 1) throw Error("synth: k_true must be at least 1");
  if (!(s.concentration > 0.0)) throw Error("synth: concentration must be positive");
  if (!(s.outlier_fraction >= 0.0 && s.outlier_fraction <= 0.5)) throw Error("synth: outlier_fraction must be in [0, 0.5]");
  const auto outliers = static_cast<std::size_t>(std::llround(s.outlier_fraction * static_cast<double>(s.n)));
  if (s.n < outliers + s.k_true) throw Error("synth: n too small for k_true components");
  for (const std::size_t size : {s.length_log_mean.size(), s.length_log_std.size(), s.languages_per_component.size()}) {
    if (size != 1 && size != s.k_true) throw Error("synth: per-component parameters need one entry or one per component");
  }
  for (double sd : s.length_log_std) {
    if (!(sd >= 0.0)) throw Error("synth: length_log_std must be nonnegative");
  }
  if (s.language_count < 1) throw Error("synth: language_count must be at least 1");
  for (auto l : s.languages_per_component) {
    if (l < 1 || l > s.language_count) throw Error("synth: languages_per_component must be in [1, language_count]");
  }
  if (!(s.max_direction_cos > 0.0 && s.max_direction_cos <= 1.0)) throw Error("synth: max_direction_cos must be in (0, 1]");
}

void to_json(json& j, const SynthSpec& s) {
  j = json{{"dim", s.dim},
           {"k_true", s.k_true},
           {"concentration", s.concentration},
           {"n", s.n},
           {"outlier_fraction", s.outlier_fraction},
           {"length_log_mean", s.length_log_mean},
           {"length_log_std", s.length_log_std},
           {"languages_per_component", s.languages_per_component},
           {"language_count", s.language_count},
           {"max_direction_cos", s.max_direction_cos},
           {"seed", s.seed}};
}

void from_json(const json& j, SynthSpec& s) {
  SynthSpec d;
  s.dim = j.value("dim", d.dim);
  s.k_true = j.value("k_true", d.k_true);
  s.concentration = j.value("concentration", d.concentration);
  s.n = j.value("n", d.n);
  s.outlier_fraction = j.value("outlier_fraction", d.outlier_fraction);
  s.length_log_mean = j.value("length_log_mean", d.length_log_mean);
  s.length_log_std = j.value("length_log_std", d.length_log_std);
  s.languages_per_component = j.value("languages_per_component", d.languages_per_component);
  s.language_count = j.value("language_count", d.language_count);
  s.max_direction_cos = j.value("max_direction_cos", d.max_direction_cos);
  s.seed = j.value("seed", d.seed);
}

std::size_t SynthCorpus::outlier_count() const {
  return static_cast<std::size_t>(std::count_if(truth.begin(), truth.end(), [](const auto& t) { return t.is_outlier; }));
}

SynthCorpus generate(const SynthSpec& spec) {
  validate(spec);
  const std::size_t dim = spec.dim;
  const std::size_t k = spec.k_true;

  std::vector<std::vector<double>> directions;
  {
    std::mt19937_64 rng(derive_seed(spec.seed, "synth_directions"));
    constexpr std::size_t kAttempts = 20000;
    for (std::size_t c = 0; c < k; ++c) {
      bool placed = false;
      for (std::size_t attempt = 0; attempt < kAttempts && !placed; ++attempt) {
        auto v = gaussian_unit(dim, rng);
        placed = std::all_of(directions.begin(), directions.end(), [&](const auto& o) {
          double d = 0.0;
          for (std::size_t t = 0; t < dim; ++t) d += v[t] * o[t];
          return std::abs(d) < spec.max_direction_cos;
        });
        if (placed) directions.push_back(std::move(v));
      }
      if (!placed) {
        throw Error(fmt::format("synth: cannot place {} directions with |cos| < {} in dim {}", k, spec.max_direction_cos,
                                dim));
      }
    }
  }

  const auto n_out = static_cast<std::size_t>(std::llround(spec.outlier_fraction * static_cast<double>(spec.n)));
  const std::size_t n_clean = spec.n - n_out;
  std::vector<std::size_t> comp_size(k, n_clean / k);
  for (std::size_t c = 0; c < n_clean % k; ++c) ++comp_size[c];
  std::vector<std::size_t> comp_offset(k + 1, 0);
  for (std::size_t c = 0; c < k; ++c) comp_offset[c + 1] = comp_offset[c] + comp_size[c];

  std::vector<float> emb(spec.n * dim);
  std::vector<std::uint32_t> lengths(spec.n);
  std::vector<std::uint32_t> langs(spec.n);
  std::vector<int> component(spec.n, -1);

  parallel_for_chunks(k, 1, [&](std::size_t, std::size_t begin, std::size_t end) {
    for (std::size_t c = begin; c < end; ++c) {
      std::mt19937_64 rng(derive_seed(derive_seed(spec.seed, "synth_component"), c));
      std::normal_distribution<double> loglen(pick(spec.length_log_mean, c), pick(spec.length_log_std, c));
      const std::size_t n_lang = pick(spec.languages_per_component, c);
      std::uniform_int_distribution<std::size_t> lang(0, n_lang - 1);
      for (std::size_t i = comp_offset[c]; i < comp_offset[c + 1]; ++i) {
        const auto x = sample_vmf(std::span<const double>(directions[c]), spec.concentration, rng);
        for (std::size_t t = 0; t < dim; ++t) emb[i * dim + t] = static_cast<float>(x[t]);
        lengths[i] = static_cast<std::uint32_t>(std::max(1.0, std::round(std::exp(loglen(rng)))));
        langs[i] = static_cast<std::uint32_t>((c * n_lang + lang(rng)) % spec.language_count);
        component[i] = static_cast<int>(c);
      }
    }
  });

  std::uint32_t outlier_len = 1;
  if (n_clean > 0) {
    std::vector<std::uint32_t> sorted(lengths.begin(), lengths.begin() + static_cast<std::ptrdiff_t>(n_clean));
    std::sort(sorted.begin(), sorted.end());
    const auto idx = static_cast<std::size_t>(std::ceil(0.99 * static_cast<double>(n_clean))) - 1;
    outlier_len = sorted[std::min(idx, n_clean - 1)];
  }
  {
    std::mt19937_64 rng(derive_seed(spec.seed, "synth_outliers"));
    std::uniform_int_distribution<std::size_t> lang(0, spec.language_count - 1);
    for (std::size_t i = n_clean; i < spec.n; ++i) {
      const auto x = gaussian_unit(dim, rng);
      for (std::size_t t = 0; t < dim; ++t) emb[i * dim + t] = static_cast<float>(x[t]);
      lengths[i] = outlier_len;
      langs[i] = static_cast<std::uint32_t>(lang(rng));
    }
  }

  std::vector<std::size_t> order(spec.n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 shuffle_rng(derive_seed(spec.seed, "synth_shuffle"));
  std::shuffle(order.begin(), order.end(), shuffle_rng);

  std::vector<float> rows(spec.n * dim);
  std::vector<SampleMeta> meta(spec.n);
  SynthCorpus out;
  out.truth.resize(spec.n);
  for (std::size_t r = 0; r < spec.n; ++r) {
    const std::size_t src = order[r];
    std::copy_n(emb.begin() + static_cast<std::ptrdiff_t>(src * dim), dim, rows.begin() + static_cast<std::ptrdiff_t>(r * dim));
    meta[r] = SampleMeta{src, lengths[src], langs[src], 1.0};
    out.truth[r] = GroundTruth{src, component[src], component[src] < 0};
  }
  std::vector<std::string> vocab(spec.language_count);
  for (std::size_t l = 0; l < spec.language_count; ++l) vocab[l] = fmt::format("lang{:02}", l);
  out.corpus = Corpus::from_parts(dim, std::move(rows), std::move(meta), std::move(vocab));
  out.directions.reserve(k * dim);
  for (const auto& d : directions) {
    for (double x : d) out.directions.push_back(static_cast<float>(x));
  }
  out.outlier_length = outlier_len;
  return out;
}

void write_ground_truth(const std::filesystem::path& path, std::span<const GroundTruth> truth) {
  std::vector<GroundTruth> sorted(truth.begin(), truth.end());
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(fmt::format("cannot write {}", path.string()));
  out << "{\n";
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    out << fmt::format("\"{}\": {{\"component\": {}, \"is_outlier\": {}}}{}\n", sorted[i].id, sorted[i].component,
                       sorted[i].is_outlier ? "true" : "false", i + 1 < sorted.size() ? "," : "");
  }
  out << "}\n";
}

std::vector<GroundTruth> read_ground_truth(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(fmt::format("cannot open {}", path.string()));
  const auto j = json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw Error(fmt::format("{}: ground truth must be a JSON object", path.string()));
  std::vector<GroundTruth> out;
  out.reserve(j.size());
  for (const auto& [key, value] : j.items()) {
    GroundTruth t;
    try {
      t.id = std::stoull(key);
      t.component = value.at("component").get<int>();
      t.is_outlier = value.at("is_outlier").get<bool>();
    } catch (const std::exception& e) {
      throw Error(fmt::format("{}: bad ground-truth entry '{}': {}", path.string(), key, e.what()));
    }
    out.push_back(t);
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return out;
}

void write_synth(const SynthCorpus& synth, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto& c = synth.corpus;
  std::vector<MetadataRecord> records;
  records.reserve(c.size());
  for (std::size_t r = 0; r < c.size(); ++r) records.push_back({c.meta(r).id, c.meta(r).token_length, c.language_of(r)});
  write_metadata_file(dir / kStoreMetaFile, records);
  write_embedding_file(dir / kStoreEmbeddingFile, c.size(), c.dim(), c.embeddings());
  write_ground_truth(dir / "truth.json", synth.truth);
}

ProbeRating stub_rating(const GroundTruth& truth) {
  const auto h = splitmix64(truth.id);
  const int base = truth.is_outlier ? 1 : 4;
  return ProbeRating{base + static_cast<int>(h & 1U), base + static_cast<int>((h >> 1) & 1U),
                     base + static_cast<int>((h >> 2) & 1U), base + static_cast<int>((h >> 3) & 1U)};
}

void write_stub_ratings(const std::filesystem::path& path, std::span<const GroundTruth> truth) {
  std::map<SampleId, ProbeRating> ratings;
  for (const auto& t : truth) ratings[t.id] = stub_rating(t);
  OfflineRatings::save(path, ratings);
}

}  // namespace geomine
