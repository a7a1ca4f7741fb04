#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "geomine/corpus.hpp"
#include "geomine/scorer.hpp"

namespace geomine {

struct SynthSpec {
  std::size_t dim = 32;
  std::size_t k_true = 12;
  double concentration = 100.0;
  std::size_t n = 6000;
  double outlier_fraction = 0.0;
  // Per-component parameters: one entry per component, or a single entry
  // shared by all.
  std::vector<double> length_log_mean{5.0};
  std::vector<double> length_log_std{0.5};
  std::vector<std::size_t> languages_per_component{1};
  std::size_t language_count = 12;
  double max_direction_cos = 0.3;
  std::uint64_t seed = 0;
};

void validate(const SynthSpec& spec);
void to_json(nlohmann::json& j, const SynthSpec& s);
void from_json(const nlohmann::json& j, SynthSpec& s);

struct GroundTruth {
  SampleId id = 0;
  int component = -1;  // -1 for outliers
  bool is_outlier = false;
};

struct SynthCorpus {
  Corpus corpus;
  std::vector<GroundTruth> truth;  // aligned with corpus rows
  std::vector<float> directions;   // k_true x dim component means
  std::uint32_t outlier_length = 0;

  std::size_t outlier_count() const;
};

/// Planted mixture of von Mises-Fisher components with log-normal lengths and
/// uniform-on-sphere outliers carrying the 99th-percentile clean length.
/// Rows are shuffled; ids are 0..n-1.
SynthCorpus generate(const SynthSpec& spec);

/// One unit vector drawn from vMF(mean, kappa) (Wood's rejection sampler).
template <typename Rng>
std::vector<double> sample_vmf(std::span<const double> mean, double kappa, Rng& rng);

// Sidecar: {"<id>": {"component": c, "is_outlier": b}, ...}.
void write_ground_truth(const std::filesystem::path& path, std::span<const GroundTruth> truth);
std::vector<GroundTruth> read_ground_truth(const std::filesystem::path& path);

/// Writes meta.jsonl, embeddings.bin and truth.json into `dir`.
void write_synth(const SynthCorpus& synth, const std::filesystem::path& dir);

/// Deterministic scorer stand-in: outliers get 1 or 2 per rubric dimension,
/// planted members 4 or 5.
ProbeRating stub_rating(const GroundTruth& truth);
void write_stub_ratings(const std::filesystem::path& path, std::span<const GroundTruth> truth);

}  // namespace geomine
