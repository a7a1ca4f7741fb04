#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "geomine/corpus.hpp"

namespace geomine {

/// Four rubric dimensions returned by the knowledge probe, each in [1, 5].
struct ProbeRating {
  int code_quality = 0;
  int algorithm_and_engineering = 0;
  int training_suitability = 0;
  int knowledge_score = 0;

  double mean() const {
    return (code_quality + algorithm_and_engineering + training_suitability + knowledge_score) / 4.0;
  }
  std::array<int, 4> values() const {
    return {code_quality, algorithm_and_engineering, training_suitability, knowledge_score};
  }
  bool operator==(const ProbeRating&) const = default;
};

inline constexpr std::array<const char*, 4> kRatingKeys = {"code_quality", "algorithm_and_engineering",
                                                           "training_suitability", "knowledge_score"};

/// Strict validation of a scorer reply: a JSON object with exactly the four
/// rubric keys, each an integer in [1, 5]. Returns nullopt otherwise.
std::optional<ProbeRating> parse_rating(std::string_view response);
std::string rating_to_json(const ProbeRating& rating);

/// A raw scorer endpoint. Implementations return the reply body for one
/// request and throw ScorerUnavailable when the endpoint cannot be reached.
class ProbeScorer {
 public:
  virtual ~ProbeScorer() = default;
  virtual std::string query(const std::string& content) = 0;
};

/// POSTs {"content": ...} to an HTTP endpoint and returns the body.
class HttpScorer : public ProbeScorer {
 public:
  explicit HttpScorer(std::string url, int timeout_seconds = 60);
  std::string query(const std::string& content) override;

  const std::string& url() const { return url_; }

 private:
  std::string url_;
  std::string origin_;
  std::string path_;
  int timeout_seconds_;
};

/// Deterministic in-process scorer for tests and dry runs.
class StubScorer : public ProbeScorer {
 public:
  using Responder = std::function<std::string(const std::string&)>;
  explicit StubScorer(std::string fixed_reply);
  explicit StubScorer(Responder responder);
  std::string query(const std::string& content) override;

 private:
  Responder responder_;
};

struct FetchOptions {
  std::size_t max_retries = 3;  // retries after the first attempt
  std::size_t parallelism = 8;  // requests in flight
};

/// One entry per probe text; nullopt marks a probe whose replies stayed
/// malformed or out of range after all retries. Throws ScorerUnavailable.
std::vector<std::optional<ProbeRating>> fetch_ratings(std::span<const std::string> probe_texts, ProbeScorer& scorer,
                                                      const FetchOptions& options = {});

/// Ratings keyed by sample id, loaded from JSON lines of the form
/// {"id": 17, "code_quality": 4, ...}.
class OfflineRatings {
 public:
  static OfflineRatings load(const std::filesystem::path& path);
  static void save(const std::filesystem::path& path, const std::map<SampleId, ProbeRating>& ratings);

  std::optional<ProbeRating> find(SampleId id) const;
  std::size_t size() const { return ratings_.size(); }
  const std::map<SampleId, ProbeRating>& all() const { return ratings_; }

 private:
  std::map<SampleId, ProbeRating> ratings_;
};

/// Source of ratings for probe sample ids, used by the miner.
class RatingSource {
 public:
  virtual ~RatingSource() = default;
  virtual std::vector<std::optional<ProbeRating>> rate(std::span<const SampleId> probe_ids) = 0;
  /// Stable identity of the source, folded into stage cache keys.
  virtual std::string fingerprint() const = 0;
};

class OfflineRatingSource : public RatingSource {
 public:
  explicit OfflineRatingSource(OfflineRatings ratings, std::string fingerprint);
  std::vector<std::optional<ProbeRating>> rate(std::span<const SampleId> probe_ids) override;
  std::string fingerprint() const override { return fingerprint_; }

 private:
  OfflineRatings ratings_;
  std::string fingerprint_;
};

/// Looks up each probe's text and sends it through a ProbeScorer.
class ScorerRatingSource : public RatingSource {
 public:
  ScorerRatingSource(ProbeScorer& scorer, std::map<SampleId, std::string> texts, std::string fingerprint,
                     FetchOptions options = {});
  std::vector<std::optional<ProbeRating>> rate(std::span<const SampleId> probe_ids) override;
  std::string fingerprint() const override { return fingerprint_; }

 private:
  ProbeScorer& scorer_;
  std::map<SampleId, std::string> texts_;
  std::string fingerprint_;
  FetchOptions options_;
};

/// Ratings computed by a callable; test and simulation use.
class FunctionRatingSource : public RatingSource {
 public:
  using Fn = std::function<std::optional<ProbeRating>(SampleId)>;
  FunctionRatingSource(Fn fn, std::string fingerprint);
  std::vector<std::optional<ProbeRating>> rate(std::span<const SampleId> probe_ids) override;
  std::string fingerprint() const override { return fingerprint_; }

 private:
  Fn fn_;
  std::string fingerprint_;
};

/// Text lookup for the HTTP scorer: JSON lines {"id": 17, "content": "..."}.
std::map<SampleId, std::string> load_texts(const std::filesystem::path& path);

/// The knowledge-probe system prompt shipped in assets/.
std::filesystem::path default_prompt_path();
std::string load_prompt(const std::filesystem::path& path);
/// Substitutes the probe text for the `$content` placeholder.
std::string render_prompt(std::string_view prompt_template, std::string_view content);

}  // namespace geomine
