#include "geomine/scorer.hpp"

#include <atomic>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <fmt/format.h>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "geomine/common.hpp"

namespace geomine {

using nlohmann::json;

namespace {

std::optional<ProbeRating> rating_from_json(const json& j) {
  if (!j.is_object() || j.size() != kRatingKeys.size()) return std::nullopt;
  std::array<int, 4> v{};
  for (std::size_t i = 0; i < kRatingKeys.size(); ++i) {
    auto it = j.find(kRatingKeys[i]);
    if (it == j.end() || !it->is_number_integer()) return std::nullopt;
    const auto x = it->get<std::int64_t>();
    if (x < 1 || x > 5) return std::nullopt;
    v[i] = static_cast<int>(x);
  }
  return ProbeRating{v[0], v[1], v[2], v[3]};
}

}  // namespace

std::optional<ProbeRating> parse_rating(std::string_view response) {
  const auto j = json::parse(response.begin(), response.end(), nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) return std::nullopt;
  return rating_from_json(j);
}

std::string rating_to_json(const ProbeRating& r) {
  json j = {{kRatingKeys[0], r.code_quality},
            {kRatingKeys[1], r.algorithm_and_engineering},
            {kRatingKeys[2], r.training_suitability},
            {kRatingKeys[3], r.knowledge_score}};
  return j.dump();
}

HttpScorer::HttpScorer(std::string url, int timeout_seconds) : url_(std::move(url)), timeout_seconds_(timeout_seconds) {
  const auto scheme = url_.find("://");
  if (scheme == std::string::npos || url_.substr(0, scheme) != "http") {
    throw Error(fmt::format("scorer URL must be of the form http://host[:port]/path, got '{}'", url_));
  }
  const auto slash = url_.find('/', scheme + 3);
  origin_ = slash == std::string::npos ? url_ : url_.substr(0, slash);
  path_ = slash == std::string::npos ? "/" : url_.substr(slash);
}

std::string HttpScorer::query(const std::string& content) {
  httplib::Client client(origin_);
  client.set_connection_timeout(timeout_seconds_, 0);
  client.set_read_timeout(timeout_seconds_, 0);
  const json body = {{"content", content}};
  auto res = client.Post(path_, body.dump(), "application/json");
  if (!res) {
    throw ScorerUnavailable(fmt::format("scorer endpoint {} unreachable: {}", url_, httplib::to_string(res.error())));
  }
  return res->body;
}

StubScorer::StubScorer(std::string fixed_reply)
    : responder_([reply = std::move(fixed_reply)](const std::string&) { return reply; }) {}

StubScorer::StubScorer(Responder responder) : responder_(std::move(responder)) {}

std::string StubScorer::query(const std::string& content) { return responder_(content); }

std::vector<std::optional<ProbeRating>> fetch_ratings(std::span<const std::string> probe_texts, ProbeScorer& scorer,
                                                      const FetchOptions& options) {
  std::vector<std::optional<ProbeRating>> out(probe_texts.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::atomic<bool> abort{false};

  auto worker = [&] {
    try {
      for (std::size_t i = next++; i < probe_texts.size() && !abort; i = next++) {
        for (std::size_t attempt = 0; attempt <= options.max_retries; ++attempt) {
          if (auto r = parse_rating(scorer.query(probe_texts[i]))) {
            out[i] = *r;
            break;
          }
        }
      }
    } catch (...) {
      abort = true;
      std::lock_guard lock(failure_mutex);
      if (!failure) failure = std::current_exception();
    }
  };

  const std::size_t workers = std::min(std::max<std::size_t>(1, options.parallelism), probe_texts.size());
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

OfflineRatings OfflineRatings::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(fmt::format("cannot open ratings file {}", path.string()));
  OfflineRatings r;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("id") || !j["id"].is_number_unsigned()) {
      throw Error(fmt::format("{}:{}: malformed rating record", path.string(), line_no));
    }
    json body = j;
    body.erase("id");
    auto rating = rating_from_json(body);
    if (!rating) throw Error(fmt::format("{}:{}: rating must carry the four rubric keys in [1, 5]", path.string(), line_no));
    r.ratings_[j["id"].get<SampleId>()] = *rating;
  }
  return r;
}

void OfflineRatings::save(const std::filesystem::path& path, const std::map<SampleId, ProbeRating>& ratings) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(fmt::format("cannot write {}", path.string()));
  for (const auto& [id, r] : ratings) {
    json j = json::parse(rating_to_json(r));
    j["id"] = id;
    out << j.dump() << '\n';
  }
}

std::optional<ProbeRating> OfflineRatings::find(SampleId id) const {
  auto it = ratings_.find(id);
  if (it == ratings_.end()) return std::nullopt;
  return it->second;
}

OfflineRatingSource::OfflineRatingSource(OfflineRatings ratings, std::string fingerprint)
    : ratings_(std::move(ratings)), fingerprint_(std::move(fingerprint)) {}

std::vector<std::optional<ProbeRating>> OfflineRatingSource::rate(std::span<const SampleId> probe_ids) {
  std::vector<std::optional<ProbeRating>> out;
  out.reserve(probe_ids.size());
  for (auto id : probe_ids) out.push_back(ratings_.find(id));
  return out;
}

ScorerRatingSource::ScorerRatingSource(ProbeScorer& scorer, std::map<SampleId, std::string> texts,
                                       std::string fingerprint, FetchOptions options)
    : scorer_(scorer), texts_(std::move(texts)), fingerprint_(std::move(fingerprint)), options_(options) {}

std::vector<std::optional<ProbeRating>> ScorerRatingSource::rate(std::span<const SampleId> probe_ids) {
  std::vector<std::string> texts;
  std::vector<std::size_t> slots;
  for (std::size_t i = 0; i < probe_ids.size(); ++i) {
    auto it = texts_.find(probe_ids[i]);
    if (it == texts_.end()) continue;  // no text: probe stays missing
    texts.push_back(it->second);
    slots.push_back(i);
  }
  const auto fetched = fetch_ratings(texts, scorer_, options_);
  std::vector<std::optional<ProbeRating>> out(probe_ids.size());
  for (std::size_t i = 0; i < slots.size(); ++i) out[slots[i]] = fetched[i];
  return out;
}

FunctionRatingSource::FunctionRatingSource(Fn fn, std::string fingerprint)
    : fn_(std::move(fn)), fingerprint_(std::move(fingerprint)) {}

std::vector<std::optional<ProbeRating>> FunctionRatingSource::rate(std::span<const SampleId> probe_ids) {
  std::vector<std::optional<ProbeRating>> out;
  out.reserve(probe_ids.size());
  for (auto id : probe_ids) out.push_back(fn_(id));
  return out;
}

std::map<SampleId, std::string> load_texts(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(fmt::format("cannot open text file {}", path.string()));
  std::map<SampleId, std::string> texts;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("id") || !j.contains("content") ||
        !j["id"].is_number_unsigned() || !j["content"].is_string()) {
      throw Error(fmt::format("{}:{}: expected {{\"id\": int, \"content\": string}}", path.string(), line_no));
    }
    texts[j["id"].get<SampleId>()] = j["content"].get<std::string>();
  }
  return texts;
}

std::filesystem::path default_prompt_path() {
  if (const char* dir = std::getenv("GEOMINE_ASSET_DIR")) return std::filesystem::path(dir) / "knowledge_probe_prompt.txt";
  return std::filesystem::path(GEOMINE_ASSET_DIR) / "knowledge_probe_prompt.txt";
}

std::string load_prompt(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(fmt::format("cannot open prompt {}", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string render_prompt(std::string_view prompt_template, std::string_view content) {
  std::string out(prompt_template);
  constexpr std::string_view kPlaceholder = "$content";
  const auto pos = out.find(kPlaceholder);
  if (pos == std::string::npos) throw Error("prompt template has no $content placeholder");
  out.replace(pos, kPlaceholder.size(), content);
  return out;
}

}  // namespace geomine
