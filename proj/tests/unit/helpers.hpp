#pragma once

#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>
#include <vector>

#include <geomine/common.hpp>
#include <geomine/corpus.hpp>

namespace testing {

namespace fs = std::filesystem;

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = fs::temp_directory_path() / ("geomine-" + tag + "-" + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

class WarningCapture {
 public:
  WarningCapture() {
    geomine::set_warning_sink([this](std::string_view m) { messages.emplace_back(m); });
  }
  ~WarningCapture() { geomine::set_warning_sink(nullptr); }

  bool contains(const std::string& needle) const {
    for (const auto& m : messages) {
      if (m.find(needle) != std::string::npos) return true;
    }
    return false;
  }

  std::vector<std::string> messages;
};

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline geomine::Sample sample(geomine::SampleId id, std::vector<float> e, std::uint32_t len = 10,
                              std::string lang = "cpp") {
  geomine::Sample s;
  s.id = id;
  s.embedding = std::move(e);
  s.token_length = len;
  s.language = std::move(lang);
  return s;
}

// Points scattered around the given unit directions, ids 0..n-1 in
// direction-major order.
inline geomine::Corpus clustered_corpus(const std::vector<std::vector<float>>& dirs, std::size_t per_dir,
                                        double noise, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, noise);
  std::vector<geomine::Sample> out;
  const std::size_t dim = dirs.front().size();
  for (std::size_t c = 0; c < dirs.size(); ++c) {
    for (std::size_t i = 0; i < per_dir; ++i) {
      std::vector<float> e(dim);
      for (std::size_t t = 0; t < dim; ++t) e[t] = static_cast<float>(dirs[c][t] + g(rng));
      out.push_back(sample(out.size(), std::move(e), 10 + static_cast<std::uint32_t>(c), "l" + std::to_string(c)));
    }
  }
  return geomine::Corpus::from_samples(dim, out);
}

inline std::vector<std::vector<float>> axis_directions(std::size_t k, std::size_t dim) {
  std::vector<std::vector<float>> d(k, std::vector<float>(dim, 0.0f));
  for (std::size_t c = 0; c < k; ++c) d[c][c % dim] = (c < dim) ? 1.0f : -1.0f;
  return d;
}

}  // namespace testing
