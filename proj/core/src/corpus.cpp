#include "geomine/corpus.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "geomine/common.hpp"

namespace geomine {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

template <typename T>
T from_little_endian(T v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &v, sizeof(T));
    std::reverse(std::begin(bytes), std::end(bytes));
    std::memcpy(&v, bytes, sizeof(T));
    return v;
  }
}

template <typename T>
T to_little_endian(T v) {
  return from_little_endian(v);
}

}  // namespace

Corpus Corpus::from_parts(std::size_t dim, std::vector<float> embeddings, std::vector<SampleMeta> meta,
                          std::vector<std::string> language_vocab) {
  if (dim == 0) throw Error("embedding dimension must be positive");
  if (embeddings.size() != meta.size() * dim) {
    throw Error(fmt::format("embedding matrix holds {} values, expected {} rows x {} dims",
                            embeddings.size(), meta.size(), dim));
  }
  Corpus c;
  c.dim_ = dim;
  c.vocab_ = std::move(language_vocab);
  c.row_index_.reserve(meta.size());
  for (std::size_t row = 0; row < meta.size(); ++row) {
    const auto& m = meta[row];
    if (m.token_length < 1) throw Error(fmt::format("row {}: token_length must be >= 1", row));
    if (m.language >= c.vocab_.size()) {
      throw Error(fmt::format("row {}: language index {} outside vocabulary", row, m.language));
    }
    if (!(m.weight >= 0.0) || !std::isfinite(m.weight)) {
      throw Error(fmt::format("row {}: weight must be a finite nonnegative value", row));
    }
    if (!c.row_index_.emplace(m.id, row).second) {
      throw Error(fmt::format("duplicate sample id {} at row {}", m.id, row));
    }
    float* v = embeddings.data() + row * dim;
    double sq = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      if (!std::isfinite(v[j])) throw Error(fmt::format("row {}: non-finite embedding value", row));
      sq += static_cast<double>(v[j]) * v[j];
    }
    if (sq == 0.0) throw Error(fmt::format("row {}: zero-norm embedding cannot be normalized", row));
    const double inv = 1.0 / std::sqrt(sq);
    for (std::size_t j = 0; j < dim; ++j) v[j] = static_cast<float>(v[j] * inv);
  }
  c.embeddings_ = std::move(embeddings);
  c.meta_ = std::move(meta);
  return c;
}

Corpus Corpus::from_samples(std::size_t dim, const std::vector<Sample>& samples) {
  std::set<std::string> labels;
  for (const auto& s : samples) labels.insert(s.language);
  std::vector<std::string> vocab(labels.begin(), labels.end());
  std::vector<float> emb;
  emb.reserve(samples.size() * dim);
  std::vector<SampleMeta> meta;
  meta.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (s.embedding.size() != dim) {
      throw Error(fmt::format("row {}: embedding has dimension {}, expected {}", i, s.embedding.size(), dim));
    }
    emb.insert(emb.end(), s.embedding.begin(), s.embedding.end());
    const auto lang = static_cast<std::uint32_t>(
        std::lower_bound(vocab.begin(), vocab.end(), s.language) - vocab.begin());
    meta.push_back({s.id, s.token_length, lang, s.weight});
  }
  return from_parts(dim, std::move(emb), std::move(meta), std::move(vocab));
}

std::size_t Corpus::row_of(SampleId id) const {
  auto it = row_index_.find(id);
  if (it == row_index_.end()) throw Error(fmt::format("unknown sample id {}", id));
  return it->second;
}

Sample Corpus::sample(std::size_t row) const {
  auto e = embedding(row);
  const auto& m = meta_[row];
  return {m.id, std::vector<float>(e.begin(), e.end()), m.token_length, vocab_[m.language], m.weight};
}

std::uint64_t Corpus::total_tokens() const {
  std::uint64_t total = 0;
  for (const auto& m : meta_) total += m.token_length;
  return total;
}

Corpus Corpus::subset(std::span<const std::size_t> rows) const {
  Corpus c;
  c.dim_ = dim_;
  c.vocab_ = vocab_;
  c.embeddings_.reserve(rows.size() * dim_);
  c.meta_.reserve(rows.size());
  c.row_index_.reserve(rows.size());
  for (std::size_t r : rows) {
    if (r >= size()) throw Error(fmt::format("subset row {} out of range", r));
    auto e = embedding(r);
    c.embeddings_.insert(c.embeddings_.end(), e.begin(), e.end());
    if (!c.row_index_.emplace(meta_[r].id, c.meta_.size()).second) {
      throw Error(fmt::format("subset repeats sample id {}", meta_[r].id));
    }
    c.meta_.push_back(meta_[r]);
  }
  return c;
}

EmbeddingMatrix read_embedding_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(fmt::format("cannot open embedding file {}", path.string()));
  std::uint64_t header[2];
  if (!in.read(reinterpret_cast<char*>(header), sizeof(header))) {
    throw Error(fmt::format("{}: truncated embedding header", path.string()));
  }
  EmbeddingMatrix m;
  m.rows = from_little_endian(header[0]);
  m.dim = from_little_endian(header[1]);
  if (m.dim == 0) throw Error(fmt::format("{}: embedding dimension is zero", path.string()));
  const auto expected = static_cast<std::uintmax_t>(sizeof(header)) +
                        static_cast<std::uintmax_t>(m.rows) * m.dim * sizeof(float);
  const auto actual = fs::file_size(path);
  if (actual != expected) {
    throw Error(fmt::format("{}: file holds {} bytes but header (rows={}, dim={}) implies {}", path.string(),
                            actual, m.rows, m.dim, expected));
  }
  m.values.resize(m.rows * m.dim);
  in.read(reinterpret_cast<char*>(m.values.data()), static_cast<std::streamsize>(m.values.size() * sizeof(float)));
  if (!in) throw Error(fmt::format("{}: short read", path.string()));
  if constexpr (std::endian::native != std::endian::little) {
    for (auto& v : m.values) v = from_little_endian(v);
  }
  return m;
}

void write_embedding_file(const fs::path& path, std::size_t rows, std::size_t dim, std::span<const float> values) {
  if (values.size() != rows * dim) throw Error("embedding matrix size does not match rows x dim");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(fmt::format("cannot write embedding file {}", path.string()));
  const std::uint64_t header[2] = {to_little_endian<std::uint64_t>(rows), to_little_endian<std::uint64_t>(dim)};
  out.write(reinterpret_cast<const char*>(header), sizeof(header));
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(float)));
  } else {
    for (float v : values) {
      const float le = to_little_endian(v);
      out.write(reinterpret_cast<const char*>(&le), sizeof(float));
    }
  }
  if (!out) throw Error(fmt::format("write failed for {}", path.string()));
}

std::vector<MetadataRecord> read_metadata_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(fmt::format("cannot open metadata file {}", path.string()));
  std::vector<MetadataRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto fail = [&](std::string_view why) {
      return Error(fmt::format("{}:{}: malformed record: {}", path.string(), line_no, why));
    };
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw fail(e.what());
    }
    if (!j.is_object() || j.size() != 3 || !j.contains("id") || !j.contains("token_length") ||
        !j.contains("language")) {
      throw fail(R"(expected exactly the keys {"id", "token_length", "language"})");
    }
    const auto& id = j["id"];
    const auto& len = j["token_length"];
    const auto& lang = j["language"];
    if (!id.is_number_integer() || (id.is_number_integer() && !id.is_number_unsigned() && id.get<std::int64_t>() < 0)) {
      throw fail("id must be a nonnegative integer");
    }
    if (!len.is_number_integer() || len.get<std::int64_t>() < 1 || len.get<std::int64_t>() > UINT32_MAX) {
      throw fail("token_length must be an integer >= 1");
    }
    if (!lang.is_string()) throw fail("language must be a string");
    records.push_back({id.get<SampleId>(), static_cast<std::uint32_t>(len.get<std::int64_t>()), lang.get<std::string>()});
  }
  return records;
}

void write_metadata_file(const fs::path& path, std::span<const MetadataRecord> records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(fmt::format("cannot write metadata file {}", path.string()));
  for (const auto& r : records) {
    json j = {{"id", r.id}, {"token_length", r.token_length}, {"language", r.language}};
    out << j.dump() << '\n';
  }
  if (!out) throw Error(fmt::format("write failed for {}", path.string()));
}

Corpus ingest(const fs::path& metadata_path, const fs::path& embedding_path) {
  auto records = read_metadata_file(metadata_path);
  auto matrix = read_embedding_file(embedding_path);
  if (records.size() != matrix.rows) {
    throw Error(fmt::format("record-count mismatch: {} metadata records but {} embedding rows", records.size(),
                            matrix.rows));
  }
  std::set<std::string> labels;
  for (const auto& r : records) labels.insert(r.language);
  std::vector<std::string> vocab(labels.begin(), labels.end());
  std::vector<SampleMeta> meta;
  meta.reserve(records.size());
  for (const auto& r : records) {
    const auto lang =
        static_cast<std::uint32_t>(std::lower_bound(vocab.begin(), vocab.end(), r.language) - vocab.begin());
    meta.push_back({r.id, r.token_length, lang, 1.0});
  }
  return Corpus::from_parts(matrix.dim, std::move(matrix.values), std::move(meta), std::move(vocab));
}

void export_store(const Corpus& corpus, const fs::path& store_dir) {
  fs::create_directories(store_dir);
  std::vector<MetadataRecord> records;
  records.reserve(corpus.size());
  for (std::size_t r = 0; r < corpus.size(); ++r) {
    records.push_back({corpus.meta(r).id, corpus.meta(r).token_length, corpus.language_of(r)});
  }
  write_metadata_file(store_dir / kStoreMetaFile, records);
  write_embedding_file(store_dir / kStoreEmbeddingFile, corpus.size(), corpus.dim(), corpus.embeddings());
}

Corpus load_store(const fs::path& store_dir) {
  return ingest(store_dir / kStoreMetaFile, store_dir / kStoreEmbeddingFile);
}

std::vector<std::size_t> probe_indices(std::size_t n, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw Error("probe fraction must lie in (0, 1]");
  const auto target = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  if (target == 0) throw Error("probe subset would be empty");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  // Partial Fisher-Yates: the first `target` slots are a uniform draw.
  for (std::size_t i = 0; i < target; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(target);
  std::sort(idx.begin(), idx.end());
  return idx;
}

Corpus probe_subset(const Corpus& corpus, double fraction, std::uint64_t seed) {
  auto rows = probe_indices(corpus.size(), fraction, seed);
  return corpus.subset(rows);
}

}  // namespace geomine
