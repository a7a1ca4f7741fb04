#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace geomine {

using SampleId = std::uint64_t;

/// Per-sample metadata. The embedding row lives in the owning Corpus.
struct SampleMeta {
  SampleId id = 0;
  std::uint32_t token_length = 1;
  std::uint32_t language = 0;  // index into Corpus::language_vocab()
  double weight = 1.0;
};

/// Owning, materialized view of one sample; convenient in tests and tools.
struct Sample {
  SampleId id = 0;
  std::vector<float> embedding;
  std::uint32_t token_length = 1;
  std::string language;
  double weight = 1.0;
};

/// An immutable embedded corpus. Embeddings are unit-norm float32 rows,
/// stored contiguously row-major.
class Corpus {
 public:
  Corpus() = default;

  /// Builds a corpus from raw parts. Embeddings are L2-normalized here;
  /// throws on zero-norm rows, duplicate ids, bad lengths or unknown
  /// language indices.
  static Corpus from_parts(std::size_t dim, std::vector<float> embeddings, std::vector<SampleMeta> meta,
                           std::vector<std::string> language_vocab);

  /// Convenience builder: languages are given as labels and the vocabulary is
  /// the sorted set of labels seen.
  static Corpus from_samples(std::size_t dim, const std::vector<Sample>& samples);

  std::size_t size() const { return meta_.size(); }
  bool empty() const { return meta_.empty(); }
  std::size_t dim() const { return dim_; }

  std::span<const float> embedding(std::size_t row) const {
    return {embeddings_.data() + row * dim_, dim_};
  }
  std::span<const float> embeddings() const { return embeddings_; }
  const SampleMeta& meta(std::size_t row) const { return meta_[row]; }
  std::span<const SampleMeta> meta() const { return meta_; }
  const std::vector<std::string>& language_vocab() const { return vocab_; }
  const std::string& language_of(std::size_t row) const { return vocab_[meta_[row].language]; }

  /// Row index of a sample id; throws if absent.
  std::size_t row_of(SampleId id) const;
  bool contains(SampleId id) const { return row_index_.count(id) != 0; }

  Sample sample(std::size_t row) const;
  std::uint64_t total_tokens() const;

  /// Rows copied in the given order into a new corpus sharing the vocabulary.
  Corpus subset(std::span<const std::size_t> rows) const;

 private:
  std::size_t dim_ = 0;
  std::vector<float> embeddings_;
  std::vector<SampleMeta> meta_;
  std::vector<std::string> vocab_;
  std::unordered_map<SampleId, std::size_t> row_index_;
};

// On-disk layout of an embedding shard: two little-endian u64 (rows, dim)
// followed by rows*dim little-endian float32 values.
struct EmbeddingMatrix {
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::vector<float> values;
};

EmbeddingMatrix read_embedding_file(const std::filesystem::path& path);
void write_embedding_file(const std::filesystem::path& path, std::size_t rows, std::size_t dim,
                          std::span<const float> values);

struct MetadataRecord {
  SampleId id = 0;
  std::uint32_t token_length = 1;
  std::string language;
};

std::vector<MetadataRecord> read_metadata_file(const std::filesystem::path& path);
void write_metadata_file(const std::filesystem::path& path, std::span<const MetadataRecord> records);

/// Loads metadata (JSON lines) and embeddings (binary shard), validates them
/// against each other and normalizes every embedding.
Corpus ingest(const std::filesystem::path& metadata_path, const std::filesystem::path& embedding_path);

// A store directory holds the normalized corpus in the ingest formats.
inline constexpr const char* kStoreMetaFile = "meta.jsonl";
inline constexpr const char* kStoreEmbeddingFile = "embeddings.bin";

void export_store(const Corpus& corpus, const std::filesystem::path& store_dir);
Corpus load_store(const std::filesystem::path& store_dir);

/// Row indices (ascending) of a uniform random subset of size
/// round(fraction * N), drawn without replacement.
std::vector<std::size_t> probe_indices(std::size_t n, double fraction, std::uint64_t seed);
Corpus probe_subset(const Corpus& corpus, double fraction, std::uint64_t seed);

}  // namespace geomine
