#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace iclforge {

// Dense row-major embeddings keyed by example id.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;
  // Rejects duplicate ids, size mismatches and non-finite entries.
  EmbeddingMatrix(std::vector<std::string> ids, std::size_t dim,
                  std::vector<float> values);

  std::size_t rows() const { return ids_.size(); }
  std::size_t dim() const { return dim_; }
  bool empty() const { return ids_.empty(); }
  const std::vector<std::string>& ids() const { return ids_; }
  std::span<const float> values() const { return values_; }

  std::span<const float> row(std::size_t i) const {
    return {values_.data() + i * dim_, dim_};
  }
  bool contains(std::string_view id) const;
  // Throws MissingEmbedding.
  std::span<const float> row(std::string_view id) const;
  std::size_t index_of(std::string_view id) const;

  // Every row has unit L2 norm within 1e-6.
  bool normalized() const;
  // Throws ZeroVector for an all-zero row.
  EmbeddingMatrix normalized_copy() const;
  // Rows for `ids`, in that order. Throws MissingEmbedding.
  EmbeddingMatrix subset(std::span<const std::string> ids) const;
  // Rows of `other` whose ids are not already present are appended.
  void merge(const EmbeddingMatrix& other);

 private:
  std::vector<std::string> ids_;
  std::size_t dim_ = 0;
  std::vector<float> values_;
  std::unordered_map<std::string, std::size_t> by_id_;
};

// JSONL: {"id": str, "vector": [float, ...]} per line.
EmbeddingMatrix load_embeddings_jsonl(const std::filesystem::path& path);
// Little-endian float32 rows plus a manifest {"dim": int, "ids": [...]}.
EmbeddingMatrix load_embeddings_packed(const std::filesystem::path& f32_path,
                                       const std::filesystem::path& manifest);
// Dispatches on extension: ".f32" reads "<stem>.json" as the manifest.
EmbeddingMatrix load_embeddings(const std::filesystem::path& path);
void save_embeddings_jsonl(const EmbeddingMatrix& m,
                           const std::filesystem::path& path);
void save_embeddings_packed(const EmbeddingMatrix& m,
                            const std::filesystem::path& f32_path);
std::filesystem::path packed_manifest_path(const std::filesystem::path& f32_path);

// a.b / (|a||b|) clamped to [-1, 1]. Throws DimensionMismatch, ZeroVector.
double cosine_similarity(std::span<const double> a, std::span<const double> b);
double cosine_similarity(std::span<const float> a, std::span<const float> b);

// A candidate and its k nearest pool items. Neighbors are ordered by
// decreasing similarity, ties broken by ascending id.
struct NeighborCluster {
  std::string candidate_id;
  std::vector<std::string> neighbor_ids;
  std::vector<double> similarities;
};

// Anything that can produce the local neighborhood of a pool item.
class NeighborSource {
 public:
  virtual ~NeighborSource() = default;
  // Throws UnknownId, NotEnoughNeighbors.
  virtual NeighborCluster cluster(std::string_view candidate_id,
                                  std::size_t k) const = 0;
  virtual bool contains(std::string_view id) const = 0;
};

struct ScoredId {
  std::string id;
  double similarity;
};

// Exact cosine kNN by linear scan over contiguous rows with cached norms.
class NeighborIndex final : public NeighborSource {
 public:
  // Throws EmptyMatrix, ZeroVector.
  static NeighborIndex build(const EmbeddingMatrix& embeddings);

  NeighborCluster knn_query(std::string_view candidate_id, std::size_t k) const;
  NeighborCluster cluster(std::string_view candidate_id,
                          std::size_t k) const override {
    return knn_query(candidate_id, k);
  }
  bool contains(std::string_view id) const override;

  // The k rows most similar to `query`, skipping `exclude_id` if present.
  // Returns fewer than k only when the index is smaller.
  std::vector<ScoredId> nearest(std::span<const float> query, std::size_t k,
                                std::string_view exclude_id = {}) const;

  std::size_t size() const { return ids_.size(); }
  std::size_t dim() const { return dim_; }
  const std::vector<std::string>& ids() const { return ids_; }

 private:
  std::vector<ScoredId> top_k(std::span<const float> query, double query_norm,
                              std::size_t k, std::size_t skip) const;

  std::vector<std::string> ids_;
  std::size_t dim_ = 0;
  std::vector<float> rows_;
  std::vector<double> norms_;
  std::unordered_map<std::string, std::size_t> by_id_;
};

// Full-scan reference used to check NeighborIndex.
NeighborCluster brute_force_knn(const EmbeddingMatrix& embeddings,
                                std::string_view candidate_id, std::size_t k);

}  // namespace iclforge
