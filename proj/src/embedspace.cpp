#include "iclforge/embedspace.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "iclforge/error.hpp"
#include "iclforge/io.hpp"

namespace iclforge {

using nlohmann::json;

EmbeddingMatrix::EmbeddingMatrix(std::vector<std::string> ids, std::size_t dim,
                                 std::vector<float> values)
    : ids_(std::move(ids)), dim_(dim), values_(std::move(values)) {
  if (!ids_.empty() && dim_ == 0) {
    throw Error(ErrorCode::kDimensionMismatch, "embedding dim must be positive");
  }
  if (values_.size() != ids_.size() * dim_) {
    throw Error(ErrorCode::kDimensionMismatch,
                "expected " + std::to_string(ids_.size() * dim_) +
                    " values, got " + std::to_string(values_.size()));
  }
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (!std::isfinite(values_[i])) {
      const auto& id = ids_[i / dim_];
      throw Error(ErrorCode::kInvalidArgument,
                  "non-finite embedding entry for " + id, {id});
    }
  }
  by_id_.reserve(ids_.size());
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (!by_id_.emplace(ids_[i], i).second) {
      throw Error(ErrorCode::kDuplicateId, ids_[i], {ids_[i]});
    }
  }
}

bool EmbeddingMatrix::contains(std::string_view id) const {
  return by_id_.find(std::string(id)) != by_id_.end();
}

std::size_t EmbeddingMatrix::index_of(std::string_view id) const {
  auto it = by_id_.find(std::string(id));
  if (it == by_id_.end()) {
    throw Error(ErrorCode::kMissingEmbedding,
                "no embedding for id " + std::string(id), {std::string(id)});
  }
  return it->second;
}

std::span<const float> EmbeddingMatrix::row(std::string_view id) const {
  return row(index_of(id));
}

bool EmbeddingMatrix::normalized() const {
  for (std::size_t i = 0; i < rows(); ++i) {
    double sq = 0.0;
    for (float v : row(i)) sq += static_cast<double>(v) * v;
    if (std::abs(std::sqrt(sq) - 1.0) > 1e-6) return false;
  }
  return true;
}

EmbeddingMatrix EmbeddingMatrix::normalized_copy() const {
  std::vector<float> out(values_.size());
  for (std::size_t i = 0; i < rows(); ++i) {
    double sq = 0.0;
    for (float v : row(i)) sq += static_cast<double>(v) * v;
    if (sq <= 0.0) {
      throw Error(ErrorCode::kZeroVector, "zero embedding for " + ids_[i],
                  {ids_[i]});
    }
    const double inv = 1.0 / std::sqrt(sq);
    for (std::size_t d = 0; d < dim_; ++d) {
      out[i * dim_ + d] = static_cast<float>(values_[i * dim_ + d] * inv);
    }
  }
  return EmbeddingMatrix(ids_, dim_, std::move(out));
}

EmbeddingMatrix EmbeddingMatrix::subset(std::span<const std::string> ids) const {
  std::vector<float> out;
  out.reserve(ids.size() * dim_);
  for (const auto& id : ids) {
    auto r = row(id);
    out.insert(out.end(), r.begin(), r.end());
  }
  return EmbeddingMatrix(std::vector<std::string>(ids.begin(), ids.end()), dim_,
                         std::move(out));
}

void EmbeddingMatrix::merge(const EmbeddingMatrix& other) {
  if (other.empty()) return;
  if (empty()) {
    *this = other;
    return;
  }
  if (other.dim_ != dim_) {
    throw Error(ErrorCode::kDimensionMismatch,
                "cannot merge embeddings of dim " + std::to_string(other.dim_) +
                    " into dim " + std::to_string(dim_));
  }
  for (std::size_t i = 0; i < other.rows(); ++i) {
    const auto& id = other.ids_[i];
    if (contains(id)) continue;
    by_id_.emplace(id, ids_.size());
    ids_.push_back(id);
    auto r = other.row(i);
    values_.insert(values_.end(), r.begin(), r.end());
  }
}

EmbeddingMatrix load_embeddings_jsonl(const std::filesystem::path& path) {
  std::vector<std::string> ids;
  std::vector<float> values;
  std::size_t dim = 0;
  const auto text = read_text_file(path);
  for_each_line(text, [&](std::string_view line, std::size_t line_no) {
    auto fail = [&](const std::string& what) {
      std::ostringstream msg;
      msg << path.string() << ":" << line_no << ": " << what;
      throw Error(ErrorCode::kParseError, msg.str());
    };
    json record;
    try {
      record = json::parse(line);
    } catch (const json::parse_error& e) {
      fail(e.what());
    }
    if (!record.contains("id") || !record["id"].is_string()) fail("missing id");
    if (!record.contains("vector") || !record["vector"].is_array()) {
      fail("missing vector");
    }
    const auto& vec = record["vector"];
    if (dim == 0) dim = vec.size();
    if (vec.size() != dim || dim == 0) {
      throw Error(ErrorCode::kDimensionMismatch,
                  path.string() + ":" + std::to_string(line_no) +
                      ": vector has dim " + std::to_string(vec.size()) +
                      ", expected " + std::to_string(dim));
    }
    for (const auto& v : vec) {
      if (!v.is_number()) fail("vector entries must be numbers");
      values.push_back(v.get<float>());
    }
    ids.push_back(record["id"].get<std::string>());
  });
  return EmbeddingMatrix(std::move(ids), dim, std::move(values));
}

std::filesystem::path packed_manifest_path(const std::filesystem::path& f32_path) {
  auto manifest = f32_path;
  manifest.replace_extension(".json");
  return manifest;
}

namespace {

float from_little_endian(const unsigned char* p) {
  std::uint32_t bits = static_cast<std::uint32_t>(p[0]) |
                       (static_cast<std::uint32_t>(p[1]) << 8) |
                       (static_cast<std::uint32_t>(p[2]) << 16) |
                       (static_cast<std::uint32_t>(p[3]) << 24);
  return std::bit_cast<float>(bits);
}

void to_little_endian(float v, unsigned char* p) {
  auto bits = std::bit_cast<std::uint32_t>(v);
  p[0] = static_cast<unsigned char>(bits);
  p[1] = static_cast<unsigned char>(bits >> 8);
  p[2] = static_cast<unsigned char>(bits >> 16);
  p[3] = static_cast<unsigned char>(bits >> 24);
}

}  // namespace

EmbeddingMatrix load_embeddings_packed(const std::filesystem::path& f32_path,
                                       const std::filesystem::path& manifest) {
  json meta;
  try {
    meta = json::parse(read_text_file(manifest));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kParseError, manifest.string() + ": " + e.what());
  }
  if (!meta.contains("dim") || !meta["dim"].is_number_integer() ||
      !meta.contains("ids") || !meta["ids"].is_array()) {
    throw Error(ErrorCode::kParseError,
                manifest.string() + ": manifest needs integer dim and ids array");
  }
  const auto dim = meta["dim"].get<std::size_t>();
  auto ids = meta["ids"].get<std::vector<std::string>>();
  const std::string bytes = read_text_file(f32_path);
  if (bytes.size() != ids.size() * dim * 4) {
    throw Error(ErrorCode::kDimensionMismatch,
                f32_path.string() + ": expected " +
                    std::to_string(ids.size() * dim * 4) + " bytes, found " +
                    std::to_string(bytes.size()));
  }
  std::vector<float> values(ids.size() * dim);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  for (std::size_t i = 0; i < values.size(); ++i) {
    values[i] = from_little_endian(p + 4 * i);
  }
  return EmbeddingMatrix(std::move(ids), dim, std::move(values));
}

EmbeddingMatrix load_embeddings(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw Error(ErrorCode::kIo, "embedding file not found: " + path.string());
  }
  if (path.extension() == ".f32") {
    return load_embeddings_packed(path, packed_manifest_path(path));
  }
  return load_embeddings_jsonl(path);
}

void save_embeddings_jsonl(const EmbeddingMatrix& m,
                           const std::filesystem::path& path) {
  std::string out;
  for (std::size_t i = 0; i < m.rows(); ++i) {
    json record;
    record["id"] = m.ids()[i];
    auto r = m.row(i);
    record["vector"] = std::vector<float>(r.begin(), r.end());
    out += record.dump();
    out += '\n';
  }
  write_text_file(path, out);
}

void save_embeddings_packed(const EmbeddingMatrix& m,
                            const std::filesystem::path& f32_path) {
  std::string bytes(m.values().size() * 4, '\0');
  auto* p = reinterpret_cast<unsigned char*>(bytes.data());
  for (std::size_t i = 0; i < m.values().size(); ++i) {
    to_little_endian(m.values()[i], p + 4 * i);
  }
  write_text_file(f32_path, bytes);
  json meta;
  meta["dim"] = m.dim();
  meta["ids"] = m.ids();
  write_text_file(packed_manifest_path(f32_path), meta.dump() + "\n");
}

namespace {

template <typename T>
double cosine_impl(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "vectors of length " + std::to_string(a.size()) + " and " +
                    std::to_string(b.size()));
  }
  double dot = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = a[i];
    const double y = b[i];
    dot += x * y;
    na += x * x;
    nb += y * y;
  }
  if (na <= 0.0 || nb <= 0.0) {
    throw Error(ErrorCode::kZeroVector, "cosine similarity of a zero vector");
  }
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

// Higher similarity first, then ascending id.
bool ranks_before(const ScoredId& a, const ScoredId& b) {
  if (a.similarity != b.similarity) return a.similarity > b.similarity;
  return a.id < b.id;
}

}  // namespace

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  return cosine_impl(a, b);
}

double cosine_similarity(std::span<const float> a, std::span<const float> b) {
  return cosine_impl(a, b);
}

NeighborIndex NeighborIndex::build(const EmbeddingMatrix& embeddings) {
  if (embeddings.empty()) {
    throw Error(ErrorCode::kEmptyMatrix, "cannot index an empty matrix");
  }
  NeighborIndex index;
  index.ids_ = embeddings.ids();
  index.dim_ = embeddings.dim();
  index.rows_.assign(embeddings.values().begin(), embeddings.values().end());
  index.norms_.resize(index.ids_.size());
  index.by_id_.reserve(index.ids_.size());
  for (std::size_t i = 0; i < index.ids_.size(); ++i) {
    double sq = 0.0;
    for (float v : embeddings.row(i)) sq += static_cast<double>(v) * v;
    if (sq <= 0.0) {
      throw Error(ErrorCode::kZeroVector, "zero embedding for " + index.ids_[i],
                  {index.ids_[i]});
    }
    index.norms_[i] = std::sqrt(sq);
    index.by_id_.emplace(index.ids_[i], i);
  }
  return index;
}

bool NeighborIndex::contains(std::string_view id) const {
  return by_id_.find(std::string(id)) != by_id_.end();
}

std::vector<ScoredId> NeighborIndex::top_k(std::span<const float> query,
                                           double query_norm, std::size_t k,
                                           std::size_t skip) const {
  const std::size_t n = ids_.size();
  std::vector<std::pair<double, std::size_t>> scored;
  scored.reserve(n);
  const float* q = query.data();
  for (std::size_t i = 0; i < n; ++i) {
    if (i == skip) continue;
    const float* r = rows_.data() + i * dim_;
    double dot = 0.0;
    for (std::size_t d = 0; d < dim_; ++d) {
      dot += static_cast<double>(q[d]) * static_cast<double>(r[d]);
    }
    scored.emplace_back(std::clamp(dot / (query_norm * norms_[i]), -1.0, 1.0), i);
  }
  const std::size_t take = std::min(k, scored.size());
  auto before = [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return ids_[a.second] < ids_[b.second];
  };
  std::partial_sort(scored.begin(), scored.begin() + take, scored.end(), before);
  std::vector<ScoredId> out;
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) {
    out.push_back({ids_[scored[i].second], scored[i].first});
  }
  return out;
}

NeighborCluster NeighborIndex::knn_query(std::string_view candidate_id,
                                         std::size_t k) const {
  auto it = by_id_.find(std::string(candidate_id));
  if (it == by_id_.end()) {
    throw Error(ErrorCode::kUnknownId,
                "id not in index: " + std::string(candidate_id),
                {std::string(candidate_id)});
  }
  if (k == 0) throw Error(ErrorCode::kInvalidArgument, "k must be >= 1");
  if (ids_.size() < k + 1) {
    throw Error(ErrorCode::kNotEnoughNeighbors,
                "pool of " + std::to_string(ids_.size()) + " cannot supply " +
                    std::to_string(k) + " neighbors");
  }
  const std::size_t self = it->second;
  std::span<const float> query(rows_.data() + self * dim_, dim_);
  NeighborCluster out;
  out.candidate_id = std::string(candidate_id);
  for (auto& s : top_k(query, norms_[self], k, self)) {
    out.neighbor_ids.push_back(std::move(s.id));
    out.similarities.push_back(s.similarity);
  }
  return out;
}

std::vector<ScoredId> NeighborIndex::nearest(std::span<const float> query,
                                             std::size_t k,
                                             std::string_view exclude_id) const {
  if (query.size() != dim_) {
    throw Error(ErrorCode::kDimensionMismatch,
                "query of dim " + std::to_string(query.size()) +
                    " against index of dim " + std::to_string(dim_));
  }
  double sq = 0.0;
  for (float v : query) sq += static_cast<double>(v) * v;
  if (sq <= 0.0) throw Error(ErrorCode::kZeroVector, "zero query vector");
  std::size_t skip = ids_.size();
  if (!exclude_id.empty()) {
    if (auto it = by_id_.find(std::string(exclude_id)); it != by_id_.end()) {
      skip = it->second;
    }
  }
  return top_k(query, std::sqrt(sq), k, skip);
}

NeighborCluster brute_force_knn(const EmbeddingMatrix& embeddings,
                                std::string_view candidate_id, std::size_t k) {
  if (embeddings.empty()) {
    throw Error(ErrorCode::kEmptyMatrix, "empty embedding matrix");
  }
  if (!embeddings.contains(candidate_id)) {
    throw Error(ErrorCode::kUnknownId,
                "id not in matrix: " + std::string(candidate_id),
                {std::string(candidate_id)});
  }
  if (k == 0) throw Error(ErrorCode::kInvalidArgument, "k must be >= 1");
  if (embeddings.rows() < k + 1) {
    throw Error(ErrorCode::kNotEnoughNeighbors,
                "pool of " + std::to_string(embeddings.rows()) +
                    " cannot supply " + std::to_string(k) + " neighbors");
  }
  const auto query = embeddings.row(candidate_id);
  std::vector<ScoredId> all;
  for (std::size_t i = 0; i < embeddings.rows(); ++i) {
    const auto& id = embeddings.ids()[i];
    if (id == candidate_id) continue;
    all.push_back({id, cosine_similarity(query, embeddings.row(i))});
  }
  std::sort(all.begin(), all.end(), ranks_before);
  NeighborCluster out;
  out.candidate_id = std::string(candidate_id);
  for (std::size_t i = 0; i < k; ++i) {
    out.neighbor_ids.push_back(all[i].id);
    out.similarities.push_back(all[i].similarity);
  }
  return out;
}

}  // namespace iclforge
