#include "iclforge/bm25.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <unordered_set>

#include "iclforge/error.hpp"

namespace iclforge {

std::vector<std::string> bm25_tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  for (char raw : text) {
    const auto c = static_cast<unsigned char>(raw);
    if (std::isspace(c) || std::ispunct(c)) {
      if (!current.empty()) out.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

Bm25Params Bm25Params::fit(std::span<const std::vector<std::string>> docs,
                           double k1, double b) {
  Bm25Params p;
  p.k1 = k1;
  p.b = b;
  p.corpus_size = docs.size();
  std::size_t total = 0;
  for (const auto& doc : docs) {
    total += doc.size();
    std::unordered_set<std::string_view> seen(doc.begin(), doc.end());
    for (auto term : seen) ++p.doc_freqs[std::string(term)];
  }
  p.avg_doc_len = docs.empty() ? 0.0
                               : static_cast<double>(total) /
                                     static_cast<double>(docs.size());
  p.validate();
  return p;
}

void Bm25Params::validate() const {
  if (k1 < 0.0) throw Error(ErrorCode::kInvalidArgument, "bm25 k1 must be >= 0");
  if (b < 0.0 || b > 1.0) {
    throw Error(ErrorCode::kInvalidArgument, "bm25 b must be in [0, 1]");
  }
}

double Bm25Params::idf(const std::string& term) const {
  auto it = doc_freqs.find(term);
  const double n = it == doc_freqs.end() ? 0.0 : static_cast<double>(it->second);
  const double total = static_cast<double>(corpus_size);
  return std::log(1.0 + (total - n + 0.5) / (n + 0.5));
}

double bm25_score(std::span<const std::string> query_tokens,
                  std::span<const std::string> doc_tokens,
                  const Bm25Params& params) {
  if (!params.fitted()) {
    throw Error(ErrorCode::kUnfittedParams, "bm25 parameters were not fitted");
  }
  std::unordered_map<std::string_view, std::size_t> tf;
  for (const auto& t : doc_tokens) ++tf[t];
  const double len = static_cast<double>(doc_tokens.size());
  const double avg = params.avg_doc_len > 0.0 ? params.avg_doc_len : 1.0;
  const double norm = params.k1 * (1.0 - params.b + params.b * len / avg);

  double score = 0.0;
  for (const auto& q : query_tokens) {
    auto it = tf.find(q);
    if (it == tf.end()) continue;
    const double f = static_cast<double>(it->second);
    score += params.idf(q) * f * (params.k1 + 1.0) / (f + norm);
  }
  return score;
}

Bm25Index::Bm25Index(std::vector<std::string> ids,
                     std::vector<std::vector<std::string>> docs, double k1,
                     double b)
    : ids_(std::move(ids)), docs_(std::move(docs)) {
  if (ids_.size() != docs_.size()) {
    throw Error(ErrorCode::kInvalidArgument, "ids and docs differ in length");
  }
  if (ids_.empty()) throw Error(ErrorCode::kEmptyMatrix, "empty bm25 corpus");
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (!by_id_.emplace(ids_[i], i).second) {
      throw Error(ErrorCode::kDuplicateId, ids_[i], {ids_[i]});
    }
  }
  params_ = Bm25Params::fit(docs_, k1, b);
}

bool Bm25Index::contains(std::string_view id) const {
  return by_id_.find(std::string(id)) != by_id_.end();
}

NeighborCluster Bm25Index::cluster(std::string_view candidate_id,
                                   std::size_t k) const {
  auto it = by_id_.find(std::string(candidate_id));
  if (it == by_id_.end()) {
    throw Error(ErrorCode::kUnknownId,
                "id not in bm25 index: " + std::string(candidate_id),
                {std::string(candidate_id)});
  }
  if (k == 0) throw Error(ErrorCode::kInvalidArgument, "k must be >= 1");
  if (ids_.size() < k + 1) {
    throw Error(ErrorCode::kNotEnoughNeighbors,
                "pool of " + std::to_string(ids_.size()) + " cannot supply " +
                    std::to_string(k) + " neighbors");
  }
  const auto& query = docs_[it->second];
  std::vector<std::pair<double, std::size_t>> scored;
  scored.reserve(ids_.size() - 1);
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (i == it->second) continue;
    scored.emplace_back(bm25_score(query, docs_[i], params_), i);
  }
  std::partial_sort(scored.begin(), scored.begin() + k, scored.end(),
                    [&](const auto& a, const auto& b) {
                      if (a.first != b.first) return a.first > b.first;
                      return ids_[a.second] < ids_[b.second];
                    });
  NeighborCluster out;
  out.candidate_id = std::string(candidate_id);
  for (std::size_t i = 0; i < k; ++i) {
    out.neighbor_ids.push_back(ids_[scored[i].second]);
    out.similarities.push_back(scored[i].first);
  }
  return out;
}

}  // namespace iclforge
