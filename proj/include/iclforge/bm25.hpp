#pragma once

#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "iclforge/embedspace.hpp"

namespace iclforge {

// Lowercase, replace ASCII punctuation with spaces, split on whitespace.
std::vector<std::string> bm25_tokenize(std::string_view text);

// Okapi BM25 corpus statistics.
struct Bm25Params {
  double k1 = 1.2;
  double b = 0.75;
  std::unordered_map<std::string, std::size_t> doc_freqs;
  double avg_doc_len = 0.0;
  std::size_t corpus_size = 0;

  static Bm25Params fit(std::span<const std::vector<std::string>> docs,
                        double k1 = 1.2, double b = 0.75);

  bool fitted() const { return corpus_size > 0; }
  // ln(1 + (N - n + 0.5) / (n + 0.5)); never negative.
  double idf(const std::string& term) const;
  void validate() const;
};

// Sum over query tokens of idf * saturated term frequency. Throws
// UnfittedParams.
double bm25_score(std::span<const std::string> query_tokens,
                  std::span<const std::string> doc_tokens,
                  const Bm25Params& params);

// BM25 neighborhoods over a tokenized pool. The candidate's own tokens are
// the query; neighbors are the highest-scoring other documents, ties by
// ascending id.
class Bm25Index final : public NeighborSource {
 public:
  Bm25Index(std::vector<std::string> ids,
            std::vector<std::vector<std::string>> docs, double k1 = 1.2,
            double b = 0.75);

  NeighborCluster cluster(std::string_view candidate_id,
                          std::size_t k) const override;
  bool contains(std::string_view id) const override;

  const Bm25Params& params() const { return params_; }

 private:
  std::vector<std::string> ids_;
  std::vector<std::vector<std::string>> docs_;
  std::unordered_map<std::string, std::size_t> by_id_;
  Bm25Params params_;
};

}  // namespace iclforge
