#pragma once

#include <atomic>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "iclforge/bm25.hpp"
#include "iclforge/corpus.hpp"
#include "iclforge/embedspace.hpp"
#include "iclforge/lpr.hpp"
#include "iclforge/scoring.hpp"
#include "iclforge/selectors.hpp"

namespace iclforge {

enum class FilterKind { kNone, kLpr, kLabelAgreement, kGlobalRank };

std::string_view to_string(FilterKind f);

struct PipelineConfig {
  SelectorConfig selector;
  FilterKind filter = FilterKind::kNone;
  LprConfig lpr;
  // In-flight scoring requests.
  std::size_t scoring_jobs = 4;
  RetryPolicy retry;
};

// Builds the demonstration set for test inputs: selector, then an optional
// filter. Flags are memoized across test inputs, so one pipeline should serve
// a whole run. Thread-safe for concurrent run() calls.
class SelectionPipeline {
 public:
  // `embeddings` must cover every pool id and every test id that is queried.
  // `scorer` and `cache` are required for the perplexity-based filters.
  SelectionPipeline(const Dataset& pool, const EmbeddingMatrix& embeddings,
                    PipelineConfig cfg, ScorerBackend* scorer = nullptr,
                    ScoreCache* cache = nullptr);

  struct Output {
    DemonstrationSet demos;
    std::vector<SubstitutionRecord> records;
  };

  // `seed` feeds the random selector; the other stages are deterministic.
  Output run(const Example& test_input, std::uint64_t seed);

  const NeighborIndex& index() const { return index_; }
  const NeighborSource& lpr_neighbors() const;
  const PipelineConfig& config() const { return cfg_; }
  // Ids requested from the score provider so far, before cache lookups.
  std::size_t score_requests() const { return requests_->load(); }

 private:
  const Dataset& pool_;
  const EmbeddingMatrix& embeddings_;
  EmbeddingMatrix pool_embeddings_;
  PipelineConfig cfg_;
  NeighborIndex index_;
  std::optional<Bm25Index> bm25_;
  ScoreProvider scores_;
  std::unique_ptr<Flagger> flagger_;
  std::shared_ptr<std::atomic<std::size_t>> requests_ =
      std::make_shared<std::atomic<std::size_t>>(0);
};

}  // namespace iclforge
