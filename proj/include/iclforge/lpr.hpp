#pragma once

#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "iclforge/corpus.hpp"
#include "iclforge/embedspace.hpp"
#include "iclforge/scoring.hpp"
#include "iclforge/selectors.hpp"

namespace iclforge {

enum class RankBase { kZeroBased, kOneBased };
enum class SimilarityKind { kCosine, kBm25 };

struct LprConfig {
  // Neighbors per cluster.
  std::size_t k = 4;
  // A candidate is flagged when Loc / (k + 1) >= gamma.
  double gamma = 0.5;
  RankBase rank_base = RankBase::kZeroBased;
  SimilarityKind similarity = SimilarityKind::kCosine;
  // Sort the final set by ascending similarity to the test input.
  bool reorder = true;

  void validate() const;
};

using ScoreMap = std::unordered_map<std::string, double>;

// Perplexity order inside one cluster (candidate plus its k neighbors).
struct RankList {
  std::vector<std::string> cluster_ids;
  // Ascending perplexity, ties by ascending id.
  std::vector<std::string> sorted_ids;
  // Zero-based position of every member in sorted_ids.
  std::map<std::string, std::size_t, std::less<>> loc;

  std::size_t position(std::string_view id) const;
};

// Throws MissingScore listing every member without a score.
RankList local_rank(std::string_view candidate_id, const NeighborCluster& cluster,
                    const ScoreMap& scores);

// Loc / (k + 1), with Loc counted in cfg.rank_base.
double rank_fraction(const RankList& rank, std::string_view candidate_id,
                     const LprConfig& cfg);
bool flag_candidate(const RankList& rank, std::string_view candidate_id,
                    const LprConfig& cfg);

struct SubstitutionRecord {
  std::string original_id;
  std::optional<std::string> replacement_id;
  bool flag = false;
  double rank_fraction = 0.0;
  // Set when the candidate could not be evaluated and was kept as is.
  std::optional<std::string> error;

  bool operator==(const SubstitutionRecord&) const = default;
};

// Replacement for a flagged candidate: the nearest neighbor whose own flag is
// false and that is not in `in_use`. A clean candidate, or one whose
// neighbors are all flagged or taken, keeps no replacement. Throws
// InvalidArgument when a neighbor that must be inspected has no flag.
SubstitutionRecord substitute(std::string_view candidate_id,
                              const NeighborCluster& cluster,
                              const std::map<std::string, bool, std::less<>>& flags,
                              const std::set<std::string, std::less<>>& in_use = {},
                              double candidate_rank_fraction = 0.0);

struct FlagInfo {
  bool flagged = false;
  double rank_fraction = 0.0;
};

// Decides g(z) for any pool item from that item's own neighborhood.
// Implementations memoize and are safe to share across threads.
class Flagger {
 public:
  virtual ~Flagger() = default;
  // Throws on failure (missing scores, backend errors, unknown ids).
  virtual FlagInfo evaluate(const std::string& id) = 0;
};

// Bulk score lookup; throws (e.g. PartialFailure) when any id is missing.
using ScoreProvider = std::function<ScoreMap(std::span<const std::string> ids)>;

// Local perplexity ranking flags.
class PerplexityFlagger final : public Flagger {
 public:
  PerplexityFlagger(const NeighborSource& neighbors, ScoreProvider scores,
                    LprConfig cfg);

  FlagInfo evaluate(const std::string& id) override;
  // The neighborhood and ranking behind a flag, for audits and tests.
  RankList rank_of(const std::string& id);

 private:
  const NeighborSource& neighbors_;
  ScoreProvider scores_;
  LprConfig cfg_;
  std::mutex mutex_;
  std::unordered_map<std::string, FlagInfo> memo_;
};

// Classification variant: flagged iff the candidate's label differs from a
// strict majority label among its k neighbors (ties leave it unflagged).
class LabelAgreementFlagger final : public Flagger {
 public:
  LabelAgreementFlagger(const NeighborSource& neighbors,
                        std::map<std::string, std::string, std::less<>> labels,
                        LprConfig cfg);

  FlagInfo evaluate(const std::string& id) override;

 private:
  const std::string& label_of(std::string_view id) const;

  const NeighborSource& neighbors_;
  std::map<std::string, std::string, std::less<>> labels_;
  LprConfig cfg_;
  std::mutex mutex_;
  std::unordered_map<std::string, FlagInfo> memo_;
};

struct LprResult {
  DemonstrationSet demos;
  std::vector<SubstitutionRecord> records;
};

// Stable sort by ascending cosine similarity to the test input, so the most
// similar demonstration sits next to the query. Throws MissingEmbedding.
DemonstrationSet reorder_by_similarity(const DemonstrationSet& demos,
                                       const Example& test_input,
                                       const EmbeddingMatrix& embeddings);

// Flags every candidate of `raw` and substitutes flagged ones with their
// nearest unflagged, unused neighbor. Candidates that cannot be evaluated are
// kept and their record carries the error. `reorder_space` is required when
// cfg.reorder is set.
LprResult filter_demonstrations(const DemonstrationSet& raw,
                                const Example& test_input,
                                const NeighborSource& neighbors, Flagger& flagger,
                                const LprConfig& cfg,
                                const EmbeddingMatrix* reorder_space,
                                Provenance provenance = Provenance::kLprFiltered);

// Score provider backed by a scorer and cache; ids resolve through `pool`.
ScoreProvider make_score_provider(ScorerBackend& backend, ScoreCache& cache,
                                  const PoolView& pool, std::size_t parallelism,
                                  RetryPolicy retry = {});

// Local perplexity ranking over a scorer backend.
LprResult lpr_filter(const DemonstrationSet& raw, const Example& test_input,
                     const NeighborSource& neighbors, ScorerBackend& backend,
                     ScoreCache& cache, const PoolView& pool,
                     const LprConfig& cfg, const EmbeddingMatrix* reorder_space,
                     std::size_t parallelism = 4);

LprResult label_agreement_filter(
    const DemonstrationSet& raw, const Example& test_input,
    const NeighborSource& neighbors,
    const std::map<std::string, std::string, std::less<>>& labels,
    const LprConfig& cfg, const EmbeddingMatrix* reorder_space);

// Baseline: the K lowest-perplexity items among the M most similar to the
// test input, in ascending perplexity (ties by id).
DemonstrationSet global_rank_filter(const NeighborIndex& index,
                                    const EmbeddingMatrix& queries,
                                    const Example& test_input,
                                    const ScoreProvider& scores,
                                    const SelectorConfig& cfg);

}  // namespace iclforge
