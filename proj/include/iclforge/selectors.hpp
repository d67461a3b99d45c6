#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "iclforge/corpus.hpp"
#include "iclforge/embedspace.hpp"

namespace iclforge {

enum class SelectorMethod { kRandom, kTopK, kDpp };
enum class Provenance { kRaw, kLprFiltered, kGlobalFiltered };

std::string_view to_string(SelectorMethod m);
std::string_view to_string(Provenance p);
SelectorMethod parse_selector_method(std::string_view name);

struct SelectorConfig {
  SelectorMethod method = SelectorMethod::kTopK;
  // K, the number of demonstrations.
  std::size_t k_demos = 8;
  // M, the relevance pre-filter size for DPP and global ranking.
  std::size_t candidate_pool_size = 100;
  std::uint64_t seed = 0;

  void validate() const;
};

// The ordered context built for one test input.
struct DemonstrationSet {
  std::string test_id;
  std::vector<std::string> demo_ids;
  Provenance provenance = Provenance::kRaw;

  bool operator==(const DemonstrationSet&) const = default;
};

// K distinct pool ids drawn uniformly without replacement. The draw is seeded
// by (cfg.seed, test_id) so different test inputs get different contexts.
DemonstrationSet select_random(const PoolView& pool, std::string_view test_id,
                               const SelectorConfig& cfg);

// The K pool items most similar to the query vector, most similar first,
// ties by ascending id. The test id itself is never returned.
DemonstrationSet select_topk(const NeighborIndex& index, std::string_view test_id,
                             std::span<const float> query,
                             const SelectorConfig& cfg);
// Resolves the query vector from `queries`; throws MissingEmbedding.
DemonstrationSet select_topk(const NeighborIndex& index, const Example& test_input,
                             const EmbeddingMatrix& queries,
                             const SelectorConfig& cfg);

struct DppKernel {
  std::vector<std::string> item_ids;
  Eigen::MatrixXd matrix;
  // Diagonal jitter added to repair tiny negative eigenvalues (0 if none).
  double jitter = 0.0;
};

inline constexpr double kDppJitter = 1e-8;

// L = diag(q) S diag(q) with S the Gram matrix of unit-normalized rows.
// Quality defaults to 1. Throws MissingEmbedding, KernelNotPsd.
DppKernel build_dpp_kernel(const EmbeddingMatrix& embeddings,
                           std::span<const std::string> candidate_ids,
                           const std::map<std::string, double>* quality = nullptr);

struct GreedyMapResult {
  // Selection order.
  std::vector<std::string> ids;
  // log det gain of each step; non-increasing for PSD kernels.
  std::vector<double> gains;
};

// Greedy MAP for log det(L_S) with incremental Cholesky updates. Ties go to
// the smaller id. Throws NumericalBreakdown when the best remaining pivot is
// not positive.
GreedyMapResult greedy_map_logdet(const DppKernel& kernel, std::size_t k);

// TopK pre-filter of M candidates, then greedy MAP over their kernel.
DemonstrationSet select_dpp(const NeighborIndex& index,
                            const EmbeddingMatrix& embeddings,
                            const Example& test_input,
                            const SelectorConfig& cfg);

// Dispatch on cfg.method. `index`/`embeddings` are unused for random.
DemonstrationSet select(const PoolView& pool, const NeighborIndex& index,
                        const EmbeddingMatrix& embeddings,
                        const Example& test_input, const SelectorConfig& cfg);

}  // namespace iclforge
