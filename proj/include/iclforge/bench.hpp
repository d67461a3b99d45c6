#pragma once

#include <cstddef>

#include <nlohmann/json.hpp>

#include "iclforge/corpus.hpp"
#include "iclforge/embedspace.hpp"
#include "iclforge/pipeline.hpp"
#include "iclforge/scoring.hpp"

namespace iclforge {

struct BenchArm {
  // Score requests before deduplication.
  std::size_t requests = 0;
  // Distinct ids sent to the backend.
  std::size_t unique_backend_ids = 0;
  std::size_t backend_calls = 0;
  // Backend calls when the arm is rerun against its warm cache.
  std::size_t warm_backend_calls = 0;
  double seconds = 0.0;
};

struct BenchResult {
  std::size_t test_inputs = 0;
  std::size_t k_demos = 0;
  std::size_t lpr_k = 0;
  std::size_t candidate_pool_size = 0;
  BenchArm local;
  BenchArm global;
  // (k + 1) * K * |test|
  std::size_t local_bound = 0;
};

// Runs TopK + LPR and global ranking over every test input, each arm with a
// fresh in-memory cache, and counts what reaches `scorer`.
BenchResult run_bench(const Dataset& pool, const Dataset& test,
                      const EmbeddingMatrix& embeddings, ScorerBackend& scorer,
                      const PipelineConfig& cfg);

// `timing` holds the wall-clock fields.
nlohmann::ordered_json bench_to_json(const BenchResult& result);

}  // namespace iclforge
