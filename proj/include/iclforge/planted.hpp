#pragma once

#include <cstdint>
#include <vector>

#include "iclforge/corpus.hpp"
#include "iclforge/embedspace.hpp"
#include "iclforge/prompt.hpp"
#include "iclforge/scoring.hpp"

namespace iclforge {

// Model-free test world: Gaussian clusters in embedding space, each with an
// inherent perplexity level, and irrelevant noise drawn from a donor task.
struct PlantedConfig {
  std::size_t clusters = 20;
  std::size_t per_cluster = 50;
  std::size_t dim = 32;
  // Per-coordinate standard deviation around the unit cluster center.
  double spread = 0.05;
  // Inherent bases are drawn uniformly from [base_lo, base_hi] unless
  // `bases` lists one per cluster.
  double base_lo = 5.0;
  double base_hi = 15.0;
  std::vector<double> bases;
  double noise_rate = 0.4;
  double noise_shift = 3.0;
  double sigma = 0.5;
  std::size_t test_per_cluster = 1;
  // When non-zero, exactly this many test inputs, assigned to clusters in a
  // seeded order instead of test_per_cluster each.
  std::size_t test_inputs = 0;
  std::size_t donor_size = 200;
  std::uint64_t seed = 0;

  void validate() const;
};

struct PlantedCorpus {
  Dataset clean_pool;
  // Corrupted pool carrying ground truth.
  Dataset pool;
  Dataset donor;
  Dataset test;
  // Rows for every pool and test id.
  EmbeddingMatrix embeddings;
  SyntheticScorerModel model;
  PromptTemplate prompt;
};

PlantedCorpus make_planted_corpus(const PlantedConfig& cfg);

// Cluster tag stored in meta["cluster"], e.g. "c07".
std::string planted_cluster_name(std::size_t cluster);

}  // namespace iclforge
