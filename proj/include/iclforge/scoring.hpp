#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "iclforge/corpus.hpp"
#include "iclforge/prompt.hpp"

namespace iclforge {

// Per-token natural-log probabilities of a scored sequence.
struct TokenLogProbs {
  std::vector<std::string> tokens;
  std::vector<double> logprobs;
  std::string source_id;
};

struct PerplexityScore {
  std::string example_id;
  double perplexity = 0.0;
  std::string backend_tag;
};

// exp(-mean(logprobs)), accumulated in log space. Throws EmptyLogProbs,
// InvalidArgument for non-finite entries.
double perplexity(std::span<const double> logprobs);
PerplexityScore perplexity_from_logprobs(const TokenLogProbs& lp,
                                         std::string backend_tag = "logprobs");

// Which tokens of the rendered demonstration enter the average.
enum class PplMode { kFull, kOutput };

// A source of perplexity scores. Implementations must be safe to call from
// several threads at once.
class ScorerBackend {
 public:
  virtual ~ScorerBackend() = default;
  // Identifies model + prompt layout; part of the cache key.
  virtual std::string tag() const = 0;
  virtual PerplexityScore score(const Example& ex) = 0;
};

// Precomputed scores: JSONL {"id", "perplexity", "backend_tag"}.
class FileScorer final : public ScorerBackend {
 public:
  explicit FileScorer(const std::filesystem::path& path);
  FileScorer(std::map<std::string, double> scores, std::string tag);

  std::string tag() const override { return tag_; }
  PerplexityScore score(const Example& ex) override;

 private:
  std::map<std::string, double, std::less<>> scores_;
  std::string tag_;
};

// Planted model: perplexity = inherent base of the example's cluster, plus
// `noise_shift` when the output is corrupted, plus sigma * N(0, 1) drawn
// deterministically from (example id, seed). Floored at 1.
struct SyntheticScorerModel {
  std::map<std::string, double> cluster_base;
  double noise_shift = 3.0;
  double sigma = 0.0;
  std::uint64_t seed = 0;
  // Meta key holding the cluster id.
  std::string cluster_key = "cluster";

  double perplexity_for(const Example& ex, bool noisy) const;
  // Deterministic standard normal for (id, seed).
  double jitter(std::string_view example_id) const;
};

// {"cluster_base": {cluster: base}, "noise_shift", "sigma", "seed",
// "cluster_key"}; all but cluster_base optional.
SyntheticScorerModel parse_synthetic_model_json(std::string_view text,
                                                std::string_view source = "<memory>");
std::string synthetic_model_to_json(const SyntheticScorerModel& model);

class SyntheticScorer final : public ScorerBackend {
 public:
  SyntheticScorer(SyntheticScorerModel model, NoiseTruth truth);

  std::string tag() const override;
  PerplexityScore score(const Example& ex) override;
  const SyntheticScorerModel& model() const { return model_; }

 private:
  SyntheticScorerModel model_;
  NoiseTruth truth_;
};

struct HttpScorerConfig {
  // e.g. "http://127.0.0.1:8000"
  std::string base_url;
  std::string model;
  std::string api_key;
  PromptTemplate prompt;
  PplMode mode = PplMode::kFull;
  // Base of reported logprobs; converted to natural log on receipt.
  double logprob_base = 0.0;  // 0 means natural log
  double timeout_seconds = 60.0;
};

// OpenAI-compatible /v1/completions with echo=true and max_tokens=0.
class HttpScorer final : public ScorerBackend {
 public:
  explicit HttpScorer(HttpScorerConfig config);

  std::string tag() const override;
  PerplexityScore score(const Example& ex) override;

  // Exposed for tests: the body sent for `ex`.
  std::string request_body(const Example& ex) const;
  // Parses a completions response into natural-log token logprobs,
  // keeping only tokens at or after `output_offset` (0 keeps all).
  static TokenLogProbs parse_response(std::string_view body,
                                      std::size_t output_offset,
                                      double logprob_base = 0.0);

 private:
  HttpScorerConfig config_;
};

// Counts backend calls; used for efficiency comparisons.
class CountingScorer final : public ScorerBackend {
 public:
  explicit CountingScorer(ScorerBackend& inner) : inner_(inner) {}

  std::string tag() const override { return inner_.tag(); }
  PerplexityScore score(const Example& ex) override;

  std::size_t calls() const { return calls_.load(); }
  std::size_t unique_ids() const;

 private:
  ScorerBackend& inner_;
  std::atomic<std::size_t> calls_{0};
  mutable std::mutex mutex_;
  std::unordered_map<std::string, std::size_t> per_id_;
};

// Stable hash of (task, input, output).
std::uint64_t content_hash(const Example& ex);

// Scores keyed by (backend tag, content hash). Optionally persisted as an
// append-only JSONL log that is compacted when opened. Reads are concurrent;
// writes are serialized.
class ScoreCache {
 public:
  ScoreCache() = default;
  explicit ScoreCache(std::filesystem::path file);

  std::optional<double> get(const std::string& backend_tag,
                            std::uint64_t hash) const;
  void put(const std::string& backend_tag, std::uint64_t hash,
           const std::string& example_id, double perplexity);

  std::size_t size() const;
  // Entries stored under `backend_tag`.
  std::size_t count_for(const std::string& backend_tag) const;
  const std::optional<std::filesystem::path>& file() const { return file_; }

 private:
  struct Entry {
    std::string example_id;
    double perplexity;
  };
  using Key = std::pair<std::string, std::uint64_t>;

  mutable std::shared_mutex mutex_;
  std::map<Key, Entry> entries_;
  std::optional<std::filesystem::path> file_;
  std::ofstream log_;
};

struct RetryPolicy {
  // One retry per entry; only BackendUnavailable is retried.
  std::vector<double> backoff_seconds{0.5, 1.0, 2.0};
};

struct BatchStats {
  std::size_t requested = 0;
  std::size_t cache_hits = 0;
  std::size_t backend_calls = 0;
};

struct BatchResult {
  std::map<std::string, PerplexityScore> scores;
  // Ids that could not be scored, with the last error message.
  std::map<std::string, std::string> failed;
  BatchStats stats;
};

// Scores every example, serving hits from `cache` and fetching misses with at
// most `parallelism` concurrent backend calls. Successful fetches are written
// to the cache even when others fail.
BatchResult batch_score_collect(ScorerBackend& backend,
                                std::span<const Example* const> examples,
                                ScoreCache& cache, std::size_t parallelism,
                                const RetryPolicy& retry = {});

// As above, but throws PartialFailure (listing failed ids) unless every
// example was scored.
std::map<std::string, PerplexityScore> batch_score(
    ScorerBackend& backend, std::span<const Example* const> examples,
    ScoreCache& cache, std::size_t parallelism, const RetryPolicy& retry = {},
    BatchStats* stats = nullptr);

}  // namespace iclforge
