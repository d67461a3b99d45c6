#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iclforge/corpus.hpp"
#include "iclforge/embedspace.hpp"
#include "iclforge/inference.hpp"
#include "iclforge/pipeline.hpp"
#include "iclforge/prompt.hpp"
#include "iclforge/scoring.hpp"

namespace iclforge {

enum class Metric { kEm, kBleu };

std::string_view to_string(Metric m);
Metric parse_metric(std::string_view name);

struct EvalConfig {
  std::string dataset;
  PipelineConfig pipeline;
  Metric metric = Metric::kEm;
  std::vector<std::uint64_t> seeds = {0};
  std::optional<std::size_t> context_window;
  // Parallel test inputs per run.
  std::size_t jobs = 1;
  // A run fails when more than this fraction of its examples error.
  double max_error_fraction = 0.05;
  std::optional<std::string> noise_summary;
};

// Everything run_eval reads but does not own.
struct EvalInputs {
  const Dataset* pool = nullptr;
  const Dataset* test = nullptr;
  const EmbeddingMatrix* embeddings = nullptr;
  const PromptTemplate* prompt = nullptr;
  InferenceBackend* generator = nullptr;
  ScorerBackend* scorer = nullptr;
  ScoreCache* cache = nullptr;
};

struct ExampleOutcome {
  std::string id;
  std::uint64_t seed = 0;
  std::string prediction;
  // Percent scale: EM in {0, 100}, sentence BLEU * 100.
  double score = 0.0;
  std::vector<std::string> demo_ids;
  std::vector<SubstitutionRecord> records;
  std::optional<std::string> error;
};

struct RunSummary {
  std::uint64_t seed = 0;
  double score = 0.0;
  std::size_t errors = 0;
};

struct EvalReport {
  std::string dataset;
  std::string selector;
  bool lpr_enabled = false;
  std::string filter;
  std::optional<std::string> noise_spec;
  Metric metric = Metric::kEm;
  double mean = 0.0;
  // Sample standard deviation over runs; 0 for a single run.
  double stddev = 0.0;
  std::size_t n_runs = 0;
  std::vector<RunSummary> runs;
  std::vector<ExampleOutcome> per_example;
  double wall_seconds = 0.0;
};

// Per seed: select, filter, assemble, generate and score every test input.
// Errored examples score 0. Throws RunFailed when a run exceeds
// cfg.max_error_fraction.
EvalReport run_eval(const EvalInputs& inputs, const EvalConfig& cfg);

// Sample standard deviation; 0 for fewer than two values.
double sample_std(std::span<const double> values);

// Report object; `timing` holds the only non-deterministic field.
nlohmann::ordered_json report_to_json(const EvalReport& report);
// One line per example: {"id", "seed", "prediction", "score", "demo_ids", ...}.
std::string per_example_jsonl(const EvalReport& report);
nlohmann::ordered_json record_to_json(const SubstitutionRecord& r);

}  // namespace iclforge
