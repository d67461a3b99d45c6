#include "iclforge/eval.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <thread>

#include "iclforge/error.hpp"
#include "iclforge/metrics.hpp"

namespace iclforge {

std::string_view to_string(Metric m) {
  return m == Metric::kEm ? "em" : "bleu";
}

Metric parse_metric(std::string_view name) {
  if (name == "em") return Metric::kEm;
  if (name == "bleu") return Metric::kBleu;
  throw Error(ErrorCode::kInvalidArgument, "unknown metric '" + std::string(name) + "'");
}

double sample_std(std::span<const double> values) {
  if (values.size() < 2) return 0.0;
  const double mean =
      std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(values.size() - 1));
}

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

void check_inputs(const EvalInputs& in, const EvalConfig& cfg) {
  if (!in.pool || !in.test || !in.embeddings || !in.prompt || !in.generator) {
    throw Error(ErrorCode::kInvalidArgument,
                "evaluation needs pool, test set, embeddings, template and generator");
  }
  if (cfg.seeds.empty()) throw Error(ErrorCode::kInvalidArgument, "no seeds given");
  if (in.test->empty()) throw Error(ErrorCode::kEmptyDataset, "test set is empty");
  if (!(cfg.max_error_fraction >= 0.0 && cfg.max_error_fraction <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "max error fraction must be in [0, 1]");
  }
  in.prompt->validate();
}

ExampleOutcome evaluate_one(const EvalInputs& in, const EvalConfig& cfg,
                            SelectionPipeline& pipeline, const Example& test,
                            std::uint64_t seed) {
  ExampleOutcome out;
  out.id = test.id;
  out.seed = seed;
  try {
    auto selected = pipeline.run(test, seed);
    out.demo_ids = selected.demos.demo_ids;
    out.records = std::move(selected.records);
    std::vector<const Example*> demos;
    demos.reserve(out.demo_ids.size());
    for (const auto& id : out.demo_ids) {
      const Example* ex = in.pool->find(id);
      if (ex == nullptr) {
        throw Error(ErrorCode::kUnresolvedId, "demonstration " + id + " not in pool", {id});
      }
      demos.push_back(ex);
    }
    const std::string prompt = assemble_prompt(demos, test, *in.prompt);
    GenerationParams params;
    params.max_tokens = in.prompt->max_tokens;
    params.stop = in.prompt->stop;
    out.prediction = trim(generate(*in.generator, prompt, params, cfg.context_window));
    const std::vector<std::string> refs{test.output_text};
    if (cfg.metric == Metric::kEm) {
      out.score = 100.0 * exact_match(out.prediction, refs);
    } else {
      const std::vector<Tokens> ref_tokens{whitespace_tokens(test.output_text)};
      out.score = 100.0 * bleu(whitespace_tokens(out.prediction), ref_tokens);
    }
  } catch (const Error& e) {
    out.error = e.what();
    out.score = 0.0;
  }
  return out;
}

}  // namespace

EvalReport run_eval(const EvalInputs& in, const EvalConfig& cfg) {
  check_inputs(in, cfg);
  const auto started = std::chrono::steady_clock::now();

  SelectionPipeline pipeline(*in.pool, *in.embeddings, cfg.pipeline, in.scorer, in.cache);
  const auto tests = in.test->examples();

  EvalReport report;
  report.dataset = cfg.dataset;
  report.selector = std::string(to_string(cfg.pipeline.selector.method));
  report.filter = std::string(to_string(cfg.pipeline.filter));
  report.lpr_enabled = cfg.pipeline.filter == FilterKind::kLpr ||
                       cfg.pipeline.filter == FilterKind::kLabelAgreement;
  report.noise_spec = cfg.noise_summary;
  report.metric = cfg.metric;

  std::vector<double> run_scores;
  for (std::uint64_t seed : cfg.seeds) {
    std::vector<ExampleOutcome> outcomes(tests.size());
    const std::size_t workers = std::max<std::size_t>(1, std::min(cfg.jobs, tests.size()));
    std::atomic<std::size_t> next{0};
    {
      std::vector<std::jthread> pool;
      for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
          for (std::size_t i = next++; i < tests.size(); i = next++) {
            outcomes[i] = evaluate_one(in, cfg, pipeline, tests[i], seed);
          }
        });
      }
    }

    RunSummary run;
    run.seed = seed;
    for (const auto& o : outcomes) run.errors += o.error ? 1 : 0;
    if (static_cast<double>(run.errors) >
        cfg.max_error_fraction * static_cast<double>(outcomes.size())) {
      std::vector<std::string> failed;
      for (const auto& o : outcomes) {
        if (o.error) failed.push_back(o.id);
      }
      throw Error(ErrorCode::kRunFailed,
                  std::to_string(run.errors) + " of " + std::to_string(outcomes.size()) +
                      " examples failed for seed " + std::to_string(seed) +
                      "; first: " + *std::find_if(outcomes.begin(), outcomes.end(),
                                                  [](const auto& o) { return o.error.has_value(); })
                                         ->error,
                  std::move(failed));
    }
    if (cfg.metric == Metric::kEm) {
      double sum = 0.0;
      for (const auto& o : outcomes) sum += o.score;
      run.score = sum / static_cast<double>(outcomes.size());
    } else {
      std::vector<Tokens> preds;
      std::vector<std::vector<Tokens>> refs;
      for (std::size_t i = 0; i < outcomes.size(); ++i) {
        preds.push_back(whitespace_tokens(outcomes[i].prediction));
        refs.push_back({whitespace_tokens(tests[i].output_text)});
      }
      run.score = 100.0 * corpus_bleu(preds, refs);
    }
    run_scores.push_back(run.score);
    report.runs.push_back(run);
    for (auto& o : outcomes) report.per_example.push_back(std::move(o));
  }

  report.n_runs = run_scores.size();
  report.mean = std::accumulate(run_scores.begin(), run_scores.end(), 0.0) /
                static_cast<double>(run_scores.size());
  report.stddev = sample_std(run_scores);
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

nlohmann::ordered_json record_to_json(const SubstitutionRecord& r) {
  nlohmann::ordered_json j;
  j["original_id"] = r.original_id;
  j["replacement_id"] =
      r.replacement_id ? nlohmann::ordered_json(*r.replacement_id) : nlohmann::ordered_json();
  j["flag"] = r.flag;
  j["rank_fraction"] = r.rank_fraction;
  if (r.error) j["error"] = *r.error;
  return j;
}

nlohmann::ordered_json report_to_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["dataset"] = report.dataset;
  j["selector"] = report.selector;
  j["lpr_enabled"] = report.lpr_enabled;
  j["filter"] = report.filter;
  j["noise_spec"] =
      report.noise_spec ? nlohmann::ordered_json(*report.noise_spec) : nlohmann::ordered_json();
  j["metric"] = to_string(report.metric);
  j["mean"] = report.mean;
  j["std"] = report.stddev;
  j["n_runs"] = report.n_runs;
  auto runs = nlohmann::ordered_json::array();
  for (const auto& r : report.runs) {
    runs.push_back({{"seed", r.seed}, {"score", r.score}, {"errors", r.errors}});
  }
  j["runs"] = std::move(runs);
  j["timing"] = {{"wall_seconds", report.wall_seconds}};
  return j;
}

std::string per_example_jsonl(const EvalReport& report) {
  std::string out;
  for (const auto& o : report.per_example) {
    nlohmann::ordered_json j;
    j["id"] = o.id;
    j["seed"] = o.seed;
    j["prediction"] = o.prediction;
    j["score"] = o.score;
    j["demo_ids"] = o.demo_ids;
    if (!o.records.empty()) {
      auto recs = nlohmann::ordered_json::array();
      for (const auto& r : o.records) recs.push_back(record_to_json(r));
      j["substitutions"] = std::move(recs);
    }
    if (o.error) j["error"] = *o.error;
    out += j.dump();
    out += '\n';
  }
  return out;
}

}  // namespace iclforge
