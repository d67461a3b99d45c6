#include "iclforge/bench.hpp"

#include <chrono>

namespace iclforge {

namespace {

BenchArm run_arm(const Dataset& pool, const Dataset& test,
                 const EmbeddingMatrix& embeddings, ScorerBackend& scorer,
                 PipelineConfig cfg, FilterKind filter) {
  cfg.filter = filter;
  cfg.selector.method = SelectorMethod::kTopK;
  BenchArm arm;
  ScoreCache cache;
  CountingScorer counting(scorer);
  const auto started = std::chrono::steady_clock::now();
  {
    SelectionPipeline pipeline(pool, embeddings, cfg, &counting, &cache);
    for (const auto& ex : test.examples()) pipeline.run(ex, cfg.selector.seed);
    arm.requests = pipeline.score_requests();
  }
  arm.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  arm.backend_calls = counting.calls();
  arm.unique_backend_ids = counting.unique_ids();

  CountingScorer warm(scorer);
  SelectionPipeline again(pool, embeddings, cfg, &warm, &cache);
  for (const auto& ex : test.examples()) again.run(ex, cfg.selector.seed);
  arm.warm_backend_calls = warm.calls();
  return arm;
}

}  // namespace

BenchResult run_bench(const Dataset& pool, const Dataset& test,
                      const EmbeddingMatrix& embeddings, ScorerBackend& scorer,
                      const PipelineConfig& cfg) {
  BenchResult out;
  out.test_inputs = test.size();
  out.k_demos = cfg.selector.k_demos;
  out.lpr_k = cfg.lpr.k;
  out.candidate_pool_size = cfg.selector.candidate_pool_size;
  out.local_bound = (cfg.lpr.k + 1) * cfg.selector.k_demos * test.size();
  out.local = run_arm(pool, test, embeddings, scorer, cfg, FilterKind::kLpr);
  out.global = run_arm(pool, test, embeddings, scorer, cfg, FilterKind::kGlobalRank);
  return out;
}

nlohmann::ordered_json bench_to_json(const BenchResult& r) {
  auto arm = [](const BenchArm& a) {
    nlohmann::ordered_json j;
    j["requests_before_dedup"] = a.requests;
    j["unique_backend_ids"] = a.unique_backend_ids;
    j["backend_calls"] = a.backend_calls;
    j["warm_backend_calls"] = a.warm_backend_calls;
    return j;
  };
  nlohmann::ordered_json j;
  j["test_inputs"] = r.test_inputs;
  j["k_demos"] = r.k_demos;
  j["lpr_k"] = r.lpr_k;
  j["candidate_pool_size"] = r.candidate_pool_size;
  j["local_bound"] = r.local_bound;
  j["local"] = arm(r.local);
  j["global"] = arm(r.global);
  j["timing"] = {{"local_seconds", r.local.seconds}, {"global_seconds", r.global.seconds}};
  return j;
}

}  // namespace iclforge
