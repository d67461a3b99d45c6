// icl_forge: noisy-demonstration experiments from the command line.

#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <memory>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "iclforge/bench.hpp"
#include "iclforge/corpus.hpp"
#include "iclforge/embedspace.hpp"
#include "iclforge/error.hpp"
#include "iclforge/eval.hpp"
#include "iclforge/inference.hpp"
#include "iclforge/io.hpp"
#include "iclforge/lpr.hpp"
#include "iclforge/pipeline.hpp"
#include "iclforge/planted.hpp"
#include "iclforge/prompt.hpp"
#include "iclforge/scoring.hpp"
#include "iclforge/selectors.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace iclforge;

namespace {

// ---------------------------------------------------------------------------
// Config handling: flags > config file > defaults.

std::string config_key(const CLI::Option* opt) {
  std::string key = opt->get_single_name();
  for (auto& c : key) {
    if (c == '-') c = '_';
  }
  return key;
}

std::vector<std::string> json_to_results(const nlohmann::json& v) {
  std::vector<std::string> out;
  auto scalar = [](const nlohmann::json& x) {
    if (x.is_string()) return x.get<std::string>();
    if (x.is_boolean()) return std::string(x.get<bool>() ? "true" : "false");
    return x.dump();
  };
  if (v.is_array()) {
    for (const auto& x : v) out.push_back(scalar(x));
  } else {
    out.push_back(scalar(v));
  }
  return out;
}

void apply_config(CLI::App& sub, const std::string& path) {
  if (path.empty()) return;
  nlohmann::json cfg;
  try {
    cfg = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::kParseError, path + ": " + e.what());
  }
  if (!cfg.is_object()) throw Error(ErrorCode::kParseError, path + ": expected an object");
  // A section named after the subcommand overrides shared top-level keys.
  nlohmann::json merged = nlohmann::json::object();
  for (const auto& [k, v] : cfg.items()) {
    if (!v.is_object()) merged[k] = v;
  }
  if (cfg.contains(sub.get_name()) && cfg[sub.get_name()].is_object()) {
    for (const auto& [k, v] : cfg[sub.get_name()].items()) merged[k] = v;
  }
  for (CLI::Option* opt : sub.get_options()) {
    if (opt->get_single_name().empty() || opt->count() > 0) continue;
    const std::string key = config_key(opt);
    if (key == "config" || key == "help" || !merged.contains(key)) continue;
    try {
      opt->add_result(json_to_results(merged[key]));
      opt->run_callback();
    } catch (const CLI::Error& e) {
      throw Error(ErrorCode::kInvalidArgument,
                  path + ": bad value for '" + key + "': " + e.what());
    }
  }
}

// Effective value of every option, for the sidecars.
ordered_json resolved_config(const CLI::App& sub) {
  ordered_json out;
  out["command"] = sub.get_name();
  for (const CLI::Option* opt : sub.get_options()) {
    if (opt->get_single_name().empty()) continue;
    const std::string key = config_key(opt);
    if (key == "help" || key == "config") continue;
    if (opt->count() > 0) {
      const auto& results = opt->results();
      if (opt->get_expected_max() > 1) {
        out[key] = results;
      } else if (opt->get_type_size() == 0) {
        out[key] = true;
      } else {
        out[key] = results.empty() ? std::string() : results.back();
      }
    } else if (opt->get_type_size() == 0) {
      out[key] = false;
    } else {
      out[key] = opt->get_default_str();
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

void require(const std::string& value, const std::string& flag) {
  if (value.empty()) throw Error(ErrorCode::kInvalidArgument, flag + " is required");
}

void require_file(const std::string& path, const std::string& flag) {
  require(path, flag);
  if (!fs::exists(path)) {
    throw Error(ErrorCode::kIo, flag + ": no such file: " + path);
  }
}

std::size_t resolve_jobs(std::size_t jobs, bool network) {
  if (jobs > 0) return jobs;
  if (network) return 4;
  return std::max(1u, std::thread::hardware_concurrency());
}

std::string env_or(const char* name, const std::string& fallback) {
  const char* v = std::getenv(name);
  return v != nullptr && *v != '\0' ? std::string(v) : fallback;
}

std::unique_ptr<ScoreCache> open_cache(const std::string& flag_dir) {
  const std::string dir = flag_dir.empty() ? env_or("ICL_FORGE_CACHE_DIR", "") : flag_dir;
  if (dir.empty()) return std::make_unique<ScoreCache>();
  fs::create_directories(dir);
  return std::make_unique<ScoreCache>(fs::path(dir) / "scores.jsonl");
}

bool is_http(const std::string& uri) {
  return uri.rfind("http://", 0) == 0 || uri.rfind("https://", 0) == 0;
}

struct BackendOptions {
  std::string model;
  std::string ppl_on = "full";
  double timeout = 60.0;
};

std::unique_ptr<ScorerBackend> make_scorer(const std::string& uri, const Dataset& pool,
                                           const PromptTemplate& prompt,
                                           const BackendOptions& opts) {
  if (uri.rfind("file:", 0) == 0) {
    const std::string path = uri.substr(5);
    require_file(path, "--scorer");
    return std::make_unique<FileScorer>(path);
  }
  if (uri.rfind("synthetic:", 0) == 0) {
    const std::string path = uri.substr(10);
    require_file(path, "--scorer");
    auto model = parse_synthetic_model_json(read_text_file(path), path);
    NoiseTruth truth = pool.truth() ? *pool.truth() : NoiseTruth{};
    return std::make_unique<SyntheticScorer>(std::move(model), std::move(truth));
  }
  if (is_http(uri)) {
    if (uri.rfind("https://", 0) == 0) {
      throw Error(ErrorCode::kInvalidArgument, "https endpoints are not supported: " + uri);
    }
    HttpScorerConfig cfg;
    cfg.base_url = uri;
    cfg.model = opts.model;
    cfg.api_key = env_or("ICL_FORGE_API_KEY", "");
    cfg.prompt = prompt;
    cfg.timeout_seconds = opts.timeout;
    if (opts.ppl_on == "output") {
      cfg.mode = PplMode::kOutput;
    } else if (opts.ppl_on != "full") {
      throw Error(ErrorCode::kInvalidArgument, "--ppl-on must be full or output");
    }
    return std::make_unique<HttpScorer>(std::move(cfg));
  }
  throw Error(ErrorCode::kInvalidArgument,
              "unknown scorer '" + uri + "' (file:PATH, synthetic:PATH, http://HOST:PORT)");
}

std::unique_ptr<InferenceBackend> make_generator(const std::string& uri, const Dataset& test,
                                                 const PromptTemplate& prompt,
                                                 const BackendOptions& opts) {
  if (uri.rfind("echo:", 0) == 0) {
    std::string spec = uri.substr(5);
    double fail = 0.0;
    if (auto q = spec.find("?fail="); q != std::string::npos) {
      try {
        fail = std::stod(spec.substr(q + 6));
      } catch (const std::exception&) {
        throw Error(ErrorCode::kInvalidArgument, "bad fail fraction in " + uri);
      }
      spec = spec.substr(0, q);
    }
    std::unique_ptr<EchoBackend> echo;
    if (spec == "reference") {
      echo = std::make_unique<EchoBackend>(EchoBackend::references(test, prompt));
    } else if (spec == "empty") {
      echo = std::make_unique<EchoBackend>("");
    } else if (spec.rfind("text=", 0) == 0) {
      echo = std::make_unique<EchoBackend>(spec.substr(5));
    } else {
      throw Error(ErrorCode::kInvalidArgument,
                  "unknown echo mode '" + spec + "' (reference, empty, text=...)");
    }
    echo->set_fail_fraction(fail);
    return echo;
  }
  if (uri.rfind("http://", 0) == 0) {
    HttpInferenceConfig cfg;
    cfg.base_url = uri;
    cfg.model = opts.model;
    cfg.api_key = env_or("ICL_FORGE_API_KEY", "");
    cfg.timeout_seconds = opts.timeout;
    return std::make_unique<HttpInferenceBackend>(std::move(cfg));
  }
  throw Error(ErrorCode::kInvalidArgument,
              "unknown generator '" + uri + "' (echo:reference, echo:empty, echo:text=..., "
              "http://HOST:PORT)");
}

PromptTemplate template_or_default(const std::string& path, const std::string& task) {
  if (!path.empty()) {
    require_file(path, "--template");
    return load_template(path);
  }
  PromptTemplate t;
  t.task = task;
  return t;
}

// Pool and test embeddings may live in one file or two.
EmbeddingMatrix load_embedding_set(const std::string& path, const std::string& extra) {
  require_file(path, "--embeddings");
  EmbeddingMatrix m = load_embeddings(path);
  if (!extra.empty()) {
    require_file(extra, "--test-embeddings");
    m.merge(load_embeddings(extra));
  }
  return m;
}

std::optional<std::string> noise_summary_of(const std::string& pool_path, const Dataset& pool) {
  const fs::path sidecar = pool_path + ".noise.json";
  if (fs::exists(sidecar)) {
    auto j = nlohmann::json::parse(read_text_file(sidecar), nullptr, false);
    if (j.is_object() && j.contains("noise_spec") && j["noise_spec"].is_string()) {
      return j["noise_spec"].get<std::string>();
    }
  }
  if (pool.truth()) {
    return "noisy=" + std::to_string(pool.truth()->noisy_count()) + "/" +
           std::to_string(pool.size());
  }
  return std::nullopt;
}

void write_json(const fs::path& path, const ordered_json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Shared selection flags.

struct SelectionFlags {
  std::string selector = "topk";
  std::size_t k_demos = 8;
  std::size_t dpp_pool = 100;
  bool lpr = false;
  bool label_agreement = false;
  bool global_rank = false;
  std::size_t lpr_k = 4;
  double lpr_gamma = 0.5;
  std::string lpr_similarity = "cosine";
  std::string lpr_rank_base = "zero";
  bool no_reorder = false;

  void add_to(CLI::App& sub) {
    sub.add_option("--selector", selector, "random, topk or dpp");
    sub.add_option("--k-demos", k_demos, "demonstrations per test input (K)");
    sub.add_option("--dpp-pool", dpp_pool,
                   "candidate pool size M for DPP and global ranking");
    auto* l = sub.add_flag("--lpr", lpr, "filter with local perplexity ranking");
    auto* la = sub.add_flag("--label-agreement", label_agreement,
                            "filter by neighbor label agreement (classification)");
    auto* g = sub.add_flag("--global-rank", global_rank,
                           "keep the K lowest-perplexity of the M most similar");
    l->excludes(g)->excludes(la);
    la->excludes(g);
    sub.add_option("--lpr-k", lpr_k, "neighbors per cluster");
    sub.add_option("--lpr-gamma", lpr_gamma, "rank-fraction threshold");
    sub.add_option("--lpr-similarity", lpr_similarity, "cosine or bm25");
    sub.add_option("--lpr-rank-base", lpr_rank_base, "zero or one");
    sub.add_flag("--no-reorder", no_reorder, "keep selector order after filtering");
  }

  bool needs_scorer() const { return lpr || global_rank; }

  PipelineConfig build(std::uint64_t seed, std::size_t scoring_jobs) const {
    PipelineConfig cfg;
    cfg.selector.method = parse_selector_method(selector);
    cfg.selector.k_demos = k_demos;
    cfg.selector.candidate_pool_size = dpp_pool;
    cfg.selector.seed = seed;
    if (lpr) cfg.filter = FilterKind::kLpr;
    if (label_agreement) cfg.filter = FilterKind::kLabelAgreement;
    if (global_rank) cfg.filter = FilterKind::kGlobalRank;
    cfg.lpr.k = lpr_k;
    cfg.lpr.gamma = lpr_gamma;
    if (lpr_similarity == "cosine") {
      cfg.lpr.similarity = SimilarityKind::kCosine;
    } else if (lpr_similarity == "bm25") {
      cfg.lpr.similarity = SimilarityKind::kBm25;
    } else {
      throw Error(ErrorCode::kInvalidArgument, "--lpr-similarity must be cosine or bm25");
    }
    if (lpr_rank_base == "zero" || lpr_rank_base == "zero_based") {
      cfg.lpr.rank_base = RankBase::kZeroBased;
    } else if (lpr_rank_base == "one" || lpr_rank_base == "one_based") {
      cfg.lpr.rank_base = RankBase::kOneBased;
    } else {
      throw Error(ErrorCode::kInvalidArgument, "--lpr-rank-base must be zero or one");
    }
    cfg.lpr.reorder = !no_reorder;
    cfg.scoring_jobs = scoring_jobs;
    cfg.selector.validate();
    cfg.lpr.validate();
    return cfg;
  }
};

struct DataFlags {
  std::string pool;
  std::string test;
  std::string embeddings;
  std::string test_embeddings;
  std::string template_path;
  std::string scorer;
  std::string cache_dir;
  BackendOptions backend;

  void add_to(CLI::App& sub, bool with_test = true) {
    sub.add_option("--pool", pool, "pool JSONL");
    if (with_test) {
      sub.add_option("--test", test, "test JSONL");
      sub.add_option("--embeddings", embeddings, "embeddings covering pool and test ids");
      sub.add_option("--test-embeddings", test_embeddings,
                     "separate embeddings for the test ids");
    }
    sub.add_option("--template", template_path, "prompt template JSON");
    sub.add_option("--scorer", scorer, "file:PATH, synthetic:PATH or http://HOST:PORT");
    sub.add_option("--cache-dir", cache_dir, "score cache directory");
    sub.add_option("--model", backend.model, "model name for http backends");
    sub.add_option("--ppl-on", backend.ppl_on, "full or output");
    sub.add_option("--timeout", backend.timeout, "http timeout in seconds");
  }
};

// ---------------------------------------------------------------------------
// Subcommands.

int cmd_synth_corpus(CLI::App& sub, const PlantedConfig& cfg, const std::string& out_dir) {
  require(out_dir, "--out");
  PlantedConfig clean = cfg;
  const auto corpus = make_planted_corpus(clean);
  const fs::path dir(out_dir);
  fs::create_directories(dir);
  save_dataset(corpus.clean_pool, dir / "pool.jsonl");
  save_dataset(corpus.donor, dir / "donor.jsonl");
  save_dataset(corpus.test, dir / "test.jsonl");
  save_embeddings_jsonl(corpus.embeddings, dir / "embeddings.jsonl");
  write_text_file(dir / "template.json", template_to_json(corpus.prompt));
  write_text_file(dir / "scorer.json", synthetic_model_to_json(corpus.model));
  ordered_json meta;
  meta["config"] = resolved_config(sub);
  write_json(dir / "corpus.json", meta);
  std::cout << "wrote planted corpus: " << corpus.clean_pool.size() << " pool, "
            << corpus.test.size() << " test, " << corpus.donor.size() << " donor -> "
            << dir.string() << "\n";
  return 0;
}

struct InjectFlags {
  std::string pool;
  std::string out;
  double rate = 0.0;
  std::string kind = "irrelevant";
  std::string donor;
  std::string donor_task;
  std::string import_path;
  std::uint64_t seed = 0;
};

int cmd_inject_noise(CLI::App& sub, const InjectFlags& f) {
  require_file(f.pool, "--pool");
  require(f.out, "--out");
  NoiseSpec spec;
  spec.rate = f.rate;
  spec.seed = f.seed;
  if (f.kind == "irrelevant") {
    spec.kind = NoiseKind::kIrrelevant;
  } else if (f.kind == "relevant") {
    spec.kind = NoiseKind::kRelevantImport;
  } else {
    throw Error(ErrorCode::kInvalidArgument, "--kind must be irrelevant or relevant");
  }
  if (!f.donor_task.empty()) spec.donor_task = f.donor_task;
  if (!f.import_path.empty()) spec.import_path = f.import_path;
  spec.validate();

  const Dataset pool = load_dataset(f.pool);
  std::size_t noisy = 0;
  if (spec.rate == 0.0) {
    write_text_file(f.out, read_text_file(f.pool));
  } else if (spec.kind == NoiseKind::kIrrelevant) {
    require_file(f.donor, "--donor");
    const Dataset donor = load_dataset(f.donor);
    if (!spec.donor_task) {
      const auto tasks = donor.tasks();
      if (!tasks.empty()) spec.donor_task = tasks.front();
    }
    const Dataset noisy_pool = inject_irrelevant_noise(pool, donor, spec);
    noisy = noisy_pool.truth()->noisy_count();
    save_dataset(noisy_pool, f.out);
  } else {
    require_file(f.import_path, "--import");
    const Dataset noisy_pool = import_relevant_noise(pool, spec);
    noisy = noisy_pool.truth()->noisy_count();
    save_dataset(noisy_pool, f.out);
  }

  ordered_json side;
  side["noise_spec"] = spec.summary();
  side["pool_size"] = pool.size();
  side["noisy_count"] = noisy;
  side["config"] = resolved_config(sub);
  write_json(f.out + ".noise.json", side);
  std::cout << "flagged " << noisy << " of " << pool.size() << " -> " << f.out << "\n";
  return 0;
}

int cmd_import_embeddings(CLI::App& sub, const std::string& in, const std::string& out,
                          bool normalize, const std::vector<std::string>& coverage) {
  require_file(in, "--in");
  require(out, "--out");
  EmbeddingMatrix m = load_embeddings(in);
  for (const auto& path : coverage) {
    require_file(path, "--check");
    const Dataset ds = load_dataset(path);
    std::vector<std::string> missing;
    for (const auto& ex : ds.examples()) {
      if (!m.contains(ex.id)) missing.push_back(ex.id);
    }
    if (!missing.empty()) {
      throw Error(ErrorCode::kMissingEmbedding,
                  std::to_string(missing.size()) + " ids of " + path +
                      " have no embedding, first " + missing.front(),
                  std::move(missing));
    }
  }
  if (normalize) m = m.normalized_copy();
  if (fs::path(out).extension() == ".f32") {
    save_embeddings_packed(m, out);
  } else {
    save_embeddings_jsonl(m, out);
  }
  ordered_json side;
  side["rows"] = m.rows();
  side["dim"] = m.dim();
  side["config"] = resolved_config(sub);
  write_json(out + ".meta.json", side);
  std::cout << "imported " << m.rows() << " x " << m.dim() << " -> " << out << "\n";
  return 0;
}

int cmd_score(CLI::App& sub, const DataFlags& d, const std::string& out, std::size_t jobs) {
  require_file(d.pool, "--pool");
  require(d.scorer, "--scorer");
  require(out, "--out");
  const Dataset pool = load_dataset(d.pool);
  const PromptTemplate prompt =
      template_or_default(d.template_path, pool.tasks().empty() ? "" : pool.tasks().front());
  auto scorer = make_scorer(d.scorer, pool, prompt, d.backend);
  auto cache = open_cache(d.cache_dir);
  std::vector<const Example*> examples;
  for (const auto& ex : pool.examples()) examples.push_back(&ex);
  auto result = batch_score_collect(*scorer, examples, *cache,
                                    resolve_jobs(jobs, is_http(d.scorer)));
  std::string lines;
  for (const auto& ex : pool.examples()) {
    auto it = result.scores.find(ex.id);
    if (it == result.scores.end()) continue;
    ordered_json j;
    j["id"] = ex.id;
    j["perplexity"] = it->second.perplexity;
    j["backend_tag"] = it->second.backend_tag;
    lines += j.dump() + "\n";
  }
  write_text_file(out, lines);
  ordered_json side;
  side["backend_tag"] = scorer->tag();
  side["requested"] = result.stats.requested;
  side["cache_hits"] = result.stats.cache_hits;
  side["backend_calls"] = result.stats.backend_calls;
  side["failed"] = result.failed;
  side["config"] = resolved_config(sub);
  write_json(out + ".meta.json", side);
  std::cout << "scored " << result.scores.size() << " of " << pool.size() << " ("
            << result.stats.cache_hits << " cached, " << result.stats.backend_calls
            << " backend calls)\n";
  if (!result.failed.empty()) {
    std::vector<std::string> ids;
    for (const auto& [id, msg] : result.failed) ids.push_back(id);
    throw Error(ErrorCode::kPartialFailure,
                std::to_string(ids.size()) + " examples could not be scored, first " +
                    ids.front() + ": " + result.failed.begin()->second,
                std::move(ids));
  }
  return 0;
}

int cmd_select(CLI::App& sub, const DataFlags& d, const SelectionFlags& s,
               std::uint64_t seed, const std::string& out, std::size_t jobs) {
  require_file(d.pool, "--pool");
  require_file(d.test, "--test");
  require(out, "--out");
  const Dataset pool = load_dataset(d.pool);
  const Dataset test = load_dataset(d.test, DatasetFormat::kJsonl, Split::kTest);
  const EmbeddingMatrix emb = load_embedding_set(d.embeddings, d.test_embeddings);
  const PromptTemplate prompt =
      template_or_default(d.template_path, pool.tasks().empty() ? "" : pool.tasks().front());

  std::unique_ptr<ScorerBackend> scorer;
  std::unique_ptr<ScoreCache> cache;
  if (s.needs_scorer()) {
    require(d.scorer, "--scorer");
    scorer = make_scorer(d.scorer, pool, prompt, d.backend);
    cache = open_cache(d.cache_dir);
  }
  SelectionPipeline pipeline(pool, emb, s.build(seed, resolve_jobs(jobs, is_http(d.scorer))),
                             scorer.get(), cache.get());
  std::string lines;
  std::size_t substituted = 0;
  for (const auto& ex : test.examples()) {
    auto result = pipeline.run(ex, seed);
    ordered_json j;
    j["test_id"] = result.demos.test_id;
    j["demo_ids"] = result.demos.demo_ids;
    j["provenance"] = to_string(result.demos.provenance);
    if (s.lpr || s.label_agreement) {
      auto recs = ordered_json::array();
      for (const auto& r : result.records) {
        recs.push_back(record_to_json(r));
        substituted += r.replacement_id ? 1 : 0;
      }
      j["substitutions"] = std::move(recs);
    }
    lines += j.dump() + "\n";
  }
  write_text_file(out, lines);
  ordered_json side;
  side["test_inputs"] = test.size();
  side["substituted"] = substituted;
  side["config"] = resolved_config(sub);
  write_json(out + ".meta.json", side);
  std::cout << "selected for " << test.size() << " test inputs";
  if (s.lpr || s.label_agreement) std::cout << ", " << substituted << " substitutions";
  std::cout << " -> " << out << "\n";
  return 0;
}

std::string fmt(double v, int precision = 2) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(precision) << v;
  return out.str();
}

void print_table(const std::vector<ordered_json>& reports, std::ostream& os) {
  os << "| dataset | selector | filter | metric | mean ± std | runs |\n";
  os << "|---|---|---|---|---|---|\n";
  for (const auto& r : reports) {
    os << "| " << r.value("dataset", "") << " | " << r.value("selector", "") << " | "
       << r.value("filter", "") << " | " << r.value("metric", "") << " | "
       << fmt(r.value("mean", 0.0)) << " ± " << fmt(r.value("std", 0.0)) << " | "
       << r.value("n_runs", 0) << " |\n";
  }
}

struct EvalFlags {
  std::string generator;
  std::string metric = "em";
  std::vector<std::uint64_t> seeds{0};
  std::size_t context_window = 0;
  double max_error_fraction = 0.05;
  std::string dataset_name;
};

int cmd_evaluate(CLI::App& sub, const DataFlags& d, const SelectionFlags& s,
                 const EvalFlags& e, const std::string& out, std::size_t jobs) {
  require_file(d.pool, "--pool");
  require_file(d.test, "--test");
  require(e.generator, "--generator");
  require(out, "--out");
  const Dataset pool = load_dataset(d.pool);
  const Dataset test = load_dataset(d.test, DatasetFormat::kJsonl, Split::kTest);
  const EmbeddingMatrix emb = load_embedding_set(d.embeddings, d.test_embeddings);
  const PromptTemplate prompt =
      template_or_default(d.template_path, pool.tasks().empty() ? "" : pool.tasks().front());

  std::unique_ptr<ScorerBackend> scorer;
  std::unique_ptr<ScoreCache> cache;
  if (s.needs_scorer()) {
    require(d.scorer, "--scorer");
    scorer = make_scorer(d.scorer, pool, prompt, d.backend);
    cache = open_cache(d.cache_dir);
  }
  auto generator = make_generator(e.generator, test, prompt, d.backend);

  EvalConfig cfg;
  cfg.dataset = e.dataset_name.empty() ? fs::path(d.test).stem().string() : e.dataset_name;
  cfg.pipeline = s.build(0, resolve_jobs(jobs, is_http(d.scorer)));
  cfg.metric = parse_metric(e.metric);
  cfg.seeds = e.seeds;
  if (e.context_window > 0) cfg.context_window = e.context_window;
  cfg.jobs = resolve_jobs(jobs, is_http(e.generator));
  cfg.max_error_fraction = e.max_error_fraction;
  cfg.noise_summary = noise_summary_of(d.pool, pool);

  EvalInputs in;
  in.pool = &pool;
  in.test = &test;
  in.embeddings = &emb;
  in.prompt = &prompt;
  in.generator = generator.get();
  in.scorer = scorer.get();
  in.cache = cache.get();

  const EvalReport report = run_eval(in, cfg);
  ordered_json j = report_to_json(report);
  j["config"] = resolved_config(sub);
  write_json(out, j);
  const fs::path sidecar = fs::path(out).replace_extension(".per_example.jsonl");
  write_text_file(sidecar, per_example_jsonl(report));
  print_table({j}, std::cout);
  return 0;
}

int cmd_bench(CLI::App& sub, const DataFlags& d, const SelectionFlags& s,
              const std::string& out, std::size_t jobs) {
  require_file(d.pool, "--pool");
  require_file(d.test, "--test");
  require(d.scorer, "--scorer");
  require(out, "--out");
  const Dataset pool = load_dataset(d.pool);
  const Dataset test = load_dataset(d.test, DatasetFormat::kJsonl, Split::kTest);
  const EmbeddingMatrix emb = load_embedding_set(d.embeddings, d.test_embeddings);
  const PromptTemplate prompt =
      template_or_default(d.template_path, pool.tasks().empty() ? "" : pool.tasks().front());
  auto scorer = make_scorer(d.scorer, pool, prompt, d.backend);

  const auto result =
      run_bench(pool, test, emb, *scorer, s.build(0, resolve_jobs(jobs, is_http(d.scorer))));
  ordered_json j = bench_to_json(result);
  j["config"] = resolved_config(sub);
  write_json(out, j);
  std::cout << "| ranking | requests | unique backend ids | warm rerun calls | seconds |\n"
            << "|---|---|---|---|---|\n"
            << "| local | " << result.local.requests << " | " << result.local.unique_backend_ids
            << " | " << result.local.warm_backend_calls << " | " << fmt(result.local.seconds, 3)
            << " |\n"
            << "| global | " << result.global.requests << " | "
            << result.global.unique_backend_ids << " | " << result.global.warm_backend_calls
            << " | " << fmt(result.global.seconds, 3) << " |\n";
  return 0;
}

int cmd_report(const std::vector<std::string>& inputs, const std::string& out) {
  if (inputs.empty()) throw Error(ErrorCode::kInvalidArgument, "no reports given");
  std::vector<ordered_json> reports;
  for (const auto& path : inputs) {
    require_file(path, "report");
    try {
      reports.push_back(ordered_json::parse(read_text_file(path)));
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorCode::kParseError, path + ": " + e.what());
    }
  }
  std::ostringstream table;
  print_table(reports, table);
  if (!out.empty()) write_text_file(out, table.str());
  std::cout << table.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"icl_forge: demonstration selection and noisy-demo filtering for ICL"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  std::string config_path;
  std::string out;
  std::size_t jobs = 0;
  std::uint64_t seed = 0;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON config; flags take precedence");
    sub->add_option("--jobs", jobs, "parallelism bound (0: cores, or 4 for http)");
  };

  // synth-corpus
  PlantedConfig planted;
  auto* synth = app.add_subcommand("synth-corpus", "write a planted model-free corpus");
  add_common(synth);
  synth->add_option("--out", out, "output directory");
  synth->add_option("--clusters", planted.clusters);
  synth->add_option("--per-cluster", planted.per_cluster);
  synth->add_option("--dim", planted.dim);
  synth->add_option("--spread", planted.spread);
  synth->add_option("--base-lo", planted.base_lo);
  synth->add_option("--base-hi", planted.base_hi);
  synth->add_option("--bases", planted.bases, "one inherent base per cluster")->delimiter(',');
  synth->add_option("--noise-shift", planted.noise_shift);
  synth->add_option("--sigma", planted.sigma);
  synth->add_option("--test-per-cluster", planted.test_per_cluster);
  synth->add_option("--test-inputs", planted.test_inputs,
                    "total test inputs over seeded clusters (0: per-cluster count)");
  synth->add_option("--donor-size", planted.donor_size);
  synth->add_option("--seed", planted.seed);

  // inject-noise
  InjectFlags inject;
  auto* inj = app.add_subcommand("inject-noise", "corrupt a fraction of pool outputs");
  add_common(inj);
  inj->add_option("--pool", inject.pool, "clean pool JSONL");
  inj->add_option("--out", inject.out, "corrupted pool JSONL");
  inj->add_option("--rate", inject.rate, "fraction to corrupt")->check(CLI::Range(0.0, 1.0));
  inj->add_option("--kind", inject.kind, "irrelevant or relevant");
  inj->add_option("--donor", inject.donor, "donor dataset for irrelevant noise");
  inj->add_option("--donor-task", inject.donor_task);
  inj->add_option("--import", inject.import_path, "corruptions JSONL for relevant noise");
  inj->add_option("--seed", inject.seed);

  // import-embeddings
  std::string emb_in;
  bool normalize = false;
  std::vector<std::string> coverage;
  auto* imp = app.add_subcommand("import-embeddings", "validate and convert embeddings");
  add_common(imp);
  imp->add_option("--in", emb_in, "JSONL or .f32 (with <stem>.json manifest)");
  imp->add_option("--out", out, "JSONL or .f32 output");
  imp->add_flag("--normalize", normalize, "L2-normalize rows");
  imp->add_option("--check", coverage, "datasets whose ids must all be covered");

  // score
  DataFlags data;
  auto* score = app.add_subcommand("score", "compute pool perplexities");
  add_common(score);
  data.add_to(*score, false);
  score->add_option("--out", out, "scores JSONL");

  // select
  SelectionFlags sel;
  auto* select_cmd = app.add_subcommand("select", "build demonstration sets");
  add_common(select_cmd);
  data.add_to(*select_cmd);
  sel.add_to(*select_cmd);
  select_cmd->add_option("--seed", seed);
  select_cmd->add_option("--out", out, "demonstration sets JSONL");

  // evaluate
  EvalFlags ev;
  auto* evaluate = app.add_subcommand("evaluate", "run ICL evaluation over seeds");
  add_common(evaluate);
  data.add_to(*evaluate);
  sel.add_to(*evaluate);
  evaluate->add_option("--generator", ev.generator,
                       "echo:reference, echo:empty, echo:text=..., http://HOST:PORT");
  evaluate->add_option("--metric", ev.metric, "em or bleu");
  evaluate->add_option("--seeds", ev.seeds, "comma-separated seeds")->delimiter(',');
  evaluate->add_option("--context-window", ev.context_window, "tokens; 0 disables the check");
  evaluate->add_option("--max-error-fraction", ev.max_error_fraction);
  evaluate->add_option("--dataset-name", ev.dataset_name);
  evaluate->add_option("--out", out, "report JSON");

  // bench
  auto* bench = app.add_subcommand("bench", "count scoring calls, local vs global ranking");
  add_common(bench);
  data.add_to(*bench);
  sel.add_to(*bench);
  bench->add_option("--out", out, "bench JSON");

  // report
  std::vector<std::string> report_inputs;
  auto* report = app.add_subcommand("report", "tabulate evaluation reports");
  report->add_option("reports", report_inputs, "report JSON files");
  report->add_option("--out", out, "write the table here too");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    apply_config(*sub, config_path);
    if (sub == synth) return cmd_synth_corpus(*sub, planted, out);
    if (sub == inj) return cmd_inject_noise(*sub, inject);
    if (sub == imp) return cmd_import_embeddings(*sub, emb_in, out, normalize, coverage);
    if (sub == score) return cmd_score(*sub, data, out, jobs);
    if (sub == select_cmd) return cmd_select(*sub, data, sel, seed, out, jobs);
    if (sub == evaluate) return cmd_evaluate(*sub, data, sel, ev, out, jobs);
    if (sub == bench) return cmd_bench(*sub, data, sel, out, jobs);
    if (sub == report) return cmd_report(report_inputs, out);
  } catch (const Error& e) {
    std::cerr << "icl_forge: " << e.what() << "\n";
    return e.is_validation() ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "icl_forge: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
