#include "iclforge/scoring.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "completions_client.hpp"
#include "iclforge/error.hpp"
#include "iclforge/io.hpp"
#include "iclforge/random.hpp"

namespace iclforge {

using nlohmann::json;

double perplexity(std::span<const double> logprobs) {
  if (logprobs.empty()) {
    throw Error(ErrorCode::kEmptyLogProbs, "no token logprobs to average");
  }
  // Neumaier summation keeps long sequences within a few ulps.
  double sum = 0.0;
  double carry = 0.0;
  for (double lp : logprobs) {
    if (!std::isfinite(lp)) {
      throw Error(ErrorCode::kInvalidArgument, "non-finite token logprob");
    }
    const double t = sum + lp;
    carry += std::abs(sum) >= std::abs(lp) ? (sum - t) + lp : (lp - t) + sum;
    sum = t;
  }
  return std::exp(-(sum + carry) / static_cast<double>(logprobs.size()));
}

PerplexityScore perplexity_from_logprobs(const TokenLogProbs& lp,
                                         std::string backend_tag) {
  if (!lp.tokens.empty() && lp.tokens.size() != lp.logprobs.size()) {
    throw Error(ErrorCode::kInvalidArgument,
                "token and logprob counts differ for " + lp.source_id);
  }
  return {lp.source_id, perplexity(lp.logprobs), std::move(backend_tag)};
}

// ---------------------------------------------------------------------------
// FileScorer

FileScorer::FileScorer(const std::filesystem::path& path) {
  const auto text = read_text_file(path);
  for_each_line(text, [&](std::string_view line, std::size_t line_no) {
    json record;
    try {
      record = json::parse(line);
    } catch (const json::parse_error& e) {
      throw Error(ErrorCode::kParseError, path.string() + ":" +
                                              std::to_string(line_no) + ": " +
                                              e.what());
    }
    if (!record.contains("id") || !record["id"].is_string() ||
        !record.contains("perplexity") || !record["perplexity"].is_number()) {
      throw Error(ErrorCode::kParseError,
                  path.string() + ":" + std::to_string(line_no) +
                      ": expected {id, perplexity, backend_tag}");
    }
    const auto tag = record.value("backend_tag", std::string());
    if (tag_.empty()) {
      tag_ = tag;
    } else if (!tag.empty() && tag != tag_) {
      throw Error(ErrorCode::kParseError,
                  path.string() + ": mixed backend tags '" + tag_ + "' and '" +
                      tag + "'");
    }
    const double ppl = record["perplexity"].get<double>();
    if (!(ppl > 0.0) || !std::isfinite(ppl)) {
      throw Error(ErrorCode::kParseError, path.string() + ":" +
                                              std::to_string(line_no) +
                                              ": perplexity must be positive");
    }
    scores_[record["id"].get<std::string>()] = ppl;
  });
  if (tag_.empty()) tag_ = "file:" + path.filename().string();
}

FileScorer::FileScorer(std::map<std::string, double> scores, std::string tag)
    : scores_(scores.begin(), scores.end()), tag_(std::move(tag)) {}

PerplexityScore FileScorer::score(const Example& ex) {
  auto it = scores_.find(ex.id);
  if (it == scores_.end()) {
    throw Error(ErrorCode::kMissingScore, "no precomputed score for " + ex.id,
                {ex.id});
  }
  return {ex.id, it->second, tag_};
}

// ---------------------------------------------------------------------------
// Synthetic planted scorer

double SyntheticScorerModel::jitter(std::string_view example_id) const {
  Rng rng(mix64(fnv1a64(example_id) ^ mix64(seed)));
  return rng.normal();
}

double SyntheticScorerModel::perplexity_for(const Example& ex, bool noisy) const {
  auto meta = ex.meta.find(cluster_key);
  if (meta == ex.meta.end()) {
    throw Error(ErrorCode::kInvalidArgument,
                "example " + ex.id + " has no '" + cluster_key + "' meta field",
                {ex.id});
  }
  auto base = cluster_base.find(meta->second);
  if (base == cluster_base.end()) {
    throw Error(ErrorCode::kInvalidArgument,
                "no inherent base for cluster " + meta->second, {ex.id});
  }
  double value = base->second + (noisy ? noise_shift : 0.0);
  if (sigma > 0.0) value += sigma * jitter(ex.id);
  return std::max(1.0, value);
}

SyntheticScorerModel parse_synthetic_model_json(std::string_view text,
                                                std::string_view source) {
  SyntheticScorerModel model;
  try {
    const json j = json::parse(text);
    if (!j.is_object() || !j.contains("cluster_base") || !j["cluster_base"].is_object()) {
      throw Error(ErrorCode::kParseError,
                  std::string(source) + ": synthetic model needs a cluster_base object");
    }
    for (const auto& [cluster, base] : j["cluster_base"].items()) {
      model.cluster_base[cluster] = base.get<double>();
    }
    model.noise_shift = j.value("noise_shift", model.noise_shift);
    model.sigma = j.value("sigma", model.sigma);
    model.seed = j.value("seed", model.seed);
    model.cluster_key = j.value("cluster_key", model.cluster_key);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string(source) + ": " + e.what());
  }
  return model;
}

std::string synthetic_model_to_json(const SyntheticScorerModel& model) {
  nlohmann::ordered_json j;
  nlohmann::ordered_json bases = nlohmann::ordered_json::object();
  for (const auto& [cluster, base] : model.cluster_base) bases[cluster] = base;
  j["cluster_base"] = std::move(bases);
  j["noise_shift"] = model.noise_shift;
  j["sigma"] = model.sigma;
  j["seed"] = model.seed;
  j["cluster_key"] = model.cluster_key;
  return j.dump(2) + "\n";
}

SyntheticScorer::SyntheticScorer(SyntheticScorerModel model, NoiseTruth truth)
    : model_(std::move(model)), truth_(std::move(truth)) {
  if (model_.noise_shift < 0.0 || model_.sigma < 0.0) {
    throw Error(ErrorCode::kInvalidArgument,
                "synthetic scorer needs noise_shift >= 0 and sigma >= 0");
  }
}

std::string SyntheticScorer::tag() const {
  std::ostringstream out;
  // The bases enter the tag so that caches never mix planted models.
  std::string bases;
  for (const auto& [cluster, base] : model_.cluster_base) {
    bases += cluster + "=" + std::to_string(base) + ";";
  }
  out << "synthetic:delta=" << model_.noise_shift << ",sigma=" << model_.sigma
      << ",seed=" << model_.seed << ",bases=" << std::hex << fnv1a64(bases);
  return out.str();
}

PerplexityScore SyntheticScorer::score(const Example& ex) {
  return {ex.id, model_.perplexity_for(ex, truth_.is_noisy(ex.id)), tag()};
}

// ---------------------------------------------------------------------------
// HTTP scorer

HttpScorer::HttpScorer(HttpScorerConfig config) : config_(std::move(config)) {
  config_.prompt.validate();
  if (config_.base_url.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "http scorer needs a base url");
  }
}

std::string HttpScorer::tag() const {
  std::ostringstream out;
  out << "http:" << config_.model << ":" << std::hex << std::setw(16)
      << std::setfill('0') << config_.prompt.fingerprint();
  if (config_.mode == PplMode::kOutput) out << ":output";
  return out.str();
}

std::string HttpScorer::request_body(const Example& ex) const {
  nlohmann::ordered_json body;
  body["model"] = config_.model;
  body["prompt"] = config_.prompt.render_demo(ex);
  body["max_tokens"] = 0;
  body["echo"] = true;
  body["logprobs"] = 1;
  return body.dump();
}

TokenLogProbs HttpScorer::parse_response(std::string_view body,
                                         std::size_t output_offset,
                                         double logprob_base) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kProtocolError,
                std::string("malformed completions response: ") + e.what());
  }
  const json* lp = nullptr;
  if (j.contains("choices") && j["choices"].is_array() && !j["choices"].empty()) {
    const auto& choice = j["choices"][0];
    if (choice.contains("logprobs") && choice["logprobs"].is_object()) {
      lp = &choice["logprobs"];
    }
  }
  if (lp == nullptr || !lp->contains("token_logprobs") ||
      !(*lp)["token_logprobs"].is_array()) {
    throw Error(ErrorCode::kProtocolError,
                "response has no choices[0].logprobs.token_logprobs");
  }
  const auto& values = (*lp)["token_logprobs"];
  const json* tokens = lp->contains("tokens") ? &(*lp)["tokens"] : nullptr;
  const json* offsets =
      lp->contains("text_offset") ? &(*lp)["text_offset"] : nullptr;
  if (output_offset > 0 && (offsets == nullptr || offsets->size() != values.size())) {
    throw Error(ErrorCode::kProtocolError,
                "output-only perplexity needs text_offset for every token");
  }
  const double scale = logprob_base > 0.0 ? std::log(logprob_base) : 1.0;

  TokenLogProbs out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i].is_null()) {
      if (i == 0) continue;
      throw Error(ErrorCode::kProtocolError,
                  "null logprob at token " + std::to_string(i));
    }
    if (!values[i].is_number()) {
      throw Error(ErrorCode::kProtocolError, "non-numeric token logprob");
    }
    if (output_offset > 0 && (*offsets)[i].get<std::size_t>() < output_offset) {
      continue;
    }
    out.logprobs.push_back(values[i].get<double>() * scale);
    if (tokens != nullptr && i < tokens->size() && (*tokens)[i].is_string()) {
      out.tokens.push_back((*tokens)[i].get<std::string>());
    } else {
      out.tokens.emplace_back();
    }
  }
  if (out.logprobs.empty()) {
    throw Error(ErrorCode::kProtocolError, "response carried no usable logprobs");
  }
  return out;
}

PerplexityScore HttpScorer::score(const Example& ex) {
  const std::string body = detail::post_completions(
      config_.base_url, config_.api_key, config_.timeout_seconds,
      request_body(ex), {ex.id});
  std::size_t output_offset = 0;
  if (config_.mode == PplMode::kOutput) {
    output_offset = std::max<std::size_t>(1, config_.prompt.render_demo_prefix(ex).size());
  }
  auto lp = parse_response(body, output_offset, config_.logprob_base);
  lp.source_id = ex.id;
  return perplexity_from_logprobs(lp, tag());
}

// ---------------------------------------------------------------------------

PerplexityScore CountingScorer::score(const Example& ex) {
  calls_.fetch_add(1);
  {
    std::lock_guard lock(mutex_);
    ++per_id_[ex.id];
  }
  return inner_.score(ex);
}

std::size_t CountingScorer::unique_ids() const {
  std::lock_guard lock(mutex_);
  return per_id_.size();
}

std::uint64_t content_hash(const Example& ex) {
  std::uint64_t h = fnv1a64(ex.task);
  h = fnv1a64(std::string_view("\x1f", 1), h);
  h = fnv1a64(ex.input_text, h);
  h = fnv1a64(std::string_view("\x1f", 1), h);
  return fnv1a64(ex.output_text, h);
}

// ---------------------------------------------------------------------------
// ScoreCache

namespace {

std::string hex64(std::uint64_t v) {
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << v;
  return out.str();
}

std::string cache_record(const std::string& tag, std::uint64_t hash,
                         const std::string& id, double ppl) {
  nlohmann::ordered_json j;
  j["backend_tag"] = tag;
  j["content_hash"] = hex64(hash);
  j["id"] = id;
  j["perplexity"] = ppl;
  return j.dump();
}

}  // namespace

ScoreCache::ScoreCache(std::filesystem::path file) : file_(std::move(file)) {
  if (std::filesystem::exists(*file_)) {
    const auto text = read_text_file(*file_);
    std::size_t last_line = 0;
    for_each_line(text, [&](std::string_view, std::size_t n) { last_line = n; });
    for_each_line(text, [&](std::string_view line, std::size_t line_no) {
      try {
        const json j = json::parse(line);
        entries_[{j.at("backend_tag").get<std::string>(),
                  std::stoull(j.at("content_hash").get<std::string>(), nullptr,
                              16)}] = {j.at("id").get<std::string>(),
                                       j.at("perplexity").get<double>()};
      } catch (const std::exception& e) {
        // A torn final line from an interrupted run is dropped.
        if (line_no != last_line) {
          throw Error(ErrorCode::kParseError, file_->string() + ":" +
                                                  std::to_string(line_no) +
                                                  ": " + e.what());
        }
      }
    });
    std::string compacted;
    for (const auto& [key, entry] : entries_) {
      compacted += cache_record(key.first, key.second, entry.example_id,
                                entry.perplexity);
      compacted += '\n';
    }
    write_text_file(*file_, compacted);
  } else if (file_->has_parent_path()) {
    std::filesystem::create_directories(file_->parent_path());
  }
  log_.open(*file_, std::ios::app | std::ios::binary);
  if (!log_) throw Error(ErrorCode::kIo, "cannot open cache " + file_->string());
}

std::optional<double> ScoreCache::get(const std::string& backend_tag,
                                      std::uint64_t hash) const {
  std::shared_lock lock(mutex_);
  auto it = entries_.find({backend_tag, hash});
  if (it == entries_.end()) return std::nullopt;
  return it->second.perplexity;
}

void ScoreCache::put(const std::string& backend_tag, std::uint64_t hash,
                     const std::string& example_id, double perplexity) {
  std::unique_lock lock(mutex_);
  entries_[{backend_tag, hash}] = {example_id, perplexity};
  if (log_.is_open()) {
    log_ << cache_record(backend_tag, hash, example_id, perplexity) << '\n';
    log_.flush();
  }
}

std::size_t ScoreCache::size() const {
  std::shared_lock lock(mutex_);
  return entries_.size();
}

std::size_t ScoreCache::count_for(const std::string& backend_tag) const {
  std::shared_lock lock(mutex_);
  return static_cast<std::size_t>(
      std::count_if(entries_.begin(), entries_.end(),
                    [&](const auto& kv) { return kv.first.first == backend_tag; }));
}

// ---------------------------------------------------------------------------
// Batch scoring

BatchResult batch_score_collect(ScorerBackend& backend,
                                std::span<const Example* const> examples,
                                ScoreCache& cache, std::size_t parallelism,
                                const RetryPolicy& retry) {
  BatchResult result;
  result.stats.requested = examples.size();
  const std::string tag = backend.tag();

  // Misses grouped by content so identical texts are fetched once.
  std::map<std::uint64_t, std::vector<const Example*>> misses;
  for (const Example* ex : examples) {
    const auto hash = content_hash(*ex);
    if (auto hit = cache.get(tag, hash)) {
      result.scores[ex->id] = {ex->id, *hit, tag};
      ++result.stats.cache_hits;
    } else {
      misses[hash].push_back(ex);
    }
  }
  if (misses.empty()) return result;

  struct Job {
    std::uint64_t hash;
    const std::vector<const Example*>* group;
    std::optional<double> value;
    std::string error;
  };
  std::vector<Job> jobs;
  jobs.reserve(misses.size());
  for (const auto& [hash, group] : misses) jobs.push_back({hash, &group, {}, {}});

  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> calls{0};
  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < jobs.size(); i = next.fetch_add(1)) {
      Job& job = jobs[i];
      const Example& ex = *job.group->front();
      for (std::size_t attempt = 0;; ++attempt) {
        try {
          calls.fetch_add(1);
          auto s = backend.score(ex);
          if (!(s.perplexity > 0.0) || !std::isfinite(s.perplexity)) {
            throw Error(ErrorCode::kProtocolError,
                        "backend returned a non-positive perplexity");
          }
          job.value = s.perplexity;
          cache.put(tag, job.hash, ex.id, s.perplexity);
          break;
        } catch (const Error& e) {
          job.error = e.what();
          if (e.code() != ErrorCode::kBackendUnavailable ||
              attempt >= retry.backoff_seconds.size()) {
            break;
          }
          std::this_thread::sleep_for(
              std::chrono::duration<double>(retry.backoff_seconds[attempt]));
        } catch (const std::exception& e) {
          job.error = e.what();
          break;
        }
      }
    }
  };

  const std::size_t n_workers =
      std::clamp<std::size_t>(parallelism, 1, jobs.size());
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> threads;
    threads.reserve(n_workers);
    for (std::size_t t = 0; t < n_workers; ++t) threads.emplace_back(worker);
  }
  result.stats.backend_calls = calls.load();

  for (const auto& job : jobs) {
    for (const Example* ex : *job.group) {
      if (job.value) {
        result.scores[ex->id] = {ex->id, *job.value, tag};
      } else {
        result.failed[ex->id] = job.error;
      }
    }
  }
  return result;
}

std::map<std::string, PerplexityScore> batch_score(
    ScorerBackend& backend, std::span<const Example* const> examples,
    ScoreCache& cache, std::size_t parallelism, const RetryPolicy& retry,
    BatchStats* stats) {
  auto result = batch_score_collect(backend, examples, cache, parallelism, retry);
  if (stats != nullptr) *stats = result.stats;
  if (!result.failed.empty()) {
    std::vector<std::string> ids;
    for (const auto& [id, _] : result.failed) ids.push_back(id);
    throw Error(ErrorCode::kPartialFailure,
                std::to_string(ids.size()) + " of " +
                    std::to_string(examples.size()) +
                    " examples failed to score; first: " +
                    result.failed.begin()->second,
                std::move(ids));
  }
  return std::move(result.scores);
}

}  // namespace iclforge
