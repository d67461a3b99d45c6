#include "iclforge/lpr.hpp"

#include <algorithm>

#include "iclforge/error.hpp"

namespace iclforge {

void LprConfig::validate() const {
  if (k < 1) throw Error(ErrorCode::kInvalidArgument, "LPR k must be >= 1");
  if (!(gamma >= 0.0 && gamma <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "LPR gamma must be in [0, 1]");
  }
}

std::size_t RankList::position(std::string_view id) const {
  auto it = loc.find(id);
  if (it == loc.end()) {
    throw Error(ErrorCode::kUnknownId,
                "id not in rank list: " + std::string(id), {std::string(id)});
  }
  return it->second;
}

RankList local_rank(std::string_view candidate_id, const NeighborCluster& cluster,
                    const ScoreMap& scores) {
  RankList rank;
  rank.cluster_ids.reserve(cluster.neighbor_ids.size() + 1);
  rank.cluster_ids.emplace_back(candidate_id);
  rank.cluster_ids.insert(rank.cluster_ids.end(), cluster.neighbor_ids.begin(),
                          cluster.neighbor_ids.end());

  std::vector<std::string> missing;
  std::vector<std::pair<double, const std::string*>> keyed;
  keyed.reserve(rank.cluster_ids.size());
  for (const auto& id : rank.cluster_ids) {
    auto it = scores.find(id);
    if (it == scores.end()) {
      missing.push_back(id);
    } else {
      keyed.emplace_back(it->second, &id);
    }
  }
  if (!missing.empty()) {
    std::string message = std::to_string(missing.size()) +
                          " cluster member(s) unscored, first " + missing.front();
    throw Error(ErrorCode::kMissingScore, message, std::move(missing));
  }
  std::sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first < b.first;
    return *a.second < *b.second;
  });
  for (std::size_t i = 0; i < keyed.size(); ++i) {
    rank.sorted_ids.push_back(*keyed[i].second);
    rank.loc.emplace(*keyed[i].second, i);
  }
  return rank;
}

double rank_fraction(const RankList& rank, std::string_view candidate_id,
                     const LprConfig& cfg) {
  std::size_t loc = rank.position(candidate_id);
  if (cfg.rank_base == RankBase::kOneBased) ++loc;
  return static_cast<double>(loc) / static_cast<double>(rank.sorted_ids.size());
}

bool flag_candidate(const RankList& rank, std::string_view candidate_id,
                    const LprConfig& cfg) {
  // The tolerance absorbs representation error in gamma (e.g. 0.6 vs 3/5).
  return rank_fraction(rank, candidate_id, cfg) + 1e-12 >= cfg.gamma;
}

namespace {

// Walks the neighbors in similarity order and returns the first that is
// unused and whose flag resolves to false. `flag_of` returns nullopt for a
// neighbor that cannot be judged; such neighbors are skipped.
template <typename FlagFn>
std::optional<std::string> first_clean_neighbor(
    const NeighborCluster& cluster,
    const std::set<std::string, std::less<>>& in_use, FlagFn&& flag_of) {
  for (const auto& id : cluster.neighbor_ids) {
    if (in_use.contains(id)) continue;
    std::optional<bool> flagged = flag_of(id);
    if (flagged && !*flagged) return id;
  }
  return std::nullopt;
}

}  // namespace

SubstitutionRecord substitute(
    std::string_view candidate_id, const NeighborCluster& cluster,
    const std::map<std::string, bool, std::less<>>& flags,
    const std::set<std::string, std::less<>>& in_use,
    double candidate_rank_fraction) {
  auto own = flags.find(candidate_id);
  if (own == flags.end()) {
    throw Error(ErrorCode::kInvalidArgument,
                "no flag for candidate " + std::string(candidate_id),
                {std::string(candidate_id)});
  }
  SubstitutionRecord record;
  record.original_id = std::string(candidate_id);
  record.flag = own->second;
  record.rank_fraction = candidate_rank_fraction;
  if (!record.flag) return record;
  record.replacement_id =
      first_clean_neighbor(cluster, in_use, [&](const std::string& id) {
        auto it = flags.find(id);
        if (it == flags.end()) {
          throw Error(ErrorCode::kInvalidArgument, "no flag for neighbor " + id,
                      {id});
        }
        return std::optional<bool>(it->second);
      });
  return record;
}

// ---------------------------------------------------------------------------

PerplexityFlagger::PerplexityFlagger(const NeighborSource& neighbors,
                                     ScoreProvider scores, LprConfig cfg)
    : neighbors_(neighbors), scores_(std::move(scores)), cfg_(cfg) {
  cfg_.validate();
}

RankList PerplexityFlagger::rank_of(const std::string& id) {
  auto cluster = neighbors_.cluster(id, cfg_.k);
  std::vector<std::string> members;
  members.reserve(cfg_.k + 1);
  members.push_back(id);
  members.insert(members.end(), cluster.neighbor_ids.begin(),
                 cluster.neighbor_ids.end());
  const ScoreMap scores = scores_(members);
  return local_rank(id, cluster, scores);
}

FlagInfo PerplexityFlagger::evaluate(const std::string& id) {
  {
    std::lock_guard lock(mutex_);
    if (auto it = memo_.find(id); it != memo_.end()) return it->second;
  }
  const RankList rank = rank_of(id);
  FlagInfo info{flag_candidate(rank, id, cfg_), rank_fraction(rank, id, cfg_)};
  std::lock_guard lock(mutex_);
  memo_.emplace(id, info);
  return info;
}

LabelAgreementFlagger::LabelAgreementFlagger(
    const NeighborSource& neighbors,
    std::map<std::string, std::string, std::less<>> labels, LprConfig cfg)
    : neighbors_(neighbors), labels_(std::move(labels)), cfg_(cfg) {
  cfg_.validate();
}

const std::string& LabelAgreementFlagger::label_of(std::string_view id) const {
  auto it = labels_.find(id);
  if (it == labels_.end()) {
    throw Error(ErrorCode::kMissingLabel, "no label for " + std::string(id),
                {std::string(id)});
  }
  return it->second;
}

FlagInfo LabelAgreementFlagger::evaluate(const std::string& id) {
  {
    std::lock_guard lock(mutex_);
    if (auto it = memo_.find(id); it != memo_.end()) return it->second;
  }
  const std::string& own = label_of(id);
  const auto cluster = neighbors_.cluster(id, cfg_.k);
  std::map<std::string, std::size_t> counts;
  std::size_t disagree = 0;
  for (const auto& n : cluster.neighbor_ids) {
    const auto& label = label_of(n);
    ++counts[label];
    if (label != own) ++disagree;
  }
  std::size_t best = 0;
  std::size_t n_best = 0;
  const std::string* majority = nullptr;
  for (const auto& [label, count] : counts) {
    if (count > best) {
      best = count;
      n_best = 1;
      majority = &label;
    } else if (count == best) {
      ++n_best;
    }
  }
  FlagInfo info;
  info.flagged = n_best == 1 && majority != nullptr && *majority != own;
  info.rank_fraction = cluster.neighbor_ids.empty()
                           ? 0.0
                           : static_cast<double>(disagree) /
                                 static_cast<double>(cluster.neighbor_ids.size());
  std::lock_guard lock(mutex_);
  memo_.emplace(id, info);
  return info;
}

// ---------------------------------------------------------------------------

DemonstrationSet reorder_by_similarity(const DemonstrationSet& demos,
                                       const Example& test_input,
                                       const EmbeddingMatrix& embeddings) {
  const auto query = embeddings.row(test_input.id);
  std::vector<std::pair<double, std::string>> keyed;
  keyed.reserve(demos.demo_ids.size());
  for (const auto& id : demos.demo_ids) {
    keyed.emplace_back(cosine_similarity(query, embeddings.row(id)), id);
  }
  std::stable_sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) {
    return a.first < b.first;
  });
  DemonstrationSet out = demos;
  for (std::size_t i = 0; i < keyed.size(); ++i) out.demo_ids[i] = keyed[i].second;
  return out;
}

LprResult filter_demonstrations(const DemonstrationSet& raw,
                                const Example& test_input,
                                const NeighborSource& neighbors, Flagger& flagger,
                                const LprConfig& cfg,
                                const EmbeddingMatrix* reorder_space,
                                Provenance provenance) {
  cfg.validate();
  if (cfg.reorder && reorder_space == nullptr) {
    throw Error(ErrorCode::kMissingEmbedding,
                "reordering needs embeddings for the test input and pool");
  }
  std::set<std::string, std::less<>> in_use(raw.demo_ids.begin(),
                                            raw.demo_ids.end());
  LprResult result;
  result.demos.test_id = raw.test_id;
  result.demos.provenance = provenance;

  for (const auto& candidate : raw.demo_ids) {
    SubstitutionRecord record;
    record.original_id = candidate;
    try {
      const FlagInfo own = flagger.evaluate(candidate);
      record.flag = own.flagged;
      record.rank_fraction = own.rank_fraction;
      if (own.flagged) {
        const auto cluster = neighbors.cluster(candidate, cfg.k);
        record.replacement_id = first_clean_neighbor(
            cluster, in_use, [&](const std::string& id) -> std::optional<bool> {
              try {
                return flagger.evaluate(id).flagged;
              } catch (const Error&) {
                return std::nullopt;
              }
            });
      }
    } catch (const Error& e) {
      record.error = e.what();
    }
    if (record.replacement_id) {
      in_use.insert(*record.replacement_id);
      result.demos.demo_ids.push_back(*record.replacement_id);
    } else {
      result.demos.demo_ids.push_back(candidate);
    }
    result.records.push_back(std::move(record));
  }
  if (cfg.reorder) {
    result.demos = reorder_by_similarity(result.demos, test_input, *reorder_space);
  }
  return result;
}

ScoreProvider make_score_provider(ScorerBackend& backend, ScoreCache& cache,
                                  const PoolView& pool, std::size_t parallelism,
                                  RetryPolicy retry) {
  return [&backend, &cache, pool, parallelism,
          retry = std::move(retry)](std::span<const std::string> ids) {
    std::vector<const Example*> examples;
    examples.reserve(ids.size());
    for (const auto& id : ids) examples.push_back(&pool.at(id));
    auto scored = batch_score(backend, examples, cache, parallelism, retry);
    ScoreMap out;
    for (const auto& [id, s] : scored) out.emplace(id, s.perplexity);
    return out;
  };
}

LprResult lpr_filter(const DemonstrationSet& raw, const Example& test_input,
                     const NeighborSource& neighbors, ScorerBackend& backend,
                     ScoreCache& cache, const PoolView& pool,
                     const LprConfig& cfg, const EmbeddingMatrix* reorder_space,
                     std::size_t parallelism) {
  PerplexityFlagger flagger(
      neighbors, make_score_provider(backend, cache, pool, parallelism), cfg);
  return filter_demonstrations(raw, test_input, neighbors, flagger, cfg,
                               reorder_space, Provenance::kLprFiltered);
}

LprResult label_agreement_filter(
    const DemonstrationSet& raw, const Example& test_input,
    const NeighborSource& neighbors,
    const std::map<std::string, std::string, std::less<>>& labels,
    const LprConfig& cfg, const EmbeddingMatrix* reorder_space) {
  LabelAgreementFlagger flagger(neighbors, labels, cfg);
  return filter_demonstrations(raw, test_input, neighbors, flagger, cfg,
                               reorder_space, Provenance::kLprFiltered);
}

DemonstrationSet global_rank_filter(const NeighborIndex& index,
                                    const EmbeddingMatrix& queries,
                                    const Example& test_input,
                                    const ScoreProvider& scores,
                                    const SelectorConfig& cfg) {
  cfg.validate();
  auto candidates = index.nearest(queries.row(test_input.id),
                                  cfg.candidate_pool_size, test_input.id);
  if (candidates.size() < cfg.k_demos) {
    throw Error(ErrorCode::kPoolTooSmall,
                "pool cannot supply K=" + std::to_string(cfg.k_demos));
  }
  std::vector<std::string> ids;
  ids.reserve(candidates.size());
  for (auto& s : candidates) ids.push_back(std::move(s.id));
  const ScoreMap scored = scores(ids);

  std::vector<std::string> missing;
  std::vector<std::pair<double, std::string>> keyed;
  for (const auto& id : ids) {
    auto it = scored.find(id);
    if (it == scored.end()) {
      missing.push_back(id);
    } else {
      keyed.emplace_back(it->second, id);
    }
  }
  if (!missing.empty()) {
    throw Error(ErrorCode::kMissingScore, "unscored global candidates",
                std::move(missing));
  }
  std::sort(keyed.begin(), keyed.end());
  DemonstrationSet out;
  out.test_id = test_input.id;
  out.provenance = Provenance::kGlobalFiltered;
  for (std::size_t i = 0; i < cfg.k_demos; ++i) {
    out.demo_ids.push_back(keyed[i].second);
  }
  return out;
}

}  // namespace iclforge
