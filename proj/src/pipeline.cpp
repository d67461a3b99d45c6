#include "iclforge/pipeline.hpp"

#include "iclforge/error.hpp"

namespace iclforge {

std::string_view to_string(FilterKind f) {
  switch (f) {
    case FilterKind::kNone: return "none";
    case FilterKind::kLpr: return "lpr";
    case FilterKind::kLabelAgreement: return "label_agreement";
    case FilterKind::kGlobalRank: return "global_rank";
  }
  return "?";
}

namespace {

std::vector<std::string> pool_ids(const Dataset& pool) {
  std::vector<std::string> ids;
  ids.reserve(pool.size());
  for (const auto& ex : pool.examples()) ids.push_back(ex.id);
  return ids;
}

}  // namespace

SelectionPipeline::SelectionPipeline(const Dataset& pool,
                                     const EmbeddingMatrix& embeddings,
                                     PipelineConfig cfg, ScorerBackend* scorer,
                                     ScoreCache* cache)
    : pool_(pool),
      embeddings_(embeddings),
      pool_embeddings_(embeddings.subset(pool_ids(pool))),
      cfg_(std::move(cfg)),
      index_(NeighborIndex::build(pool_embeddings_)) {
  cfg_.selector.validate();
  if (cfg_.filter == FilterKind::kNone) return;
  cfg_.lpr.validate();

  if (cfg_.lpr.similarity == SimilarityKind::kBm25) {
    std::vector<std::vector<std::string>> docs;
    docs.reserve(pool.size());
    for (const auto& ex : pool.examples()) docs.push_back(bm25_tokenize(ex.input_text));
    bm25_.emplace(pool_ids(pool), std::move(docs));
  }

  if (cfg_.filter == FilterKind::kLpr || cfg_.filter == FilterKind::kGlobalRank) {
    if (scorer == nullptr || cache == nullptr) {
      throw Error(ErrorCode::kInvalidArgument,
                  std::string(to_string(cfg_.filter)) + " needs a scorer and a cache");
    }
    scores_ = [inner = make_score_provider(*scorer, *cache, pool_.view(),
                                           cfg_.scoring_jobs, cfg_.retry),
               counter = requests_](std::span<const std::string> ids) {
      *counter += ids.size();
      return inner(ids);
    };
  }
  if (cfg_.filter == FilterKind::kLpr) {
    flagger_ = std::make_unique<PerplexityFlagger>(lpr_neighbors(), scores_, cfg_.lpr);
  } else if (cfg_.filter == FilterKind::kLabelAgreement) {
    std::map<std::string, std::string, std::less<>> labels;
    for (const auto& ex : pool.examples()) labels.emplace(ex.id, ex.output_text);
    flagger_ = std::make_unique<LabelAgreementFlagger>(lpr_neighbors(),
                                                       std::move(labels), cfg_.lpr);
  }
}

const NeighborSource& SelectionPipeline::lpr_neighbors() const {
  if (bm25_) return *bm25_;
  return index_;
}

SelectionPipeline::Output SelectionPipeline::run(const Example& test_input,
                                                 std::uint64_t seed) {
  SelectorConfig sel = cfg_.selector;
  sel.seed = seed;
  Output out;
  if (cfg_.filter == FilterKind::kGlobalRank) {
    out.demos = global_rank_filter(index_, embeddings_, test_input, scores_, sel);
    return out;
  }
  DemonstrationSet raw = select(pool_.view(), index_, embeddings_, test_input, sel);
  if (!flagger_) {
    out.demos = std::move(raw);
    return out;
  }
  auto filtered = filter_demonstrations(raw, test_input, lpr_neighbors(), *flagger_,
                                        cfg_.lpr, &embeddings_,
                                        Provenance::kLprFiltered);
  out.demos = std::move(filtered.demos);
  out.records = std::move(filtered.records);
  return out;
}

}  // namespace iclforge
