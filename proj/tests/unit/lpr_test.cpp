#include <doctest.h>

#include <set>

#include "helpers.hpp"
#include "iclforge/lpr.hpp"
#include "iclforge/planted.hpp"

using namespace iclforge;
using testutil::code_of;

namespace {

// Neighborhoods given explicitly, nearest first.
class FixedNeighbors final : public NeighborSource {
 public:
  explicit FixedNeighbors(std::map<std::string, std::vector<std::string>> m)
      : m_(std::move(m)) {}
  NeighborCluster cluster(std::string_view id, std::size_t k) const override {
    auto it = m_.find(std::string(id));
    if (it == m_.end()) throw Error(ErrorCode::kUnknownId, std::string(id));
    if (it->second.size() < k) throw Error(ErrorCode::kNotEnoughNeighbors, "short");
    NeighborCluster c;
    c.candidate_id = std::string(id);
    c.neighbor_ids.assign(it->second.begin(), it->second.begin() + k);
    for (std::size_t i = 0; i < k; ++i) c.similarities.push_back(1.0 - 0.1 * i);
    return c;
  }
  bool contains(std::string_view id) const override {
    return m_.count(std::string(id)) > 0;
  }

 private:
  std::map<std::string, std::vector<std::string>> m_;
};

class MapFlagger final : public Flagger {
 public:
  explicit MapFlagger(std::map<std::string, bool> f) : f_(std::move(f)) {}
  FlagInfo evaluate(const std::string& id) override {
    auto it = f_.find(id);
    if (it == f_.end()) throw Error(ErrorCode::kMissingScore, id, {id});
    return {it->second, it->second ? 0.8 : 0.2};
  }

 private:
  std::map<std::string, bool> f_;
};

NeighborCluster cluster_of(std::string c, std::vector<std::string> n) {
  NeighborCluster out;
  out.candidate_id = std::move(c);
  out.neighbor_ids = std::move(n);
  for (std::size_t i = 0; i < out.neighbor_ids.size(); ++i)
    out.similarities.push_back(1.0 - 0.1 * i);
  return out;
}

LprConfig no_reorder() {
  LprConfig cfg;
  cfg.reorder = false;
  return cfg;
}

}  // namespace

TEST_CASE("local rank positions") {
  auto cl = cluster_of("c", {"n1", "n2", "n3", "n4"});
  auto r = local_rank("c", cl, {{"c", 1.0}, {"n1", 8}, {"n2", 8.5}, {"n3", 9}, {"n4", 12}});
  CHECK(r.position("c") == 0);

  auto tie = local_rank("c", cl, {{"c", 5}, {"n1", 5}, {"n2", 5}, {"n3", 5}, {"n4", 5}});
  CHECK(tie.sorted_ids == std::vector<std::string>{"c", "n1", "n2", "n3", "n4"});

  auto r3 = local_rank("c", cl, {{"c", 11.0}, {"n1", 8.0}, {"n2", 8.5}, {"n3", 9.0}, {"n4", 12.0}});
  CHECK(r3.position("c") == 3);

  try {
    local_rank("c", cl, {{"c", 1.0}, {"n1", 2.0}, {"n3", 3.0}});
    FAIL("no throw");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kMissingScore);
    CHECK(e.ids() == std::vector<std::string>{"n2", "n4"});
  }
}

TEST_CASE("rank fraction threshold") {
  auto cl = cluster_of("c", {"n1", "n2", "n3", "n4"});
  LprConfig cfg;
  auto at3 = local_rank("c", cl, {{"c", 11.0}, {"n1", 8.0}, {"n2", 8.5}, {"n3", 9.0}, {"n4", 12.0}});
  CHECK(rank_fraction(at3, "c", cfg) == doctest::Approx(0.6));
  CHECK(flag_candidate(at3, "c", cfg));
  auto at2 = local_rank("c", cl, {{"c", 8.7}, {"n1", 8.0}, {"n2", 8.5}, {"n3", 9.0}, {"n4", 12.0}});
  CHECK(rank_fraction(at2, "c", cfg) == doctest::Approx(0.4));
  CHECK_FALSE(flag_candidate(at2, "c", cfg));

  // gamma = 1 is unreachable with zero-based ranks.
  cfg.gamma = 1.0;
  auto last = local_rank("c", cl, {{"c", 99.0}, {"n1", 1}, {"n2", 2}, {"n3", 3}, {"n4", 4}});
  CHECK_FALSE(flag_candidate(last, "c", cfg));
  cfg.rank_base = RankBase::kOneBased;
  CHECK(flag_candidate(last, "c", cfg));

  // Exactly at the threshold flags, regardless of how gamma rounds.
  LprConfig g;
  g.gamma = 0.6;
  CHECK(flag_candidate(at3, "c", g));
}

TEST_CASE("substitution rules") {
  auto cl = cluster_of("c", {"n1", "n2", "n3", "n4"});
  std::map<std::string, bool, std::less<>> flags{
      {"c", false}, {"n1", false}, {"n2", false}, {"n3", true}, {"n4", false}};
  auto clean = substitute("c", cl, flags);
  CHECK_FALSE(clean.flag);
  CHECK_FALSE(clean.replacement_id.has_value());

  flags["c"] = true;
  auto swapped = substitute("c", cl, flags, {}, 0.8);
  CHECK(swapped.flag);
  CHECK(swapped.replacement_id == "n1");
  CHECK(swapped.rank_fraction == 0.8);

  auto skip_used = substitute("c", cl, flags, {"n1"});
  CHECK(skip_used.replacement_id == "n2");

  for (auto& [id, f] : flags) f = true;
  auto stuck = substitute("c", cl, flags);
  CHECK(stuck.flag);
  CHECK_FALSE(stuck.replacement_id.has_value());

  std::map<std::string, bool, std::less<>> partial{{"c", true}};
  CHECK(code_of([&] { substitute("c", cl, partial); }) == ErrorCode::kInvalidArgument);
}

TEST_CASE("all-noisy cluster keeps the original") {
  FixedNeighbors nb({{"a", {"b", "c", "d", "e"}},
                     {"b", {"a", "c", "d", "e"}},
                     {"c", {"a", "b", "d", "e"}},
                     {"d", {"a", "b", "c", "e"}},
                     {"e", {"a", "b", "c", "d"}}});
  ScoreMap scores{{"a", 14}, {"b", 10}, {"c", 11}, {"d", 12}, {"e", 13}};
  auto provider = [&](std::span<const std::string> ids) {
    ScoreMap out;
    for (auto& id : ids) out[id] = scores.at(id);
    return out;
  };
  DemonstrationSet raw{"t", {"a"}, Provenance::kRaw};
  Example test = testutil::ex("t", "q", "a");

  // gamma = 0 flags every item, so no neighbor is clean.
  LprConfig strict = no_reorder();
  strict.gamma = 0.0;
  PerplexityFlagger all_flagged(nb, provider, strict);
  auto r = filter_demonstrations(raw, test, nb, all_flagged, strict, nullptr);
  CHECK(r.demos.demo_ids == std::vector<std::string>{"a"});
  CHECK(r.records[0].flag);
  CHECK_FALSE(r.records[0].replacement_id.has_value());

  // With the default gamma, a ranks last and b ranks first in its own cluster.
  PerplexityFlagger flagger(nb, provider, no_reorder());
  auto normal = filter_demonstrations(raw, test, nb, flagger, no_reorder(), nullptr);
  CHECK(normal.demos.demo_ids == std::vector<std::string>{"b"});
  CHECK(normal.records[0].rank_fraction == doctest::Approx(0.8));
}

TEST_CASE("colliding replacements take the next clean neighbor") {
  std::map<std::string, std::vector<std::string>> m;
  std::map<std::string, bool> flags;
  std::vector<std::string> raw_ids;
  for (int i = 0; i < 8; ++i) {
    const auto id = "d" + std::to_string(i);
    raw_ids.push_back(id);
    m[id] = {"x" + std::to_string(i), "y" + std::to_string(i), "z0", "z1"};
    flags[id] = false;
  }
  // d0 and d1 are flagged and share nearest clean neighbor s, then t.
  m["d0"] = {"s", "t", "u", "v"};
  m["d1"] = {"s", "t", "u", "v"};
  flags["d0"] = flags["d1"] = true;
  for (auto id : {"s", "t", "u", "v"}) flags[id] = false;
  FixedNeighbors nb(m);
  MapFlagger flagger(flags);
  DemonstrationSet raw{"t", raw_ids, Provenance::kRaw};
  auto r = filter_demonstrations(raw, testutil::ex("q", "q", "a"), nb, flagger,
                                 no_reorder(), nullptr);
  CHECK(r.records[0].replacement_id == "s");
  CHECK(r.records[1].replacement_id == "t");
  std::set<std::string> distinct(r.demos.demo_ids.begin(), r.demos.demo_ids.end());
  CHECK(distinct.size() == 8);
  CHECK(r.demos.provenance == Provenance::kLprFiltered);
}

TEST_CASE("a neighbor already in the raw set is never used as a replacement") {
  FixedNeighbors nb({{"a", {"b", "c", "d", "e"}}, {"b", {"a", "c", "d", "e"}}});
  MapFlagger flagger({{"a", true}, {"b", false}, {"c", false}});
  DemonstrationSet raw{"t", {"a", "b"}, Provenance::kRaw};
  auto r = filter_demonstrations(raw, testutil::ex("q", "q", "a"), nb, flagger,
                                 no_reorder(), nullptr);
  CHECK(r.demos.demo_ids == std::vector<std::string>{"c", "b"});
}

TEST_CASE("evaluation errors leave the candidate in place and recorded") {
  FixedNeighbors nb({{"a", {"b", "c", "d", "e"}}});
  MapFlagger flagger({{"a", false}});
  DemonstrationSet raw{"t", {"a", "ghost"}, Provenance::kRaw};
  auto r = filter_demonstrations(raw, testutil::ex("q", "q", "a"), nb, flagger,
                                 no_reorder(), nullptr);
  CHECK(r.demos.demo_ids == raw.demo_ids);
  CHECK_FALSE(r.records[0].error.has_value());
  CHECK(r.records[1].error.has_value());

  LprConfig cfg;
  CHECK(code_of([&] {
          filter_demonstrations(raw, testutil::ex("q", "q", "a"), nb, flagger, cfg, nullptr);
        }) == ErrorCode::kMissingEmbedding);
}

TEST_CASE("label agreement") {
  FixedNeighbors nb({{"a", {"b", "c", "d", "e"}},
                     {"b", {"a", "c", "d", "e"}},
                     {"c", {"a", "b", "d", "e"}},
                     {"d", {"a", "b", "c", "e"}},
                     {"e", {"a", "b", "c", "d"}}});
  DemonstrationSet raw{"t", {"a"}, Provenance::kRaw};
  auto test = testutil::ex("q", "q", "a");

  std::map<std::string, std::string, std::less<>> same{
      {"a", "pos"}, {"b", "pos"}, {"c", "pos"}, {"d", "pos"}, {"e", "pos"}};
  auto r1 = label_agreement_filter(raw, test, nb, same, no_reorder(), nullptr);
  CHECK(r1.demos.demo_ids == raw.demo_ids);
  CHECK_FALSE(r1.records[0].flag);

  auto odd = same;
  odd["a"] = "neg";
  auto r2 = label_agreement_filter(raw, test, nb, odd, no_reorder(), nullptr);
  CHECK(r2.records[0].flag);
  CHECK(r2.demos.demo_ids == std::vector<std::string>{"b"});

  std::map<std::string, std::string, std::less<>> split{
      {"a", "neg"}, {"b", "pos"}, {"c", "pos"}, {"d", "neu"}, {"e", "neu"}};
  auto r3 = label_agreement_filter(raw, test, nb, split, no_reorder(), nullptr);
  CHECK_FALSE(r3.records[0].flag);

  std::map<std::string, std::string, std::less<>> missing{{"a", "pos"}};
  auto r4 = label_agreement_filter(raw, test, nb, missing, no_reorder(), nullptr);
  CHECK(r4.records[0].error.has_value());
  CHECK(r4.demos.demo_ids == raw.demo_ids);
}

TEST_CASE("reorder by similarity") {
  // Unit vectors at known cosines to the query (1, 0).
  auto at = [](double c) {
    return std::vector<float>{static_cast<float>(c),
                              static_cast<float>(std::sqrt(1 - c * c))};
  };
  std::vector<float> v{1, 0};
  std::vector<std::string> ids{"q", "hi", "lo", "mid", "same1", "same2"};
  for (double c : {0.9, 0.1, 0.5, 0.3, 0.3}) {
    auto r = at(c);
    v.insert(v.end(), r.begin(), r.end());
  }
  EmbeddingMatrix m(ids, 2, v);
  auto q = testutil::ex("q", "q", "a");
  DemonstrationSet three{"q", {"hi", "lo", "mid"}, Provenance::kRaw};
  CHECK(reorder_by_similarity(three, q, m).demo_ids ==
        std::vector<std::string>{"lo", "mid", "hi"});
  DemonstrationSet single{"q", {"mid"}, Provenance::kRaw};
  CHECK(reorder_by_similarity(single, q, m).demo_ids == single.demo_ids);
  DemonstrationSet tied{"q", {"same2", "same1"}, Provenance::kRaw};
  CHECK(reorder_by_similarity(tied, q, m).demo_ids == tied.demo_ids);
  DemonstrationSet bad{"q", {"nope"}, Provenance::kRaw};
  CHECK(code_of([&] { reorder_by_similarity(bad, q, m); }) == ErrorCode::kMissingEmbedding);
}

TEST_CASE("noise-free planted pool with distinct scores passes through") {
  PlantedConfig pc;
  pc.clusters = 4;
  pc.per_cluster = 12;
  pc.noise_rate = 0.0;
  pc.sigma = 0.0;
  pc.seed = 3;
  auto corpus = make_planted_corpus(pc);
  auto idx = NeighborIndex::build(corpus.embeddings.subset(
      [&] {
        std::vector<std::string> ids;
        for (auto& e : corpus.pool.examples()) ids.push_back(e.id);
        return ids;
      }()));
  // Every cluster shares one base, so give each item a strictly increasing
  // score and let gamma = 1 make flags unreachable.
  ScoreMap scores;
  double s = 1.0;
  for (auto& e : corpus.pool.examples()) scores[e.id] = (s += 0.01);
  LprConfig cfg;
  cfg.gamma = 1.0;
  PerplexityFlagger flagger(idx, [&](std::span<const std::string> ids) {
    ScoreMap out;
    for (auto& id : ids) out[id] = scores.at(id);
    return out;
  }, cfg);
  for (const auto& t : corpus.test.examples()) {
    SelectorConfig sc;
    sc.k_demos = 8;
    auto raw = select_topk(idx, t, corpus.embeddings, sc);
    auto r = filter_demonstrations(raw, t, idx, flagger, cfg, &corpus.embeddings);
    CHECK(std::set<std::string>(r.demos.demo_ids.begin(), r.demos.demo_ids.end()) ==
          std::set<std::string>(raw.demo_ids.begin(), raw.demo_ids.end()));
  }
}

TEST_CASE("global rank filter") {
  std::vector<std::string> ids;
  std::vector<float> v;
  for (int i = 0; i < 20; ++i) {
    ids.push_back("g" + std::to_string(10 + i));
    v.push_back(1.0f);
    v.push_back(0.05f * i);
  }
  ids.push_back("query");
  v.push_back(1.0f);
  v.push_back(0.0f);
  EmbeddingMatrix m(ids, 2, v);
  std::vector<std::string> pool_ids(ids.begin(), ids.end() - 1);
  auto idx = NeighborIndex::build(m.subset(pool_ids));
  ScoreMap scores;
  for (int i = 0; i < 20; ++i) scores["g" + std::to_string(10 + i)] = 100.0 - 3.0 * ((i * 7) % 20);
  auto provider = [&](std::span<const std::string> ask) {
    ScoreMap out;
    for (auto& id : ask)
      if (auto it = scores.find(id); it != scores.end()) out[id] = it->second;
    return out;
  };
  auto q = testutil::ex("query", "q", "a");

  SelectorConfig cfg;
  cfg.k_demos = 5;
  cfg.candidate_pool_size = 5;
  auto topk = select_topk(idx, q, m, cfg);
  auto same = global_rank_filter(idx, m, q, provider, cfg);
  CHECK(std::set<std::string>(same.demo_ids.begin(), same.demo_ids.end()) ==
        std::set<std::string>(topk.demo_ids.begin(), topk.demo_ids.end()));

  cfg.candidate_pool_size = 20;
  auto g = global_rank_filter(idx, m, q, provider, cfg);
  std::vector<std::pair<double, std::string>> sorted;
  for (auto& [id, s] : scores) sorted.emplace_back(s, id);
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::string> expect;
  for (int i = 0; i < 5; ++i) expect.push_back(sorted[i].second);
  CHECK(g.demo_ids == expect);
  CHECK(g.provenance == Provenance::kGlobalFiltered);

  scores.erase("g10");
  CHECK(code_of([&] { global_rank_filter(idx, m, q, provider, cfg); }) ==
        ErrorCode::kMissingScore);
}
