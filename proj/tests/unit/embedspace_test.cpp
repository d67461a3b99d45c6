#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "helpers.hpp"
#include "iclforge/bm25.hpp"
#include "iclforge/embedspace.hpp"

using namespace iclforge;
using testutil::code_of;

namespace {

EmbeddingMatrix random_matrix(std::size_t n, std::size_t dim, unsigned seed) {
  std::mt19937 gen(seed);
  std::normal_distribution<float> dist;
  std::vector<std::string> ids;
  std::vector<float> values;
  for (std::size_t i = 0; i < n; ++i) {
    ids.push_back("r" + std::to_string(10000 + i));
    for (std::size_t d = 0; d < dim; ++d) values.push_back(dist(gen));
  }
  return EmbeddingMatrix(ids, dim, values);
}

// Independent scan: double-precision cosine, sort by (-sim, id).
std::vector<std::string> scan(const EmbeddingMatrix& m, const std::string& id,
                              std::size_t k) {
  auto q = m.row(std::string_view(id));
  std::vector<std::pair<double, std::string>> all;
  for (std::size_t i = 0; i < m.rows(); ++i) {
    if (m.ids()[i] == id) continue;
    double dot = 0, na = 0, nb = 0;
    for (std::size_t d = 0; d < m.dim(); ++d) {
      dot += double(q[d]) * m.row(i)[d];
      na += double(q[d]) * q[d];
      nb += double(m.row(i)[d]) * m.row(i)[d];
    }
    all.emplace_back(-dot / std::sqrt(na * nb), m.ids()[i]);
  }
  std::sort(all.begin(), all.end());
  std::vector<std::string> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(all[i].second);
  return out;
}

}  // namespace

TEST_CASE("cosine similarity examples") {
  std::vector<double> v{0.3, -2.0, 5.0};
  CHECK(cosine_similarity(v, v) == doctest::Approx(1.0).epsilon(1e-12));
  std::vector<double> x{1, 0}, y{0, 1};
  CHECK(cosine_similarity(x, y) == 0.0);
  std::vector<double> a{1, 2, 3}, b{4, 5, 6};
  CHECK(std::abs(cosine_similarity(a, b) - 32.0 / (std::sqrt(14.0) * std::sqrt(77.0))) <
        1e-9);
  CHECK(std::abs(cosine_similarity(a, b) - 0.974631846) < 1e-9);
}

TEST_CASE("cosine symmetry, scale invariance, clamping, errors") {
  std::mt19937 gen(5);
  std::uniform_real_distribution<double> u(-3, 3);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> a(7), b(7), sa(7);
    for (auto& x : a) x = u(gen);
    for (auto& x : b) x = u(gen);
    const double alpha = std::abs(u(gen)) + 0.01;
    for (int i = 0; i < 7; ++i) sa[i] = alpha * a[i];
    CHECK(std::abs(cosine_similarity(a, b) - cosine_similarity(b, a)) < 1e-12);
    CHECK(std::abs(cosine_similarity(sa, b) - cosine_similarity(a, b)) < 1e-9);
    const double c = cosine_similarity(a, a);
    CHECK(c <= 1.0);
    CHECK(c >= -1.0);
  }
  std::vector<double> a{1, 2}, b{1, 2, 3}, z{0, 0};
  CHECK(code_of([&] { cosine_similarity(a, b); }) == ErrorCode::kDimensionMismatch);
  CHECK(code_of([&] { cosine_similarity(a, z); }) == ErrorCode::kZeroVector);
}

TEST_CASE("embedding matrix validation") {
  CHECK(code_of([] { EmbeddingMatrix({"a", "a"}, 1, {1.f, 2.f}); }) ==
        ErrorCode::kDuplicateId);
  CHECK(code_of([] { EmbeddingMatrix({"a"}, 2, {1.f}); }) ==
        ErrorCode::kDimensionMismatch);
  CHECK(code_of([] { EmbeddingMatrix({"a"}, 1, {NAN}); }) ==
        ErrorCode::kInvalidArgument);
  EmbeddingMatrix m({"a", "b"}, 2, {3.f, 4.f, 0.f, 2.f});
  CHECK_FALSE(m.normalized());
  auto n = m.normalized_copy();
  CHECK(n.normalized());
  CHECK(n.row(std::string_view("a"))[0] == doctest::Approx(0.6));
  CHECK(code_of([&] { m.row(std::string_view("zz")); }) == ErrorCode::kMissingEmbedding);
  CHECK(code_of([] { EmbeddingMatrix({"z"}, 1, {0.f}).normalized_copy(); }) ==
        ErrorCode::kZeroVector);
}

TEST_CASE("embedding files: jsonl and packed agree") {
  auto dir = testutil::scratch("emb_io");
  auto m = random_matrix(12, 5, 1);
  save_embeddings_jsonl(m, dir / "e.jsonl");
  save_embeddings_packed(m, dir / "e.f32");
  auto a = load_embeddings(dir / "e.jsonl");
  auto b = load_embeddings(dir / "e.f32");
  CHECK(a.ids() == m.ids());
  CHECK(b.ids() == m.ids());
  CHECK(std::equal(a.values().begin(), a.values().end(), m.values().begin()));
  CHECK(std::equal(b.values().begin(), b.values().end(), m.values().begin()));
  CHECK(code_of([&] { load_embeddings(dir / "absent.jsonl"); }) == ErrorCode::kIo);
}

TEST_CASE("bm25 scoring") {
  std::vector<std::vector<std::string>> docs{{"apple"}, {"banana"}};
  auto params = Bm25Params::fit(docs);
  std::vector<std::string> q{"apple"};
  CHECK(bm25_score(q, std::vector<std::string>{"banana"}, params) == 0.0);
  // idf(n=1, N=2) = ln(1 + 1.5/1.5); tf saturation with tf = 1 and len = avglen.
  const double k1 = 1.2, b = 0.75;
  const double expect =
      std::log(1.0 + (2 - 1 + 0.5) / (1 + 0.5)) * (k1 + 1) * 1 / (1 + k1 * (1 - b + b * 1.0));
  CHECK(bm25_score(q, docs[0], params) == doctest::Approx(expect).epsilon(1e-12));

  CHECK(code_of([&] { bm25_score(q, docs[0], Bm25Params{}); }) ==
        ErrorCode::kUnfittedParams);
}

TEST_CASE("bm25 argmax over a toy corpus matches hand scoring") {
  std::vector<std::string> raw{"the cat sat on the mat", "dogs chase cats",
                               "a cat and a dog", "stock markets fell sharply",
                               "the dog sat"};
  std::vector<std::vector<std::string>> docs;
  for (auto& r : raw) docs.push_back(bm25_tokenize(r));
  auto params = Bm25Params::fit(docs);
  auto q = bm25_tokenize("Cat sat!");

  double avg = 0;
  for (auto& d : docs) avg += d.size();
  avg /= docs.size();
  auto hand = [&](const std::vector<std::string>& d) {
    double s = 0;
    for (auto& term : q) {
      double n = 0;
      for (auto& other : docs) n += std::count(other.begin(), other.end(), term) > 0;
      const double tf = std::count(d.begin(), d.end(), term);
      const double idf = std::log(1 + (docs.size() - n + 0.5) / (n + 0.5));
      s += idf * tf * 2.2 / (tf + 1.2 * (0.25 + 0.75 * d.size() / avg));
    }
    return s;
  };
  std::size_t best_lib = 0, best_hand = 0;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    CHECK(bm25_score(q, docs[i], params) == doctest::Approx(hand(docs[i])));
    if (bm25_score(q, docs[i], params) > bm25_score(q, docs[best_lib], params)) best_lib = i;
    if (hand(docs[i]) > hand(docs[best_hand])) best_hand = i;
  }
  CHECK(best_lib == best_hand);
  CHECK(best_lib == 0);
}

TEST_CASE("bm25 monotone in matched term frequency") {
  std::vector<std::vector<std::string>> docs{{"x", "y", "z", "w"}, {"y", "y"}, {"q"}};
  auto params = Bm25Params::fit(docs);
  std::vector<std::string> q{"x"};
  double prev = -1;
  for (int occurrences = 0; occurrences <= 6; ++occurrences) {
    std::vector<std::string> d(6, "filler");
    for (int i = 0; i < occurrences; ++i) d[i] = "x";
    const double s = bm25_score(q, d, params);
    CHECK(s >= prev);
    prev = s;
  }
}

TEST_CASE("bm25 index neighborhoods") {
  Bm25Index idx({"a", "b", "c"},
                {{"red", "apple"}, {"red", "apple", "pie"}, {"blue", "sky"}});
  auto c = idx.cluster("a", 1);
  CHECK(c.neighbor_ids == std::vector<std::string>{"b"});
  CHECK(code_of([&] { idx.cluster("a", 3); }) == ErrorCode::kNotEnoughNeighbors);
  CHECK(code_of([&] { idx.cluster("nope", 1); }) == ErrorCode::kUnknownId);
}

TEST_CASE("index degenerate cases") {
  CHECK(code_of([] { NeighborIndex::build(EmbeddingMatrix{}); }) ==
        ErrorCode::kEmptyMatrix);
  auto one = NeighborIndex::build(EmbeddingMatrix({"solo"}, 2, {1.f, 0.f}));
  CHECK(code_of([&] { one.knn_query("solo", 1); }) == ErrorCode::kNotEnoughNeighbors);
  CHECK(code_of([&] { one.knn_query("ghost", 1); }) == ErrorCode::kUnknownId);
}

TEST_CASE("index agrees with brute force and an independent scan") {
  auto m = random_matrix(1000, 16, 9);
  auto idx = NeighborIndex::build(m);
  std::mt19937 gen(2);
  for (int t = 0; t < 50; ++t) {
    const auto& id = m.ids()[gen() % m.rows()];
    for (std::size_t k : {1u, 4u, 16u}) {
      auto got = idx.knn_query(id, k);
      auto ref = brute_force_knn(m, id, k);
      CHECK(got.neighbor_ids == ref.neighbor_ids);
      CHECK(got.neighbor_ids == scan(m, id, k));
      CHECK(got.neighbor_ids.size() == k);
      CHECK(std::find(got.neighbor_ids.begin(), got.neighbor_ids.end(), id) ==
            got.neighbor_ids.end());
      CHECK(std::is_sorted(got.similarities.rbegin(), got.similarities.rend()));
    }
  }
}

TEST_CASE("duplicates come first, tied by id") {
  EmbeddingMatrix m({"c", "dup2", "dup1", "far"}, 2,
                    {1.f, 1.f, 1.f, 1.f, 1.f, 1.f, -1.f, 0.2f});
  auto idx = NeighborIndex::build(m);
  auto c = idx.knn_query("c", 2);
  CHECK(c.neighbor_ids == std::vector<std::string>{"dup1", "dup2"});
  CHECK(c.similarities[0] == doctest::Approx(1.0));
  CHECK(brute_force_knn(m, "c", 2).neighbor_ids == c.neighbor_ids);
  auto k4 = idx.knn_query("far", 3);
  CHECK(k4.neighbor_ids.size() == 3);
}

TEST_CASE("gaussian clusters fill neighborhoods with cluster mates") {
  std::mt19937 gen(4);
  std::normal_distribution<float> noise(0, 0.01f);
  std::vector<std::string> ids;
  std::vector<float> values;
  for (int c = 0; c < 4; ++c) {
    for (int i = 0; i < 5; ++i) {
      ids.push_back("g" + std::to_string(c) + "_" + std::to_string(i));
      for (int d = 0; d < 4; ++d) values.push_back((d == c ? 1.f : 0.f) + noise(gen));
    }
  }
  EmbeddingMatrix m(ids, 4, values);
  auto idx = NeighborIndex::build(m);
  for (const auto& id : ids) {
    auto c = idx.knn_query(id, 4);
    for (const auto& n : c.neighbor_ids) CHECK(n.substr(0, 2) == id.substr(0, 2));
    CHECK(c.neighbor_ids == brute_force_knn(m, id, 4).neighbor_ids);
  }
}
