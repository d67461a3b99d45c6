#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include <Eigen/Dense>

#include "helpers.hpp"
#include "iclforge/selectors.hpp"

using namespace iclforge;
using testutil::code_of;

namespace {

EmbeddingMatrix random_matrix(std::size_t n, std::size_t dim, unsigned seed,
                              const std::string& prefix = "p") {
  std::mt19937 gen(seed);
  std::normal_distribution<float> dist;
  std::vector<std::string> ids;
  std::vector<float> values;
  for (std::size_t i = 0; i < n; ++i) {
    ids.push_back(prefix + std::to_string(1000 + i));
    for (std::size_t d = 0; d < dim; ++d) values.push_back(dist(gen));
  }
  return EmbeddingMatrix(ids, dim, values);
}

DppKernel kernel_from(const Eigen::MatrixXd& L) {
  DppKernel k;
  for (int i = 0; i < L.rows(); ++i) k.item_ids.push_back("k" + std::to_string(i));
  k.matrix = L;
  return k;
}

Eigen::MatrixXd random_psd(int n, unsigned seed) {
  std::mt19937 gen(seed);
  std::normal_distribution<double> dist;
  Eigen::MatrixXd B(n, n + 2);
  for (int i = 0; i < B.rows(); ++i)
    for (int j = 0; j < B.cols(); ++j) B(i, j) = dist(gen);
  return B * B.transpose() / n;
}

double logdet(const Eigen::MatrixXd& L, const std::vector<int>& s) {
  Eigen::MatrixXd sub(s.size(), s.size());
  for (std::size_t a = 0; a < s.size(); ++a)
    for (std::size_t b = 0; b < s.size(); ++b) sub(a, b) = L(s[a], s[b]);
  return std::log(sub.determinant());
}

// Greedy by recomputing the full log determinant at each step.
std::vector<std::string> naive_greedy(const DppKernel& k, std::size_t K) {
  std::vector<int> chosen;
  std::vector<std::string> out;
  for (std::size_t step = 0; step < K; ++step) {
    int best = -1;
    double best_val = -INFINITY;
    for (int i = 0; i < k.matrix.rows(); ++i) {
      if (std::find(chosen.begin(), chosen.end(), i) != chosen.end()) continue;
      auto s = chosen;
      s.push_back(i);
      const double v = logdet(k.matrix, s);
      if (v > best_val + 1e-12 ||
          (std::abs(v - best_val) <= 1e-12 && best >= 0 &&
           k.item_ids[i] < k.item_ids[best])) {
        best = i;
        best_val = v;
      }
    }
    chosen.push_back(best);
    out.push_back(k.item_ids[best]);
  }
  return out;
}

}  // namespace

TEST_CASE("random selection") {
  auto pool = testutil::numbered(12);
  SelectorConfig cfg;
  cfg.method = SelectorMethod::kRandom;
  cfg.k_demos = 12;
  cfg.seed = 5;
  auto all = select_random(pool.view(), "t0", cfg);
  std::set<std::string> distinct(all.demo_ids.begin(), all.demo_ids.end());
  CHECK(distinct.size() == 12);
  CHECK(all == select_random(pool.view(), "t0", cfg));

  cfg.k_demos = 13;
  CHECK(code_of([&] { select_random(pool.view(), "t0", cfg); }) ==
        ErrorCode::kPoolTooSmall);
}

TEST_CASE("random K=1 over 10 items is uniform") {
  auto pool = testutil::numbered(10);
  SelectorConfig cfg;
  cfg.method = SelectorMethod::kRandom;
  cfg.k_demos = 1;
  std::map<std::string, int> freq;
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) {
    cfg.seed = static_cast<std::uint64_t>(i);
    ++freq[select_random(pool.view(), "t", cfg).demo_ids[0]];
  }
  const double expect = draws / 10.0;
  const double sigma = std::sqrt(draws * 0.1 * 0.9);
  double chi2 = 0;
  for (const auto& [id, n] : freq) {
    CHECK(std::abs(n - expect) < 3 * sigma);
    chi2 += (n - expect) * (n - expect) / expect;
  }
  CHECK(freq.size() == 10);
  // 9 degrees of freedom, 0.999 quantile.
  CHECK(chi2 < 27.88);
}

TEST_CASE("topk puts an exact duplicate first and returns K items") {
  auto m = random_matrix(60, 8, 3);
  auto query = m.row(std::size_t{17});
  auto idx = NeighborIndex::build(m);
  SelectorConfig cfg;
  cfg.k_demos = 8;
  auto d = select_topk(idx, "test-q", query, cfg);
  CHECK(d.demo_ids.size() == 8);
  CHECK(d.demo_ids[0] == m.ids()[17]);
  // The test id itself is never returned.
  auto self = select_topk(idx, m.ids()[17], query, cfg);
  CHECK(std::find(self.demo_ids.begin(), self.demo_ids.end(), m.ids()[17]) ==
        self.demo_ids.end());
  CHECK(self.demo_ids.size() == 8);
}

TEST_CASE("topk agrees with a brute-force scan and ignores pool order") {
  auto pool = random_matrix(500, 12, 8);
  auto queries = random_matrix(20, 12, 9, "q");
  auto idx = NeighborIndex::build(pool);

  std::vector<std::string> shuffled_ids = pool.ids();
  std::shuffle(shuffled_ids.begin(), shuffled_ids.end(), std::mt19937(1));
  auto shuffled = NeighborIndex::build(pool.subset(shuffled_ids));

  SelectorConfig cfg;
  cfg.k_demos = 8;
  for (std::size_t qi = 0; qi < queries.rows(); ++qi) {
    auto q = queries.row(qi);
    std::vector<std::pair<double, std::string>> scan;
    for (std::size_t i = 0; i < pool.rows(); ++i) {
      double dot = 0, na = 0, nb = 0;
      for (std::size_t d = 0; d < 12; ++d) {
        dot += double(q[d]) * pool.row(i)[d];
        na += double(q[d]) * q[d];
        nb += double(pool.row(i)[d]) * pool.row(i)[d];
      }
      scan.emplace_back(-dot / std::sqrt(na * nb), pool.ids()[i]);
    }
    std::sort(scan.begin(), scan.end());
    std::vector<std::string> expect;
    for (int i = 0; i < 8; ++i) expect.push_back(scan[i].second);
    const auto got = select_topk(idx, queries.ids()[qi], q, cfg).demo_ids;
    CHECK(got == expect);
    CHECK(select_topk(shuffled, queries.ids()[qi], q, cfg).demo_ids == got);
  }
}

TEST_CASE("topk needs the test embedding") {
  auto m = random_matrix(10, 4, 1);
  auto idx = NeighborIndex::build(m);
  SelectorConfig cfg;
  cfg.k_demos = 2;
  CHECK(code_of([&] { select_topk(idx, testutil::ex("nope", "x", "y"), m, cfg); }) ==
        ErrorCode::kMissingEmbedding);
}

TEST_CASE("dpp kernel construction") {
  EmbeddingMatrix ortho({"a", "b", "c"}, 3, {2, 0, 0, 0, 3, 0, 0, 0, 1});
  std::vector<std::string> ids{"a", "b", "c"};
  auto k = build_dpp_kernel(ortho, ids);
  CHECK(k.matrix.isApprox(Eigen::MatrixXd::Identity(3, 3), 1e-12));

  EmbeddingMatrix dup({"a", "b"}, 2, {1, 1, 1, 1});
  std::vector<std::string> ab{"a", "b"};
  auto kd = build_dpp_kernel(dup, ab);
  CHECK(std::abs(kd.matrix(0, 1) - 1.0) < 1e-12);
  CHECK(std::abs(kd.matrix(0, 0) - 1.0) < 1e-6);
  CHECK(std::abs(kd.matrix.determinant()) < 1e-6);

  auto r = random_matrix(4, 6, 2);
  auto kr = build_dpp_kernel(r, r.ids());
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      double dot = 0, ni = 0, nj = 0;
      for (int d = 0; d < 6; ++d) {
        dot += double(r.row(i)[d]) * r.row(j)[d];
        ni += double(r.row(i)[d]) * r.row(i)[d];
        nj += double(r.row(j)[d]) * r.row(j)[d];
      }
      CHECK(std::abs(kr.matrix(i, j) - kr.jitter * (i == j) - dot / std::sqrt(ni * nj)) <
            1e-12);
    }
  }
  CHECK((kr.matrix - kr.matrix.transpose()).cwiseAbs().maxCoeff() < 1e-9);

  std::map<std::string, double> q{{"a", 2.0}, {"b", 0.5}, {"c", 1.0}};
  auto kq = build_dpp_kernel(ortho, ids, &q);
  CHECK(kq.matrix(0, 0) == doctest::Approx(4.0));
  CHECK(kq.matrix(1, 1) == doctest::Approx(0.25));

  std::vector<std::string> missing{"zz"};
  CHECK(code_of([&] { build_dpp_kernel(ortho, missing); }) ==
        ErrorCode::kMissingEmbedding);
}

TEST_CASE("greedy map small cases") {
  auto ident = kernel_from(Eigen::MatrixXd::Identity(5, 5));
  CHECK(greedy_map_logdet(ident, 3).ids == std::vector<std::string>{"k0", "k1", "k2"});

  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(3, 3);
  d.diagonal() << 1, 3, 2;
  auto kd = kernel_from(d);
  CHECK(greedy_map_logdet(kd, 1).ids == std::vector<std::string>{"k1"});
  CHECK(greedy_map_logdet(kd, 2).ids == std::vector<std::string>{"k1", "k2"});

  // k0 and k1 are identical; k2 is independent.
  Eigen::MatrixXd dup(3, 3);
  dup << 1, 1, 0.2, 1, 1, 0.2, 0.2, 0.2, 1;
  auto r = greedy_map_logdet(kernel_from(dup), 2);
  CHECK(std::set<std::string>(r.ids.begin(), r.ids.end()) ==
        std::set<std::string>{"k0", "k2"});
  CHECK(code_of([&] { greedy_map_logdet(kernel_from(dup), 3); }) ==
        ErrorCode::kNumericalBreakdown);
}

TEST_CASE("greedy map matches naive recomputation with non-increasing gains") {
  for (unsigned seed = 0; seed < 20; ++seed) {
    for (auto [n, K] : {std::pair{10, 3}, std::pair{8, 4}}) {
      auto k = kernel_from(random_psd(n, seed));
      auto r = greedy_map_logdet(k, K);
      CHECK(r.ids == naive_greedy(k, K));
      for (std::size_t i = 1; i < r.gains.size(); ++i) {
        CHECK(r.gains[i] <= r.gains[i - 1] + 1e-9);
      }
      std::vector<int> idx;
      double total = 0;
      for (std::size_t i = 0; i < r.ids.size(); ++i) {
        idx.push_back(std::stoi(r.ids[i].substr(1)));
        total += r.gains[i];
      }
      CHECK(std::abs(total - logdet(k.matrix, idx)) < 1e-6);
    }
  }
}

TEST_CASE("dpp selection") {
  auto m = random_matrix(200, 16, 21);
  auto idx = NeighborIndex::build(m);
  auto q = testutil::ex("p1005", "x", "y");
  SelectorConfig cfg;
  cfg.method = SelectorMethod::kDpp;
  cfg.k_demos = 8;
  cfg.candidate_pool_size = 50;
  auto d = select_dpp(idx, m, q, cfg);
  CHECK(d.demo_ids.size() == 8);
  std::set<std::string> distinct(d.demo_ids.begin(), d.demo_ids.end());
  CHECK(distinct.size() == 8);
  CHECK(distinct.count("p1005") == 0);

  // Oracle: greedy over the kernel of the TopK-M prefilter.
  SelectorConfig top = cfg;
  top.method = SelectorMethod::kTopK;
  top.k_demos = 50;
  auto pre = select_topk(idx, q, m, top).demo_ids;
  auto k = build_dpp_kernel(m, pre);
  CHECK(d.demo_ids == greedy_map_logdet(k, 8).ids);

  cfg.candidate_pool_size = 4;
  CHECK(code_of([&] { cfg.validate(); }) == ErrorCode::kInvalidArgument);
}

TEST_CASE("orthogonal pool makes dpp follow tie-break order") {
  std::vector<std::string> ids;
  std::vector<float> values;
  const int n = 6;
  for (int i = 0; i < n; ++i) {
    ids.push_back("o" + std::to_string(i));
    for (int d = 0; d < n + 1; ++d) values.push_back(d == i ? 1.f : 0.f);
  }
  // Query equally similar to every pool item.
  ids.push_back("query");
  for (int d = 0; d < n + 1; ++d) values.push_back(d < n ? 1.f : 0.f);
  EmbeddingMatrix m(ids, n + 1, values);
  std::vector<std::string> pool_ids(ids.begin(), ids.end() - 1);
  auto idx = NeighborIndex::build(m.subset(pool_ids));
  SelectorConfig cfg;
  cfg.method = SelectorMethod::kDpp;
  cfg.k_demos = 3;
  cfg.candidate_pool_size = 6;
  auto d = select_dpp(idx, m, testutil::ex("query", "x", "y"), cfg);
  CHECK(d.demo_ids == std::vector<std::string>{"o0", "o1", "o2"});
}

TEST_CASE("selector config validation") {
  SelectorConfig cfg;
  cfg.k_demos = 0;
  CHECK(code_of([&] { cfg.validate(); }) == ErrorCode::kInvalidArgument);
  CHECK(parse_selector_method("dpp") == SelectorMethod::kDpp);
  CHECK(code_of([] { parse_selector_method("knn"); }) == ErrorCode::kInvalidArgument);
}
