#include "iclforge/selectors.hpp"

#include <cmath>
#include <limits>

#include "iclforge/error.hpp"
#include "iclforge/random.hpp"

namespace iclforge {

std::string_view to_string(SelectorMethod m) {
  switch (m) {
    case SelectorMethod::kRandom: return "random";
    case SelectorMethod::kTopK: return "topk";
    case SelectorMethod::kDpp: return "dpp";
  }
  return "?";
}

std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::kRaw: return "raw";
    case Provenance::kLprFiltered: return "lpr_filtered";
    case Provenance::kGlobalFiltered: return "global_filtered";
  }
  return "?";
}

SelectorMethod parse_selector_method(std::string_view name) {
  if (name == "random") return SelectorMethod::kRandom;
  if (name == "topk") return SelectorMethod::kTopK;
  if (name == "dpp") return SelectorMethod::kDpp;
  throw Error(ErrorCode::kInvalidArgument,
              "unknown selector '" + std::string(name) + "'");
}

void SelectorConfig::validate() const {
  if (k_demos < 1) throw Error(ErrorCode::kInvalidArgument, "K must be >= 1");
  if (candidate_pool_size < k_demos) {
    throw Error(ErrorCode::kInvalidArgument,
                "candidate pool size M must be >= K");
  }
}

DemonstrationSet select_random(const PoolView& pool, std::string_view test_id,
                               const SelectorConfig& cfg) {
  cfg.validate();
  std::vector<std::size_t> eligible;
  eligible.reserve(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (pool.examples()[i].id != test_id) eligible.push_back(i);
  }
  if (eligible.size() < cfg.k_demos) {
    throw Error(ErrorCode::kPoolTooSmall,
                "pool of " + std::to_string(eligible.size()) +
                    " cannot supply K=" + std::to_string(cfg.k_demos));
  }
  Rng rng(derive_seed(cfg.seed, test_id));
  // Partial Fisher-Yates: the first K slots are a uniform K-subset in
  // uniform order.
  for (std::size_t i = 0; i < cfg.k_demos; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.uniform_below(eligible.size() - i));
    std::swap(eligible[i], eligible[j]);
  }
  DemonstrationSet out;
  out.test_id = std::string(test_id);
  for (std::size_t i = 0; i < cfg.k_demos; ++i) {
    out.demo_ids.push_back(pool.examples()[eligible[i]].id);
  }
  return out;
}

DemonstrationSet select_topk(const NeighborIndex& index, std::string_view test_id,
                             std::span<const float> query,
                             const SelectorConfig& cfg) {
  cfg.validate();
  auto ranked = index.nearest(query, cfg.k_demos, test_id);
  if (ranked.size() < cfg.k_demos) {
    throw Error(ErrorCode::kPoolTooSmall,
                "pool cannot supply K=" + std::to_string(cfg.k_demos));
  }
  DemonstrationSet out;
  out.test_id = std::string(test_id);
  for (auto& s : ranked) out.demo_ids.push_back(std::move(s.id));
  return out;
}

DemonstrationSet select_topk(const NeighborIndex& index, const Example& test_input,
                             const EmbeddingMatrix& queries,
                             const SelectorConfig& cfg) {
  return select_topk(index, test_input.id, queries.row(test_input.id), cfg);
}

DppKernel build_dpp_kernel(const EmbeddingMatrix& embeddings,
                           std::span<const std::string> candidate_ids,
                           const std::map<std::string, double>* quality) {
  const auto m = static_cast<Eigen::Index>(candidate_ids.size());
  const auto dim = static_cast<Eigen::Index>(embeddings.dim());
  Eigen::MatrixXd rows(m, dim);
  for (Eigen::Index i = 0; i < m; ++i) {
    auto r = embeddings.row(candidate_ids[static_cast<std::size_t>(i)]);
    for (Eigen::Index d = 0; d < dim; ++d) rows(i, d) = r[static_cast<std::size_t>(d)];
    const double norm = rows.row(i).norm();
    if (norm <= 0.0) {
      throw Error(ErrorCode::kZeroVector,
                  "zero embedding for " + candidate_ids[static_cast<std::size_t>(i)]);
    }
    rows.row(i) /= norm;
  }
  Eigen::VectorXd q = Eigen::VectorXd::Ones(m);
  if (quality != nullptr) {
    for (Eigen::Index i = 0; i < m; ++i) {
      const auto& id = candidate_ids[static_cast<std::size_t>(i)];
      if (auto it = quality->find(id); it != quality->end()) {
        if (!(it->second >= 0.0)) {
          throw Error(ErrorCode::kInvalidArgument,
                      "negative DPP quality for " + id, {id});
        }
        q(i) = it->second;
      }
    }
  }

  DppKernel kernel;
  kernel.item_ids.assign(candidate_ids.begin(), candidate_ids.end());
  kernel.matrix = q.asDiagonal() * (rows * rows.transpose()) * q.asDiagonal();
  kernel.matrix = 0.5 * (kernel.matrix + kernel.matrix.transpose());

  if (m > 0) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(kernel.matrix,
                                                       Eigen::EigenvaluesOnly);
    double min_eig = eig.eigenvalues().minCoeff();
    if (min_eig < 0.0) {
      kernel.matrix.diagonal().array() += kDppJitter;
      kernel.jitter = kDppJitter;
      if (min_eig + kDppJitter < 0.0) {
        throw Error(ErrorCode::kKernelNotPsd,
                    "kernel has eigenvalue " + std::to_string(min_eig) +
                        " beyond jitter");
      }
    }
  }
  return kernel;
}

GreedyMapResult greedy_map_logdet(const DppKernel& kernel, std::size_t k) {
  const auto m = static_cast<std::size_t>(kernel.matrix.rows());
  if (kernel.matrix.cols() != kernel.matrix.rows() || kernel.item_ids.size() != m) {
    throw Error(ErrorCode::kInvalidArgument, "kernel shape does not match ids");
  }
  if (k > m) {
    throw Error(ErrorCode::kPoolTooSmall, "cannot pick " + std::to_string(k) +
                                              " of " + std::to_string(m) +
                                              " items");
  }
  const auto& L = kernel.matrix;
  // Residual variances d2[i] = L_ii - |c_i|^2, where c_i are the rows of the
  // incremental Cholesky factor restricted to the selected set.
  Eigen::VectorXd d2 = L.diagonal();
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m),
                                            static_cast<Eigen::Index>(k));
  std::vector<bool> taken(m, false);

  GreedyMapResult out;
  for (std::size_t step = 0; step < k; ++step) {
    std::size_t best = m;
    for (std::size_t i = 0; i < m; ++i) {
      if (taken[i]) continue;
      if (best == m || d2(i) > d2(best) ||
          (d2(i) == d2(best) && kernel.item_ids[i] < kernel.item_ids[best])) {
        best = i;
      }
    }
    const double pivot = d2(static_cast<Eigen::Index>(best));
    if (!(pivot > 0.0)) {
      throw Error(ErrorCode::kNumericalBreakdown,
                  "non-positive pivot at step " + std::to_string(step));
    }
    taken[best] = true;
    out.ids.push_back(kernel.item_ids[best]);
    out.gains.push_back(std::log(pivot));

    const double root = std::sqrt(pivot);
    const auto s = static_cast<Eigen::Index>(step);
    const auto b = static_cast<Eigen::Index>(best);
    for (std::size_t i = 0; i < m; ++i) {
      if (taken[i]) continue;
      const auto ii = static_cast<Eigen::Index>(i);
      const double dot = s == 0 ? 0.0 : c.row(b).head(s).dot(c.row(ii).head(s));
      const double e = (L(b, ii) - dot) / root;
      c(ii, s) = e;
      d2(ii) -= e * e;
    }
  }
  return out;
}

DemonstrationSet select_dpp(const NeighborIndex& index,
                            const EmbeddingMatrix& embeddings,
                            const Example& test_input,
                            const SelectorConfig& cfg) {
  cfg.validate();
  auto candidates = index.nearest(embeddings.row(test_input.id),
                                  cfg.candidate_pool_size, test_input.id);
  if (candidates.size() < cfg.k_demos) {
    throw Error(ErrorCode::kPoolTooSmall,
                "pool cannot supply K=" + std::to_string(cfg.k_demos));
  }
  std::vector<std::string> ids;
  ids.reserve(candidates.size());
  for (auto& s : candidates) ids.push_back(std::move(s.id));
  auto kernel = build_dpp_kernel(embeddings, ids);
  auto picked = greedy_map_logdet(kernel, cfg.k_demos);
  DemonstrationSet out;
  out.test_id = test_input.id;
  out.demo_ids = std::move(picked.ids);
  return out;
}

DemonstrationSet select(const PoolView& pool, const NeighborIndex& index,
                        const EmbeddingMatrix& embeddings,
                        const Example& test_input, const SelectorConfig& cfg) {
  switch (cfg.method) {
    case SelectorMethod::kRandom:
      return select_random(pool, test_input.id, cfg);
    case SelectorMethod::kTopK:
      return select_topk(index, test_input, embeddings, cfg);
    case SelectorMethod::kDpp:
      return select_dpp(index, embeddings, test_input, cfg);
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown selector");
}

}  // namespace iclforge
