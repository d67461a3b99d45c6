#include "iclforge/planted.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "iclforge/error.hpp"
#include "iclforge/random.hpp"

namespace iclforge {

void PlantedConfig::validate() const {
  if (clusters < 1 || per_cluster < 1 || dim < 1) {
    throw Error(ErrorCode::kInvalidArgument,
                "planted corpus needs clusters, per_cluster and dim >= 1");
  }
  if (!bases.empty() && bases.size() != clusters) {
    throw Error(ErrorCode::kInvalidArgument, "need one base per cluster");
  }
  if (!(base_lo <= base_hi)) {
    throw Error(ErrorCode::kInvalidArgument, "base range is empty");
  }
  if (spread < 0.0 || sigma < 0.0 || noise_shift < 0.0) {
    throw Error(ErrorCode::kInvalidArgument,
                "spread, sigma and noise shift must be non-negative");
  }
  if (!(noise_rate >= 0.0 && noise_rate <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "noise rate must be in [0, 1]");
  }
  if (noise_rate > 0.0 && donor_size == 0) {
    throw Error(ErrorCode::kDonorTooSmall, "noise needs a non-empty donor");
  }
}

std::string planted_cluster_name(std::size_t cluster) {
  std::ostringstream out;
  out << 'c' << std::setw(2) << std::setfill('0') << cluster;
  return out.str();
}

namespace {

std::string padded(std::size_t v) {
  std::ostringstream out;
  out << std::setw(3) << std::setfill('0') << v;
  return out.str();
}

}  // namespace

PlantedCorpus make_planted_corpus(const PlantedConfig& cfg) {
  cfg.validate();
  Rng geometry(derive_seed(cfg.seed, "geometry"));
  Rng levels(derive_seed(cfg.seed, "bases"));

  std::vector<std::vector<double>> centers(cfg.clusters, std::vector<double>(cfg.dim));
  for (auto& c : centers) {
    double norm = 0.0;
    for (auto& v : c) {
      v = geometry.normal();
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (auto& v : c) v /= norm;
  }

  std::vector<std::string> ids;
  std::vector<float> values;
  auto add_vector = [&](Rng& rng, const std::string& id, const std::vector<double>& center) {
    ids.push_back(id);
    for (double v : center) values.push_back(static_cast<float>(v + cfg.spread * rng.normal()));
  };

  PlantedCorpus out;
  std::vector<Example> pool;
  for (std::size_t c = 0; c < cfg.clusters; ++c) {
    const std::string name = planted_cluster_name(c);
    out.model.cluster_base[name] =
        cfg.bases.empty() ? levels.uniform(cfg.base_lo, cfg.base_hi) : cfg.bases[c];
    for (std::size_t i = 0; i < cfg.per_cluster; ++i) {
      Example ex;
      ex.id = name + "_" + padded(i);
      ex.task = "planted";
      ex.input_text = "topic " + name + " item " + std::to_string(i);
      ex.output_text = "answer " + name + " " + std::to_string(i);
      ex.meta["cluster"] = name;
      add_vector(geometry, ex.id, centers[c]);
      pool.push_back(std::move(ex));
    }
  }

  // Test inputs draw from their own stream so the pool does not depend on
  // how many are requested.
  Rng queries(derive_seed(cfg.seed, "queries"));
  std::vector<std::size_t> per_cluster(cfg.clusters, cfg.test_per_cluster);
  if (cfg.test_inputs > 0) {
    std::fill(per_cluster.begin(), per_cluster.end(), 0);
    const auto order = queries.permutation(cfg.clusters);
    for (std::size_t i = 0; i < cfg.test_inputs; ++i) ++per_cluster[order[i % cfg.clusters]];
  }
  std::vector<Example> test;
  for (std::size_t c = 0; c < cfg.clusters; ++c) {
    const std::string name = planted_cluster_name(c);
    for (std::size_t j = 0; j < per_cluster[c]; ++j) {
      Example ex;
      ex.id = "t" + name + "_" + padded(j);
      ex.task = "planted";
      ex.input_text = "topic " + name + " query " + std::to_string(j);
      ex.output_text = "answer " + name + " q" + std::to_string(j);
      ex.meta["cluster"] = name;
      add_vector(queries, ex.id, centers[c]);
      test.push_back(std::move(ex));
    }
  }

  std::vector<Example> donor;
  for (std::size_t i = 0; i < cfg.donor_size; ++i) {
    Example ex;
    ex.id = "donor_" + padded(i);
    ex.task = "donor";
    ex.input_text = "unrelated prompt " + std::to_string(i);
    ex.output_text = "unrelated answer " + std::to_string(i);
    donor.push_back(std::move(ex));
  }

  out.clean_pool = Dataset(std::move(pool), Split::kPool);
  out.donor = Dataset(std::move(donor), Split::kPool);
  out.test = Dataset(std::move(test), Split::kTest);
  out.embeddings = EmbeddingMatrix(std::move(ids), cfg.dim, std::move(values));

  NoiseSpec spec;
  spec.kind = NoiseKind::kIrrelevant;
  spec.rate = cfg.noise_rate;
  spec.seed = derive_seed(cfg.seed, "noise");
  spec.donor_task = "donor";
  if (cfg.noise_rate > 0.0) {
    out.pool = inject_irrelevant_noise(out.clean_pool, out.donor, spec);
  } else {
    out.pool = out.clean_pool;
    NoiseTruth truth;
    for (const auto& ex : out.pool.examples()) truth.set(ex.id, false);
    out.pool.set_noise(spec, std::move(truth));
  }

  out.model.noise_shift = cfg.noise_shift;
  out.model.sigma = cfg.sigma;
  out.model.seed = derive_seed(cfg.seed, "scorer");
  out.prompt.task = "planted";
  return out;
}

}  // namespace iclforge
