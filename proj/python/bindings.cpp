#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "iclforge/corpus.hpp"
#include "iclforge/embedspace.hpp"
#include "iclforge/error.hpp"
#include "iclforge/eval.hpp"
#include "iclforge/lpr.hpp"
#include "iclforge/metrics.hpp"
#include "iclforge/planted.hpp"
#include "iclforge/scoring.hpp"
#include "iclforge/selectors.hpp"

namespace py = pybind11;
using namespace iclforge;

namespace {

EmbeddingMatrix matrix_from(std::vector<std::string> ids,
                            py::array_t<float, py::array::c_style | py::array::forcecast> a) {
  if (a.ndim() != 2) throw Error(ErrorCode::kDimensionMismatch, "expected a 2-d array");
  const auto* p = a.data();
  std::vector<float> values(p, p + a.size());
  return EmbeddingMatrix(std::move(ids), static_cast<std::size_t>(a.shape(1)),
                         std::move(values));
}

py::array_t<float> matrix_values(const EmbeddingMatrix& m) {
  py::array_t<float> out({m.rows(), m.dim()});
  std::copy(m.values().begin(), m.values().end(), out.mutable_data());
  return out;
}

std::vector<std::string> pool_ids(const Dataset& pool) {
  std::vector<std::string> ids;
  for (const auto& e : pool.examples()) ids.push_back(e.id);
  return ids;
}

ScoreProvider dict_provider(std::map<std::string, double> scores) {
  return [scores = std::move(scores)](std::span<const std::string> ids) {
    ScoreMap out;
    for (const auto& id : ids) {
      if (auto it = scores.find(id); it != scores.end()) out.emplace(id, it->second);
    }
    return out;
  };
}

py::dict record_dict(const SubstitutionRecord& r) {
  py::dict d;
  d["original_id"] = r.original_id;
  d["replacement_id"] = r.replacement_id ? py::cast(*r.replacement_id) : py::none();
  d["flag"] = r.flag;
  d["rank_fraction"] = r.rank_fraction;
  d["error"] = r.error ? py::cast(*r.error) : py::none();
  return d;
}

}  // namespace

PYBIND11_MODULE(_iclforge, m) {
  m.doc() = "Demonstration selection with local perplexity ranking.";

  // The exception class lives in Python so it can carry `code` and `ids`.
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object cls = py::module_::import("icl_forge.errors").attr("IclForgeError");
      py::object value = cls(e.what(), std::string(error_code_name(e.code())), e.ids());
      PyErr_SetObject(cls.ptr(), value.ptr());
    }
  });

  py::class_<Example>(m, "Example")
      .def(py::init([](std::string id, std::string task, std::string input,
                       std::string output, std::map<std::string, std::string> meta) {
             return Example{std::move(id), std::move(task), std::move(input),
                            std::move(output), std::move(meta)};
           }),
           py::arg("id"), py::arg("task"), py::arg("input"), py::arg("output"),
           py::arg("meta") = std::map<std::string, std::string>{})
      .def_readwrite("id", &Example::id)
      .def_readwrite("task", &Example::task)
      .def_readwrite("input", &Example::input_text)
      .def_readwrite("output", &Example::output_text)
      .def_readwrite("meta", &Example::meta)
      .def("__repr__", [](const Example& e) { return "<Example " + e.id + ">"; });

  py::class_<Dataset>(m, "Dataset")
      .def(py::init([](std::vector<Example> examples) { return Dataset(std::move(examples)); }))
      .def("__len__", &Dataset::size)
      .def("__getitem__", [](const Dataset& d, const std::string& id) { return d.at(id); })
      .def_property_readonly("examples", [](const Dataset& d) {
        return std::vector<Example>(d.examples().begin(), d.examples().end());
      })
      .def_property_readonly("ids", &pool_ids)
      .def("noisy_ids",
           [](const Dataset& d) {
             std::vector<std::string> out;
             if (!d.truth()) return out;
             for (const auto& [id, noisy] : d.truth()->flags())
               if (noisy) out.push_back(id);
             return out;
           })
      .def("to_jsonl", &dataset_to_jsonl);

  m.def("load_dataset",
        [](const std::filesystem::path& p) { return load_dataset(p); }, py::arg("path"));
  m.def("parse_dataset_jsonl",
        [](const std::string& text) { return parse_dataset_jsonl(text); }, py::arg("text"));
  m.def("inject_irrelevant_noise",
        [](const Dataset& pool, const Dataset& donor, double rate, std::uint64_t seed) {
          NoiseSpec spec;
          spec.rate = rate;
          spec.seed = seed;
          return inject_irrelevant_noise(pool, donor, spec);
        },
        py::arg("pool"), py::arg("donor"), py::arg("rate"), py::arg("seed") = 0);
  m.def("split_pool", &split_pool, py::arg("dataset"), py::arg("test_fraction"),
        py::arg("seed") = 0);

  py::class_<EmbeddingMatrix>(m, "EmbeddingMatrix")
      .def(py::init(&matrix_from), py::arg("ids"), py::arg("vectors"))
      .def_property_readonly("ids", &EmbeddingMatrix::ids)
      .def_property_readonly("dim", &EmbeddingMatrix::dim)
      .def_property_readonly("vectors", &matrix_values)
      .def("__len__", &EmbeddingMatrix::rows);
  m.def("load_embeddings", &load_embeddings, py::arg("path"));

  m.def("cosine_similarity",
        [](std::vector<double> a, std::vector<double> b) { return cosine_similarity(a, b); },
        py::arg("a"), py::arg("b"));

  py::class_<NeighborCluster>(m, "NeighborCluster")
      .def_readonly("candidate_id", &NeighborCluster::candidate_id)
      .def_readonly("neighbor_ids", &NeighborCluster::neighbor_ids)
      .def_readonly("similarities", &NeighborCluster::similarities);

  py::class_<NeighborIndex>(m, "NeighborIndex")
      .def(py::init(&NeighborIndex::build), py::arg("embeddings"))
      .def("knn_query", &NeighborIndex::knn_query, py::arg("candidate_id"), py::arg("k"))
      .def("__len__", &NeighborIndex::size);
  m.def("brute_force_knn", &brute_force_knn, py::arg("embeddings"), py::arg("candidate_id"),
        py::arg("k"));

  m.def("perplexity", [](std::vector<double> lp) { return perplexity(lp); },
        py::arg("logprobs"));

  m.def("select_topk",
        [](const NeighborIndex& index, const Example& test, const EmbeddingMatrix& emb,
           std::size_t k_demos) {
          SelectorConfig cfg;
          cfg.k_demos = k_demos;
          return select_topk(index, test, emb, cfg).demo_ids;
        },
        py::arg("index"), py::arg("test"), py::arg("embeddings"), py::arg("k_demos") = 8);
  m.def("select_dpp",
        [](const NeighborIndex& index, const Example& test, const EmbeddingMatrix& emb,
           std::size_t k_demos, std::size_t candidate_pool_size) {
          SelectorConfig cfg;
          cfg.method = SelectorMethod::kDpp;
          cfg.k_demos = k_demos;
          cfg.candidate_pool_size = candidate_pool_size;
          return select_dpp(index, emb, test, cfg).demo_ids;
        },
        py::arg("index"), py::arg("test"), py::arg("embeddings"), py::arg("k_demos") = 8,
        py::arg("candidate_pool_size") = 100);
  m.def("greedy_map_logdet",
        [](Eigen::MatrixXd kernel, std::vector<std::string> ids, std::size_t k) {
          DppKernel dk{std::move(ids), std::move(kernel), 0.0};
          auto r = greedy_map_logdet(dk, k);
          return std::make_pair(r.ids, r.gains);
        },
        py::arg("kernel"), py::arg("ids"), py::arg("k"));

  m.def("lpr_filter",
        [](const NeighborIndex& index, const EmbeddingMatrix& emb, const Example& test,
           std::vector<std::string> demo_ids, std::map<std::string, double> scores,
           std::size_t k, double gamma, bool reorder) {
          LprConfig cfg;
          cfg.k = k;
          cfg.gamma = gamma;
          cfg.reorder = reorder;
          PerplexityFlagger flagger(index, dict_provider(std::move(scores)), cfg);
          DemonstrationSet raw{test.id, std::move(demo_ids), Provenance::kRaw};
          auto r = filter_demonstrations(raw, test, index, flagger, cfg, &emb);
          py::list records;
          for (const auto& rec : r.records) records.append(record_dict(rec));
          return py::make_tuple(r.demos.demo_ids, records);
        },
        py::arg("index"), py::arg("embeddings"), py::arg("test"), py::arg("demo_ids"),
        py::arg("scores"), py::arg("k") = 4, py::arg("gamma") = 0.5, py::arg("reorder") = true);
  m.def("global_rank_filter",
        [](const NeighborIndex& index, const EmbeddingMatrix& emb, const Example& test,
           std::map<std::string, double> scores, std::size_t k_demos,
           std::size_t candidate_pool_size) {
          SelectorConfig cfg;
          cfg.k_demos = k_demos;
          cfg.candidate_pool_size = candidate_pool_size;
          return global_rank_filter(index, emb, test, dict_provider(std::move(scores)), cfg)
              .demo_ids;
        },
        py::arg("index"), py::arg("embeddings"), py::arg("test"), py::arg("scores"),
        py::arg("k_demos") = 8, py::arg("candidate_pool_size") = 100);

  m.def("normalize_answer", &normalize_answer, py::arg("text"));
  m.def("exact_match",
        [](const std::string& pred, std::vector<std::string> refs) {
          return exact_match(pred, refs);
        },
        py::arg("prediction"), py::arg("references"));
  m.def("bleu",
        [](const std::string& pred, const std::vector<std::string>& refs) {
          std::vector<Tokens> r;
          for (const auto& s : refs) r.push_back(whitespace_tokens(s));
          return bleu(whitespace_tokens(pred), r);
        },
        py::arg("prediction"), py::arg("references"));
  m.def("corpus_bleu",
        [](const std::vector<std::string>& preds,
           const std::vector<std::vector<std::string>>& refs) {
          std::vector<Tokens> p;
          std::vector<std::vector<Tokens>> r;
          for (const auto& s : preds) p.push_back(whitespace_tokens(s));
          for (const auto& group : refs) {
            r.emplace_back();
            for (const auto& s : group) r.back().push_back(whitespace_tokens(s));
          }
          return corpus_bleu(p, r);
        },
        py::arg("predictions"), py::arg("references"));

  py::class_<PlantedCorpus>(m, "PlantedCorpus")
      .def_readonly("pool", &PlantedCorpus::pool)
      .def_readonly("clean_pool", &PlantedCorpus::clean_pool)
      .def_readonly("test", &PlantedCorpus::test)
      .def_readonly("donor", &PlantedCorpus::donor)
      .def_readonly("embeddings", &PlantedCorpus::embeddings)
      .def("perplexities", [](const PlantedCorpus& c) {
        SyntheticScorer scorer(c.model, *c.pool.truth());
        std::map<std::string, double> out;
        for (const auto& e : c.pool.examples()) out[e.id] = scorer.score(e).perplexity;
        return out;
      });
  m.def("make_planted_corpus",
        [](std::size_t clusters, std::size_t per_cluster, std::size_t dim, double noise_rate,
           double sigma, std::size_t test_per_cluster, std::uint64_t seed) {
          PlantedConfig pc;
          pc.clusters = clusters;
          pc.per_cluster = per_cluster;
          pc.dim = dim;
          pc.noise_rate = noise_rate;
          pc.sigma = sigma;
          pc.test_per_cluster = test_per_cluster;
          pc.seed = seed;
          return make_planted_corpus(pc);
        },
        py::arg("clusters") = 20, py::arg("per_cluster") = 50, py::arg("dim") = 32,
        py::arg("noise_rate") = 0.4, py::arg("sigma") = 0.5, py::arg("test_per_cluster") = 1,
        py::arg("seed") = 0);
}
