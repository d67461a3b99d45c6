#include "iclforge/corpus.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "iclforge/error.hpp"
#include "iclforge/io.hpp"
#include "iclforge/random.hpp"

namespace iclforge {

using nlohmann::json;
using nlohmann::ordered_json;

void NoiseSpec::validate() const {
  if (!(rate >= 0.0 && rate <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument,
                "noise rate must be in [0, 1], got " + std::to_string(rate));
  }
  if (kind == NoiseKind::kRelevantImport && !import_path) {
    throw Error(ErrorCode::kInvalidArgument,
                "relevant noise requires an import file");
  }
}

std::string NoiseSpec::summary() const {
  std::ostringstream out;
  out << (kind == NoiseKind::kIrrelevant ? "irrelevant" : "relevant_import")
      << "@" << rate << " seed=" << seed;
  return out.str();
}

bool NoiseTruth::is_noisy(std::string_view id) const {
  auto it = flags_.find(id);
  return it != flags_.end() && it->second;
}

bool NoiseTruth::contains(std::string_view id) const {
  return flags_.find(id) != flags_.end();
}

std::size_t NoiseTruth::noisy_count() const {
  return static_cast<std::size_t>(
      std::count_if(flags_.begin(), flags_.end(),
                    [](const auto& kv) { return kv.second; }));
}

const Example* PoolView::find(std::string_view id) const {
  if (by_id_ == nullptr) {
    for (const auto& ex : examples_) {
      if (ex.id == id) return &ex;
    }
    return nullptr;
  }
  auto it = by_id_->find(std::string(id));
  return it == by_id_->end() ? nullptr : &examples_[it->second];
}

const Example& PoolView::at(std::string_view id) const {
  const Example* ex = find(id);
  if (ex == nullptr) {
    throw Error(ErrorCode::kUnknownId, "no example with id " + std::string(id),
                {std::string(id)});
  }
  return *ex;
}

Dataset::Dataset(std::vector<Example> examples, Split split)
    : examples_(std::move(examples)), split_(split) {
  for (const auto& ex : examples_) {
    if (ex.id.empty()) throw Error(ErrorCode::kEmptyField, "example with empty id");
    if (ex.input_text.empty()) {
      throw Error(ErrorCode::kEmptyField, "empty input for " + ex.id, {ex.id});
    }
    if (ex.output_text.empty()) {
      throw Error(ErrorCode::kEmptyField, "empty output for " + ex.id, {ex.id});
    }
  }
  rebuild_index();
}

Dataset::Dataset(const Dataset& other)
    : examples_(other.examples_),
      by_id_(other.by_id_),
      split_(other.split_),
      noise_spec_(other.noise_spec_),
      truth_(other.truth_) {}

Dataset& Dataset::operator=(const Dataset& other) {
  if (this != &other) {
    examples_ = other.examples_;
    by_id_ = other.by_id_;
    split_ = other.split_;
    noise_spec_ = other.noise_spec_;
    truth_ = other.truth_;
  }
  return *this;
}

void Dataset::rebuild_index() {
  by_id_.clear();
  by_id_.reserve(examples_.size());
  for (std::size_t i = 0; i < examples_.size(); ++i) {
    auto [it, inserted] = by_id_.emplace(examples_[i].id, i);
    if (!inserted) {
      throw Error(ErrorCode::kDuplicateId, examples_[i].id, {examples_[i].id});
    }
  }
}

const Example* Dataset::find(std::string_view id) const {
  return view().find(id);
}

const Example& Dataset::at(std::string_view id) const { return view().at(id); }

std::vector<std::string> Dataset::tasks() const {
  std::vector<std::string> out;
  for (const auto& ex : examples_) {
    if (std::find(out.begin(), out.end(), ex.task) == out.end()) {
      out.push_back(ex.task);
    }
  }
  return out;
}

void Dataset::set_noise(std::optional<NoiseSpec> spec,
                        std::optional<NoiseTruth> truth) {
  noise_spec_ = std::move(spec);
  truth_ = std::move(truth);
}

namespace {

std::string require_string(const json& record, const char* key,
                           std::string_view source, std::size_t line) {
  auto it = record.find(key);
  if (it == record.end() || !it->is_string()) {
    std::ostringstream msg;
    msg << source << ":" << line << ": missing string field '" << key << "'";
    throw Error(ErrorCode::kParseError, msg.str());
  }
  return it->get<std::string>();
}

}  // namespace

Dataset parse_dataset_jsonl(std::string_view text, Split split,
                            std::string_view source) {
  std::vector<Example> examples;
  NoiseTruth truth;
  bool any_flag = false;
  std::unordered_set<std::string> seen;

  for_each_line(text, [&](std::string_view line, std::size_t line_no) {
    json record;
    try {
      record = json::parse(line);
    } catch (const json::parse_error& e) {
      std::ostringstream msg;
      msg << source << ":" << line_no << ": " << e.what();
      throw Error(ErrorCode::kParseError, msg.str());
    }
    if (!record.is_object()) {
      std::ostringstream msg;
      msg << source << ":" << line_no << ": record is not an object";
      throw Error(ErrorCode::kParseError, msg.str());
    }
    Example ex;
    ex.id = require_string(record, "id", source, line_no);
    ex.task = require_string(record, "task", source, line_no);
    ex.input_text = require_string(record, "input", source, line_no);
    ex.output_text = require_string(record, "output", source, line_no);
    if (ex.id.empty() || ex.input_text.empty() || ex.output_text.empty()) {
      std::ostringstream msg;
      msg << source << ":" << line_no << ": empty id/input/output";
      throw Error(ErrorCode::kEmptyField, msg.str(), {ex.id});
    }
    if (!seen.insert(ex.id).second) {
      throw Error(ErrorCode::kDuplicateId, ex.id, {ex.id});
    }
    if (auto it = record.find("meta"); it != record.end()) {
      if (!it->is_object()) {
        std::ostringstream msg;
        msg << source << ":" << line_no << ": meta must be an object";
        throw Error(ErrorCode::kParseError, msg.str());
      }
      for (const auto& [key, value] : it->items()) {
        if (!value.is_string()) {
          std::ostringstream msg;
          msg << source << ":" << line_no << ": meta." << key
              << " must be a string";
          throw Error(ErrorCode::kParseError, msg.str());
        }
        ex.meta.emplace(key, value.get<std::string>());
      }
    }
    if (auto it = record.find("is_noisy"); it != record.end()) {
      if (!it->is_boolean()) {
        std::ostringstream msg;
        msg << source << ":" << line_no << ": is_noisy must be a boolean";
        throw Error(ErrorCode::kParseError, msg.str());
      }
      any_flag = true;
      truth.set(ex.id, it->get<bool>());
    }
    examples.push_back(std::move(ex));
  });

  Dataset dataset(std::move(examples), split);
  if (any_flag) {
    for (const auto& ex : dataset.examples()) {
      if (!truth.contains(ex.id)) truth.set(ex.id, false);
    }
    dataset.set_noise(std::nullopt, std::move(truth));
  }
  return dataset;
}

Dataset load_dataset(const std::filesystem::path& path, DatasetFormat format,
                     Split split) {
  switch (format) {
    case DatasetFormat::kJsonl:
      return parse_dataset_jsonl(read_text_file(path), split, path.string());
  }
  throw Error(ErrorCode::kInvalidArgument, "unsupported dataset format");
}

std::string dataset_to_jsonl(const Dataset& dataset) {
  std::string out;
  const auto& truth = dataset.truth();
  for (const auto& ex : dataset.examples()) {
    ordered_json record;
    record["id"] = ex.id;
    record["task"] = ex.task;
    record["input"] = ex.input_text;
    record["output"] = ex.output_text;
    if (truth) record["is_noisy"] = truth->is_noisy(ex.id);
    if (!ex.meta.empty()) {
      ordered_json meta = ordered_json::object();
      for (const auto& [k, v] : ex.meta) meta[k] = v;
      record["meta"] = std::move(meta);
    }
    out += record.dump();
    out += '\n';
  }
  return out;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  write_text_file(path, dataset_to_jsonl(dataset));
}

std::map<std::string, std::string> load_corruptions(
    const std::filesystem::path& path) {
  std::map<std::string, std::string> out;
  const std::string text = read_text_file(path);
  for_each_line(text, [&](std::string_view line, std::size_t line_no) {
    json record;
    try {
      record = json::parse(line);
    } catch (const json::parse_error& e) {
      std::ostringstream msg;
      msg << path.string() << ":" << line_no << ": " << e.what();
      throw Error(ErrorCode::kParseError, msg.str());
    }
    const auto source = path.string();
    auto id = require_string(record, "id", source, line_no);
    auto corrupted = require_string(record, "corrupted_output", source, line_no);
    if (corrupted.empty()) {
      throw Error(ErrorCode::kEmptyField, "empty corrupted_output for " + id,
                  {id});
    }
    out[std::move(id)] = std::move(corrupted);
  });
  return out;
}

std::size_t noisy_count_for(double rate, std::size_t n) {
  return std::min(n, round_half_up(rate * static_cast<double>(n)));
}

namespace {

// Copy of `pool` whose outputs at `victims` are replaced by `replacements`.
Dataset corrupt(const Dataset& pool, const std::vector<std::size_t>& victims,
                const std::vector<std::string>& replacements,
                const NoiseSpec& spec) {
  std::vector<Example> examples(pool.examples().begin(), pool.examples().end());
  NoiseTruth truth;
  for (const auto& ex : examples) truth.set(ex.id, false);
  for (std::size_t j = 0; j < victims.size(); ++j) {
    auto& ex = examples[victims[j]];
    ex.output_text = replacements[j];
    truth.set(ex.id, true);
  }
  Dataset out(std::move(examples), pool.split());
  out.set_noise(spec, std::move(truth));
  return out;
}

}  // namespace

Dataset inject_irrelevant_noise(const Dataset& pool, const Dataset& donor,
                                const NoiseSpec& spec) {
  spec.validate();
  if (spec.kind != NoiseKind::kIrrelevant) {
    throw Error(ErrorCode::kInvalidArgument,
                "inject_irrelevant_noise needs kind=irrelevant");
  }
  const auto pool_tasks = pool.tasks();
  auto is_pool_task = [&](const std::string& task) {
    return std::find(pool_tasks.begin(), pool_tasks.end(), task) !=
           pool_tasks.end();
  };
  if (spec.donor_task && is_pool_task(*spec.donor_task)) {
    throw Error(ErrorCode::kSameTask,
                "donor task equals pool task: " + *spec.donor_task);
  }

  std::vector<const std::string*> outputs;
  for (const auto& ex : donor.examples()) {
    if (spec.donor_task && ex.task != *spec.donor_task) continue;
    if (is_pool_task(ex.task)) {
      throw Error(ErrorCode::kSameTask,
                  "donor example " + ex.id + " shares task " + ex.task, {ex.id});
    }
    outputs.push_back(&ex.output_text);
  }

  const std::size_t n_noisy = noisy_count_for(spec.rate, pool.size());
  if (n_noisy > 0 && outputs.empty()) {
    throw Error(ErrorCode::kDonorTooSmall, "donor dataset has no outputs");
  }

  Rng rng(spec.seed);
  auto order = rng.permutation(pool.size());
  std::vector<std::size_t> victims(order.begin(), order.begin() + n_noisy);

  // Without replacement while the donor lasts, then with replacement.
  std::vector<std::string> replacements;
  replacements.reserve(n_noisy);
  if (n_noisy > 0) {
    auto donor_order = rng.permutation(outputs.size());
    for (std::size_t j = 0; j < n_noisy; ++j) {
      const std::size_t pick = j < outputs.size()
                                   ? donor_order[j]
                                   : static_cast<std::size_t>(
                                         rng.uniform_below(outputs.size()));
      replacements.push_back(*outputs[pick]);
    }
  }
  return corrupt(pool, victims, replacements, spec);
}

Dataset import_relevant_noise(
    const Dataset& pool, const NoiseSpec& spec,
    const std::map<std::string, std::string>& corruptions) {
  if (!(spec.rate >= 0.0 && spec.rate <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "noise rate must be in [0, 1]");
  }
  const std::size_t n_noisy = noisy_count_for(spec.rate, pool.size());

  Rng rng(spec.seed);
  auto order = rng.permutation(pool.size());
  std::vector<std::size_t> victims(order.begin(), order.begin() + n_noisy);

  std::vector<std::string> replacements;
  std::vector<std::string> missing;
  for (auto idx : victims) {
    const auto& id = pool.examples()[idx].id;
    auto it = corruptions.find(id);
    if (it == corruptions.end()) {
      missing.push_back(id);
    } else {
      replacements.push_back(it->second);
    }
  }
  if (!missing.empty()) {
    std::string message = "no corrupted output for sampled id " + missing.front();
    throw Error(ErrorCode::kMissingCorruption, message, std::move(missing));
  }
  return corrupt(pool, victims, replacements, spec);
}

Dataset import_relevant_noise(const Dataset& pool, const NoiseSpec& spec) {
  spec.validate();
  return import_relevant_noise(pool, spec, load_corruptions(*spec.import_path));
}

std::pair<Dataset, Dataset> split_pool(const Dataset& dataset,
                                       double test_fraction,
                                       std::uint64_t seed) {
  if (dataset.empty()) {
    throw Error(ErrorCode::kEmptyDataset, "cannot split an empty dataset");
  }
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "test fraction must be in (0, 1)");
  }
  const std::size_t n = dataset.size();
  std::size_t n_test = round_half_up(test_fraction * static_cast<double>(n));
  if (n >= 2) n_test = std::clamp<std::size_t>(n_test, 1, n - 1);

  Rng rng(seed);
  auto order = rng.permutation(n);
  std::vector<bool> is_test(n, false);
  for (std::size_t i = 0; i < n_test; ++i) is_test[order[i]] = true;

  std::vector<Example> pool_examples;
  std::vector<Example> test_examples;
  NoiseTruth pool_truth;
  NoiseTruth test_truth;
  const auto& truth = dataset.truth();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& ex = dataset.examples()[i];
    if (is_test[i]) {
      if (truth) test_truth.set(ex.id, truth->is_noisy(ex.id));
      test_examples.push_back(ex);
    } else {
      if (truth) pool_truth.set(ex.id, truth->is_noisy(ex.id));
      pool_examples.push_back(ex);
    }
  }
  Dataset pool(std::move(pool_examples), Split::kPool);
  Dataset test(std::move(test_examples), Split::kTest);
  if (truth) {
    pool.set_noise(dataset.noise_spec(), std::move(pool_truth));
    test.set_noise(dataset.noise_spec(), std::move(test_truth));
  }
  return {std::move(pool), std::move(test)};
}

}  // namespace iclforge
