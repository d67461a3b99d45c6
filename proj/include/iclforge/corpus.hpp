#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace iclforge {

// One annotated input/output pair. The ground-truth corruption flag is
// deliberately not a field here: it lives in NoiseTruth, which selection and
// filtering code never receives.
struct Example {
  std::string id;
  std::string task;
  std::string input_text;
  std::string output_text;
  std::map<std::string, std::string> meta;

  bool operator==(const Example&) const = default;
};

enum class Split { kPool, kTest };
enum class NoiseKind { kIrrelevant, kRelevantImport };
enum class DatasetFormat { kJsonl };

struct NoiseSpec {
  NoiseKind kind = NoiseKind::kIrrelevant;
  double rate = 0.0;
  std::uint64_t seed = 0;
  std::optional<std::string> donor_task;
  std::optional<std::filesystem::path> import_path;

  void validate() const;
  std::string summary() const;
};

// Simulation ground truth: which ids had their output corrupted.
class NoiseTruth {
 public:
  void set(const std::string& id, bool noisy) { flags_[id] = noisy; }
  bool is_noisy(std::string_view id) const;
  bool contains(std::string_view id) const;
  std::size_t noisy_count() const;
  const std::map<std::string, bool, std::less<>>& flags() const { return flags_; }

 private:
  std::map<std::string, bool, std::less<>> flags_;
};

// Read-only view over a set of examples with id lookup. This is what
// selectors and filters operate on; it carries no noise information.
class PoolView {
 public:
  PoolView() = default;
  PoolView(std::span<const Example> examples,
           const std::unordered_map<std::string, std::size_t>* by_id)
      : examples_(examples), by_id_(by_id) {}

  std::span<const Example> examples() const { return examples_; }
  std::size_t size() const { return examples_.size(); }
  const Example* find(std::string_view id) const;
  // Throws UnknownId.
  const Example& at(std::string_view id) const;

 private:
  std::span<const Example> examples_;
  const std::unordered_map<std::string, std::size_t>* by_id_ = nullptr;
};

class Dataset {
 public:
  Dataset() = default;
  // Validates ids (unique) and fields (non-empty input/output).
  explicit Dataset(std::vector<Example> examples, Split split = Split::kPool);

  Dataset(const Dataset& other);
  Dataset& operator=(const Dataset& other);
  Dataset(Dataset&&) noexcept = default;
  Dataset& operator=(Dataset&&) noexcept = default;

  std::span<const Example> examples() const { return examples_; }
  std::size_t size() const { return examples_.size(); }
  bool empty() const { return examples_.empty(); }
  Split split() const { return split_; }

  const Example* find(std::string_view id) const;
  const Example& at(std::string_view id) const;
  PoolView view() const { return PoolView(examples_, &by_id_); }

  // Distinct task tags in first-seen order.
  std::vector<std::string> tasks() const;

  const std::optional<NoiseSpec>& noise_spec() const { return noise_spec_; }
  const std::optional<NoiseTruth>& truth() const { return truth_; }
  void set_noise(std::optional<NoiseSpec> spec, std::optional<NoiseTruth> truth);

 private:
  void rebuild_index();

  std::vector<Example> examples_;
  std::unordered_map<std::string, std::size_t> by_id_;
  Split split_ = Split::kPool;
  std::optional<NoiseSpec> noise_spec_;
  std::optional<NoiseTruth> truth_;
};

Dataset load_dataset(const std::filesystem::path& path,
                     DatasetFormat format = DatasetFormat::kJsonl,
                     Split split = Split::kPool);
// `source` names the input in diagnostics.
Dataset parse_dataset_jsonl(std::string_view text, Split split = Split::kPool,
                            std::string_view source = "<memory>");
// One object per line; `is_noisy` is written only when the dataset carries
// ground truth. Output is byte-deterministic.
std::string dataset_to_jsonl(const Dataset& dataset);
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);

// Relevant-noise import file: id -> corrupted output.
std::map<std::string, std::string> load_corruptions(
    const std::filesystem::path& path);

Dataset inject_irrelevant_noise(const Dataset& pool, const Dataset& donor,
                                const NoiseSpec& spec);

Dataset import_relevant_noise(
    const Dataset& pool, const NoiseSpec& spec,
    const std::map<std::string, std::string>& corruptions);
// Reads spec.import_path.
Dataset import_relevant_noise(const Dataset& pool, const NoiseSpec& spec);

// Returns (pool, test). Both keep the input's relative order.
std::pair<Dataset, Dataset> split_pool(const Dataset& dataset,
                                       double test_fraction,
                                       std::uint64_t seed);

// Number of examples a rate selects out of n: round-half-up of rate * n.
std::size_t noisy_count_for(double rate, std::size_t n);

}  // namespace iclforge
