#include "iclforge/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <sstream>

#include "iclforge/error.hpp"

namespace iclforge {

std::string normalize_answer(std::string_view text) {
  std::string lowered;
  lowered.reserve(text.size());
  for (unsigned char c : text) {
    if (std::ispunct(c)) continue;
    lowered.push_back(static_cast<char>(std::tolower(c)));
  }
  std::string out;
  for (const auto& tok : whitespace_tokens(lowered)) {
    if (tok == "a" || tok == "an" || tok == "the") continue;
    if (!out.empty()) out.push_back(' ');
    out += tok;
  }
  return out;
}

int exact_match(std::string_view prediction,
                std::span<const std::string> references) {
  if (references.empty()) {
    throw Error(ErrorCode::kNoReferences, "exact match needs a reference");
  }
  const std::string pred = normalize_answer(prediction);
  for (const auto& ref : references) {
    if (normalize_answer(ref) == pred) return 1;
  }
  return 0;
}

std::vector<std::string> whitespace_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

namespace {

using NgramCounts = std::map<std::vector<std::string>, double>;

NgramCounts ngrams(const Tokens& tokens, std::size_t n) {
  NgramCounts out;
  if (tokens.size() < n) return out;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    out[std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                 tokens.begin() + static_cast<std::ptrdiff_t>(i + n))] += 1.0;
  }
  return out;
}

}  // namespace

BleuCounts& BleuCounts::operator+=(const BleuCounts& other) {
  if (matches.size() < other.matches.size()) {
    matches.resize(other.matches.size(), 0.0);
    totals.resize(other.totals.size(), 0.0);
  }
  for (std::size_t i = 0; i < other.matches.size(); ++i) {
    matches[i] += other.matches[i];
    totals[i] += other.totals[i];
  }
  hyp_len += other.hyp_len;
  ref_len += other.ref_len;
  return *this;
}

BleuCounts bleu_counts(const Tokens& prediction, std::span<const Tokens> references,
                       std::size_t max_n) {
  if (max_n < 1) throw Error(ErrorCode::kInvalidArgument, "BLEU max_n must be >= 1");
  if (references.empty()) {
    throw Error(ErrorCode::kNoReferences, "BLEU needs a reference");
  }
  BleuCounts counts;
  counts.matches.assign(max_n, 0.0);
  counts.totals.assign(max_n, 0.0);
  counts.hyp_len = static_cast<double>(prediction.size());

  // Closest reference length; ties go to the shorter reference.
  std::size_t best = references.front().size();
  for (const auto& ref : references) {
    const auto d = [&](std::size_t len) {
      return len > prediction.size() ? len - prediction.size() : prediction.size() - len;
    };
    if (d(ref.size()) < d(best) || (d(ref.size()) == d(best) && ref.size() < best)) {
      best = ref.size();
    }
  }
  counts.ref_len = static_cast<double>(best);

  for (std::size_t n = 1; n <= max_n; ++n) {
    const auto hyp = ngrams(prediction, n);
    NgramCounts max_ref;
    for (const auto& ref : references) {
      for (const auto& [gram, c] : ngrams(ref, n)) {
        auto& slot = max_ref[gram];
        slot = std::max(slot, c);
      }
    }
    for (const auto& [gram, c] : hyp) {
      counts.totals[n - 1] += c;
      if (auto it = max_ref.find(gram); it != max_ref.end()) {
        counts.matches[n - 1] += std::min(c, it->second);
      }
    }
  }
  return counts;
}

double bleu_from_counts(const BleuCounts& counts) {
  const std::size_t max_n = counts.matches.size();
  if (max_n == 0 || counts.hyp_len <= 0.0 || counts.matches[0] <= 0.0) return 0.0;
  bool smooth = false;
  for (std::size_t i = 1; i < max_n; ++i) {
    if (counts.matches[i] <= 0.0) smooth = true;
  }
  double log_sum = std::log(counts.matches[0] / counts.totals[0]);
  for (std::size_t i = 1; i < max_n; ++i) {
    const double m = counts.matches[i] + (smooth ? 1.0 : 0.0);
    const double c = counts.totals[i] + (smooth ? 1.0 : 0.0);
    log_sum += std::log(m / c);
  }
  const double log_bp = counts.hyp_len < counts.ref_len
                            ? 1.0 - counts.ref_len / counts.hyp_len
                            : 0.0;
  return std::exp(log_bp + log_sum / static_cast<double>(max_n));
}

double bleu(const Tokens& prediction, std::span<const Tokens> references,
            std::size_t max_n) {
  if (prediction.empty()) {
    if (max_n < 1) throw Error(ErrorCode::kInvalidArgument, "BLEU max_n must be >= 1");
    return 0.0;
  }
  return bleu_from_counts(bleu_counts(prediction, references, max_n));
}

double corpus_bleu(std::span<const Tokens> predictions,
                   std::span<const std::vector<Tokens>> references,
                   std::size_t max_n) {
  if (predictions.size() != references.size()) {
    throw Error(ErrorCode::kInvalidArgument,
                "corpus BLEU needs one reference list per prediction");
  }
  BleuCounts total;
  total.matches.assign(max_n, 0.0);
  total.totals.assign(max_n, 0.0);
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    total += bleu_counts(predictions[i], references[i], max_n);
  }
  return bleu_from_counts(total);
}

}  // namespace iclforge
