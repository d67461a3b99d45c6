#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace iclforge {

// Lowercase, drop ASCII punctuation, drop the articles a/an/the, collapse
// whitespace.
std::string normalize_answer(std::string_view text);

// 1 iff the normalized prediction equals some normalized reference.
// Throws NoReferences.
int exact_match(std::string_view prediction,
                std::span<const std::string> references);

std::vector<std::string> whitespace_tokens(std::string_view text);

using Tokens = std::vector<std::string>;

// Clipped n-gram statistics of one prediction against its references.
struct BleuCounts {
  std::vector<double> matches;  // per order, 1..max_n
  std::vector<double> totals;
  double hyp_len = 0.0;
  double ref_len = 0.0;  // closest reference length, shorter on ties

  BleuCounts& operator+=(const BleuCounts& other);
};

BleuCounts bleu_counts(const Tokens& prediction, std::span<const Tokens> references,
                       std::size_t max_n = 4);
// Uniform geometric mean of the precisions times the brevity penalty. When any
// order n >= 2 has zero matches, every order n >= 2 uses (m + 1) / (c + 1).
double bleu_from_counts(const BleuCounts& counts);

// Sentence BLEU in [0, 1]. An empty prediction scores 0.
double bleu(const Tokens& prediction, std::span<const Tokens> references,
            std::size_t max_n = 4);

// Counts summed over the corpus before the precisions are taken.
double corpus_bleu(std::span<const Tokens> predictions,
                   std::span<const std::vector<Tokens>> references,
                   std::size_t max_n = 4);

}  // namespace iclforge
