#pragma once

// Small generated datasets used by the tests, the acceptance suite and the
// CLI examples.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "minibert/data.hpp"

namespace minibert::synthetic {

// Sentences from a fixed grammar in which every noun has one verb and one
// preferred object, e.g. "the old miller grinds the grain ."
std::vector<std::string> grammar_corpus(std::size_t n, std::uint64_t seed);

struct SentimentOptions {
  // Probability that a label is replaced by a different class.
  double label_noise = 0.0;
  // Only the first `lexicon_size` verbs of each class are used (0 = all).
  std::size_t lexicon_size = 0;
};

// Financial-news style sentences whose label is set by the verb class.
// Agreement levels are drawn from {50, 66, 75, 100}; noisy records get 50.
std::vector<LabeledSentence> sentiment_dataset(std::size_t n, std::uint64_t seed, const SentimentOptions& options = {});

// Documents in which every sentiment verb co-occurs with a cue phrase of its
// class ("shares up", "investors worried", ...). Sentences in one document
// share a class.
std::vector<Document> domain_corpus(std::size_t documents, std::size_t sentences_per_document, std::uint64_t seed);

// Scores in [-1, 1] from the verb class plus noise.
std::vector<RegressionExample> regression_dataset(std::size_t n, std::uint64_t seed);

// Writers for the on-disk formats read by the data module.
void write_phrasebank(const std::filesystem::path& path, std::span<const LabeledSentence> records,
                      bool agreement_column = true);
void write_fiqa(const std::filesystem::path& path, std::span<const RegressionExample> records);
void write_corpus(const std::filesystem::path& dir, std::span<const Document> documents);

}  // namespace minibert::synthetic
