#pragma once

// Tokenisation, dataset parsing, corpus filtering, splitting and the
// construction of masked-LM / next-sentence batches.

#include <cstdint>
#include <filesystem>
#include <istream>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "minibert/model.hpp"

namespace minibert {

// Special token ids are fixed.
inline constexpr std::int32_t kPadId = 0;
inline constexpr std::int32_t kUnkId = 1;
inline constexpr std::int32_t kClsId = 2;
inline constexpr std::int32_t kSepId = 3;
inline constexpr std::int32_t kMaskId = 4;
inline constexpr std::size_t kNumSpecialTokens = 5;

// Lowercases and splits on whitespace; every ASCII punctuation character is
// its own token. Bytes >= 0x80 are treated as word characters.
std::vector<std::string> tokenize(std::string_view text);

class Vocabulary {
 public:
  Vocabulary();  // specials only
  explicit Vocabulary(std::vector<std::string> tokens);

  // Top (size - 5) tokens by frequency; ties broken lexicographically.
  static Vocabulary build(std::span<const std::string> corpus, std::size_t size);

  std::int32_t id(std::string_view token) const;
  const std::string& token(std::int32_t id) const;
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<std::int32_t> content_ids(std::string_view text) const;
  // Space-joined tokens, specials and padding skipped.
  std::string decode(std::span<const std::int32_t> ids) const;

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> index_;
};

struct EncodedText {
  std::vector<std::int32_t> token_ids;
  std::vector<std::int32_t> attention_mask;
};

// [CLS] content [SEP] padded to max_len; content truncated to max_len - 2
// keeping the head.
EncodedText tokenize_encode(const Vocabulary& vocab, std::string_view text, std::size_t max_len);

// Pads each sequence of content ids to the longest one in the batch
// (capped at max_len) and wraps it with [CLS] ... [SEP].
EncoderInput make_encoder_input(std::span<const std::vector<std::int32_t>> contents, std::size_t max_len);

enum class Sentiment : std::int32_t { positive = 0, negative = 1, neutral = 2 };
inline constexpr int kNumSentiments = 3;

std::string to_string(Sentiment s);
std::optional<Sentiment> parse_sentiment(std::string_view text);

struct LabeledSentence {
  std::string text;
  Sentiment label = Sentiment::neutral;
  std::optional<int> agreement;  // 50, 66, 75 or 100 percent

  bool operator==(const LabeledSentence&) const = default;
};

struct RegressionExample {
  std::string text;
  double score = 0.0;  // in [-1, 1]
  std::string target_entity;

  bool operator==(const RegressionExample&) const = default;
};

struct LineError {
  std::size_t line = 0;
  std::string message;
};

struct PhraseBankParse {
  std::vector<LabeledSentence> records;
  std::vector<LineError> errors;
};

// Agreement level implied by a PhraseBank file name
// (Sentences_AllAgree / _75Agree / _66Agree / _50Agree).
std::optional<int> agreement_from_filename(const std::string& filename);

// One "sentence@label" per line; an optional trailing "@NN" column overrides
// the agreement level. Malformed lines are reported, never dropped silently.
PhraseBankParse parse_phrasebank(std::istream& in, std::optional<int> default_agreement = std::nullopt);
PhraseBankParse parse_phrasebank(const std::filesystem::path& path);
// Throws ParseError naming the first bad line when any line is malformed.
std::vector<LabeledSentence> load_phrasebank(const std::filesystem::path& path);

// JSON array of {text, score, target}.
std::vector<RegressionExample> parse_fiqa(std::istream& in, const std::string& source = "<fiqa>");
std::vector<RegressionExample> parse_fiqa(const std::filesystem::path& path);

struct Document {
  std::string name;
  std::vector<std::string> sentences;
};

// Every regular file in `dir` (sorted by name) is one document with one
// sentence per non-empty line.
std::vector<Document> load_corpus(const std::filesystem::path& dir);
// All sentences of all documents, in order.
std::vector<std::string> sentences_of(std::span<const Document> documents);
std::vector<std::string> load_keywords(const std::filesystem::path& path);

struct FilterResult {
  std::vector<Document> kept;
  std::size_t kept_count = 0;
  std::size_t total_count = 0;
};

// Keeps a document iff one of its tokens equals a keyword (case-insensitive).
FilterResult filter_corpus(std::span<const Document> documents, std::span<const std::string> keywords);

struct SplitIndices {
  std::vector<std::size_t> train, validation, test;
};

// floor(0.2 N) test, floor(0.2 of the rest) validation, remainder train.
// With labels given, the shuffled order is interleaved per label first so
// each split keeps the label proportions (sizes are unchanged).
SplitIndices split_indices(std::size_t n, std::uint64_t seed, std::span<const std::int32_t> stratify_labels = {});

template <typename Record>
struct DatasetSplits {
  std::vector<Record> train, validation, test;
};

template <typename Record>
std::vector<Record> select(std::span<const Record> records, std::span<const std::size_t> indices) {
  std::vector<Record> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(records[i]);
  return out;
}

DatasetSplits<LabeledSentence> split_dataset(std::span<const LabeledSentence> records, std::uint64_t seed,
                                             bool stratify = false);
DatasetSplits<RegressionExample> split_dataset(std::span<const RegressionExample> records, std::uint64_t seed);

struct Fold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

// k folds over a seeded shuffle; the first N mod k folds get one extra record.
std::vector<Fold> kfold_split(std::size_t n, std::size_t k, std::uint64_t seed);

struct MaskedBatch {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::vector<std::int32_t> token_ids;        // [batch*seq], masked tokens replaced
  std::vector<std::int32_t> segment_ids;      // [batch*seq]
  std::vector<std::int32_t> attention_mask;   // [batch*seq]
  std::vector<std::int32_t> masked_positions; // flat b*seq + s, ascending
  std::vector<std::int32_t> masked_targets;   // original ids at masked_positions
  std::vector<std::int32_t> is_next;          // per sequence, NSP batches only

  EncoderInput encoder_input() const { return {batch, seq, token_ids, segment_ids, attention_mask}; }
};

// Number of positions masked in a sequence with `maskable` content tokens.
std::size_t masked_count(std::size_t maskable, double mask_rate);

// Replaces round(mask_rate * content) tokens per sequence (at least one) by
// [MASK]; [CLS], [SEP] and padding are never selected.
MaskedBatch make_mlm_batch(std::span<const std::vector<std::int32_t>> contents, std::size_t max_len,
                           double mask_rate, std::uint64_t seed);
MaskedBatch make_mlm_batch(std::span<const std::string> sentences, const Vocabulary& vocab, std::size_t max_len,
                           double mask_rate, std::uint64_t seed);

struct SentencePair {
  std::size_t doc_a = 0, sent_a = 0;
  std::size_t doc_b = 0, sent_b = 0;
  bool is_next = false;
};

// One pair per consecutive sentence pair in the corpus; half keep the true
// successor, the rest draw a sentence from a different document.
std::vector<SentencePair> make_nsp_pairs(std::span<const std::vector<std::vector<std::int32_t>>> documents,
                                         std::uint64_t seed);

// [CLS] A [SEP] B [SEP] with segment 0 through the first [SEP], then MLM masking.
MaskedBatch make_pair_batch(std::span<const std::vector<std::vector<std::int32_t>>> documents,
                            std::span<const SentencePair> pairs, std::size_t max_len, double mask_rate,
                            std::uint64_t seed);

MaskedBatch make_nsp_batch(std::span<const Document> documents, const Vocabulary& vocab, std::size_t max_len,
                           double mask_rate, std::uint64_t seed);

std::vector<std::vector<std::int32_t>> encode_contents(const Vocabulary& vocab, std::span<const std::string> texts);

}  // namespace minibert
