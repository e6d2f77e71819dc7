#include "minibert/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "minibert/errors.hpp"
#include "minibert/rng.hpp"

namespace minibert {

namespace {

const std::vector<std::string>& special_tokens() {
  static const std::vector<std::string> specials{"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
  return specials;
}

bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }
bool is_punct(unsigned char c) { return c < 0x80 && std::ispunct(c) != 0; }

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && is_space(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && is_space(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

bool all_digits(std::string_view s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
}

bool valid_agreement(int a) { return a == 50 || a == 66 || a == 75 || a == 100; }

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) out.push_back(std::move(current));
    current.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (is_space(c)) {
      flush();
    } else if (is_punct(c)) {
      flush();
      out.emplace_back(1, ch);
    } else {
      current.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
    }
  }
  flush();
  return out;
}

Vocabulary::Vocabulary() : Vocabulary(special_tokens()) {}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  const auto& specials = special_tokens();
  if (tokens_.size() < specials.size() || !std::equal(specials.begin(), specials.end(), tokens_.begin())) {
    throw InputError("vocabulary must start with [PAD] [UNK] [CLS] [SEP] [MASK]");
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<std::int32_t>(i)).second) {
      throw InputError("vocabulary has duplicate token '" + tokens_[i] + "'");
    }
  }
}

Vocabulary Vocabulary::build(std::span<const std::string> corpus, std::size_t size) {
  if (size <= kNumSpecialTokens) throw ParameterError("vocabulary size must exceed the 5 special tokens");
  if (corpus.empty()) throw InputError("cannot build a vocabulary from an empty corpus");
  std::map<std::string, std::size_t> counts;
  for (const auto& sentence : corpus)
    for (auto& tok : tokenize(sentence)) ++counts[tok];
  if (counts.empty()) throw InputError("cannot build a vocabulary from a corpus without tokens");
  for (const auto& s : special_tokens()) counts.erase(s);

  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  // map iteration is already lexicographic; stable sort keeps that as the tie-break
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens = special_tokens();
  for (const auto& [tok, count] : ranked) {
    if (tokens.size() >= size) break;
    tokens.push_back(tok);
  }
  return Vocabulary(std::move(tokens));
}

std::int32_t Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::token(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw IndexError("token id " + std::to_string(id) + " outside vocabulary");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<std::int32_t> Vocabulary::content_ids(std::string_view text) const {
  std::vector<std::int32_t> ids;
  for (const auto& tok : tokenize(text)) ids.push_back(id(tok));
  return ids;
}

std::string Vocabulary::decode(std::span<const std::int32_t> ids) const {
  std::string out;
  for (std::int32_t id : ids) {
    if (id == kPadId || id == kClsId || id == kSepId) continue;
    if (!out.empty()) out.push_back(' ');
    out += token(id);
  }
  return out;
}

EncodedText tokenize_encode(const Vocabulary& vocab, std::string_view text, std::size_t max_len) {
  if (max_len < 3) throw ParameterError("max_len must be at least 3");
  auto content = vocab.content_ids(text);
  if (content.size() > max_len - 2) content.resize(max_len - 2);
  EncodedText enc;
  enc.token_ids.assign(max_len, kPadId);
  enc.attention_mask.assign(max_len, 0);
  enc.token_ids[0] = kClsId;
  std::copy(content.begin(), content.end(), enc.token_ids.begin() + 1);
  enc.token_ids[content.size() + 1] = kSepId;
  std::fill_n(enc.attention_mask.begin(), content.size() + 2, 1);
  return enc;
}

EncoderInput make_encoder_input(std::span<const std::vector<std::int32_t>> contents, std::size_t max_len) {
  if (max_len < 3) throw ParameterError("max_len must be at least 3");
  if (contents.empty()) throw InputError("cannot build an empty batch");
  std::size_t longest = 0;
  for (const auto& c : contents) longest = std::max(longest, std::min(c.size(), max_len - 2));
  EncoderInput in;
  in.batch = contents.size();
  in.seq = longest + 2;
  in.token_ids.assign(in.batch * in.seq, kPadId);
  in.segment_ids.assign(in.batch * in.seq, 0);
  in.attention_mask.assign(in.batch * in.seq, 0);
  for (std::size_t b = 0; b < in.batch; ++b) {
    const std::size_t len = std::min(contents[b].size(), max_len - 2);
    std::int32_t* row = in.token_ids.data() + b * in.seq;
    row[0] = kClsId;
    std::copy_n(contents[b].begin(), len, row + 1);
    row[len + 1] = kSepId;
    std::fill_n(in.attention_mask.begin() + static_cast<std::ptrdiff_t>(b * in.seq), len + 2, 1);
  }
  return in;
}

std::vector<std::vector<std::int32_t>> encode_contents(const Vocabulary& vocab, std::span<const std::string> texts) {
  std::vector<std::vector<std::int32_t>> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(vocab.content_ids(t));
  return out;
}

std::string to_string(Sentiment s) {
  switch (s) {
    case Sentiment::positive: return "positive";
    case Sentiment::negative: return "negative";
    case Sentiment::neutral: return "neutral";
  }
  return "?";
}

std::optional<Sentiment> parse_sentiment(std::string_view text) {
  if (text == "positive") return Sentiment::positive;
  if (text == "negative") return Sentiment::negative;
  if (text == "neutral") return Sentiment::neutral;
  return std::nullopt;
}

std::optional<int> agreement_from_filename(const std::string& filename) {
  if (filename.find("AllAgree") != std::string::npos) return 100;
  if (filename.find("75Agree") != std::string::npos) return 75;
  if (filename.find("66Agree") != std::string::npos) return 66;
  if (filename.find("50Agree") != std::string::npos) return 50;
  return std::nullopt;
}

PhraseBankParse parse_phrasebank(std::istream& in, std::optional<int> default_agreement) {
  PhraseBankParse result;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (trim(line).empty()) continue;
    auto at = line.rfind('@');
    if (at == std::string::npos) {
      result.errors.push_back({number, "missing '@' between sentence and label"});
      continue;
    }
    std::string label_text = trim(std::string_view(line).substr(at + 1));
    std::optional<int> agreement = default_agreement;
    std::string_view head = std::string_view(line).substr(0, at);
    if (all_digits(label_text)) {
      const auto prev = head.rfind('@');
      if (prev == std::string_view::npos) {
        result.errors.push_back({number, "agreement column without a label"});
        continue;
      }
      const int value = std::stoi(label_text);
      if (!valid_agreement(value)) {
        result.errors.push_back({number, "agreement must be 50, 66, 75 or 100, got " + label_text});
        continue;
      }
      agreement = value;
      label_text = trim(head.substr(prev + 1));
      head = head.substr(0, prev);
    }
    const auto label = parse_sentiment(label_text);
    if (!label) {
      result.errors.push_back({number, "unknown label '" + label_text + "'"});
      continue;
    }
    std::string text = trim(head);
    if (text.empty()) {
      result.errors.push_back({number, "empty sentence"});
      continue;
    }
    result.records.push_back({std::move(text), *label, agreement});
  }
  return result;
}

PhraseBankParse parse_phrasebank(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  return parse_phrasebank(in, agreement_from_filename(path.filename().string()));
}

std::vector<LabeledSentence> load_phrasebank(const std::filesystem::path& path) {
  auto parsed = parse_phrasebank(path);
  if (!parsed.errors.empty()) {
    const auto& first = parsed.errors.front();
    throw ParseError(first.message + " (" + std::to_string(parsed.errors.size()) + " malformed line(s))",
                     path.string(), first.line);
  }
  return std::move(parsed.records);
}

std::vector<RegressionExample> parse_fiqa(std::istream& in, const std::string& source) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("invalid JSON: ") + e.what(), source);
  }
  if (!doc.is_array()) throw ParseError("expected a JSON array of records", source);
  std::vector<RegressionExample> out;
  out.reserve(doc.size());
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& item = doc[i];
    const std::string where = "record " + std::to_string(i + 1) + ": ";
    if (!item.is_object()) throw ParseError(where + "expected an object", source);
    if (!item.contains("text") || !item["text"].is_string()) throw ParseError(where + "missing string 'text'", source);
    if (!item.contains("score") || !item["score"].is_number()) throw ParseError(where + "missing numeric 'score'", source);
    if (!item.contains("target") || !item["target"].is_string())
      throw ParseError(where + "missing string 'target'", source);
    const double score = item["score"].get<double>();
    if (!(score >= -1.0 && score <= 1.0)) {
      throw ValidationError(where + "score " + std::to_string(score) + " outside [-1,1]", source);
    }
    out.push_back({item["text"].get<std::string>(), score, item["target"].get<std::string>()});
  }
  return out;
}

std::vector<RegressionExample> parse_fiqa(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  return parse_fiqa(in, path.string());
}

std::vector<Document> load_corpus(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw InputError("corpus directory not found: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file()) files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  std::vector<Document> docs;
  for (const auto& f : files) {
    std::ifstream in(f, std::ios::binary);
    if (!in) throw InputError("cannot open " + f.string());
    Document doc{f.filename().string(), {}};
    std::string line;
    while (std::getline(in, line)) {
      auto t = trim(line);
      if (!t.empty()) doc.sentences.push_back(std::move(t));
    }
    docs.push_back(std::move(doc));
  }
  return docs;
}

std::vector<std::string> sentences_of(std::span<const Document> documents) {
  std::vector<std::string> out;
  for (const auto& d : documents) out.insert(out.end(), d.sentences.begin(), d.sentences.end());
  return out;
}

std::vector<std::string> load_keywords(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open keyword file " + path.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    auto t = trim(line);
    if (!t.empty()) out.push_back(std::move(t));
  }
  if (out.empty()) throw InputError("keyword file " + path.string() + " is empty");
  return out;
}

FilterResult filter_corpus(std::span<const Document> documents, std::span<const std::string> keywords) {
  if (keywords.empty()) throw InputError("keyword list must not be empty");
  std::vector<std::string> wanted;
  for (const auto& k : keywords) {
    for (auto& tok : tokenize(k)) wanted.push_back(std::move(tok));
  }
  std::sort(wanted.begin(), wanted.end());
  FilterResult result;
  result.total_count = documents.size();
  for (const auto& doc : documents) {
    bool hit = false;
    for (const auto& sentence : doc.sentences) {
      for (const auto& tok : tokenize(sentence)) {
        if (std::binary_search(wanted.begin(), wanted.end(), tok)) {
          hit = true;
          break;
        }
      }
      if (hit) break;
    }
    if (hit) result.kept.push_back(doc);
  }
  result.kept_count = result.kept.size();
  return result;
}

SplitIndices split_indices(std::size_t n, std::uint64_t seed, std::span<const std::int32_t> stratify_labels) {
  if (n < 5) throw InputError("need at least 5 records to split, got " + std::to_string(n));
  if (!stratify_labels.empty() && stratify_labels.size() != n) {
    throw DimensionError("stratification labels must match the record count");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));

  if (!stratify_labels.empty()) {
    // Position each record at (rank within its label + 0.5) / label count, so
    // every prefix of the order holds roughly the global label mix.
    std::map<std::int32_t, std::size_t> totals, seen;
    for (auto l : stratify_labels) ++totals[l];
    std::vector<std::pair<double, std::size_t>> keyed;
    for (std::size_t idx : order) {
      const auto label = stratify_labels[idx];
      const double key = (static_cast<double>(seen[label]++) + 0.5) / static_cast<double>(totals[label]);
      keyed.emplace_back(key, idx);
    }
    std::stable_sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    for (std::size_t i = 0; i < n; ++i) order[i] = keyed[i].second;
  }

  const std::size_t test = n / 5;
  const std::size_t validation = (n - test) / 5;
  SplitIndices out;
  out.test.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(test));
  out.validation.assign(order.begin() + static_cast<std::ptrdiff_t>(test),
                        order.begin() + static_cast<std::ptrdiff_t>(test + validation));
  out.train.assign(order.begin() + static_cast<std::ptrdiff_t>(test + validation), order.end());
  std::sort(out.test.begin(), out.test.end());
  std::sort(out.validation.begin(), out.validation.end());
  std::sort(out.train.begin(), out.train.end());
  return out;
}

DatasetSplits<LabeledSentence> split_dataset(std::span<const LabeledSentence> records, std::uint64_t seed,
                                             bool stratify) {
  std::vector<std::int32_t> labels;
  if (stratify) {
    for (const auto& r : records) labels.push_back(static_cast<std::int32_t>(r.label));
  }
  const auto idx = split_indices(records.size(), seed, labels);
  return {select(records, std::span<const std::size_t>(idx.train)),
          select(records, std::span<const std::size_t>(idx.validation)),
          select(records, std::span<const std::size_t>(idx.test))};
}

DatasetSplits<RegressionExample> split_dataset(std::span<const RegressionExample> records, std::uint64_t seed) {
  const auto idx = split_indices(records.size(), seed);
  return {select(records, std::span<const std::size_t>(idx.train)),
          select(records, std::span<const std::size_t>(idx.validation)),
          select(records, std::span<const std::size_t>(idx.test))};
}

std::vector<Fold> kfold_split(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw ParameterError("k-fold needs k >= 2");
  if (k > n) throw InputError("k-fold with k=" + std::to_string(k) + " needs at least k records, got " +
                              std::to_string(n));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<Fold> folds(k);
  std::size_t start = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t size = n / k + (f < n % k ? 1 : 0);
    folds[f].test.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(start + size));
    std::sort(folds[f].test.begin(), folds[f].test.end());
    start += size;
  }
  for (std::size_t f = 0; f < k; ++f) {
    for (std::size_t g = 0; g < k; ++g)
      if (g != f) folds[f].train.insert(folds[f].train.end(), folds[g].test.begin(), folds[g].test.end());
    std::sort(folds[f].train.begin(), folds[f].train.end());
  }
  return folds;
}

std::size_t masked_count(std::size_t maskable, double mask_rate) {
  if (maskable == 0) return 0;
  const auto rounded = static_cast<std::size_t>(std::llround(mask_rate * static_cast<double>(maskable)));
  return std::min(maskable, std::max<std::size_t>(1, rounded));
}

namespace {

void check_mask_rate(double mask_rate) {
  if (!(mask_rate > 0.0 && mask_rate < 1.0)) throw ParameterError("mask rate must be in (0,1)");
}

// Masks `count` of the given flat positions in `batch`.
void mask_positions(MaskedBatch& batch, std::vector<std::int32_t> candidates, double mask_rate, Rng& rng) {
  const std::size_t count = masked_count(candidates.size(), mask_rate);
  for (std::size_t i = 0; i < count; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.uniform_int(candidates.size() - i));
    std::swap(candidates[i], candidates[j]);
  }
  candidates.resize(count);
  std::sort(candidates.begin(), candidates.end());
  for (std::int32_t pos : candidates) {
    batch.masked_positions.push_back(pos);
    batch.masked_targets.push_back(batch.token_ids[static_cast<std::size_t>(pos)]);
    batch.token_ids[static_cast<std::size_t>(pos)] = kMaskId;
  }
}

}  // namespace

MaskedBatch make_mlm_batch(std::span<const std::vector<std::int32_t>> contents, std::size_t max_len,
                           double mask_rate, std::uint64_t seed) {
  check_mask_rate(mask_rate);
  const EncoderInput in = make_encoder_input(contents, max_len);
  MaskedBatch batch;
  batch.batch = in.batch;
  batch.seq = in.seq;
  batch.token_ids = in.token_ids;
  batch.segment_ids = in.segment_ids;
  batch.attention_mask = in.attention_mask;
  Rng rng(seed);
  for (std::size_t b = 0; b < in.batch; ++b) {
    const std::size_t len = std::min(contents[b].size(), max_len - 2);
    std::vector<std::int32_t> candidates;
    for (std::size_t s = 1; s <= len; ++s) candidates.push_back(static_cast<std::int32_t>(b * in.seq + s));
    mask_positions(batch, std::move(candidates), mask_rate, rng);
  }
  return batch;
}

MaskedBatch make_mlm_batch(std::span<const std::string> sentences, const Vocabulary& vocab, std::size_t max_len,
                           double mask_rate, std::uint64_t seed) {
  const auto contents = encode_contents(vocab, sentences);
  return make_mlm_batch(std::span<const std::vector<std::int32_t>>(contents), max_len, mask_rate, seed);
}

std::vector<SentencePair> make_nsp_pairs(std::span<const std::vector<std::vector<std::int32_t>>> documents,
                                         std::uint64_t seed) {
  std::size_t eligible = 0;
  for (const auto& d : documents) eligible += d.size() >= 2 ? 1 : 0;
  if (documents.size() < 2 || eligible < 2) {
    throw InputError("next-sentence pairs need at least 2 documents with 2 or more sentences");
  }
  Rng rng(seed);
  std::vector<SentencePair> pairs;
  for (std::size_t d = 0; d < documents.size(); ++d) {
    for (std::size_t i = 0; i + 1 < documents[d].size(); ++i) {
      SentencePair p{d, i, d, i + 1, true};
      if (!rng.bernoulli(0.5)) {
        std::size_t other;
        do {
          other = static_cast<std::size_t>(rng.uniform_int(documents.size()));
        } while (other == d || documents[other].empty());
        p.doc_b = other;
        p.sent_b = static_cast<std::size_t>(rng.uniform_int(documents[other].size()));
        p.is_next = false;
      }
      pairs.push_back(p);
    }
  }
  return pairs;
}

MaskedBatch make_pair_batch(std::span<const std::vector<std::vector<std::int32_t>>> documents,
                            std::span<const SentencePair> pairs, std::size_t max_len, double mask_rate,
                            std::uint64_t seed) {
  check_mask_rate(mask_rate);
  if (max_len < 5) throw ParameterError("sentence pairs need max_len >= 5");
  if (pairs.empty()) throw InputError("cannot build an empty pair batch");
  struct Sides {
    std::vector<std::int32_t> a, b;
  };
  std::vector<Sides> sides;
  std::size_t longest = 0;
  for (const auto& p : pairs) {
    Sides s{documents[p.doc_a][p.sent_a], documents[p.doc_b][p.sent_b]};
    while (s.a.size() + s.b.size() + 3 > max_len) {
      if (s.a.size() >= s.b.size()) s.a.pop_back();
      else s.b.pop_back();
    }
    longest = std::max(longest, s.a.size() + s.b.size() + 3);
    sides.push_back(std::move(s));
  }
  MaskedBatch batch;
  batch.batch = pairs.size();
  batch.seq = longest;
  batch.token_ids.assign(batch.batch * batch.seq, kPadId);
  batch.segment_ids.assign(batch.batch * batch.seq, 0);
  batch.attention_mask.assign(batch.batch * batch.seq, 0);
  Rng rng(seed);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& s = sides[i];
    const std::size_t base = i * batch.seq;
    std::size_t pos = base;
    std::vector<std::int32_t> candidates;
    batch.token_ids[pos++] = kClsId;
    for (auto id : s.a) {
      candidates.push_back(static_cast<std::int32_t>(pos));
      batch.token_ids[pos++] = id;
    }
    batch.token_ids[pos++] = kSepId;
    for (auto id : s.b) {
      candidates.push_back(static_cast<std::int32_t>(pos));
      batch.segment_ids[pos] = 1;
      batch.token_ids[pos++] = id;
    }
    batch.segment_ids[pos] = 1;
    batch.token_ids[pos++] = kSepId;
    std::fill(batch.attention_mask.begin() + static_cast<std::ptrdiff_t>(base),
              batch.attention_mask.begin() + static_cast<std::ptrdiff_t>(pos), 1);
    batch.is_next.push_back(pairs[i].is_next ? 1 : 0);
    mask_positions(batch, std::move(candidates), mask_rate, rng);
  }
  return batch;
}

MaskedBatch make_nsp_batch(std::span<const Document> documents, const Vocabulary& vocab, std::size_t max_len,
                           double mask_rate, std::uint64_t seed) {
  std::vector<std::vector<std::vector<std::int32_t>>> encoded;
  for (const auto& d : documents) encoded.push_back(encode_contents(vocab, d.sentences));
  const auto pairs = make_nsp_pairs(encoded, seed);
  return make_pair_batch(encoded, pairs, max_len, mask_rate, derive_seed(seed, 1));
}

}  // namespace minibert
