#include "minibert/synthetic.hpp"

#include <algorithm>
#include <fstream>

#include "json.hpp"
#include "minibert/errors.hpp"
#include "minibert/rng.hpp"

namespace minibert::synthetic {

namespace {

struct Role {
  const char* noun;
  const char* verb;
  const char* object;
};

constexpr Role kRoles[] = {
    {"miller", "grinds", "grain"},     {"baker", "bakes", "bread"},        {"smith", "forges", "iron"},
    {"weaver", "weaves", "cloth"},     {"fisher", "catches", "trout"},     {"farmer", "ploughs", "field"},
    {"potter", "shapes", "clay"},      {"brewer", "brews", "ale"},         {"mason", "lays", "stone"},
    {"tailor", "stitches", "coat"},    {"cooper", "hoops", "barrel"},      {"shepherd", "herds", "sheep"},
    {"carpenter", "planes", "plank"},  {"hunter", "tracks", "deer"},       {"scribe", "copies", "scroll"},
    {"gardener", "waters", "roses"},   {"sailor", "rigs", "mast"},         {"cobbler", "mends", "boot"},
    {"glazier", "cuts", "glass"},      {"tanner", "cures", "hide"},        {"chandler", "dips", "candle"},
    {"beekeeper", "tends", "hive"},    {"thatcher", "thatches", "roof"},   {"vintner", "presses", "grapes"},
};

constexpr const char* kAdjectives[] = {"old", "young", "tall", "quiet", "busy", "tired", "clever", "proud"};
constexpr const char* kPlaces[] = {"village", "town", "valley", "harbour", "market", "castle"};
constexpr const char* kTimes[] = {"at dawn", "at dusk", "every day", "in winter", "in spring", "each week"};

// Verb lists per sentiment class, in the Sentiment enum order.
const std::vector<std::vector<std::string>>& verbs() {
  static const std::vector<std::vector<std::string>> v{
      {"rose", "gained", "climbed", "jumped", "surged", "advanced", "improved", "increased", "grew", "rallied",
       "soared", "strengthened", "expanded", "recovered", "doubled", "rebounded", "outperformed", "topped",
       "accelerated", "exceeded"},
      {"fell", "dropped", "declined", "slumped", "plunged", "decreased", "shrank", "tumbled", "slid", "sank",
       "weakened", "contracted", "halved", "collapsed", "slipped", "dipped", "retreated", "deteriorated", "eroded",
       "plummeted"},
      {"remained", "stood", "totaled", "amounted", "stayed", "equaled", "held", "was", "came", "measured",
       "registered", "summed", "ran", "sat", "hovered", "rested", "settled", "figured", "read", "counted"},
  };
  return v;
}

const std::vector<std::vector<std::string>>& cues() {
  static const std::vector<std::vector<std::string>> c{
      {"shares up", "investors cheered", "outlook bright", "analysts upbeat", "a strong result"},
      {"shares down", "investors worried", "outlook weak", "analysts gloomy", "a poor result"},
      {"shares flat", "investors calm", "outlook unchanged", "analysts neutral", "an ordinary result"},
  };
  return c;
}

constexpr const char* kCompanies[] = {"acme", "borealis", "cygnet", "dunmore", "elkhart", "fenwick", "galena",
                                      "halcyon", "ironbark", "juniper", "kestrel", "larkspur", "meridian", "norland",
                                      "oakhurst", "pinecrest"};
constexpr const char* kMetrics[] = {"sales", "profit", "revenue", "income", "margin", "orders", "output", "earnings"};
constexpr const char* kPeriods[] = {"the first quarter", "the second quarter", "the third quarter", "the year",
                                    "the period", "january", "the review period", "the half"};
constexpr const char* kTails[] = {"", "", "", " , the company said", " , according to the report",
                                  " , the statement said"};

template <typename T, std::size_t N>
const T& pick(Rng& rng, const T (&items)[N]) {
  return items[rng.uniform_int(N)];
}

template <typename T>
const T& pick(Rng& rng, const std::vector<T>& items) {
  return items[rng.uniform_int(items.size())];
}

std::string amount(Rng& rng) { return std::to_string(1 + rng.uniform_int(40)); }

std::string news_sentence(Rng& rng, int cls, std::size_t lexicon_size) {
  const auto& pool = verbs()[static_cast<std::size_t>(cls)];
  const std::size_t n = lexicon_size == 0 ? pool.size() : std::min(lexicon_size, pool.size());
  const std::string& verb = pool[rng.uniform_int(n)];
  std::string s = std::string(pick(rng, kCompanies)) + " " + pick(rng, kMetrics) + " " + verb;
  if (cls == 2) {
    s += " at eur " + amount(rng) + " mn";
  } else {
    s += " by " + amount(rng) + " %";
  }
  s += " in " + std::string(pick(rng, kPeriods)) + pick(rng, kTails) + " .";
  return s;
}

}  // namespace

std::vector<std::string> grammar_corpus(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::string> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Role& r = pick(rng, kRoles);
    std::string s = std::string(rng.bernoulli(0.5) ? "the " : "a ") + pick(rng, kAdjectives) + " " + r.noun + " " +
                    r.verb + " the " + r.object;
    switch (rng.uniform_int(3)) {
      case 0: s += std::string(" in the ") + pick(rng, kPlaces); break;
      case 1: s += std::string(" ") + pick(rng, kTimes); break;
      default: break;
    }
    out.push_back(s + " .");
  }
  return out;
}

std::vector<LabeledSentence> sentiment_dataset(std::size_t n, std::uint64_t seed, const SentimentOptions& options) {
  if (options.label_noise < 0.0 || options.label_noise > 1.0) throw ParameterError("label_noise must be in [0,1]");
  Rng rng(seed);
  constexpr int kAgreements[] = {66, 75, 100, 100};
  std::vector<LabeledSentence> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int cls = static_cast<int>(rng.uniform_int(kNumSentiments));
    LabeledSentence rec{news_sentence(rng, cls, options.lexicon_size), static_cast<Sentiment>(cls),
                        kAgreements[rng.uniform_int(4)]};
    if (rng.bernoulli(options.label_noise)) {
      rec.label = static_cast<Sentiment>((cls + 1 + static_cast<int>(rng.uniform_int(2))) % kNumSentiments);
      rec.agreement = 50;
    }
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<Document> domain_corpus(std::size_t documents, std::size_t sentences_per_document, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Document> out;
  for (std::size_t d = 0; d < documents; ++d) {
    const int cls = static_cast<int>(rng.uniform_int(kNumSentiments));
    Document doc{"doc" + std::to_string(d) + ".txt", {}};
    for (std::size_t s = 0; s < sentences_per_document; ++s) {
      const auto c = static_cast<std::size_t>(cls);
      std::string sentence;
      if (rng.bernoulli(0.5)) {
        sentence = std::string(pick(rng, kMetrics)) + " " + pick(rng, verbs()[c]) + " , " + pick(rng, cues()[c]) + " .";
      } else {
        sentence = news_sentence(rng, cls, 0);
        sentence.insert(sentence.size() - 1, "with " + pick(rng, cues()[c]) + " ");
      }
      doc.sentences.push_back(std::move(sentence));
    }
    out.push_back(std::move(doc));
  }
  return out;
}

std::vector<RegressionExample> regression_dataset(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  constexpr double kCentre[] = {0.6, -0.6, 0.0};
  std::vector<RegressionExample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int cls = static_cast<int>(rng.uniform_int(kNumSentiments));
    const std::string text = news_sentence(rng, cls, 0);
    const double score = std::clamp(kCentre[cls] + 0.15 * rng.normal(), -1.0, 1.0);
    out.push_back({text, score, tokenize(text).front()});
  }
  return out;
}

void write_phrasebank(const std::filesystem::path& path, std::span<const LabeledSentence> records,
                      bool agreement_column) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  for (const auto& r : records) {
    out << r.text << '@' << to_string(r.label);
    if (agreement_column && r.agreement) out << '@' << *r.agreement;
    out << '\n';
  }
}

void write_fiqa(const std::filesystem::path& path, std::span<const RegressionExample> records) {
  nlohmann::json doc = nlohmann::json::array();
  for (const auto& r : records) doc.push_back({{"text", r.text}, {"score", r.score}, {"target", r.target_entity}});
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << doc.dump(1) << '\n';
}

void write_corpus(const std::filesystem::path& dir, std::span<const Document> documents) {
  std::filesystem::create_directories(dir);
  for (const auto& d : documents) {
    std::ofstream out(dir / d.name, std::ios::binary);
    if (!out) throw InputError("cannot write " + (dir / d.name).string());
    for (const auto& s : d.sentences) out << s << '\n';
  }
}

}  // namespace minibert::synthetic
