#include "detox/corpus.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "httplib.h"
#include "json.hpp"

#include "detox/rng.hpp"

namespace detox {

using nlohmann::json;

namespace {

std::string origin_name(Origin o) {
  return o == Origin::kInLanguage ? "in_language" : "translated";
}

// Parses one JSONL record; throws std::runtime_error on any schema problem.
LabeledSample parse_sample(const std::string& line, std::size_t line_no) {
  json j = json::parse(line);  // throws on bad JSON
  if (!j.is_object()) throw std::runtime_error("record is not an object");
  LabeledSample s;
  if (!j.contains("text") || !j["text"].is_string())
    throw std::runtime_error("missing string field 'text'");
  if (!j.contains("lang") || !j["lang"].is_string())
    throw std::runtime_error("missing string field 'lang'");
  if (!j.contains("label") || !j["label"].is_string())
    throw std::runtime_error("missing string field 'label'");
  s.text = j["text"].get<std::string>();
  s.language = j["lang"].get<std::string>();
  const std::string label = j["label"].get<std::string>();
  if (label == "toxic") {
    s.label = Polarity::kToxic;
  } else if (label == "nontoxic") {
    s.label = Polarity::kNontoxic;
  } else {
    throw std::runtime_error("label must be 'toxic' or 'nontoxic', got '" +
                             label + "'");
  }
  if (j.contains("source_id") && j["source_id"].is_string()) {
    s.source_id = j["source_id"].get<std::string>();
  } else {
    s.source_id = "line-" + std::to_string(line_no);
  }
  if (j.contains("parallel_group") && !j["parallel_group"].is_null()) {
    if (!j["parallel_group"].is_number_integer())
      throw std::runtime_error("parallel_group must be an integer or null");
    s.parallel_group = j["parallel_group"].get<std::int64_t>();
  }
  if (j.contains("origin") && !j["origin"].is_null()) {
    const std::string o = j["origin"].get<std::string>();
    if (o == "in_language") {
      s.origin = Origin::kInLanguage;
    } else if (o == "translated") {
      s.origin = Origin::kTranslated;
    } else {
      throw std::runtime_error("origin must be 'in_language' or 'translated'");
    }
  }
  return s;
}

}  // namespace

LoadResult load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus file: " + path);
  LoadResult result;
  std::string line;
  std::size_t line_no = 0;
  std::size_t malformed = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ++result.total_lines;
    try {
      result.samples.push_back(parse_sample(line, line_no));
    } catch (const std::exception& e) {
      ++malformed;
      result.warnings.push_back("line " + std::to_string(line_no) + ": " +
                                e.what());
    }
  }
  if (result.total_lines == 0) {
    result.warnings.push_back("empty corpus file: " + path);
    return result;
  }
  if (static_cast<double>(malformed) >
      0.01 * static_cast<double>(result.total_lines)) {
    throw std::runtime_error(
        "corpus " + path + ": " + std::to_string(malformed) + " of " +
        std::to_string(result.total_lines) +
        " lines malformed (above the 1% tolerance)");
  }
  return result;
}

void save_corpus(const std::vector<LabeledSample>& samples,
                 const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  for (const auto& s : samples) {
    json j;
    j["text"] = s.text;
    j["lang"] = s.language;
    j["label"] = s.label == Polarity::kToxic ? "toxic" : "nontoxic";
    j["source_id"] = s.source_id;
    if (s.parallel_group)
      j["parallel_group"] = *s.parallel_group;
    else
      j["parallel_group"] = nullptr;
    j["origin"] = origin_name(s.origin);
    out << j.dump() << "\n";
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

namespace {

// Seeded without-replacement pick of `count` items from one label's subset.
std::vector<LabeledSample> pick_label(const std::vector<LabeledSample>& pool,
                                      Polarity label, std::size_t count,
                                      std::uint64_t seed) {
  std::vector<LabeledSample> subset;
  for (const auto& s : pool)
    if (s.label == label) subset.push_back(s);
  if (subset.size() < count) {
    throw std::invalid_argument(
        "sample plan shortfall: need " + std::to_string(count) + " " +
        to_string(label) + " samples, pool has " +
        std::to_string(subset.size()));
  }
  SplitMix64 rng(mix_seed(seed, label == Polarity::kToxic ? 1 : 2));
  shuffle(subset, rng);
  subset.resize(count);
  return subset;
}

}  // namespace

std::vector<LabeledSample> sample_plan(const std::vector<LabeledSample>& pool,
                                       const SamplingPlan& plan) {
  std::vector<LabeledSample> out =
      pick_label(pool, Polarity::kToxic, plan.toxic, plan.seed);
  std::vector<LabeledSample> nt =
      pick_label(pool, Polarity::kNontoxic, plan.nontoxic, plan.seed);
  out.insert(out.end(), nt.begin(), nt.end());
  return out;
}

TokenCountReport count_tokens(const std::vector<LabeledSample>& samples,
                              const Vocab& vocab, std::size_t block_size) {
  if (block_size == 0) throw std::invalid_argument("block_size must be > 0");
  TokenCountReport report;
  for (const auto& s : samples) {
    const auto ids = tokenize(s.text, vocab, s.language).ids;
    const std::uint64_t n = ids.size() >= 2 ? ids.size() - 2 : 0;  // sans BOS/EOS
    const std::uint64_t blocks = (n + block_size - 1) / block_size;
    if (s.label == Polarity::kToxic) {
      report.toxic_tokens += n;
      report.toxic_blocks += blocks;
    } else {
      report.nontoxic_tokens += n;
      report.nontoxic_blocks += blocks;
    }
  }
  return report;
}

// ---------------------------------------------------------------------------

LossyMtProvider::LossyMtProvider(double deletion_rate, std::uint64_t seed)
    : rate_(deletion_rate), seed_(seed) {
  if (deletion_rate < 0.0 || deletion_rate >= 1.0)
    throw std::invalid_argument("deletion rate must be in [0, 1)");
}

std::string LossyMtProvider::id() const {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "lossy:%g", rate_);
  return buf;
}

std::string LossyMtProvider::translate(const std::string& text,
                                       const std::string& /*source_lang*/,
                                       const std::string& /*target_lang*/) {
  const auto words = split_words(text);
  const std::uint64_t text_hash = fnv1a64(text);
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    SplitMix64 rng(mix_seed(seed_, text_hash, static_cast<std::uint64_t>(i)));
    if (rng.next_double() < rate_) continue;  // token lost in translation
    if (!out.empty()) out += ' ';
    out += words[i];
  }
  return out;
}

std::string PrefixMapMtProvider::translate(const std::string& text,
                                           const std::string& source_lang,
                                           const std::string& target_lang) {
  const auto words = split_words(text);
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out += ' ';
    if (w.rfind(source_lang, 0) == 0) {
      out += target_lang + w.substr(source_lang.size());
    } else {
      out += w;
    }
  }
  return out;
}

ChainedMtProvider::ChainedMtProvider(
    std::vector<std::shared_ptr<MtProvider>> stages)
    : stages_(std::move(stages)) {
  if (stages_.empty())
    throw std::invalid_argument("chained provider needs at least one stage");
}

std::string ChainedMtProvider::id() const {
  std::string out = "chain(";
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    if (i) out += '+';
    out += stages_[i]->id();
  }
  return out + ")";
}

std::string ChainedMtProvider::translate(const std::string& text,
                                         const std::string& source_lang,
                                         const std::string& target_lang) {
  std::string cur = text;
  for (auto& stage : stages_) cur = stage->translate(cur, source_lang, target_lang);
  return cur;
}

RemoteMtProvider::RemoteMtProvider(std::string endpoint)
    : endpoint_(std::move(endpoint)) {}

std::string RemoteMtProvider::translate(const std::string& text,
                                        const std::string& source_lang,
                                        const std::string& target_lang) {
  httplib::Client client(endpoint_);
  json body;
  body["text"] = text;
  body["source"] = source_lang;
  body["target"] = target_lang;
  auto res = client.Post("/translate", body.dump(), "application/json");
  if (!res)
    throw std::runtime_error("translate request failed: " +
                             httplib::to_string(res.error()));
  if (res->status != 200)
    throw std::runtime_error("translate failed: HTTP " +
                             std::to_string(res->status));
  json reply = json::parse(res->body);
  if (!reply.contains("translation") || !reply["translation"].is_string())
    throw std::runtime_error("translate reply missing 'translation'");
  return reply["translation"].get<std::string>();
}

TranslateResult translate_batch(const std::vector<LabeledSample>& samples,
                                MtProvider& provider,
                                const std::string& target_lang,
                                double max_failure_fraction) {
  TranslateResult result;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    try {
      LabeledSample t = s;
      t.text = provider.translate(s.text, s.language, target_lang);
      t.language = target_lang;
      t.origin = Origin::kTranslated;
      result.samples.push_back(std::move(t));
    } catch (const std::exception& e) {
      result.failures.emplace_back(i, e.what());
    }
  }
  if (!samples.empty() &&
      static_cast<double>(result.failures.size()) >
          max_failure_fraction * static_cast<double>(samples.size())) {
    throw std::runtime_error(
        "translation batch failed: " + std::to_string(result.failures.size()) +
        " of " + std::to_string(samples.size()) + " items failed");
  }
  return result;
}

StageStats stage_stats(std::vector<double> values) {
  StageStats stats;
  if (values.empty()) return stats;
  double sum = 0.0;
  for (double v : values) sum += v;
  stats.mean = sum / static_cast<double>(values.size());
  std::sort(values.begin(), values.end());
  auto pct = [&](double q) {
    const double rank = q * static_cast<double>(values.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(rank);
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = rank - static_cast<double>(lo);
    return values[lo] * (1.0 - frac) + values[hi] * frac;
  };
  stats.p25 = pct(0.25);
  stats.p50 = pct(0.50);
  stats.p75 = pct(0.75);
  return stats;
}

RoundtripReport roundtrip_study(const std::vector<LabeledSample>& samples,
                                MtProvider& provider,
                                const std::string& target_lang,
                                const ScoreFn& score) {
  RoundtripReport report;
  std::vector<double> s0, s1, s2;
  for (const auto& s : samples) {
    const double original = score(s.text, s.language);
    const std::string fwd = provider.translate(s.text, s.language, target_lang);
    const double translated = score(fwd, target_lang);
    const std::string back = provider.translate(fwd, target_lang, s.language);
    const double backtranslated = score(back, s.language);
    report.triples.push_back({original, translated, backtranslated});
    s0.push_back(original);
    s1.push_back(translated);
    s2.push_back(backtranslated);
  }
  report.original = stage_stats(std::move(s0));
  report.translated = stage_stats(std::move(s1));
  report.backtranslated = stage_stats(std::move(s2));
  return report;
}

// ---------------------------------------------------------------------------

std::map<std::string, std::vector<LabeledSample>> plan_language_data(
    const std::vector<LabeledSample>& pool,
    const std::vector<std::string>& languages, DataRegime regime,
    const SamplingPlan& plan) {
  if (languages.empty())
    throw std::invalid_argument("plan_language_data: no languages given");
  // Work over a sorted language list so the result never depends on the
  // order languages are visited in.
  std::vector<std::string> langs = languages;
  std::sort(langs.begin(), langs.end());
  langs.erase(std::unique(langs.begin(), langs.end()), langs.end());

  std::map<std::string, std::vector<LabeledSample>> out;
  if (regime == DataRegime::kParallel) {
    // Group by parallel id; a group is usable when every language is present
    // and its members agree on the label.
    std::map<std::int64_t, std::vector<const LabeledSample*>> groups;
    for (const auto& s : pool)
      if (s.parallel_group) groups[*s.parallel_group].push_back(&s);
    std::vector<std::int64_t> toxic_ids, nontoxic_ids;
    for (const auto& [gid, members] : groups) {
      std::set<std::string> seen;
      bool consistent = true;
      for (const auto* m : members) {
        seen.insert(m->language);
        if (m->label != members.front()->label) consistent = false;
      }
      if (!consistent) continue;
      bool complete = true;
      for (const auto& lang : langs)
        if (!seen.count(lang)) complete = false;
      if (!complete) continue;
      (members.front()->label == Polarity::kToxic ? toxic_ids : nontoxic_ids)
          .push_back(gid);
    }
    if (toxic_ids.size() < plan.toxic || nontoxic_ids.size() < plan.nontoxic) {
      throw std::invalid_argument(
          "parallel plan shortfall: have " + std::to_string(toxic_ids.size()) +
          " toxic / " + std::to_string(nontoxic_ids.size()) +
          " nontoxic complete groups, need " + std::to_string(plan.toxic) +
          " / " + std::to_string(plan.nontoxic));
    }
    SplitMix64 toxic_rng(mix_seed(plan.seed, 11));
    SplitMix64 nontoxic_rng(mix_seed(plan.seed, 12));
    shuffle(toxic_ids, toxic_rng);
    shuffle(nontoxic_ids, nontoxic_rng);
    toxic_ids.resize(plan.toxic);
    nontoxic_ids.resize(plan.nontoxic);
    std::set<std::int64_t> chosen(toxic_ids.begin(), toxic_ids.end());
    chosen.insert(nontoxic_ids.begin(), nontoxic_ids.end());
    for (const auto& lang : langs) {
      auto& bucket = out[lang];
      for (std::int64_t gid : chosen) {
        for (const auto* m : groups[gid]) {
          if (m->language == lang) {
            bucket.push_back(*m);
            break;  // one member per group per language
          }
        }
      }
    }
    return out;
  }

  // Unparallel: one seeded shuffle of the distinct source ids, partitioned
  // into equal consecutive slices, one per language. A language then samples
  // only from its own slice, so selections never share an underlying
  // instance.
  std::vector<std::string> ids;
  {
    std::set<std::string> uniq;
    for (const auto& s : pool) uniq.insert(s.source_id);
    ids.assign(uniq.begin(), uniq.end());
  }
  SplitMix64 rng(mix_seed(plan.seed, 21));
  shuffle(ids, rng);
  std::map<std::string, std::size_t> slice_of;  // source id -> language index
  for (std::size_t i = 0; i < ids.size(); ++i)
    slice_of[ids[i]] = i % langs.size();
  for (std::size_t li = 0; li < langs.size(); ++li) {
    std::vector<LabeledSample> eligible;
    for (const auto& s : pool)
      if (s.language == langs[li] && slice_of[s.source_id] == li)
        eligible.push_back(s);
    SamplingPlan per_lang = plan;
    per_lang.seed = mix_seed(plan.seed, fnv1a64(langs[li]), 22);
    try {
      out[langs[li]] = sample_plan(eligible, per_lang);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("unparallel plan, language " + langs[li] +
                                  ": " + e.what());
    }
  }
  return out;
}

}  // namespace detox
