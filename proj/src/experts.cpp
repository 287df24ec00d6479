#include "detox/experts.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

#include "detox/io.hpp"

namespace detox {

namespace {

constexpr double kLogFloor = 1e-300;

NgramLM train_side(const std::vector<LabeledSample>& samples, Polarity expected,
                   const char* side_name,
                   const std::shared_ptr<const NgramLM>& base,
                   const ExpertTrainingConfig& cfg,
                   std::map<std::string, std::uint64_t>& provenance) {
  if (samples.empty())
    throw std::invalid_argument(std::string(side_name) + " side is empty");
  std::vector<TokenSequence> corpus;
  corpus.reserve(samples.size());
  for (const auto& s : samples) {
    if (s.label != expected)
      throw std::invalid_argument(std::string("sample labeled ") + to_string(s.label) +
                                  " offered to the " + side_name + " side");
    TokenSequence seq = tokenize(s.text, base->vocab(), s.language);
    provenance[s.language] += static_cast<std::uint64_t>(seq.ids.size() - 1);
    corpus.push_back(std::move(seq));
  }
  return train_lm(corpus, cfg.order, cfg.smoothing, base->vocab_ptr());
}

}  // namespace

ExpertPair train_experts(const std::vector<LabeledSample>& toxic,
                         const std::vector<LabeledSample>& nontoxic,
                         std::shared_ptr<const NgramLM> base,
                         const ExpertTrainingConfig& cfg) {
  if (!base) throw std::invalid_argument("base model is required");
  if (cfg.beta < 0.0 || cfg.beta > 1.0)
    throw std::invalid_argument("beta must lie in [0, 1]");
  ExpertPair pair;
  pair.beta = cfg.beta;
  pair.learning_rate = cfg.learning_rate;
  pair.anti_expert = train_side(toxic, Polarity::kToxic, "toxic", base, cfg,
                                pair.provenance);
  pair.expert = train_side(nontoxic, Polarity::kNontoxic, "nontoxic", base,
                           cfg, pair.provenance);
  pair.base = std::move(base);
  return pair;
}

Vector side_distribution(const NgramLM& counts, const NgramLM& base,
                         double beta, std::span<const TokenId> context) {
  if (beta == 0.0) return counts.next_distribution(context);
  if (beta == 1.0) return base.next_distribution(context);
  return (1.0 - beta) * counts.next_distribution(context) +
         beta * base.next_distribution(context);
}

std::pair<Vector, Vector> expert_logits(const ExpertPair& pair,
                                        std::span<const TokenId> context) {
  auto to_logits = [](Vector p) {
    for (Eigen::Index i = 0; i < p.size(); ++i)
      p[i] = std::log(p[i] > 0.0 ? p[i] : kLogFloor);
    return p;
  };
  Vector z_plus =
      to_logits(side_distribution(pair.expert, *pair.base, pair.beta, context));
  Vector z_minus = to_logits(
      side_distribution(pair.anti_expert, *pair.base, pair.beta, context));
  return {std::move(z_plus), std::move(z_minus)};
}

void save_expert_pair(const ExpertPair& pair, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  save_lm(pair.expert, (fs::path(dir) / "expert.dtk1").string());
  save_lm(pair.anti_expert, (fs::path(dir) / "anti_expert.dtk1").string());
  save_lm(*pair.base, (fs::path(dir) / "base.dtk1").string());
  nlohmann::json manifest;
  manifest["version"] = 1;
  manifest["beta"] = pair.beta;
  manifest["learning_rate"] = pair.learning_rate;
  manifest["files"] = {{"expert", "expert.dtk1"},
                       {"anti_expert", "anti_expert.dtk1"},
                       {"base", "base.dtk1"}};
  nlohmann::json prov = nlohmann::json::object();
  for (const auto& [lang, count] : pair.provenance) prov[lang] = count;
  manifest["provenance"] = prov;
  write_file((fs::path(dir) / "pair.json").string(), manifest.dump(2) + "\n");
}

ExpertPair load_expert_pair(const std::string& dir) {
  namespace fs = std::filesystem;
  const auto manifest_path = fs::path(dir) / "pair.json";
  const nlohmann::json manifest =
      nlohmann::json::parse(read_file(manifest_path.string()));
  if (manifest.at("version").get<int>() != 1)
    throw std::runtime_error("unsupported expert pair manifest version");
  ExpertPair pair;
  pair.beta = manifest.at("beta").get<double>();
  pair.learning_rate = manifest.at("learning_rate").get<double>();
  const auto& files = manifest.at("files");
  pair.expert = load_lm(
      (fs::path(dir) / files.at("expert").get<std::string>()).string());
  pair.anti_expert = load_lm(
      (fs::path(dir) / files.at("anti_expert").get<std::string>()).string());
  auto base = std::make_shared<NgramLM>(load_lm(
      (fs::path(dir) / files.at("base").get<std::string>()).string()));
  if (pair.expert.vocab().tokens() != base->vocab().tokens() ||
      pair.anti_expert.vocab().tokens() != base->vocab().tokens())
    throw std::runtime_error(
        "expert pair files disagree on the vocabulary: " + dir);
  pair.base = std::move(base);
  for (const auto& [lang, count] : manifest.at("provenance").items())
    pair.provenance[lang] = count.get<std::uint64_t>();
  return pair;
}

}  // namespace detox
