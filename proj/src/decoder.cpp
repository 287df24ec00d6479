#include "detox/decoder.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "json.hpp"

#include "detox/rng.hpp"

namespace detox {

using nlohmann::json;

namespace {
constexpr double kDistributionFloor = 1e-10;

// log of a distribution with zeros floored at a tiny epsilon and the mass
// renormalized, so downstream arithmetic never sees -inf.
Vector floored_log(Vector p) {
  for (Eigen::Index i = 0; i < p.size(); ++i)
    if (p[i] <= 0.0) p[i] = kDistributionFloor;
  p /= p.sum();
  return p.array().log().matrix();
}
}  // namespace

std::string to_string(Backend b) {
  switch (b) {
    case Backend::kRetrieval: return "retrieval";
    case Backend::kExperts: return "experts";
    case Backend::kBaseOnly: return "base_only";
  }
  throw std::logic_error("unreachable backend");
}

Backend backend_from_string(const std::string& name) {
  if (name == "retrieval") return Backend::kRetrieval;
  if (name == "experts") return Backend::kExperts;
  if (name == "base_only") return Backend::kBaseOnly;
  throw std::invalid_argument("unknown backend: " + name);
}

std::string to_string(FilterStage s) {
  return s == FilterStage::kBeforeEnsemble ? "before_ensemble"
                                           : "after_ensemble";
}

FilterStage filter_stage_from_string(const std::string& name) {
  if (name == "before_ensemble") return FilterStage::kBeforeEnsemble;
  if (name == "after_ensemble") return FilterStage::kAfterEnsemble;
  throw std::invalid_argument("unknown filter stage: " + name);
}

FilterStage default_filter_stage(Backend b) {
  return b == Backend::kExperts ? FilterStage::kBeforeEnsemble
                                : FilterStage::kAfterEnsemble;
}

BackendState base_only_state(std::shared_ptr<const NgramLM> base) {
  if (!base) throw std::invalid_argument("base model is required");
  BackendState st;
  st.base = std::move(base);
  return st;
}

BackendState retrieval_state(std::shared_ptr<const NgramLM> base,
                             std::shared_ptr<const Datastore> toxic_store,
                             std::shared_ptr<const Datastore> nontoxic_store,
                             const RetrievalConfig& retrieval) {
  BackendState st = base_only_state(std::move(base));
  if (!toxic_store || !nontoxic_store)
    throw std::invalid_argument("retrieval backend needs both datastores");
  if (toxic_store->polarity != Polarity::kToxic ||
      nontoxic_store->polarity != Polarity::kNontoxic)
    throw std::invalid_argument("datastore polarities are swapped or wrong");
  if (!(toxic_store->key_config == nontoxic_store->key_config))
    throw std::invalid_argument("datastores disagree on key configuration");
  if (toxic_store->vocab_size !=
          static_cast<std::uint32_t>(st.base->vocab().size()) ||
      nontoxic_store->vocab_size !=
          static_cast<std::uint32_t>(st.base->vocab().size()))
    throw std::invalid_argument(
        "datastore vocabulary does not match the base model");
  st.keyer = std::make_shared<ContextKeyer>(toxic_store->key_config,
                                            st.base->vocab().size());
  st.toxic_store = std::move(toxic_store);
  st.nontoxic_store = std::move(nontoxic_store);
  st.retrieval = retrieval;
  return st;
}

BackendState experts_state(std::shared_ptr<const NgramLM> base,
                           std::shared_ptr<const ExpertPair> experts) {
  BackendState st = base_only_state(std::move(base));
  if (!experts)
    throw std::invalid_argument("experts backend needs a trained expert pair");
  if (experts->expert.vocab().size() != st.base->vocab().size())
    throw std::invalid_argument(
        "expert pair vocabulary does not match the base model");
  st.experts = std::move(experts);
  return st;
}

Vector softmax(const Vector& logits) {
  const double shift = logits.maxCoeff();
  Vector p = (logits.array() - shift).exp().matrix();
  p /= p.sum();
  return p;
}

Vector ensemble(const Vector& z, const Vector& z_plus, const Vector& z_minus,
                double alpha) {
  if (z.size() != z_plus.size() || z.size() != z_minus.size())
    throw std::invalid_argument(
        "ensemble logit vectors differ in length: " + std::to_string(z.size()) +
        " / " + std::to_string(z_plus.size()) + " / " +
        std::to_string(z_minus.size()));
  return softmax(z + alpha * (z_plus - z_minus));
}

Vector top_p_filter(const Vector& p, double top_p) {
  if (top_p <= 0.0 || top_p > 1.0)
    throw std::invalid_argument("top_p must lie in (0, 1]");
  const double total = p.sum();
  if (std::abs(total - 1.0) > 1e-6)
    throw std::invalid_argument("top_p_filter expects a normalized distribution");
  if (top_p == 1.0) return p / total;

  std::vector<Eigen::Index> order(static_cast<std::size_t>(p.size()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    if (p[a] != p[b]) return p[a] > p[b];
    return a < b;  // boundary ties by ascending token id
  });
  Vector out = Vector::Zero(p.size());
  double kept = 0.0;
  for (Eigen::Index idx : order) {
    out[idx] = p[idx];
    kept += p[idx];
    if (kept >= top_p) break;
  }
  out /= kept;
  return out;
}

Vector next_token_distribution(std::span<const TokenId> context,
                               const BackendState& state,
                               const EnsembleConfig& ens) {
  if (!state.base) throw std::runtime_error("backend state has no base model");
  const Vector z = next_logits(*state.base, context);
  if (ens.backend == Backend::kBaseOnly)
    return top_p_filter(softmax(z), ens.top_p);

  Vector z_plus, z_minus;
  if (ens.backend == Backend::kRetrieval) {
    if (!state.toxic_store || !state.nontoxic_store || !state.keyer)
      throw std::runtime_error(
          "retrieval backend selected but datastores are not loaded");
    std::vector<TokenId> ctx(context.begin(), context.end());
    const Vector key = state.keyer->key(ctx);
    z_plus = knn_logits(*state.nontoxic_store, key, state.retrieval);
    z_minus = knn_logits(*state.toxic_store, key, state.retrieval);
  } else {
    if (!state.experts)
      throw std::runtime_error(
          "experts backend selected but no expert pair is loaded");
    auto zs = expert_logits(*state.experts, context);
    z_plus = std::move(zs.first);
    z_minus = std::move(zs.second);
  }

  if (ens.filter_stage == FilterStage::kBeforeEnsemble) {
    auto filter_logits = [&](const Vector& logits) {
      return floored_log(top_p_filter(softmax(logits), ens.top_p));
    };
    return ensemble(filter_logits(z), filter_logits(z_plus),
                    filter_logits(z_minus), ens.alpha);
  }
  return top_p_filter(ensemble(z, z_plus, z_minus, ens.alpha), ens.top_p);
}

namespace {

// Inverse-CDF sample; assumes p sums to ~1. Returns the last positive entry
// if rounding pushes the cumulative sum below u.
Eigen::Index sample_index(const Vector& p, SplitMix64& rng) {
  const double u = rng.next_double();
  double cum = 0.0;
  Eigen::Index last_positive = -1;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    cum += p[i];
    last_positive = i;
    if (u < cum) return i;
  }
  if (last_positive < 0) throw std::runtime_error("all-zero sampling distribution");
  return last_positive;
}

Vector apply_temperature(Vector p, double temperature) {
  if (temperature == 1.0) return p;
  if (temperature <= 0.0)
    throw std::invalid_argument("temperature must be positive");
  for (Eigen::Index i = 0; i < p.size(); ++i)
    if (p[i] > 0.0) p[i] = std::pow(p[i], 1.0 / temperature);
  p /= p.sum();
  return p;
}

}  // namespace

GenerationRecord generate(const Prompt& prompt, std::size_t prompt_index,
                          const BackendState& state, const EnsembleConfig& ens,
                          const GenerationConfig& gen) {
  if (gen.k_gen < 1) throw std::invalid_argument("k_gen must be >= 1");
  if (gen.max_new_tokens < 1)
    throw std::invalid_argument("max_new_tokens must be >= 1");
  const Vocab& vocab = state.base->vocab();
  std::vector<TokenId> prompt_ids =
      tokenize(prompt.text, vocab, prompt.language).ids;
  prompt_ids.pop_back();  // continuations grow past the prompt: drop EOS

  GenerationRecord record;
  record.prompt = prompt;
  record.prompt_index = prompt_index;
  record.ensemble = ens;
  record.generation = gen;
  record.continuations.reserve(static_cast<std::size_t>(gen.k_gen));
  record.token_counts.reserve(static_cast<std::size_t>(gen.k_gen));

  for (int c = 0; c < gen.k_gen; ++c) {
    SplitMix64 rng(mix_seed(gen.seed, static_cast<std::uint64_t>(prompt_index),
                            static_cast<std::uint64_t>(c)));
    std::vector<TokenId> context = prompt_ids;
    std::vector<TokenId> generated;
    for (int t = 0; t < gen.max_new_tokens; ++t) {
      Vector p = next_token_distribution(context, state, ens);
      p = apply_temperature(std::move(p), gen.temperature);
      // The begin marker is context padding, never an emission.
      if (p[Vocab::kBos] > 0.0) {
        p[Vocab::kBos] = 0.0;
        const double rest = p.sum();
        if (rest <= 0.0) break;
        p /= rest;
      }
      const TokenId tok = static_cast<TokenId>(sample_index(p, rng));
      if (tok == Vocab::kEos) break;
      context.push_back(tok);
      generated.push_back(tok);
    }
    record.continuations.push_back(detokenize(generated, vocab));
    record.token_counts.push_back(static_cast<int>(generated.size()));
  }
  return record;
}

std::vector<GenerationRecord> generate_batch(const std::vector<Prompt>& prompts,
                                             const BackendState& state,
                                             const EnsembleConfig& ens,
                                             const GenerationConfig& gen,
                                             unsigned n_threads) {
  std::vector<GenerationRecord> records(prompts.size());
  if (prompts.empty()) return records;
  if (n_threads == 0)
    n_threads = std::max(1u, std::thread::hardware_concurrency());
  n_threads = std::min<unsigned>(n_threads,
                                 static_cast<unsigned>(prompts.size()));

  std::atomic<std::size_t> cursor{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = cursor.fetch_add(1);
      if (i >= prompts.size()) return;
      try {
        records[i] = generate(prompts[i], i, state, ens, gen);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
  return records;
}

// ---------------------------------------------------------------------------

std::vector<Prompt> load_prompts(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open prompts file: " + path);
  std::vector<Prompt> prompts;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const std::exception& e) {
      throw std::runtime_error("prompts file " + path + " line " +
                               std::to_string(line_no) + ": " + e.what());
    }
    if (!j.contains("text") || !j["text"].is_string() || !j.contains("lang") ||
        !j["lang"].is_string())
      throw std::runtime_error("prompts file " + path + " line " +
                               std::to_string(line_no) +
                               ": need string fields 'text' and 'lang'");
    prompts.push_back({j["text"].get<std::string>(),
                       j["lang"].get<std::string>()});
  }
  return prompts;
}

void save_prompts(const std::vector<Prompt>& prompts, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  for (const auto& p : prompts) {
    json j;
    j["text"] = p.text;
    j["lang"] = p.language;
    out << j.dump() << "\n";
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

void save_records(const std::vector<GenerationRecord>& records,
                  const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  for (const auto& r : records) {
    json j;
    j["prompt"] = r.prompt.text;
    j["lang"] = r.prompt.language;
    j["prompt_index"] = r.prompt_index;
    j["continuations"] = r.continuations;
    j["token_counts"] = r.token_counts;
    j["config"] = {{"backend", to_string(r.ensemble.backend)},
                   {"alpha", r.ensemble.alpha},
                   {"top_p", r.ensemble.top_p},
                   {"filter_stage", to_string(r.ensemble.filter_stage)},
                   {"k_gen", r.generation.k_gen},
                   {"max_new_tokens", r.generation.max_new_tokens},
                   {"seed", std::to_string(r.generation.seed)},
                   {"temperature", r.generation.temperature}};
    out << j.dump() << "\n";
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

std::vector<GenerationRecord> load_records(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open records file: " + path);
  std::vector<GenerationRecord> records;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const json j = json::parse(line);
    GenerationRecord r;
    r.prompt.text = j.at("prompt").get<std::string>();
    r.prompt.language = j.at("lang").get<std::string>();
    r.prompt_index = j.at("prompt_index").get<std::size_t>();
    r.continuations = j.at("continuations").get<std::vector<std::string>>();
    r.token_counts = j.at("token_counts").get<std::vector<int>>();
    const auto& cfg = j.at("config");
    r.ensemble.backend = backend_from_string(cfg.at("backend").get<std::string>());
    r.ensemble.alpha = cfg.at("alpha").get<double>();
    r.ensemble.top_p = cfg.at("top_p").get<double>();
    r.ensemble.filter_stage =
        filter_stage_from_string(cfg.at("filter_stage").get<std::string>());
    r.generation.k_gen = cfg.at("k_gen").get<int>();
    r.generation.max_new_tokens = cfg.at("max_new_tokens").get<int>();
    r.generation.seed = std::stoull(cfg.at("seed").get<std::string>());
    r.generation.temperature = cfg.at("temperature").get<double>();
    records.push_back(std::move(r));
  }
  return records;
}

}  // namespace detox
