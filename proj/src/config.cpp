// Copyright (c) 2026 The mogu-toy Authors
// SPDX-License-Identifier: Apache-2.0

#include "mogu/config.hpp"

#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>

#include "mogu/errors.hpp"

namespace mogu {

namespace {

using json = nlohmann::json;

struct Field {
  std::string_view key;
  std::function<json(const RunConfig&)> get;
  std::function<void(RunConfig&, const json&)> set;
};

template <typename T>
T expect(const json& v, std::string_view key) {
  try {
    if constexpr (std::is_same_v<T, double>) {
      if (!v.is_number()) throw InputError("expected a number");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw InputError("expected an integer");
    } else {
      if (!v.is_string()) throw InputError("expected a string");
    }
    return v.get<T>();
  } catch (const std::exception& e) {
    throw InputError("config key " + std::string(key) + ": " + e.what());
  }
}

#define MOGU_FIELD(KEY, SECTION, MEMBER, TYPE)                                         \
  Field {                                                                              \
    KEY, [](const RunConfig& c) { return json(c.SECTION.MEMBER); },                    \
        [](RunConfig& c, const json& v) { c.SECTION.MEMBER = expect<TYPE>(v, KEY); }   \
  }

std::string_view to_string(DecodeStrategy s) { return s == DecodeStrategy::Greedy ? "greedy" : "top_p"; }

DecodeStrategy parse_strategy(std::string_view s) {
  if (s == "greedy") return DecodeStrategy::Greedy;
  if (s == "top_p" || s == "temperature-top-p") return DecodeStrategy::TemperatureTopP;
  throw InputError("unknown decode strategy '" + std::string(s) + "'");
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      MOGU_FIELD("model.vocab_size", model, vocab_size, int),
      MOGU_FIELD("model.d_model", model, d_model, int),
      MOGU_FIELD("model.n_layers", model, n_layers, int),
      MOGU_FIELD("model.n_heads", model, n_heads, int),
      MOGU_FIELD("model.d_ff", model, d_ff, int),
      MOGU_FIELD("model.max_seq_len", model, max_seq_len, int),
      MOGU_FIELD("model.d_router", model, d_router, int),
      MOGU_FIELD("model.d_lora_r", model, d_lora_r, int),
      MOGU_FIELD("model.lora_alpha", model, lora_alpha, double),
      MOGU_FIELD("model.lambda", model, lambda_l1, double),
      MOGU_FIELD("model.m", model, m_tokens, int),
      MOGU_FIELD("model.seed", model, seed, std::uint64_t),
      MOGU_FIELD("train.lr_responder", train, lr_responder, double),
      MOGU_FIELD("train.lr_router", train, lr_router, double),
      MOGU_FIELD("train.batch_size", train, batch_size, int),
      MOGU_FIELD("train.max_epochs", train, max_epochs, int),
      MOGU_FIELD("train.seed", train, seed, std::uint64_t),
      Field{"train.ablation", [](const RunConfig& c) { return json(std::string(to_string(c.train.ablation))); },
            [](RunConfig& c, const json& v) {
              c.train.ablation = parse_ablation(expect<std::string>(v, "train.ablation"));
            }},
      MOGU_FIELD("train.beta1", train, beta1, double),
      MOGU_FIELD("train.beta2", train, beta2, double),
      MOGU_FIELD("train.adam_eps", train, adam_eps, double),
      MOGU_FIELD("decode.max_new_tokens", decode, max_new_tokens, int),
      Field{"decode.strategy", [](const RunConfig& c) { return json(std::string(to_string(c.decode.strategy))); },
            [](RunConfig& c, const json& v) {
              c.decode.strategy = parse_strategy(expect<std::string>(v, "decode.strategy"));
            }},
      MOGU_FIELD("decode.temperature", decode, temperature, double),
      MOGU_FIELD("decode.top_p", decode, top_p, double),
      MOGU_FIELD("decode.seed", decode, seed, std::uint64_t),
      MOGU_FIELD("corpus.seed", corpus, seed, std::uint64_t),
      MOGU_FIELD("corpus.n_benign", corpus, n_benign, int),
      MOGU_FIELD("corpus.n_malicious", corpus, n_malicious, int),
      MOGU_FIELD("corpus.n_eval", corpus, n_eval, int),
  };
  return table;
}

#undef MOGU_FIELD

const Field& find_field(std::string_view key) {
  for (const auto& f : fields()) {
    if (f.key == key) return f;
  }
  throw InputError("unknown config key '" + std::string(key) + "'");
}

}  // namespace

json RunConfig::to_json() const {
  json j = json::object();
  for (const auto& f : fields()) j[std::string(f.key)] = f.get(*this);
  return j;
}

void RunConfig::merge(const json& j) {
  if (!j.is_object()) throw InputError("config must be a flat JSON object");
  for (const auto& [key, value] : j.items()) find_field(key).set(*this, value);
}

void RunConfig::set(std::string_view key, std::string_view value) {
  const auto& f = find_field(key);
  json v = json::parse(value, nullptr, false);
  if (v.is_discarded()) v = std::string(value);
  f.set(*this, v);
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  decode_config().validate();
  if (corpus.n_benign < 1 || corpus.n_malicious < 1 || corpus.n_eval < 0) {
    throw ContractError("corpus counts must be positive");
  }
}

DecodeConfig RunConfig::decode_config() const {
  DecodeConfig d = decode;
  d.m_tokens = model.m_tokens;
  return d;
}

std::string RunConfig::dump() const { return to_json().dump(2) + "\n"; }

std::string RunConfig::hash() const { return hex64(fnv1a64(to_json().dump())); }

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError("config file " + path.string() + ": " + e.what());
  }
  RunConfig c;
  c.merge(j);
  return c;
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.emplace_back(f.key);
  return out;
}

json to_json(const ModelConfig& c) {
  RunConfig rc;
  rc.model = c;
  const json all = rc.to_json();
  json out = json::object();
  for (const auto& [k, v] : all.items()) {
    if (k.rfind("model.", 0) == 0) out[k] = v;
  }
  return out;
}

ModelConfig model_config_from_json(const json& j) {
  RunConfig rc;
  for (const auto& [k, v] : j.items()) {
    if (k.rfind("model.", 0) != 0) throw InputError("unexpected key " + k + " in model config");
  }
  rc.merge(j);
  return rc.model;
}

json to_json(const TrainConfig& c) {
  RunConfig rc;
  rc.train = c;
  const json all = rc.to_json();
  json out = json::object();
  for (const auto& [k, v] : all.items()) {
    if (k.rfind("train.", 0) == 0) out[k] = v;
  }
  return out;
}

TrainConfig train_config_from_json(const json& j) {
  RunConfig rc;
  for (const auto& [k, v] : j.items()) {
    if (k.rfind("train.", 0) != 0) throw InputError("unexpected key " + k + " in train config");
  }
  rc.merge(j);
  return rc.train;
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

}  // namespace mogu
