// Copyright (c) 2026 The mogu-toy Authors
// SPDX-License-Identifier: Apache-2.0

#include "mogu/inference.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "mogu/corpus.hpp"
#include "mogu/errors.hpp"

namespace mogu {

namespace {

int sample_top_p(std::span<const double> logits, double temperature, double top_p, std::mt19937_64& rng) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> probs(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    probs[i] = std::exp((logits[i] - mx) / temperature);
    z += probs[i];
  }
  for (auto& p : probs) p /= z;
  std::vector<int> order(logits.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return probs[a] > probs[b]; });
  std::vector<int> kept;
  double mass = 0.0;
  for (int id : order) {
    kept.push_back(id);
    mass += probs[id];
    if (mass >= top_p) break;
  }
  std::uniform_real_distribution<double> unif(0.0, mass);
  double r = unif(rng);
  for (int id : kept) {
    r -= probs[id];
    if (r <= 0.0) return id;
  }
  return kept.back();
}

}  // namespace

void DecodeConfig::validate() const {
  if (m_tokens < 0) throw ContractError("decode.m_tokens must be >= 0");
  if (max_new_tokens <= 0) throw ContractError("decode.max_new_tokens must be > 0");
  if (!(top_p > 0.0 && top_p <= 1.0)) throw ContractError("decode.top_p must lie in (0, 1]");
  if (!(temperature > 0.0)) throw ContractError("decode.temperature must be > 0");
}

int argmax_token(std::span<const double> logits) {
  return static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

DecodeResult decode(const MoguModel& model, std::span<const int> prompt, const DecodeConfig& cfg, Mode mode) {
  cfg.validate();
  if (prompt.empty()) throw InputError("decode: empty prompt");
  for (int t : prompt) {
    if (t < 0 || t >= model.config.vocab_size) throw InputError("decode: prompt id " + std::to_string(t) + " out of range");
  }
  std::mt19937_64 rng(cfg.seed);
  std::vector<int> context(prompt.begin(), prompt.end());
  DecodeResult result;
  const auto vocab = static_cast<std::size_t>(model.config.vocab_size);
  for (int step = 1; step <= cfg.max_new_tokens; ++step) {
    if (context.size() >= static_cast<std::size_t>(model.config.max_seq_len)) break;
    Mode step_mode = mode;
    if (mode == Mode::MoGU && step > cfg.m_tokens) step_mode = Mode::Base;
    auto out = forward(model, context, step_mode);
    if (out.trace) result.trace = std::move(out.trace);
    const auto last = out.logits.data().subspan((context.size() - 1) * vocab, vocab);
    const int next = cfg.strategy == DecodeStrategy::Greedy ? argmax_token(last)
                                                             : sample_top_p(last, cfg.temperature, cfg.top_p, rng);
    result.tokens.push_back(next);
    context.push_back(next);
    if (next == tok::kEos) break;
  }
  // Generated ids outside the synthetic vocabulary cannot be rendered.
  if (model.config.vocab_size == tok::kVocabSize) result.text = detokenize(result.tokens);
  return result;
}

}  // namespace mogu
