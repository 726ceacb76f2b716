// Copyright (c) 2026 The mogu-toy Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mogu/model.hpp"

namespace mogu {

enum class DecodeStrategy { Greedy, TemperatureTopP };

struct DecodeConfig {
  int m_tokens = 5;
  int max_new_tokens = 32;
  DecodeStrategy strategy = DecodeStrategy::Greedy;
  double temperature = 1.0;
  double top_p = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct DecodeResult {
  std::vector<int> tokens;  // generated tokens only
  std::string text;
  /// Router weights over every position the last mixed step processed.
  std::optional<RouterTrace> trace;
};

/// Autoregressive decoding that recomputes the full context each step.
/// In MoGU mode the first m generated tokens come from the mixed forward and
/// later tokens from the base model; every other mode uses its own forward
/// throughout. Stops after <eos> or max_new_tokens.
DecodeResult decode(const MoguModel& model, std::span<const int> prompt, const DecodeConfig& cfg, Mode mode);

/// Index of the largest logit, ties to the lowest id.
int argmax_token(std::span<const double> logits);

}  // namespace mogu
