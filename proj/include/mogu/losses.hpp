// Copyright (c) 2026 The mogu-toy Authors
// SPDX-License-Identifier: Apache-2.0

// Training objectives for the responders and the routers.
//
// Cross entropy is teacher-forced and completion-only: logits at position t
// score token t+1, and only response tokens (including <eos>) count.

#pragma once

#include <span>
#include <vector>

#include "mogu/corpus.hpp"
#include "mogu/model.hpp"
#include "mogu/tensor.hpp"

namespace mogu {

inline constexpr double kRatioEpsilon = 1e-6;

struct MaskedSequence {
  std::vector<int> tokens;          // instruction ++ response
  std::vector<bool> response_mask;  // true on response positions
  Label label = Label::Benign;
  PairType pair_type = PairType::BenignGlad;
};

MaskedSequence make_masked(const PairRecord& pair);

/// Positive/negative responses to the same instruction.
struct ContrastiveSample {
  MaskedSequence positive;
  MaskedSequence negative;
};

enum class ResponderVariant { Plain, Contrastive };

/// Mean over masked rows of −log softmax(logits)[target].
Tensor masked_ce(const Tensor& logits, std::span<const int> targets, const std::vector<bool>& mask);

/// Teacher-forced response CE of one sequence under `mode`. When `trace` is
/// non-null and mode is MoGU, the router weights are stored there.
Tensor sequence_ce(const MoguModel& model, const MaskedSequence& seq, Mode mode,
                   RouterTrace* trace = nullptr);

/// Plain: CE(positive). Contrastive: CE(positive) / (CE(negative) + eps).
/// Averaged over the batch. Glad expects (Xm,Yg | Xm,Yr) samples, unwill
/// expects (Xb,Yr | Xb,Yg); anything else is a ContractError.
Tensor responder_loss(const MoguModel& model, std::span<const ContrastiveSample> batch, AdapterKind kind,
                      ResponderVariant variant);

/// Size-weighted mean CE over (Xb,Yg) and (Xm,Yr) sequences in mixed mode.
Tensor router_ce_loss(const MoguModel& model, std::span<const MaskedSequence> batch);

/// benign:    mean|1 − w_glad| + mean|w_unwill|
/// malicious: mean|w_glad| + mean|1 − w_unwill|
/// Means run over every layer and position of the trace.
Tensor router_l1_loss(const RouterTrace& trace, Label label);

/// router_ce_loss + lambda · (batch mean of router_l1_loss).
Tensor router_total_loss(const MoguModel& model, std::span<const MaskedSequence> batch, double lambda);

/// Sums of one router-phase sample, used by the trainer to backpropagate
/// sample by sample.
struct RouterSampleTerms {
  Tensor ce;
  Tensor l1;
};
RouterSampleTerms router_sample_terms(const MoguModel& model, const MaskedSequence& seq);

/// Throws ContractError unless every sample matches the responder kind.
void check_responder_batch(std::span<const ContrastiveSample> batch, AdapterKind kind);
/// Throws ContractError on any (Xb,Yr) or (Xm,Yg) sequence.
void check_router_batch(std::span<const MaskedSequence> batch);

}  // namespace mogu
