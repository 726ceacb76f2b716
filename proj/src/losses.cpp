// Copyright (c) 2026 The mogu-toy Authors
// SPDX-License-Identifier: Apache-2.0

#include "mogu/losses.hpp"

#include <algorithm>

#include "mogu/errors.hpp"

namespace mogu {

namespace {

Mode responder_mode(AdapterKind kind) {
  switch (kind) {
    case AdapterKind::Glad: return Mode::Glad;
    case AdapterKind::Unwill: return Mode::Unwill;
    case AdapterKind::Sft: return Mode::Sft;
  }
  return Mode::Base;
}

Tensor accumulate(const std::vector<Tensor>& terms) {
  Tensor total = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) total = add(total, terms[i]);
  return total;
}

Tensor trace_mean(const std::vector<Tensor>& per_layer, bool complement) {
  std::vector<Tensor> sums;
  std::size_t count = 0;
  for (const auto& w : per_layer) {
    // w lies in (0,1), but the absolute value keeps the L1 form exact.
    sums.push_back(sum(abs_map(complement ? affine(w, -1.0, 1.0) : w)));
    count += w.size();
  }
  return scale(accumulate(sums), 1.0 / static_cast<double>(count));
}

}  // namespace

MaskedSequence make_masked(const PairRecord& pair) {
  MaskedSequence seq;
  seq.tokens = pair.sequence();
  seq.response_mask.assign(seq.tokens.size(), false);
  std::fill(seq.response_mask.begin() + static_cast<std::ptrdiff_t>(pair.instruction.tokens.size()),
            seq.response_mask.end(), true);
  seq.label = pair.instruction.label;
  seq.pair_type = pair.pair_type;
  return seq;
}

Tensor masked_ce(const Tensor& logits, std::span<const int> targets, const std::vector<bool>& mask) {
  return masked_cross_entropy(logits, targets, mask);
}

Tensor sequence_ce(const MoguModel& model, const MaskedSequence& seq, Mode mode, RouterTrace* trace) {
  const std::size_t n = seq.tokens.size();
  if (n < 2 || seq.response_mask.size() != n) throw ContractError("sequence_ce: malformed sequence");
  // The final token is only ever a target.
  auto result = forward(model, std::span<const int>(seq.tokens).first(n - 1), mode);
  std::vector<bool> mask(seq.response_mask.begin() + 1, seq.response_mask.end());
  if (trace && result.trace) *trace = std::move(*result.trace);
  return masked_ce(result.logits, std::span<const int>(seq.tokens).subspan(1), mask);
}

void check_responder_batch(std::span<const ContrastiveSample> batch, AdapterKind kind) {
  if (batch.empty()) throw ContractError("responder_loss: empty batch");
  PairType pos{}, neg{};
  switch (kind) {
    case AdapterKind::Glad: pos = PairType::MaliciousGlad; neg = PairType::MaliciousReject; break;
    case AdapterKind::Unwill: pos = PairType::BenignReject; neg = PairType::BenignGlad; break;
    case AdapterKind::Sft: throw ContractError("responder_loss: the sft adapter has no responder objective");
  }
  for (const auto& s : batch) {
    if (s.positive.pair_type != pos || s.negative.pair_type != neg) {
      throw ContractError("responder_loss: " + std::string(to_string(kind)) + " responder expects (" +
                          std::string(to_string(pos)) + ", " + std::string(to_string(neg)) + ") samples, got (" +
                          std::string(to_string(s.positive.pair_type)) + ", " +
                          std::string(to_string(s.negative.pair_type)) + ")");
    }
  }
}

Tensor responder_loss(const MoguModel& model, std::span<const ContrastiveSample> batch, AdapterKind kind,
                      ResponderVariant variant) {
  check_responder_batch(batch, kind);
  const Mode mode = responder_mode(kind);
  std::vector<Tensor> terms;
  for (const auto& s : batch) {
    Tensor pos = sequence_ce(model, s.positive, mode);
    if (variant == ResponderVariant::Plain) {
      terms.push_back(pos);
    } else {
      Tensor neg = sequence_ce(model, s.negative, mode);
      terms.push_back(divide(pos, affine(neg, 1.0, kRatioEpsilon)));
    }
  }
  return scale(accumulate(terms), 1.0 / static_cast<double>(batch.size()));
}

void check_router_batch(std::span<const MaskedSequence> batch) {
  if (batch.empty()) throw ContractError("router loss: empty batch");
  for (const auto& s : batch) {
    if (s.pair_type != PairType::BenignGlad && s.pair_type != PairType::MaliciousReject) {
      throw ContractError("router loss: pair type " + std::string(to_string(s.pair_type)) +
                          " is not allowed; only Xb_Yg and Xm_Yr");
    }
  }
}

Tensor router_l1_loss(const RouterTrace& trace, Label label) {
  if (trace.num_layers() == 0) throw ContractError("router_l1_loss: empty trace");
  const bool benign = label == Label::Benign;
  return add(trace_mean(trace.w_glad, benign), trace_mean(trace.w_unwill, !benign));
}

RouterSampleTerms router_sample_terms(const MoguModel& model, const MaskedSequence& seq) {
  RouterTrace trace;
  Tensor ce = sequence_ce(model, seq, Mode::MoGU, &trace);
  return {ce, router_l1_loss(trace, seq.label)};
}

Tensor router_ce_loss(const MoguModel& model, std::span<const MaskedSequence> batch) {
  check_router_batch(batch);
  std::vector<Tensor> terms;
  for (const auto& s : batch) terms.push_back(sequence_ce(model, s, Mode::MoGU));
  return scale(accumulate(terms), 1.0 / static_cast<double>(batch.size()));
}

Tensor router_total_loss(const MoguModel& model, std::span<const MaskedSequence> batch, double lambda) {
  check_router_batch(batch);
  std::vector<Tensor> ce, l1;
  for (const auto& s : batch) {
    auto terms = router_sample_terms(model, s);
    ce.push_back(terms.ce);
    l1.push_back(terms.l1);
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  return add(scale(accumulate(ce), inv), scale(accumulate(l1), lambda * inv));
}

}  // namespace mogu
