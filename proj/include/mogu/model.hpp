// Copyright (c) 2026 The mogu-toy Authors
// SPDX-License-Identifier: Apache-2.0

// Pre-norm decoder-only transformer whose attention output projections carry
// two LoRA adapters (glad, unwilling) and two sigmoid routers per layer.
//
// At layer i with attention output h:
//   o_glad   = h·Wo + s·(h·A_glad)·B_glad             s = alpha / r
//   o_unwill = h·Wo + s·(h·A_unwill)·B_unwill
//   w        = sigmoid((h·U·V + b1)·W + b2)             one scalar per token
//   o_mogu   = w_glad ⊙ o_glad + w_unwill ⊙ o_unwill
//
// The two router weights are independent sigmoids; nothing forces them to
// sum to one, so the base term is scaled by w_glad + w_unwill.

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mogu/tensor.hpp"

namespace mogu {

struct ModelConfig {
  int vocab_size = 32;
  int d_model = 64;
  int n_layers = 4;
  int n_heads = 4;
  int d_ff = 256;
  int max_seq_len = 128;
  int d_router = 16;
  int d_lora_r = 8;
  double lora_alpha = 16.0;
  double lambda_l1 = 2.0;
  int m_tokens = 5;
  std::uint64_t seed = 0;

  /// Throws ContractError on an inconsistent configuration.
  void validate() const;
  double lora_scale() const { return lora_alpha / d_lora_r; }

  bool operator==(const ModelConfig&) const = default;
};

enum class Mode { Base, Glad, Unwill, MoGU, Sft };

std::string_view to_string(Mode mode);
/// Accepts base|glad|unwill|mogu|sft (case-insensitive).
Mode parse_mode(std::string_view text);

struct BaseLayer {
  Tensor ln1_gamma, ln1_beta;
  Tensor wq, wk, wv, wo;
  Tensor ln2_gamma, ln2_beta;
  Tensor w_up, b_up, w_down, b_down;
};

struct BaseWeights {
  Tensor tok_emb;  // vocab × d_model
  Tensor pos_emb;  // max_seq_len × d_model
  std::vector<BaseLayer> layers;
  Tensor lnf_gamma, lnf_beta;
  Tensor w_out;  // d_model × vocab
};

struct LoraLayer {
  Tensor a;  // d_model × r
  Tensor b;  // r × d_model, zero at init
};

struct LoraAdapter {
  std::vector<LoraLayer> layers;
  double scale = 1.0;
};

struct RouterLayer {
  Tensor u;   // d_model × d_router
  Tensor v;   // d_router × d_model
  Tensor b1;  // d_model
  Tensor w;   // d_model × 1
  Tensor b2;  // scalar
};

struct RouterNet {
  std::vector<RouterLayer> layers;
};

/// Router weights captured during a mixed forward pass, one seq×1 tensor per
/// layer for each router. The tensors stay attached to the graph so losses
/// can differentiate through them.
struct RouterTrace {
  std::vector<Tensor> w_glad;
  std::vector<Tensor> w_unwill;

  std::size_t num_layers() const { return w_glad.size(); }
  std::size_t num_positions() const { return w_glad.empty() ? 0 : w_glad.front().size(); }
  double glad(std::size_t layer, std::size_t pos) const { return w_glad[layer].data()[pos]; }
  double unwill(std::size_t layer, std::size_t pos) const { return w_unwill[layer].data()[pos]; }
  /// Flat average over all layers and positions.
  double mean_glad() const;
  double mean_unwill() const;
  /// Per-layer averages over positions.
  std::vector<double> layer_mean_glad() const;
  std::vector<double> layer_mean_unwill() const;
};

enum class AdapterKind { Glad, Unwill, Sft };

std::string_view to_string(AdapterKind kind);

class MoguModel {
 public:
  ModelConfig config;
  BaseWeights base;
  LoraAdapter glad;
  LoraAdapter unwill;
  /// Single adapter for the supervised fine-tuning comparison arm. Not part
  /// of the mixture.
  LoraAdapter sft;
  RouterNet r_glad;
  RouterNet r_unwill;

  /// Every parameter in checkpoint order.
  std::vector<NamedTensor> named_parameters() const;
  std::vector<NamedTensor> base_parameters() const;
  std::vector<NamedTensor> adapter_parameters(AdapterKind kind) const;
  std::vector<NamedTensor> router_parameters() const;

  /// Marks every parameter as not requiring gradients.
  void freeze_all() const;
  const LoraAdapter& adapter(AdapterKind kind) const;

  /// Deep copy with independent storage.
  MoguModel clone() const;
};

/// Random base from config.seed; adapters with B = 0; routers with W = 0 and
/// b2 = 0 so every initial mixing weight is exactly 0.5.
MoguModel init_model(const ModelConfig& config);

struct ForwardResult {
  Tensor logits;  // seq × vocab
  std::optional<RouterTrace> trace;
};

/// Causal forward over `tokens`. Throws InputError on out-of-range ids, an
/// empty sequence, or a sequence longer than max_seq_len.
ForwardResult forward(const MoguModel& model, std::span<const int> tokens, Mode mode);

/// h·Wo + scale·(h·A)·B
Tensor oproj_with_adapter(const Tensor& h, const Tensor& wo, const LoraLayer& adapter, double scale);

/// sigmoid(((h·U·V) + b1)·W + b2), one weight per row of h.
Tensor router_weights(const Tensor& h, const RouterLayer& router);

struct MixedProjection {
  Tensor o;
  Tensor w_glad;
  Tensor w_unwill;
};

MixedProjection oproj_mogu(const Tensor& h, const Tensor& wo, const LoraLayer& glad,
                           const LoraLayer& unwill, double scale, const RouterLayer& r_glad,
                           const RouterLayer& r_unwill);

/// Added-parameter accounting for the two adapters and two routers:
///   n_layers × (d_model·d_router·4 + d_model·8 + d_model·r·4)
struct AddedParams {
  std::int64_t total = 0;
  double fraction_of(std::int64_t base_total) const {
    return static_cast<double>(total) / static_cast<double>(base_total);
  }
};

AddedParams count_added_params(const ModelConfig& config);

/// Scalars actually allocated for glad+unwill adapters and both routers.
/// Each router layer holds U, V, b1, W and a scalar b2, so this is
/// n_layers × (4·d·d_router + 4·d + 2 + 4·d·r).
std::int64_t count_allocated_added_params(const ModelConfig& config);
std::int64_t enumerate_added_params(const MoguModel& model);
std::int64_t count_base_params(const MoguModel& model);

}  // namespace mogu
