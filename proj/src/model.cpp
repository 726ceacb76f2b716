// Copyright (c) 2026 The mogu-toy Authors
// SPDX-License-Identifier: Apache-2.0

#include "mogu/model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <random>

#include "mogu/errors.hpp"

namespace mogu {

namespace {

Tensor normal(std::mt19937_64& rng, Shape shape, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> values(shape_numel(shape));
  for (auto& v : values) v = dist(rng);
  return Tensor::from(std::move(shape), std::move(values));
}

std::size_t dim(int v) { return static_cast<std::size_t>(v); }

LoraAdapter make_adapter(std::mt19937_64& rng, const ModelConfig& c) {
  LoraAdapter adapter;
  adapter.scale = c.lora_scale();
  for (int l = 0; l < c.n_layers; ++l) {
    adapter.layers.push_back({normal(rng, {dim(c.d_model), dim(c.d_lora_r)}, 1.0 / std::sqrt(c.d_model)),
                              Tensor::zeros({dim(c.d_lora_r), dim(c.d_model)})});
  }
  return adapter;
}

RouterNet make_router(std::mt19937_64& rng, const ModelConfig& c) {
  RouterNet router;
  for (int l = 0; l < c.n_layers; ++l) {
    router.layers.push_back({normal(rng, {dim(c.d_model), dim(c.d_router)}, 1.0 / std::sqrt(c.d_model)),
                             normal(rng, {dim(c.d_router), dim(c.d_model)}, 1.0 / std::sqrt(c.d_router)),
                             Tensor::zeros({dim(c.d_model)}), Tensor::zeros({dim(c.d_model), 1}),
                             Tensor::zeros({1})});
  }
  return router;
}

void append_adapter(std::vector<NamedTensor>& out, const std::string& prefix, const LoraAdapter& a) {
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    const auto p = prefix + ".layers." + std::to_string(l) + ".";
    out.push_back({p + "A", a.layers[l].a});
    out.push_back({p + "B", a.layers[l].b});
  }
}

void append_router(std::vector<NamedTensor>& out, const std::string& prefix, const RouterNet& r) {
  for (std::size_t l = 0; l < r.layers.size(); ++l) {
    const auto p = prefix + ".layers." + std::to_string(l) + ".";
    const auto& rl = r.layers[l];
    out.push_back({p + "U", rl.u});
    out.push_back({p + "V", rl.v});
    out.push_back({p + "b1", rl.b1});
    out.push_back({p + "W", rl.w});
    out.push_back({p + "b2", rl.b2});
  }
}

double flat_mean(const std::vector<Tensor>& ws) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& w : ws) {
    for (double v : w.data()) s += v;
    n += w.size();
  }
  return n ? s / static_cast<double>(n) : 0.0;
}

std::vector<double> layer_means(const std::vector<Tensor>& ws) {
  std::vector<double> out;
  for (const auto& w : ws) {
    double s = 0.0;
    for (double v : w.data()) s += v;
    out.push_back(s / static_cast<double>(w.size()));
  }
  return out;
}

void require_width(const char* op, const Tensor& h, std::size_t rows_expected) {
  if (h.rank() != 2 || h.cols() != rows_expected) {
    throw DimensionError(std::string(op) + ": input " + shape_to_string(h.shape()) +
                         " does not match width " + std::to_string(rows_expected));
  }
}

}  // namespace

void ModelConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v < 1) throw ContractError(std::string("model.") + name + " must be >= 1");
  };
  positive(vocab_size, "vocab_size");
  positive(d_model, "d_model");
  positive(n_heads, "n_heads");
  positive(d_ff, "d_ff");
  positive(max_seq_len, "max_seq_len");
  positive(d_router, "d_router");
  positive(d_lora_r, "d_lora_r");
  if (n_layers < 0) throw ContractError("model.n_layers must be >= 0");
  if (d_model % n_heads != 0) throw ContractError("model.d_model must be divisible by model.n_heads");
  if (m_tokens < 0) throw ContractError("model.m_tokens must be >= 0");
  if (!(lora_alpha > 0.0)) throw ContractError("model.lora_alpha must be > 0");
  if (!(lambda_l1 >= 0.0)) throw ContractError("model.lambda_l1 must be >= 0");
}

std::string_view to_string(Mode mode) {
  switch (mode) {
    case Mode::Base: return "base";
    case Mode::Glad: return "glad";
    case Mode::Unwill: return "unwill";
    case Mode::MoGU: return "mogu";
    case Mode::Sft: return "sft";
  }
  return "?";
}

Mode parse_mode(std::string_view text) {
  std::string s(text);
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "base") return Mode::Base;
  if (s == "glad") return Mode::Glad;
  if (s == "unwill") return Mode::Unwill;
  if (s == "mogu") return Mode::MoGU;
  if (s == "sft") return Mode::Sft;
  throw InputError("unknown mode '" + std::string(text) + "'");
}

std::string_view to_string(AdapterKind kind) {
  switch (kind) {
    case AdapterKind::Glad: return "glad";
    case AdapterKind::Unwill: return "unwill";
    case AdapterKind::Sft: return "sft";
  }
  return "?";
}

double RouterTrace::mean_glad() const { return flat_mean(w_glad); }
double RouterTrace::mean_unwill() const { return flat_mean(w_unwill); }
std::vector<double> RouterTrace::layer_mean_glad() const { return layer_means(w_glad); }
std::vector<double> RouterTrace::layer_mean_unwill() const { return layer_means(w_unwill); }

std::vector<NamedTensor> MoguModel::base_parameters() const {
  std::vector<NamedTensor> out;
  out.push_back({"base.tok_emb", base.tok_emb});
  out.push_back({"base.pos_emb", base.pos_emb});
  for (std::size_t l = 0; l < base.layers.size(); ++l) {
    const auto p = "base.layers." + std::to_string(l) + ".";
    const auto& b = base.layers[l];
    out.push_back({p + "ln1_gamma", b.ln1_gamma});
    out.push_back({p + "ln1_beta", b.ln1_beta});
    out.push_back({p + "wq", b.wq});
    out.push_back({p + "wk", b.wk});
    out.push_back({p + "wv", b.wv});
    out.push_back({p + "wo", b.wo});
    out.push_back({p + "ln2_gamma", b.ln2_gamma});
    out.push_back({p + "ln2_beta", b.ln2_beta});
    out.push_back({p + "w_up", b.w_up});
    out.push_back({p + "b_up", b.b_up});
    out.push_back({p + "w_down", b.w_down});
    out.push_back({p + "b_down", b.b_down});
  }
  out.push_back({"base.lnf_gamma", base.lnf_gamma});
  out.push_back({"base.lnf_beta", base.lnf_beta});
  out.push_back({"base.w_out", base.w_out});
  return out;
}

std::vector<NamedTensor> MoguModel::adapter_parameters(AdapterKind kind) const {
  std::vector<NamedTensor> out;
  append_adapter(out, std::string(to_string(kind)), adapter(kind));
  return out;
}

std::vector<NamedTensor> MoguModel::router_parameters() const {
  std::vector<NamedTensor> out;
  append_router(out, "router_glad", r_glad);
  append_router(out, "router_unwill", r_unwill);
  return out;
}

std::vector<NamedTensor> MoguModel::named_parameters() const {
  auto out = base_parameters();
  for (auto kind : {AdapterKind::Glad, AdapterKind::Unwill, AdapterKind::Sft}) {
    auto part = adapter_parameters(kind);
    out.insert(out.end(), part.begin(), part.end());
  }
  auto routers = router_parameters();
  out.insert(out.end(), routers.begin(), routers.end());
  return out;
}

void MoguModel::freeze_all() const {
  for (auto& p : named_parameters()) {
    p.tensor.set_requires_grad(false);
    p.tensor.zero_grad();
  }
}

const LoraAdapter& MoguModel::adapter(AdapterKind kind) const {
  switch (kind) {
    case AdapterKind::Glad: return glad;
    case AdapterKind::Unwill: return unwill;
    case AdapterKind::Sft: return sft;
  }
  return glad;
}

MoguModel MoguModel::clone() const {
  MoguModel copy = init_model(config);
  auto src = named_parameters();
  auto dst = copy.named_parameters();
  for (std::size_t i = 0; i < src.size(); ++i) {
    auto out = dst[i].tensor.mutable_data();
    std::copy(src[i].tensor.data().begin(), src[i].tensor.data().end(), out.begin());
  }
  copy.glad.scale = glad.scale;
  copy.unwill.scale = unwill.scale;
  copy.sft.scale = sft.scale;
  return copy;
}

MoguModel init_model(const ModelConfig& c) {
  c.validate();
  std::mt19937_64 rng(c.seed);
  const auto d = dim(c.d_model), v = dim(c.vocab_size), ff = dim(c.d_ff);
  const double sd = 1.0 / std::sqrt(static_cast<double>(c.d_model));

  MoguModel model;
  model.config = c;
  auto& b = model.base;
  b.tok_emb = normal(rng, {v, d}, 1.0);
  b.pos_emb = normal(rng, {dim(c.max_seq_len), d}, 0.5);
  for (int l = 0; l < c.n_layers; ++l) {
    BaseLayer layer;
    layer.ln1_gamma = Tensor::filled({d}, 1.0);
    layer.ln1_beta = Tensor::zeros({d});
    layer.wq = normal(rng, {d, d}, sd);
    layer.wk = normal(rng, {d, d}, sd);
    layer.wv = normal(rng, {d, d}, sd);
    layer.wo = normal(rng, {d, d}, sd);
    layer.ln2_gamma = Tensor::filled({d}, 1.0);
    layer.ln2_beta = Tensor::zeros({d});
    layer.w_up = normal(rng, {d, ff}, sd);
    layer.b_up = Tensor::zeros({ff});
    layer.w_down = normal(rng, {ff, d}, 1.0 / std::sqrt(static_cast<double>(ff)));
    layer.b_down = Tensor::zeros({d});
    b.layers.push_back(std::move(layer));
  }
  b.lnf_gamma = Tensor::filled({d}, 1.0);
  b.lnf_beta = Tensor::zeros({d});
  b.w_out = normal(rng, {d, v}, sd);

  model.glad = make_adapter(rng, c);
  model.unwill = make_adapter(rng, c);
  model.sft = make_adapter(rng, c);
  model.r_glad = make_router(rng, c);
  model.r_unwill = make_router(rng, c);
  return model;
}

Tensor oproj_with_adapter(const Tensor& h, const Tensor& wo, const LoraLayer& adapter,
                          double lora_scale) {
  require_width("oproj_with_adapter", h, wo.rows());
  if (adapter.a.rows() != h.cols() || adapter.b.cols() != wo.cols() ||
      adapter.a.cols() != adapter.b.rows()) {
    throw DimensionError("oproj_with_adapter: adapter " + shape_to_string(adapter.a.shape()) + "/" +
                         shape_to_string(adapter.b.shape()) + " does not fit input " +
                         shape_to_string(h.shape()));
  }
  const Tensor delta = matmul(matmul(h, adapter.a), adapter.b);
  return add(matmul(h, wo), scale(delta, lora_scale));
}

Tensor router_weights(const Tensor& h, const RouterLayer& r) {
  require_width("router_weights", h, r.u.rows());
  const Tensor hidden = add_row_bias(matmul(matmul(h, r.u), r.v), r.b1);
  return sigmoid_map(add_row_bias(matmul(hidden, r.w), r.b2));
}

MixedProjection oproj_mogu(const Tensor& h, const Tensor& wo, const LoraLayer& glad,
                           const LoraLayer& unwill, double scale_factor, const RouterLayer& r_glad,
                           const RouterLayer& r_unwill) {
  MixedProjection out;
  out.w_glad = router_weights(h, r_glad);
  out.w_unwill = router_weights(h, r_unwill);
  const Tensor o_glad = oproj_with_adapter(h, wo, glad, scale_factor);
  const Tensor o_unwill = oproj_with_adapter(h, wo, unwill, scale_factor);
  out.o = add(mul_rowwise(out.w_glad, o_glad), mul_rowwise(out.w_unwill, o_unwill));
  return out;
}

ForwardResult forward(const MoguModel& model, std::span<const int> tokens, Mode mode) {
  const auto& c = model.config;
  if (tokens.empty()) throw InputError("forward: empty token sequence");
  if (tokens.size() > dim(c.max_seq_len)) {
    throw InputError("forward: sequence length " + std::to_string(tokens.size()) +
                     " exceeds max_seq_len " + std::to_string(c.max_seq_len));
  }
  for (int t : tokens) {
    if (t < 0 || t >= c.vocab_size) {
      throw InputError("forward: token id " + std::to_string(t) + " outside vocabulary of " +
                       std::to_string(c.vocab_size));
    }
  }
  const auto& b = model.base;
  Tensor x = add(gather_rows(b.tok_emb, tokens), head_rows(b.pos_emb, tokens.size()));

  ForwardResult result;
  if (mode == Mode::MoGU) result.trace.emplace();

  for (std::size_t l = 0; l < b.layers.size(); ++l) {
    const auto& layer = b.layers[l];
    const Tensor a = layer_norm(x, layer.ln1_gamma, layer.ln1_beta);
    const Tensor h = causal_attention(matmul(a, layer.wq), matmul(a, layer.wk), matmul(a, layer.wv),
                                      dim(c.n_heads));
    Tensor o;
    switch (mode) {
      case Mode::Base: o = matmul(h, layer.wo); break;
      case Mode::Glad: o = oproj_with_adapter(h, layer.wo, model.glad.layers[l], model.glad.scale); break;
      case Mode::Unwill:
        o = oproj_with_adapter(h, layer.wo, model.unwill.layers[l], model.unwill.scale);
        break;
      case Mode::Sft: o = oproj_with_adapter(h, layer.wo, model.sft.layers[l], model.sft.scale); break;
      case Mode::MoGU: {
        auto mixed = oproj_mogu(h, layer.wo, model.glad.layers[l], model.unwill.layers[l],
                                model.glad.scale, model.r_glad.layers[l], model.r_unwill.layers[l]);
        o = mixed.o;
        result.trace->w_glad.push_back(mixed.w_glad);
        result.trace->w_unwill.push_back(mixed.w_unwill);
        break;
      }
    }
    x = add(x, o);
    const Tensor f = layer_norm(x, layer.ln2_gamma, layer.ln2_beta);
    const Tensor up = relu(add_row_bias(matmul(f, layer.w_up), layer.b_up));
    x = add(x, add_row_bias(matmul(up, layer.w_down), layer.b_down));
  }
  result.logits = matmul(layer_norm(x, b.lnf_gamma, b.lnf_beta), b.w_out);
  return result;
}

AddedParams count_added_params(const ModelConfig& c) {
  const std::int64_t d = c.d_model, dr = c.d_router, r = c.d_lora_r;
  return {static_cast<std::int64_t>(c.n_layers) * (d * dr * 4 + d * 8 + d * r * 4)};
}

std::int64_t count_allocated_added_params(const ModelConfig& c) {
  const std::int64_t d = c.d_model, dr = c.d_router, r = c.d_lora_r;
  return static_cast<std::int64_t>(c.n_layers) * (4 * d * dr + 4 * d + 2 + 4 * d * r);
}

std::int64_t enumerate_added_params(const MoguModel& model) {
  std::int64_t n = 0;
  auto count = [&n](const std::vector<NamedTensor>& ps) {
    for (const auto& p : ps) n += static_cast<std::int64_t>(p.tensor.size());
  };
  count(model.adapter_parameters(AdapterKind::Glad));
  count(model.adapter_parameters(AdapterKind::Unwill));
  count(model.router_parameters());
  return n;
}

std::int64_t count_base_params(const MoguModel& model) {
  std::int64_t n = 0;
  for (const auto& p : model.base_parameters()) n += static_cast<std::int64_t>(p.tensor.size());
  return n;
}

}  // namespace mogu
