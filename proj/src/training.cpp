// Copyright (c) 2026 The mogu-toy Authors
// SPDX-License-Identifier: Apache-2.0

#include "mogu/training.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mogu/config.hpp"
#include "mogu/errors.hpp"

namespace mogu {

namespace {

using json = nlohmann::json;

void set_trainable(const std::vector<NamedTensor>& params) {
  for (auto p : params) p.tensor.set_requires_grad(true);
}

std::vector<Tensor> tensors_of(const std::vector<NamedTensor>& params) {
  std::vector<Tensor> out;
  for (const auto& p : params) out.push_back(p.tensor);
  return out;
}

// Every parameter group outside `trainable`, for the freezing assertion.
std::vector<NamedTensor> frozen_complement(const MoguModel& model, const std::vector<NamedTensor>& trainable) {
  std::vector<NamedTensor> out;
  for (const auto& p : model.named_parameters()) {
    const bool train = std::any_of(trainable.begin(), trainable.end(),
                                   [&](const NamedTensor& t) { return t.tensor.node() == p.tensor.node(); });
    if (!train) out.push_back(p);
  }
  return out;
}

// Generic minibatch loop. `sample_loss(i)` builds the loss graph of sample i;
// each sample is backpropagated separately with weight 1/batch.
PhaseResult run_phase(const MoguModel& model, std::string phase, const std::vector<NamedTensor>& trainable,
                      std::size_t n_samples, double lr, const TrainConfig& cfg,
                      const std::function<Tensor(std::size_t)>& sample_loss, RunLog* log) {
  cfg.validate();
  if (n_samples == 0) throw ContractError(phase + ": no training samples");
  model.freeze_all();
  set_trainable(trainable);
  const auto frozen = frozen_complement(model, trainable);
  const auto frozen_before = parameter_checksum(frozen);

  Adam opt(tensors_of(trainable), lr, cfg.beta1, cfg.beta2, cfg.adam_eps);
  std::mt19937_64 rng(derive_seed(cfg.seed, phase));
  std::vector<std::size_t> order(n_samples);
  std::iota(order.begin(), order.end(), 0);

  PhaseResult result;
  result.phase = phase;
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t start = 0; start < n_samples; start += batch) {
      const std::size_t end = std::min(n_samples, start + batch);
      const double weight = 1.0 / static_cast<double>(end - start);
      opt.zero_grad();
      for (std::size_t i = start; i < end; ++i) {
        Tensor loss = sample_loss(order[i]);
        total += loss.item();
        scale(loss, weight).backward();
      }
      opt.step();
    }
    const double epoch_loss = total / static_cast<double>(n_samples);
    result.epoch_losses.push_back(epoch_loss);
    if (log) log->record({phase, epoch, epoch_loss, order});
  }
  model.freeze_all();
  if (parameter_checksum(frozen) != frozen_before) {
    throw ContractError(phase + ": a frozen parameter changed during training");
  }
  return result;
}

std::vector<ContrastiveSample> responder_samples(std::span<const PairRecord> corpus, AdapterKind kind) {
  const Label label = kind == AdapterKind::Glad ? Label::Malicious : Label::Benign;
  const PairType pos = kind == AdapterKind::Glad ? PairType::MaliciousGlad : PairType::BenignReject;
  const PairType neg = kind == AdapterKind::Glad ? PairType::MaliciousReject : PairType::BenignGlad;
  std::map<std::vector<int>, const PairRecord*> negatives;
  for (const auto& p : corpus) {
    if (p.pair_type == neg) negatives.emplace(p.instruction.tokens, &p);
  }
  std::vector<ContrastiveSample> out;
  for (const auto& p : corpus) {
    if (p.pair_type != pos) continue;
    auto it = negatives.find(p.instruction.tokens);
    if (it == negatives.end()) {
      throw ContractError("train_responder: instruction lacks its " + std::string(to_string(neg)) + " pair");
    }
    out.push_back({make_masked(p), make_masked(*it->second)});
  }
  if (out.empty()) {
    throw ContractError("train_responder: corpus has no " + std::string(to_string(pos)) + " pairs for " +
                        std::string(to_string(label)) + " instructions");
  }
  return out;
}

std::vector<MaskedSequence> aligned_sequences(std::span<const PairRecord> corpus, const char* who) {
  std::vector<MaskedSequence> out;
  bool benign = false, malicious = false;
  for (const auto& p : corpus) {
    if (p.pair_type == PairType::BenignGlad) benign = true;
    if (p.pair_type == PairType::MaliciousReject) malicious = true;
    if (p.pair_type == PairType::BenignGlad || p.pair_type == PairType::MaliciousReject) {
      out.push_back(make_masked(p));
    }
  }
  if (!benign || !malicious) throw ContractError(std::string(who) + ": corpus needs both Xb_Yg and Xm_Yr pairs");
  return out;
}

bool adapter_is_zero(const LoraAdapter& a) {
  for (const auto& l : a.layers) {
    for (double v : l.b.data()) {
      if (v != 0.0) return false;
    }
  }
  return true;
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(std::string_view bytes, std::size_t pos) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
  return v;
}

std::uint32_t get_u32(std::string_view bytes, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
  return v;
}

}  // namespace

std::string_view to_string(Ablation ablation) {
  switch (ablation) {
    case Ablation::None: return "none";
    case Ablation::NoCl: return "no_cl";
    case Ablation::NoL1: return "no_l1";
  }
  return "?";
}

Ablation parse_ablation(std::string_view text) {
  if (text == "none") return Ablation::None;
  if (text == "no_cl" || text == "no-cl") return Ablation::NoCl;
  if (text == "no_l1" || text == "no-l1") return Ablation::NoL1;
  throw InputError("unknown ablation '" + std::string(text) + "'");
}

void TrainConfig::validate() const {
  if (!(lr_responder > 0.0) || !(lr_router > 0.0)) throw ContractError("learning rates must be > 0");
  if (batch_size < 1) throw ContractError("train.batch_size must be >= 1");
  if (max_epochs < 0) throw ContractError("train.max_epochs must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(adam_eps > 0.0)) {
    throw ContractError("invalid optimizer moments");
  }
}

// ---- Adam --------------------------------------------------------------------------

Adam::Adam(std::vector<Tensor> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k];
    if (!p.has_grad()) continue;
    auto g = p.grad();
    auto w = p.mutable_data();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      w[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

// ---- logging -------------------------------------------------------------------------

void RunLog::record(const EpochRecord& rec) {
  records_.push_back(rec);
  if (!sink_) return;
  json j;
  j["phase"] = rec.phase;
  j["epoch"] = rec.epoch;
  j["loss"] = rec.loss;
  j["order"] = rec.order;
  *sink_ << j.dump() << '\n';
}

void RunLog::note(std::string_view phase, std::string_view message) {
  if (!sink_) return;
  json j;
  j["phase"] = phase;
  j["note"] = message;
  *sink_ << j.dump() << '\n';
}

double PhaseResult::best_loss() const {
  return epoch_losses.empty() ? 0.0 : *std::min_element(epoch_losses.begin(), epoch_losses.end());
}

// ---- phases --------------------------------------------------------------------------

PhaseResult train_responder(MoguModel& model, std::span<const PairRecord> corpus, AdapterKind kind,
                            const TrainConfig& cfg, RunLog* log) {
  if (kind == AdapterKind::Sft) throw ContractError("train_responder: use train_sft_baseline for the sft adapter");
  const auto samples = responder_samples(corpus, kind);
  const auto variant = cfg.ablation == Ablation::NoCl ? ResponderVariant::Plain : ResponderVariant::Contrastive;
  return run_phase(
      model, std::string(to_string(kind)), model.adapter_parameters(kind), samples.size(), cfg.lr_responder, cfg,
      [&](std::size_t i) { return responder_loss(model, std::span(&samples[i], 1), kind, variant); }, log);
}

PhaseResult train_router(MoguModel& model, std::span<const PairRecord> corpus, const TrainConfig& cfg,
                         RunLog* log) {
  const auto seqs = aligned_sequences(corpus, "train_router");
  std::vector<std::string> warnings;
  for (auto kind : {AdapterKind::Glad, AdapterKind::Unwill}) {
    if (adapter_is_zero(model.adapter(kind))) {
      warnings.push_back(std::string(to_string(kind)) + " adapter is untrained (B is all zero)");
      if (log) log->note("router", warnings.back());
    }
  }
  const double lambda = cfg.ablation == Ablation::NoL1 ? 0.0 : model.config.lambda_l1;
  auto result = run_phase(
      model, "router", model.router_parameters(), seqs.size(), cfg.lr_router, cfg,
      [&](std::size_t i) {
        auto terms = router_sample_terms(model, seqs[i]);
        return add(terms.ce, scale(terms.l1, lambda));
      },
      log);
  result.warnings = std::move(warnings);
  return result;
}

PhaseResult train_sft_baseline(MoguModel& model, std::span<const PairRecord> corpus, const TrainConfig& cfg,
                               RunLog* log) {
  const auto seqs = aligned_sequences(corpus, "train_sft_baseline");
  return run_phase(
      model, "sft", model.adapter_parameters(AdapterKind::Sft), seqs.size(), cfg.lr_responder, cfg,
      [&](std::size_t i) { return sequence_ce(model, seqs[i], Mode::Sft); }, log);
}

std::vector<PhaseResult> run_pipeline(MoguModel& model, std::span<const PairRecord> corpus, const TrainConfig& cfg,
                                      RunLog* log) {
  std::vector<PhaseResult> out;
  out.push_back(train_responder(model, corpus, AdapterKind::Glad, cfg, log));
  out.push_back(train_responder(model, corpus, AdapterKind::Unwill, cfg, log));
  out.push_back(train_router(model, corpus, cfg, log));
  return out;
}

std::uint64_t parameter_checksum(std::span<const NamedTensor> params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : params) {
    const auto d = p.tensor.data();
    h = fnv1a64(std::string_view(reinterpret_cast<const char*>(d.data()), d.size_bytes()), h);
  }
  return h;
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) {
  // splitmix64 finalizer over seed ^ hash(tag)
  std::uint64_t z = seed ^ fnv1a64(tag);
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// ---- checkpoints ------------------------------------------------------------------------

std::string serialize_checkpoint(const MoguModel& model, const TrainConfig& train, std::string_view phase) {
  const auto params = model.named_parameters();
  json header;
  header["model"] = to_json(model.config);
  header["train"] = to_json(train);
  header["phase"] = phase;
  json manifest = json::array();
  for (const auto& p : params) manifest.push_back({{"name", p.name}, {"shape", p.tensor.shape()}});
  header["manifest"] = manifest;
  const std::string header_text = header.dump();

  std::string out(kCheckpointMagic);
  put_u32(out, kCheckpointVersion);
  put_u64(out, header_text.size());
  out += header_text;
  for (const auto& p : params) {
    for (double v : p.tensor.data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  put_u64(out, fnv1a64(out));
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const MoguModel& model, const TrainConfig& train,
                     std::string_view phase) {
  const auto bytes = serialize_checkpoint(model, train, phase);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  const std::size_t fixed = kCheckpointMagic.size() + 4 + 8;
  if (bytes.size() < fixed + 8) throw FormatError("checkpoint truncated: header incomplete");
  if (bytes.substr(0, kCheckpointMagic.size()) != kCheckpointMagic) throw FormatError("checkpoint has bad magic");
  const auto version = get_u32(bytes, kCheckpointMagic.size());
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto header_len = get_u64(bytes, kCheckpointMagic.size() + 4);
  if (header_len > bytes.size() - fixed) throw FormatError("checkpoint truncated inside header");
  json header;
  try {
    header = json::parse(bytes.substr(fixed, header_len));
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }

  Checkpoint ckpt{};
  try {
    ckpt.model = init_model(model_config_from_json(header.at("model")));
    ckpt.train = train_config_from_json(header.at("train"));
    ckpt.phase = header.at("phase").get<std::string>();
  } catch (const FormatError&) {
    throw;
  } catch (const std::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }
  auto params = ckpt.model.named_parameters();
  const auto& manifest = header.at("manifest");
  if (!manifest.is_array() || manifest.size() != params.size()) {
    throw FormatError("checkpoint manifest does not match the model layout");
  }
  std::size_t expected = fixed + header_len + 8;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (manifest[i].value("name", "") != params[i].name ||
        manifest[i].value("shape", Shape{}) != params[i].tensor.shape()) {
      throw FormatError("checkpoint manifest entry " + std::to_string(i) + " does not match " + params[i].name);
    }
    expected += params[i].tensor.size() * 8;
  }
  if (bytes.size() != expected) {
    throw FormatError("checkpoint truncated or padded: " + std::to_string(bytes.size()) + " bytes, expected " +
                      std::to_string(expected));
  }
  const auto stored = get_u64(bytes, bytes.size() - 8);
  if (stored != fnv1a64(bytes.substr(0, bytes.size() - 8))) throw FormatError("checkpoint checksum mismatch");

  std::size_t pos = fixed + header_len;
  for (auto& p : params) {
    auto data = p.tensor.mutable_data();
    for (auto& v : data) {
      v = std::bit_cast<double>(get_u64(bytes, pos));
      pos += 8;
    }
  }
  return ckpt;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace mogu
