// Copyright (c) 2026 The mogu-toy Authors
// SPDX-License-Identifier: Apache-2.0

// Three-phase pipeline (glad responder, unwilling responder, routers), the
// single-adapter SFT baseline, and checkpoint persistence.
//
// Each phase unfreezes exactly one parameter group and verifies with
// checksums that every other group is bit-identical afterwards.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mogu/corpus.hpp"
#include "mogu/losses.hpp"
#include "mogu/model.hpp"

namespace mogu {

enum class Ablation { None, NoCl, NoL1 };

std::string_view to_string(Ablation ablation);
/// Accepts none | no_cl | no-cl | no_l1 | no-l1.
Ablation parse_ablation(std::string_view text);

struct TrainConfig {
  double lr_responder = 5e-5;
  double lr_router = 5e-4;
  int batch_size = 16;
  int max_epochs = 50;
  std::uint64_t seed = 0;
  Ablation ablation = Ablation::None;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

/// Adaptive-moment optimizer over a fixed parameter list.
class Adam {
 public:
  Adam(std::vector<Tensor> params, double lr, double beta1, double beta2, double eps);

  void zero_grad();
  void step();
  std::int64_t steps() const { return t_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
};

struct EpochRecord {
  std::string phase;
  int epoch = 0;
  double loss = 0.0;
  std::vector<std::size_t> order;  // sample draw order for the epoch
};

/// Line-delimited JSON run log of (phase, epoch, loss, order).
class RunLog {
 public:
  explicit RunLog(std::ostream* sink = nullptr) : sink_(sink) {}
  void record(const EpochRecord& rec);
  void note(std::string_view phase, std::string_view message);
  const std::vector<EpochRecord>& records() const { return records_; }

 private:
  std::ostream* sink_;
  std::vector<EpochRecord> records_;
};

struct PhaseResult {
  std::string phase;
  std::vector<double> epoch_losses;
  std::vector<std::string> warnings;

  double best_loss() const;
};

/// Phase 1/2. Glad trains on (Xm,Yg) against (Xm,Yr); unwill on (Xb,Yr)
/// against (Xb,Yg). Ablation::NoCl drops the negatives.
PhaseResult train_responder(MoguModel& model, std::span<const PairRecord> corpus, AdapterKind kind,
                            const TrainConfig& cfg, RunLog* log = nullptr);

/// Phase 3. Optimizes CE + lambda·L1 over (Xb,Yg) ∪ (Xm,Yr) in mixed mode,
/// touching only the routers. Ablation::NoL1 uses lambda = 0.
PhaseResult train_router(MoguModel& model, std::span<const PairRecord> corpus, const TrainConfig& cfg,
                         RunLog* log = nullptr);

/// Plain CE on (Xb,Yg) ∪ (Xm,Yr) into the sft adapter.
PhaseResult train_sft_baseline(MoguModel& model, std::span<const PairRecord> corpus, const TrainConfig& cfg,
                               RunLog* log = nullptr);

/// Runs glad → unwill → router on one model.
std::vector<PhaseResult> run_pipeline(MoguModel& model, std::span<const PairRecord> corpus,
                                      const TrainConfig& cfg, RunLog* log = nullptr);

/// FNV-1a 64 over the raw bytes of the listed parameters.
std::uint64_t parameter_checksum(std::span<const NamedTensor> params);

/// Seed for a named stream derived from a base seed.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag);

// ---- checkpoints ----------------------------------------------------------------

inline constexpr std::string_view kCheckpointMagic = "MOGU1";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  MoguModel model;
  TrainConfig train;
  std::string phase;
};

/// Layout: magic, u32 version, u64 header length, JSON header (configs,
/// phase, manifest of names and shapes), little-endian f64 parameter data in
/// manifest order, u64 FNV-1a of everything before it.
void save_checkpoint(const std::filesystem::path& path, const MoguModel& model, const TrainConfig& train,
                     std::string_view phase);
std::string serialize_checkpoint(const MoguModel& model, const TrainConfig& train, std::string_view phase);
/// Throws FormatError on bad magic, version, checksum or truncation.
Checkpoint load_checkpoint(const std::filesystem::path& path);
Checkpoint deserialize_checkpoint(std::string_view bytes);

}  // namespace mogu
