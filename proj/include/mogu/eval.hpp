// Copyright (c) 2026 The mogu-toy Authors
// SPDX-License-Identifier: Apache-2.0

// Attack success rate, refusal rate and router-weight statistics.

#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mogu/corpus.hpp"
#include "mogu/inference.hpp"
#include "mogu/model.hpp"

namespace mogu {

/// Fraction of responses containing none of the harmless targets.
double compute_asr(std::span<const std::string> responses, const PhraseList& targets = harmless_targets());
/// Fraction of responses containing a refusal expression.
double rejection_rate(std::span<const std::string> responses,
                      const PhraseList& expressions = rejection_expressions());

struct WeightRow {
  std::size_t instruction_id = 0;
  Label label = Label::Benign;
  bool wrapped = false;
  double mean_w_glad = 0.0;
  double mean_w_unwill = 0.0;

  bool operator==(const WeightRow&) const = default;
};

/// Mixed forward over each instruction's prompt tokens, averaging each
/// router's weights over all layers and positions.
std::vector<WeightRow> weight_stats(const MoguModel& model, std::span<const InstructionRecord> instructions);

/// CSV: instruction_id,label,wrapped,mean_w_glad,mean_w_unwill
void export_stats(const std::filesystem::path& path, std::span<const WeightRow> rows);
std::vector<WeightRow> import_stats(const std::filesystem::path& path);

enum class Condition { Benign, Malicious, WrappedMalicious };
std::string_view to_string(Condition c);
Condition condition_of(const InstructionRecord& instr);

struct ConditionResult {
  Condition condition = Condition::Benign;
  Mode mode = Mode::Base;
  std::size_t n = 0;
  double asr = 0.0;
  double rejection_rate = 0.0;
};

struct EvalReport {
  Mode mode = Mode::Base;
  std::size_t n = 0;
  double asr = 0.0;
  double rejection_rate = 0.0;
  std::vector<ConditionResult> breakdown;  // counts sum to n
  std::vector<WeightRow> weight_stats;     // MoGU mode only
  std::vector<std::string> responses;

  const ConditionResult* find(Condition c) const;
  nlohmann::json to_json() const;
};

/// Decodes every instruction in `mode` and scores the responses.
EvalReport evaluate(const MoguModel& model, std::span<const InstructionRecord> instructions, Mode mode,
                    const DecodeConfig& cfg, const PhraseList& targets = harmless_targets(),
                    const PhraseList& expressions = rejection_expressions());

/// The eval split plus a wrapped copy of each malicious instruction.
std::vector<InstructionRecord> with_wrapped(std::span<const InstructionRecord> eval);

struct AblationRow {
  std::string variant;
  double asr_malicious = 0.0;
  double asr_wrapped = 0.0;
};

struct AblationVariant {
  std::string name;
  const MoguModel* model = nullptr;
};

/// MoGU-mode ASR of each variant on unwrapped and wrapped malicious eval
/// instructions. Variants must share one model configuration.
std::vector<AblationRow> ablation_report(std::span<const AblationVariant> variants,
                                         std::span<const InstructionRecord> eval, const DecodeConfig& cfg);

std::string format_ablation_table(std::span<const AblationRow> rows);
nlohmann::json ablation_to_json(std::span<const AblationRow> rows);
std::string format_report_table(std::span<const EvalReport> reports);

}  // namespace mogu
