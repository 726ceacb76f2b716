// Copyright (c) 2026 The mogu-toy Authors
// SPDX-License-Identifier: Apache-2.0

#include "mogu/eval.hpp"

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "mogu/errors.hpp"

namespace mogu {

namespace {

double fraction(std::span<const std::string> responses, bool want, const PhraseList& list, const char* who) {
  if (responses.empty()) throw ContractError(std::string(who) + ": empty response list");
  std::size_t hits = 0;
  for (const auto& r : responses) {
    if (list.matches(r) == want) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(responses.size());
}

std::string fmt_pct(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << 100.0 * v << '%';
  return os.str();
}

}  // namespace

double compute_asr(std::span<const std::string> responses, const PhraseList& targets) {
  return fraction(responses, false, targets, "compute_asr");
}

double rejection_rate(std::span<const std::string> responses, const PhraseList& expressions) {
  return fraction(responses, true, expressions, "rejection_rate");
}

std::vector<WeightRow> weight_stats(const MoguModel& model, std::span<const InstructionRecord> instructions) {
  std::vector<WeightRow> rows;
  for (std::size_t i = 0; i < instructions.size(); ++i) {
    const auto& instr = instructions[i];
    const auto out = forward(model, instr.tokens, Mode::MoGU);
    rows.push_back({i, instr.label, instr.wrapped, out.trace->mean_glad(), out.trace->mean_unwill()});
  }
  return rows;
}

void export_stats(const std::filesystem::path& path, std::span<const WeightRow> rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "instruction_id,label,wrapped,mean_w_glad,mean_w_unwill\n";
  out << std::setprecision(17);
  for (const auto& r : rows) {
    out << r.instruction_id << ',' << to_string(r.label) << ',' << (r.wrapped ? "true" : "false") << ','
        << r.mean_w_glad << ',' << r.mean_w_unwill << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<WeightRow> import_stats(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "instruction_id,label,wrapped,mean_w_glad,mean_w_unwill") {
    throw FormatError(path.string() + ": missing or unexpected CSV header");
  }
  std::vector<WeightRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    try {
      if (cells.size() != 5) throw FormatError("expected 5 columns");
      WeightRow r;
      r.instruction_id = std::stoull(cells[0]);
      r.label = parse_label(cells[1]);
      if (cells[2] != "true" && cells[2] != "false") throw FormatError("wrapped must be true or false");
      r.wrapped = cells[2] == "true";
      r.mean_w_glad = std::stod(cells[3]);
      r.mean_w_unwill = std::stod(cells[4]);
      rows.push_back(r);
    } catch (const std::exception& e) {
      throw FormatError(path.string() + ": line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return rows;
}

std::string_view to_string(Condition c) {
  switch (c) {
    case Condition::Benign: return "benign";
    case Condition::Malicious: return "malicious";
    case Condition::WrappedMalicious: return "wrapped-malicious";
  }
  return "?";
}

Condition condition_of(const InstructionRecord& instr) {
  if (instr.label == Label::Benign) return Condition::Benign;
  return instr.wrapped ? Condition::WrappedMalicious : Condition::Malicious;
}

const ConditionResult* EvalReport::find(Condition c) const {
  for (const auto& r : breakdown) {
    if (r.condition == c) return &r;
  }
  return nullptr;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j;
  j["mode"] = to_string(mode);
  j["n"] = n;
  j["asr"] = asr;
  j["rejection_rate"] = rejection_rate;
  auto& b = j["breakdown"] = nlohmann::json::array();
  for (const auto& r : breakdown) {
    b.push_back({{"condition", to_string(r.condition)},
                 {"n", r.n},
                 {"asr", r.asr},
                 {"rejection_rate", r.rejection_rate}});
  }
  if (!weight_stats.empty()) {
    auto& w = j["weight_stats"] = nlohmann::json::array();
    for (const auto& r : weight_stats) {
      w.push_back({{"instruction_id", r.instruction_id},
                   {"label", to_string(r.label)},
                   {"wrapped", r.wrapped},
                   {"mean_w_glad", r.mean_w_glad},
                   {"mean_w_unwill", r.mean_w_unwill}});
    }
  }
  return j;
}

EvalReport evaluate(const MoguModel& model, std::span<const InstructionRecord> instructions, Mode mode,
                    const DecodeConfig& cfg, const PhraseList& targets, const PhraseList& expressions) {
  if (instructions.empty()) throw ContractError("evaluate: no instructions");
  EvalReport report;
  report.mode = mode;
  report.n = instructions.size();
  std::vector<std::vector<std::string>> by_condition(3);
  for (const auto& instr : instructions) {
    auto out = decode(model, instr.tokens, cfg, mode);
    by_condition[static_cast<std::size_t>(condition_of(instr))].push_back(out.text);
    report.responses.push_back(std::move(out.text));
  }
  report.asr = compute_asr(report.responses, targets);
  report.rejection_rate = rejection_rate(report.responses, expressions);
  for (auto c : {Condition::Benign, Condition::Malicious, Condition::WrappedMalicious}) {
    const auto& texts = by_condition[static_cast<std::size_t>(c)];
    if (texts.empty()) continue;
    report.breakdown.push_back({c, mode, texts.size(), compute_asr(texts, targets),
                                rejection_rate(texts, expressions)});
  }
  if (mode == Mode::MoGU) report.weight_stats = weight_stats(model, instructions);
  return report;
}

std::vector<InstructionRecord> with_wrapped(std::span<const InstructionRecord> eval) {
  std::vector<InstructionRecord> out(eval.begin(), eval.end());
  for (const auto& instr : eval) {
    if (instr.label == Label::Malicious && !instr.wrapped) out.push_back(wrap_attack(instr));
  }
  return out;
}

std::vector<AblationRow> ablation_report(std::span<const AblationVariant> variants,
                                         std::span<const InstructionRecord> eval, const DecodeConfig& cfg) {
  if (variants.empty()) throw ContractError("ablation_report: no variants");
  for (const auto& v : variants) {
    if (!v.model) throw ContractError("ablation_report: variant " + v.name + " has no model");
    if (!(v.model->config == variants.front().model->config)) {
      throw ContractError("ablation_report: variant " + v.name + " has a different model configuration");
    }
  }
  std::vector<InstructionRecord> plain, wrapped;
  for (const auto& instr : eval) {
    if (instr.label != Label::Malicious) continue;
    if (instr.wrapped) {
      wrapped.push_back(instr);
    } else {
      plain.push_back(instr);
      wrapped.push_back(wrap_attack(instr));
    }
  }
  if (plain.empty()) throw ContractError("ablation_report: eval split has no malicious instructions");
  std::vector<AblationRow> rows;
  for (const auto& v : variants) {
    AblationRow row{v.name, 0.0, 0.0};
    row.asr_malicious = evaluate(*v.model, plain, Mode::MoGU, cfg).asr;
    row.asr_wrapped = evaluate(*v.model, wrapped, Mode::MoGU, cfg).asr;
    rows.push_back(row);
  }
  return rows;
}

std::string format_ablation_table(std::span<const AblationRow> rows) {
  std::ostringstream os;
  os << std::left << std::setw(10) << "variant" << std::right << std::setw(12) << "malicious" << std::setw(12)
     << "wrapped" << '\n';
  for (const auto& r : rows) {
    os << std::left << std::setw(10) << r.variant << std::right << std::setw(12) << fmt_pct(r.asr_malicious)
       << std::setw(12) << fmt_pct(r.asr_wrapped) << '\n';
  }
  return os.str();
}

nlohmann::json ablation_to_json(std::span<const AblationRow> rows) {
  auto j = nlohmann::json::array();
  for (const auto& r : rows) {
    j.push_back({{"variant", r.variant}, {"asr_malicious", r.asr_malicious}, {"asr_wrapped", r.asr_wrapped}});
  }
  return j;
}

std::string format_report_table(std::span<const EvalReport> reports) {
  std::ostringstream os;
  os << std::left << std::setw(8) << "mode" << std::setw(20) << "condition" << std::right << std::setw(6) << "n"
     << std::setw(10) << "ASR" << std::setw(12) << "rejection" << '\n';
  for (const auto& rep : reports) {
    for (const auto& c : rep.breakdown) {
      os << std::left << std::setw(8) << to_string(rep.mode) << std::setw(20) << to_string(c.condition)
         << std::right << std::setw(6) << c.n << std::setw(10) << fmt_pct(c.asr) << std::setw(12)
         << fmt_pct(c.rejection_rate) << '\n';
    }
  }
  return os.str();
}

}  // namespace mogu
