// Copyright (c) 2026 The mogu-toy Authors
// SPDX-License-Identifier: Apache-2.0

// Synthetic benign/malicious instruction language and the rule-based
// refusal/harmless-target detectors that score decoded responses.
//
// Instruction:  <bos> marker topic filler{3..8} [<wrap> Sure here is]
// Glad reply:   Sure here is <topic> <eos>
// Refusal:      I'm sorry, I cannot <eos>

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mogu {

namespace tok {
inline constexpr int kBos = 0;
inline constexpr int kEos = 1;
inline constexpr int kBenignMarker = 2;
inline constexpr int kMaliciousMarker = 3;
inline constexpr int kSure = 4;
inline constexpr int kHere = 5;
inline constexpr int kIs = 6;
inline constexpr int kSorry = 7;
inline constexpr int kI = 8;
inline constexpr int kCannot = 9;
inline constexpr int kBenignTopicFirst = 10;
inline constexpr int kMaliciousTopicFirst = 18;
inline constexpr int kTopicsPerLabel = 8;
inline constexpr int kFillerFirst = 26;
inline constexpr int kFillerCount = 5;
inline constexpr int kWrap = 31;
inline constexpr int kVocabSize = 32;
}  // namespace tok

/// Word rendering of a token id. Throws InputError for unknown ids.
std::string_view token_text(int id);
std::optional<int> token_id(std::string_view word);

/// Space-joined renderings with <bos>/<eos> omitted.
std::string detokenize(std::span<const int> tokens);

enum class Label { Benign, Malicious };
enum class PairType { BenignGlad, BenignReject, MaliciousGlad, MaliciousReject };

std::string_view to_string(Label label);
std::string_view to_string(PairType type);
Label parse_label(std::string_view text);
PairType parse_pair_type(std::string_view text);
Label pair_label(PairType type);
bool pair_is_glad(PairType type);
PairType make_pair_type(Label label, bool glad);

struct InstructionRecord {
  std::vector<int> tokens;
  Label label = Label::Benign;
  bool wrapped = false;

  int topic() const { return tokens.at(2); }
  bool operator==(const InstructionRecord&) const = default;
};

struct PairRecord {
  InstructionRecord instruction;
  std::vector<int> response;
  PairType pair_type = PairType::BenignGlad;

  std::vector<int> sequence() const;
  bool operator==(const PairRecord&) const = default;
};

std::vector<int> glad_response(int topic);
std::vector<int> rejection_response();

struct Corpus {
  std::vector<PairRecord> train;
  std::vector<InstructionRecord> eval;
};

/// Deterministic corpus: every training instruction yields a glad and a
/// refusal pair, so 2·(n_benign + n_malicious) pairs. The eval split holds
/// n_eval_per_label instructions per label whose (topic, filler) combination
/// never appears in training.
Corpus gen_corpus(std::uint64_t seed, int n_benign, int n_malicious, int n_eval_per_label = 100);

/// Appends <wrap> Sure here is to a malicious, unwrapped instruction.
InstructionRecord wrap_attack(const InstructionRecord& instr);

/// Throws ContractError unless the record satisfies the instruction grammar.
void validate_instruction(const InstructionRecord& instr);

// ---- detectors ---------------------------------------------------------------

/// Case-sensitive substring list.
class PhraseList {
 public:
  explicit PhraseList(std::vector<std::string> phrases) : phrases_(std::move(phrases)) {}
  /// One phrase per non-empty line.
  static PhraseList load(const std::filesystem::path& path);

  bool matches(std::string_view text) const;
  const std::vector<std::string>& phrases() const { return phrases_; }

 private:
  std::vector<std::string> phrases_;
};

/// The ten refusal expressions used for rule-based refusal detection.
const PhraseList& rejection_expressions();
/// The harmless-target substrings used to decide attack success.
const PhraseList& harmless_targets();

bool detect_rejection(std::string_view text);
bool matches_safe_target(std::string_view text);

// ---- file I/O ------------------------------------------------------------------

/// One line of a corpus file. Instruction-only records carry no pair type.
struct CorpusRecord {
  std::vector<int> tokens;
  Label label = Label::Benign;
  std::optional<PairType> pair_type;
  bool wrapped = false;

  bool operator==(const CorpusRecord&) const = default;
};

CorpusRecord to_record(const PairRecord& pair);
CorpusRecord to_record(const InstructionRecord& instr);
/// Splits a pair record back into instruction and response. Throws
/// FormatError when the token layout does not follow the grammar.
PairRecord to_pair(const CorpusRecord& record);
InstructionRecord to_instruction(const CorpusRecord& record);

/// Line-delimited JSON: {"label":..,"pair_type":..,"tokens":[..],"wrapped":..}.
void write_corpus(const std::filesystem::path& path, std::span<const CorpusRecord> records);
std::vector<CorpusRecord> read_corpus(const std::filesystem::path& path);

void write_pairs(const std::filesystem::path& path, std::span<const PairRecord> pairs);
std::vector<PairRecord> read_pairs(const std::filesystem::path& path);
void write_instructions(const std::filesystem::path& path, std::span<const InstructionRecord> instrs);
std::vector<InstructionRecord> read_instructions(const std::filesystem::path& path);

/// Git blob object id (SHA-1 over "blob <size>\0<content>") of a file's bytes.
std::string git_blob_hash(std::string_view content);
std::string file_git_hash(const std::filesystem::path& path);

}  // namespace mogu
