// Copyright (c) 2026 The mogu-toy Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "mogu/config.hpp"

namespace mogu {

/// Exit codes of the command line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;  // usage, contract and input errors
inline constexpr int kExitIo = 2;     // I/O and format errors

/// Environment variable that overrides the artifact root directory.
inline constexpr const char* kOutDirEnv = "MOGU_OUT_DIR";

/// Runs the tool on argv and returns the exit code. Normal output goes to
/// `out`; diagnostics and the reproducibility line go to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Parses a prompt given as token ids, token words, or the shorthand
/// "b:<topic>[:filler,...]" / "m:<topic>[:filler,...]".
std::vector<int> parse_prompt(const std::vector<std::string>& words);

/// Deterministic artifact directory for a configuration.
std::filesystem::path run_directory(const std::filesystem::path& root, const RunConfig& config);

}  // namespace mogu
