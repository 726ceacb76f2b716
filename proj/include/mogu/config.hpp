// Copyright (c) 2026 The mogu-toy Authors
// SPDX-License-Identifier: Apache-2.0

// Merged run configuration with flat dotted keys ("model.d_router",
// "train.lr_router", ...). Stored as a flat JSON object.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mogu/inference.hpp"
#include "mogu/model.hpp"
#include "mogu/training.hpp"

namespace mogu {

struct CorpusConfig {
  std::uint64_t seed = 7;
  int n_benign = 300;
  int n_malicious = 300;
  int n_eval = 100;  // per label

  bool operator==(const CorpusConfig&) const = default;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DecodeConfig decode;
  CorpusConfig corpus;

  /// Every key with its current value.
  nlohmann::json to_json() const;
  /// Applies the keys present in `j`; unknown keys raise InputError.
  void merge(const nlohmann::json& j);
  /// Sets one key from its textual value.
  void set(std::string_view key, std::string_view value);
  void validate() const;

  /// Decode settings with m taken from model.m_tokens.
  DecodeConfig decode_config() const;

  std::string dump() const;
  /// FNV-1a 64 of dump(), as 16 hex digits.
  std::string hash() const;

  static RunConfig load(const std::filesystem::path& path);
  static std::vector<std::string> keys();
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

}  // namespace mogu
