// Copyright (c) 2026 The mogu-toy Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace mogu {

/// Violated precondition of an operation (wrong pair types, empty mask, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Operand shapes do not fit the operation.
class DimensionError : public ContractError {
 public:
  using ContractError::ContractError;
};

/// Caller-supplied data is invalid (token id out of range, sequence too long).
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A file exists but its contents are malformed (bad magic, truncation, bad line).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The filesystem refused an operation.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mogu
