// Copyright (c) 2026 The socnav-moe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace socnav {

/// Root of every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes that do not fit the operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A documented precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Token id or word outside the vocabulary.
class VocabularyError : public Error {
 public:
  using Error::Error;
};

/// Invalid or inconsistent configuration values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Filesystem failures; the message always names the path.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed checkpoint, dataset or config contents.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Training stages requested in the wrong order.
class StageOrderError : public Error {
 public:
  using Error::Error;
};

}  // namespace socnav
