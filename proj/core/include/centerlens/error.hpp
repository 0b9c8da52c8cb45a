// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace centerlens {

/// Base for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller-supplied parameter violates a documented precondition
/// (e.g. an even grid side). The CLI maps this to a usage error.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Input data is malformed, inconsistent or unreadable.
class DataError : public Error {
 public:
  using Error::Error;
};

class IoError : public DataError {
 public:
  using DataError::DataError;
};

}  // namespace centerlens
