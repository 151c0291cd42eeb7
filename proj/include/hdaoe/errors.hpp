#pragma once

#include <stdexcept>
#include <string>

namespace hdaoe {

/// Malformed or inconsistent dataset input (split files, manifest, stores).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A required input file is missing or unreadable.
class IngestError : public DataError {
 public:
  using DataError::DataError;
};

/// Pair lists or sample records contradict each other.
class ConsistencyError : public DataError {
 public:
  using DataError::DataError;
};

/// A name or id that is not part of the composition vocabulary.
class VocabularyError : public DataError {
 public:
  using DataError::DataError;
};

/// Binary format violations (bad magic, version, truncation).
class FormatError : public DataError {
 public:
  using DataError::DataError;
};

/// Operand shapes do not agree.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A loss or tensor became non-finite during training.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Filesystem write failures.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace hdaoe
