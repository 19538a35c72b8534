#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace vcraft {

// Every failure surfaced by the library derives from Error so callers
// (notably the CLI) can map error classes onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidInput : public Error {
 public:
  using Error::Error;
};

class InvalidSpan : public Error {
 public:
  using Error::Error;
};

class StructureError : public Error {
 public:
  StructureError(std::size_t item_index, const std::string& what)
      : Error("item " + std::to_string(item_index) + ": " + what),
        item_index_(item_index) {}

  std::size_t item_index() const noexcept { return item_index_; }

 private:
  std::size_t item_index_;
};

class VocabularyError : public Error {
 public:
  using Error::Error;
};

class CapacityError : public Error {
 public:
  using Error::Error;
};

class AlignmentError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace vcraft
