#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mdseg {

/// Shape or extent mismatch between operands.
class DimensionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Inconsistent or invalid configuration (layer geometry, variant/domain mix, config file).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid input data, e.g. a label outside the class range or an empty ground truth.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Malformed checkpoint or image file. Carries the byte offset where parsing failed.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

/// Non-finite loss during optimization.
class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, std::size_t batch_index)
      : std::runtime_error(what + " (batch " + std::to_string(batch_index) + ")"),
        batch_index_(batch_index) {}
  std::size_t batch_index() const noexcept { return batch_index_; }

 private:
  std::size_t batch_index_;
};

class FilesystemError : public std::runtime_error {
 public:
  FilesystemError(const std::string& what, const std::string& path)
      : std::runtime_error(what + ": " + path), path_(path) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

}  // namespace mdseg
