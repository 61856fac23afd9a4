#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace adasit {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input file. Carries the location so the CLI can point at it.
class ParseError : public Error {
 public:
  ParseError(std::string path, std::size_t line, std::string field, const std::string& what)
      : Error(path + ":" + std::to_string(line) + ": field '" + field + "': " + what),
        path_(std::move(path)),
        line_(line),
        field_(std::move(field)) {}

  const std::string& path() const noexcept { return path_; }
  std::size_t line() const noexcept { return line_; }
  const std::string& field() const noexcept { return field_; }

 private:
  std::string path_;
  std::size_t line_;
  std::string field_;
};

}  // namespace adasit
