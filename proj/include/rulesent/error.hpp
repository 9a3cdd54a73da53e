// Exception hierarchy shared by every rulesent module.
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace rulesent {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input text that does not follow the expected grammar; carries a 1-based line.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Well-formed input whose values violate a domain constraint.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Token/vector count mismatch in contextual embeddings.
class AlignmentError : public Error {
 public:
  AlignmentError(const std::string& sentence_id, const std::string& what)
      : Error("sentence '" + sentence_id + "': " + what), sentence_id_(sentence_id) {}
  const std::string& sentence_id() const noexcept { return sentence_id_; }

 private:
  std::string sentence_id_;
};

class TrainingDiverged : public Error {
 public:
  using Error::Error;
};

}  // namespace rulesent
