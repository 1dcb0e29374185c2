#ifndef XPROMPT_ERROR_HPP
#define XPROMPT_ERROR_HPP

#include <stdexcept>
#include <string>

namespace xprompt {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file; the message carries the offending line number.
class ParseError : public Error {
 public:
  ParseError(const std::string& path, std::size_t line, const std::string& what)
      : Error(path + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Input that parses but violates a data-model invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace xprompt

#endif  // XPROMPT_ERROR_HPP
