#pragma once

#include <stdexcept>
#include <string>

namespace stainkit {

enum class Errc {
  FileNotFound,
  UnsupportedFormat,
  CorruptFile,
  IoError,
  EmptyMask,
  InsufficientTissue,
  DegenerateInput,
  DegenerateSample,
  NoUsableImages,
  ParseError,
  MissingColumn,
  SchemaError,
  InvalidArgument,
};

const char* errc_name(Errc code);

/// Toolkit-wide exception carrying a machine-checkable error code.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(errc_name(code)) + ": " + message), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void raise(Errc code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace stainkit
