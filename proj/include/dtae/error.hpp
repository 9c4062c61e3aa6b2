#pragma once

#include <stdexcept>
#include <string>

namespace dtae {

// Every failure raised by the library carries a short machine-readable kind
// so the CLI can report it as JSON.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

struct FormatError : Error {
  explicit FormatError(const std::string& what) : Error("format", what) {}
};

struct IoError : Error {
  explicit IoError(const std::string& what) : Error("io", what) {}
};

struct ShapeError : Error {
  explicit ShapeError(const std::string& what) : Error("shape", what) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error("config", what) {}
};

struct DomainError : Error {
  explicit DomainError(const std::string& what) : Error("domain", what) {}
};

// Rethrows e with `context` prepended, as the same error type.
[[noreturn]] inline void rethrow_with_context(const Error& e, const std::string& context) {
  const std::string what = context + e.what();
  const std::string& k = e.kind();
  if (k == "format") throw FormatError(what);
  if (k == "io") throw IoError(what);
  if (k == "shape") throw ShapeError(what);
  if (k == "config") throw ConfigError(what);
  if (k == "domain") throw DomainError(what);
  throw Error(k, what);
}

}  // namespace dtae
