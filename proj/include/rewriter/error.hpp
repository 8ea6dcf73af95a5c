#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace rewriter {

/// Broad failure classes. The CLI maps these onto process exit codes.
enum class ErrorKind {
  config,      // bad configuration or violated precondition
  validation,  // a record or value breaks a documented invariant
  io,          // filesystem read/write failure
  capability,  // backend lacks the requested capability
  protocol,    // backend replied with something that breaks the wire contract
  transport,   // a single dispatch failed; retryable
  backend,     // retries exhausted
  domain,      // math precondition violated (zero-norm vector, m < 2, ...)
  numeric,     // non-finite values in an update
  assembly,    // reward assembly missing a required component
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define REWRITER_DEFINE_ERROR(Name, Kind)                                      \
  class Name : public Error {                                                  \
   public:                                                                     \
    explicit Name(const std::string& message) : Error(ErrorKind::Kind, message) {} \
  };

REWRITER_DEFINE_ERROR(ConfigError, config)
REWRITER_DEFINE_ERROR(ValidationError, validation)
REWRITER_DEFINE_ERROR(IoError, io)
REWRITER_DEFINE_ERROR(CapabilityError, capability)
REWRITER_DEFINE_ERROR(ProtocolError, protocol)
REWRITER_DEFINE_ERROR(TransportError, transport)
REWRITER_DEFINE_ERROR(BackendError, backend)
REWRITER_DEFINE_ERROR(DomainError, domain)
REWRITER_DEFINE_ERROR(NumericError, numeric)
REWRITER_DEFINE_ERROR(AssemblyError, assembly)

#undef REWRITER_DEFINE_ERROR

}  // namespace rewriter
