#pragma once

#include <stdexcept>
#include <string>

namespace lorafuse {

// Broad failure classes. The CLI maps these onto process exit codes.
enum class ErrorKind {
  kUsage,       // caller passed something invalid (bad flag, unknown id, empty input)
  kStructural,  // shapes, ranks or dimensions disagree
  kData,        // persisted or ingested data is unreadable or corrupt
  kNumeric,     // a computation produced non-finite values
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(ErrorKind::kUsage, what) {}
};

class StructuralError : public Error {
 public:
  explicit StructuralError(const std::string& what)
      : Error(ErrorKind::kStructural, what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what)
      : Error(ErrorKind::kNumeric, what) {}
};

// Raised when every record of a non-empty library is filtered out by the
// distance metric. An empty library is a usage error.
class NoCandidatesError : public Error {
 public:
  explicit NoCandidatesError(const std::string& what)
      : Error(ErrorKind::kData, what) {}
};

enum class LoadErrorCode {
  kMissingFile,
  kMalformedManifest,
  kUnsupportedVersion,
  kTruncatedBlob,
  kChecksumMismatch,
  kMalformedEmbeddings,
};

const char* to_string(LoadErrorCode code) noexcept;

class LoadError : public Error {
 public:
  LoadError(LoadErrorCode code, const std::string& what)
      : Error(ErrorKind::kData, std::string(to_string(code)) + ": " + what),
        code_(code) {}

  LoadErrorCode code() const noexcept { return code_; }

 private:
  LoadErrorCode code_;
};

inline const char* to_string(LoadErrorCode code) noexcept {
  switch (code) {
    case LoadErrorCode::kMissingFile:
      return "missing file";
    case LoadErrorCode::kMalformedManifest:
      return "malformed manifest";
    case LoadErrorCode::kUnsupportedVersion:
      return "unsupported format version";
    case LoadErrorCode::kTruncatedBlob:
      return "truncated blob";
    case LoadErrorCode::kChecksumMismatch:
      return "checksum mismatch";
    case LoadErrorCode::kMalformedEmbeddings:
      return "malformed embedding file";
  }
  return "load error";
}

}  // namespace lorafuse
