#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace fedsl {

enum class ErrorCode {
  kAllZero,
  kTruthAnnihilated,
  kOutOfSupport,
  kInvalidArgument,
  kDegenerateVariance,
  kNonFinite,
  kConstantSample,
  kSampleSizeOutOfRange,
  kInsufficientSamples,
  kParseError,
  kConfigInvalid,
  kIdentifiabilityFailure,
  kMissingRule,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kAllZero: return "AllZero";
    case ErrorCode::kTruthAnnihilated: return "TruthAnnihilated";
    case ErrorCode::kOutOfSupport: return "OutOfSupport";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kDegenerateVariance: return "DegenerateVariance";
    case ErrorCode::kNonFinite: return "NonFinite";
    case ErrorCode::kConstantSample: return "ConstantSample";
    case ErrorCode::kSampleSizeOutOfRange: return "SampleSizeOutOfRange";
    case ErrorCode::kInsufficientSamples: return "InsufficientSamples";
    case ErrorCode::kParseError: return "ParseError";
    case ErrorCode::kConfigInvalid: return "ConfigInvalid";
    case ErrorCode::kIdentifiabilityFailure: return "IdentifiabilityFailure";
    case ErrorCode::kMissingRule: return "MissingRule";
  }
  return "Unknown";
}

/// Single exception type for the library. The code identifies the failure
/// class; `time`, `realization` and `field` carry context when known.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

  const std::optional<std::size_t>& time() const noexcept { return time_; }
  const std::optional<std::size_t>& realization() const noexcept { return realization_; }
  const std::string& field() const noexcept { return field_; }

  Error& at_time(std::size_t t) {
    time_ = t;
    return *this;
  }
  Error& in_realization(std::size_t r) {
    realization_ = r;
    return *this;
  }
  Error& for_field(std::string name) {
    field_ = std::move(name);
    return *this;
  }

  std::string describe() const {
    std::string out = what();
    if (!field_.empty()) out += " [field " + field_ + "]";
    if (time_) out += " [time " + std::to_string(*time_) + "]";
    if (realization_) out += " [realization " + std::to_string(*realization_) + "]";
    return out;
  }

 private:
  ErrorCode code_;
  std::optional<std::size_t> time_;
  std::optional<std::size_t> realization_;
  std::string field_;
};

}  // namespace fedsl
