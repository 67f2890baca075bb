#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace phishmetric {

// All library failures are reported as Error. code() is a stable
// snake_case identifier suitable for machine parsing (the CLI prints it).
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

namespace errc {
inline constexpr const char* kParse = "parse_error";
inline constexpr const char* kInvalidArgument = "invalid_argument";
inline constexpr const char* kDanglingWebsite = "dangling_website";
inline constexpr const char* kDuplicateRecord = "duplicate_record";
inline constexpr const char* kIo = "io_error";
inline constexpr const char* kDecode = "decode_error";
inline constexpr const char* kChecksum = "checksum_mismatch";
inline constexpr const char* kFingerprint = "fingerprint_mismatch";
inline constexpr const char* kNonFinite = "non_finite";
inline constexpr const char* kDimension = "dimension_mismatch";
inline constexpr const char* kEmpty = "empty_input";
inline constexpr const char* kMissingWeights = "missing_weights";
inline constexpr const char* kUnsupported = "unsupported_config";
inline constexpr const char* kCaptureTimeout = "navigation_timeout";
inline constexpr const char* kNonHtml = "non_html_response";
inline constexpr const char* kCaptureBackend = "capture_backend";
inline constexpr const char* kSampling = "sampling_error";
}  // namespace errc

}  // namespace phishmetric
