#pragma once

#include <stdexcept>
#include <string>

namespace bdbf {

// Library-wide error codes. Each failure mode documented by the public API
// maps to exactly one code so callers can branch without string matching.
enum class ErrorCode {
  kCoordinate,           // pixel out of bounds
  kMeasurement,          // non-positive / non-finite / sub-floor depth
  kDuplicate,            // repeated (row, col) in a sparse set
  kDomain,               // argument outside mathematical domain
  kDimension,            // shape mismatch between operands
  kUnderdetermined,      // N < M where a unique ML solution is required
  kRank,                 // normal equations singular after jitter ladder
  kConditioning,         // SPD factorization failed after jitter ladder
  kNumerical,            // non-finite intermediate value
  kInsufficientSamples,  // accumulator finalized with too few samples
  kScale,                // non-positive scale parameter
  kEmptySet,             // operation on an empty collection
  kBadMagic,             // file does not start with the expected magic
  kBadVersion,           // unknown format version
  kTruncated,            // file shorter than its header promises
  kChecksum,             // header checksum mismatch
  kParse,                // malformed text record
  kPriorInvalid,         // prior read from file violates SPD invariant
  kIo,                   // generic filesystem failure
  kUsage,                // invalid option combination
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

// Measurements below this floor are rejected outright; clamping them would
// inject extreme values into log space.
inline constexpr double kMinDepth = 1e-6;

// Noise precision is capped so interpolating fits stay finite
// (equivalently, predicted noise variance never drops below 1e-12).
inline constexpr double kMaxPrecision = 1e12;

}  // namespace bdbf
