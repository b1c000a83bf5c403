#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace splinemix {

/// Failure categories raised by the library. Each maps to a stable
/// machine-readable name (see to_string) used in CLI error records.
enum class ErrorCode {
  invalid_argument,
  invalid_basis_count,
  invalid_domain,
  invalid_index,
  out_of_domain,
  covariance_degenerate,
  rank_deficient,
  em_degenerate,
  em_diverged,
  information_degenerate,
  selection_failed,
  study_failed,
  parse_error,
};

std::string_view to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  [[nodiscard]] ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace splinemix
