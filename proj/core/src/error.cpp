#include "splinemix/error.hpp"

namespace splinemix {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid-argument";
    case ErrorCode::invalid_basis_count: return "invalid-basis-count";
    case ErrorCode::invalid_domain: return "invalid-domain";
    case ErrorCode::invalid_index: return "invalid-index";
    case ErrorCode::out_of_domain: return "out-of-domain";
    case ErrorCode::covariance_degenerate: return "covariance-degenerate";
    case ErrorCode::rank_deficient: return "rank-deficient";
    case ErrorCode::em_degenerate: return "em-degenerate";
    case ErrorCode::em_diverged: return "em-diverged";
    case ErrorCode::information_degenerate: return "information-degenerate";
    case ErrorCode::selection_failed: return "selection-failed";
    case ErrorCode::study_failed: return "study-failed";
    case ErrorCode::parse_error: return "parse-error";
  }
  return "unknown";
}

}  // namespace splinemix
