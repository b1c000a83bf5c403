#pragma once

#include <filesystem>
#include <istream>
#include <string>

#include "splinemix/model.hpp"

namespace splinemix::cli {

/// Reads a CSV with a header naming at least subject_id, t and x (any
/// order, extra columns ignored). Rows are grouped by subject_id in order of
/// first appearance; times keep file order within a subject. Throws
/// Error(parse_error) with "source:line: reason" on malformed input.
[[nodiscard]] LongitudinalDataset parse_dataset(std::istream& in, const std::string& source);
[[nodiscard]] LongitudinalDataset read_dataset(const std::filesystem::path& path);

}  // namespace splinemix::cli
