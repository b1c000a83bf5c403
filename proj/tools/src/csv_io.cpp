#include "csv_io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "splinemix/error.hpp"

namespace splinemix::cli {
namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(trim(line.substr(start)));
      return fields;
    }
    fields.push_back(trim(line.substr(start, comma - start)));
    start = comma + 1;
  }
}

std::string_view unquote(std::string_view s) {
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') return s.substr(1, s.size() - 2);
  return s;
}

[[noreturn]] void fail(const std::string& source, std::size_t line, const std::string& why) {
  throw Error(ErrorCode::parse_error, source + ":" + std::to_string(line) + ": " + why);
}

}  // namespace

LongitudinalDataset parse_dataset(std::istream& in, const std::string& source) {
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string_view> header;
  std::string header_text;
  while (std::getline(in, line)) {
    ++line_no;
    if (!trim(line).empty()) {
      header_text = line;
      header = split(header_text);
      break;
    }
  }
  if (header.empty()) fail(source, line_no == 0 ? 1 : line_no, "missing header");

  int col_id = -1, col_t = -1, col_x = -1;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const auto name = unquote(header[c]);
    int* slot = name == "subject_id" ? &col_id : name == "t" ? &col_t : name == "x" ? &col_x : nullptr;
    if (slot == nullptr) continue;
    if (*slot >= 0) fail(source, line_no, "duplicate column '" + std::string(name) + "'");
    *slot = static_cast<int>(c);
  }
  if (col_id < 0 || col_t < 0 || col_x < 0) {
    fail(source, line_no, "header must name columns subject_id, t and x");
  }

  std::vector<Subject> subjects;
  std::unordered_map<std::string, std::size_t> index;
  auto number = [&](std::string_view field, const char* column) {
    double v = 0.0;
    const auto* end = field.data() + field.size();
    const auto [ptr, ec] = std::from_chars(field.data(), end, v);
    if (field.empty() || ec != std::errc() || ptr != end || !std::isfinite(v)) {
      fail(source, line_no,
           "invalid number '" + std::string(field) + "' in column " + column);
    }
    return v;
  };

  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split(line);
    if (fields.size() != header.size()) {
      fail(source, line_no,
           "expected " + std::to_string(header.size()) + " fields, found " +
               std::to_string(fields.size()));
    }
    const std::string id(unquote(fields[col_id]));
    if (id.empty()) fail(source, line_no, "empty subject_id");
    const double t = number(fields[col_t], "t");
    const double x = number(fields[col_x], "x");
    auto [it, inserted] = index.emplace(id, subjects.size());
    if (inserted) subjects.push_back(Subject{id, {}, {}});
    subjects[it->second].times.push_back(t);
    subjects[it->second].values.push_back(x);
  }
  if (in.bad()) fail(source, line_no, "read error");
  if (subjects.empty()) fail(source, line_no, "no observations");
  return LongitudinalDataset(std::move(subjects));
}

LongitudinalDataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::parse_error, path.string() + ": cannot open input");
  return parse_dataset(in, path.string());
}

}  // namespace splinemix::cli
