#include "output.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>

#include "splinemix/error.hpp"

namespace splinemix::cli {

std::string format_exact(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string format_short(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

void write_atomic(const std::filesystem::path& path, std::string_view content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::filesystem::filesystem_error("cannot write", tmp, std::make_error_code(std::errc::io_error));
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw std::filesystem::filesystem_error("short write", tmp, std::make_error_code(std::errc::io_error));
  }
  std::filesystem::rename(tmp, path);
}

std::vector<int> parse_int_list(std::string_view text) {
  auto bad = [&](const std::string& why) {
    return Error(ErrorCode::invalid_argument, "list '" + std::string(text) + "': " + why);
  };
  auto to_int = [&](std::string_view s) {
    int v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
      throw bad("'" + std::string(s) + "' is not an integer");
    }
    return v;
  };
  std::vector<int> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find(',', start);
    if (end == std::string_view::npos) end = text.size();
    const auto item = text.substr(start, end - start);
    const auto dots = item.find("..");
    if (dots == std::string_view::npos) {
      out.push_back(to_int(item));
    } else {
      const int lo = to_int(item.substr(0, dots));
      const int hi = to_int(item.substr(dots + 2));
      if (hi < lo) throw bad("empty range");
      for (int v = lo; v <= hi; ++v) out.push_back(v);
    }
    start = end + 1;
  }
  if (out.empty()) throw bad("no values");
  for (std::size_t i = 0; i < out.size(); ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (out[i] == out[j]) throw bad("duplicate value " + std::to_string(out[i]));
  return out;
}

}  // namespace splinemix::cli
