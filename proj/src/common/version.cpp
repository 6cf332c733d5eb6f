#include "needle/common/version.hpp"

#include <regex>

#ifndef NEEDLE_VERSION
#define NEEDLE_VERSION "0.0.0"
#endif

namespace needle {

std::optional<SemVer> SemVer::parse(const std::string& text) {
  static const std::regex re(R"(^(0|[1-9]\d*)\.(0|[1-9]\d*)\.(0|[1-9]\d*)(?:\+([0-9A-Za-z.-]+))?$)");
  std::smatch m;
  if (!std::regex_match(text, m, re)) return std::nullopt;
  SemVer v;
  v.major = std::stoi(m[1]);
  v.minor = std::stoi(m[2]);
  v.patch = std::stoi(m[3]);
  v.build = m[4].matched ? m[4].str() : "";
  return v;
}

std::string SemVer::str() const {
  auto s = std::to_string(major) + "." + std::to_string(minor) + "." + std::to_string(patch);
  return build.empty() ? s : s + "+" + build;
}

const char* buildVersion() noexcept { return NEEDLE_VERSION; }

}  // namespace needle
