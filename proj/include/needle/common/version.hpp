#pragma once

#include <optional>
#include <string>

namespace needle {

struct SemVer {
  int major = 0;
  int minor = 0;
  int patch = 0;
  std::string build;  // text after '+', may be empty

  static std::optional<SemVer> parse(const std::string& text);
  std::string str() const;
};

// Baked in at configure time from the latest needlectl/v* tag plus the
// commit count since it.
const char* buildVersion() noexcept;

}  // namespace needle
