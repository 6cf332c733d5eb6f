#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>

namespace needle {

// XXH64 digest. Used for change detection on image files, not for security.
uint64_t xxh64(std::span<const uint8_t> bytes, uint64_t seed = 0) noexcept;
uint64_t xxh64(std::string_view text, uint64_t seed = 0) noexcept;

uint64_t hashFile(const std::filesystem::path& path);

}  // namespace needle
