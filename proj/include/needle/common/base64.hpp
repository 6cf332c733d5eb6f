#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace needle {

std::string base64Encode(std::span<const uint8_t> bytes);
// Throws Error(BadResponse) on malformed input.
std::vector<uint8_t> base64Decode(std::string_view text);

}  // namespace needle
