#include "needle/common/base64.hpp"

#include <boost/beast/core/detail/base64.hpp>

#include "needle/common/error.hpp"

namespace needle {

namespace b64 = boost::beast::detail::base64;

std::string base64Encode(std::span<const uint8_t> bytes) {
  std::string out(b64::encoded_size(bytes.size()), '\0');
  out.resize(b64::encode(out.data(), bytes.data(), bytes.size()));
  return out;
}

std::vector<uint8_t> base64Decode(std::string_view text) {
  std::vector<uint8_t> out(b64::decoded_size(text.size()));
  auto [written, read] = b64::decode(out.data(), text.data(), text.size());
  // Decoding stops at the first '=' or invalid character; only padding may follow.
  if (text.find_first_not_of('=', read) != std::string_view::npos || text.size() - read > 2) {
    fail(Errc::BadResponse, "malformed base64");
  }
  out.resize(written);
  return out;
}

}  // namespace needle
