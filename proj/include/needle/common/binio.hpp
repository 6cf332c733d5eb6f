#pragma once

#include <istream>
#include <ostream>
#include <type_traits>

#include "needle/common/error.hpp"

namespace needle::binio {

// Host byte order; the persisted formats assume a little-endian host.
template <typename T>
void put(std::ostream& out, const T& value) {
  static_assert(std::is_trivially_copyable_v<T>);
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  static_assert(std::is_trivially_copyable_v<T>);
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) fail(Errc::Corrupt, "truncated binary record");
  return value;
}

}  // namespace needle::binio
