#include "needle/common/settings.hpp"

#include <algorithm>
#include <cstdlib>

#include "needle/common/error.hpp"

namespace needle {
namespace {

std::string env(const char* name) {
  const char* v = std::getenv(name);
  return v ? std::string(v) : std::string();
}

uint32_t envUint(const char* name, uint32_t fallback) {
  auto text = env(name);
  if (text.empty()) return fallback;
  try {
    long v = std::stol(text);
    if (v <= 0) fail(Errc::InvalidArgument, std::string(name) + " must be positive");
    return static_cast<uint32_t>(v);
  } catch (const std::logic_error&) {
    fail(Errc::InvalidArgument, std::string(name) + " is not an integer: " + text);
  }
}

}  // namespace

std::string modeName(Mode mode) {
  switch (mode) {
    case Mode::Fast: return "fast";
    case Mode::Balanced: return "balanced";
    case Mode::Accurate: return "accurate";
  }
  return "fast";
}

Mode parseMode(const std::string& text) {
  std::string t = text;
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
  if (t == "fast") return Mode::Fast;
  if (t == "balanced") return Mode::Balanced;
  if (t == "accurate") return Mode::Accurate;
  fail(Errc::InvalidArgument, "unknown mode '" + text + "' (fast|balanced|accurate)");
}

HostPort HostPort::parse(const std::string& text) {
  auto colon = text.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == text.size()) {
    fail(Errc::InvalidArgument, "expected host:port, got '" + text + "'");
  }
  HostPort hp;
  hp.host = text.substr(0, colon);
  try {
    size_t used = 0;
    int port = std::stoi(text.substr(colon + 1), &used);
    if (used != text.size() - colon - 1 || port < 0 || port > 65535) throw std::out_of_range("port");
    hp.port = static_cast<uint16_t>(port);
  } catch (const std::logic_error&) {
    fail(Errc::InvalidArgument, "bad port in '" + text + "'");
  }
  return hp;
}

std::filesystem::path homeDir() {
  auto home = env("HOME");
  return home.empty() ? std::filesystem::current_path() : std::filesystem::path(home);
}

Settings Settings::fromEnv() {
  Settings s;
  auto dir = env("NEEDLE_DATA_DIR");
  s.dataDir = dir.empty() ? homeDir() / ".needle" / "data" : std::filesystem::path(dir);
  auto addr = env("NEEDLE_API_ADDR");
  if (!addr.empty()) s.apiAddr = HostPort::parse(addr);
  s.workers = envUint("NEEDLE_WORKERS", 4);
  s.batchSize = envUint("NEEDLE_BATCH_SIZE", 50);
  s.reconcileMinutes = envUint("NEEDLE_RECONCILE_MINUTES", 10);
  auto mode = env("NEEDLE_MODE");
  if (!mode.empty()) s.mode = parseMode(mode);
  return s;
}

}  // namespace needle
