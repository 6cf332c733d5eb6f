#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

namespace needle {

// Preset fixed at install time; picks the default embedder set and plan.
enum class Mode { Fast, Balanced, Accurate };

std::string modeName(Mode mode);
Mode parseMode(const std::string& text);

struct HostPort {
  std::string host = "127.0.0.1";
  uint16_t port = 8461;

  std::string str() const { return host + ":" + std::to_string(port); }
  static HostPort parse(const std::string& text);
};

struct Settings {
  std::filesystem::path dataDir;
  HostPort apiAddr;
  uint32_t workers = 4;
  uint32_t batchSize = 50;
  uint32_t reconcileMinutes = 10;
  Mode mode = Mode::Fast;

  // NEEDLE_DATA_DIR, NEEDLE_API_ADDR, NEEDLE_WORKERS, NEEDLE_BATCH_SIZE,
  // NEEDLE_RECONCILE_MINUTES, NEEDLE_MODE.
  static Settings fromEnv();

  std::filesystem::path catalogPath() const { return dataDir / "catalog.db"; }
  std::filesystem::path vectorsDir() const { return dataDir / "vectors"; }
  std::filesystem::path embeddersPath() const { return dataDir / "embedders.json"; }
  std::filesystem::path generatorsPath() const { return dataDir / "generators.json"; }
  std::filesystem::path logDir() const { return dataDir / "logs"; }
  std::filesystem::path modePath() const { return dataDir / "mode"; }
};

std::filesystem::path homeDir();

}  // namespace needle
