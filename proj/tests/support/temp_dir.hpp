#pragma once

#include <filesystem>
#include <random>
#include <vector>

namespace needle::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

std::vector<float> randomUnitVector(std::mt19937_64& rng, size_t dim);

}  // namespace needle::testing
