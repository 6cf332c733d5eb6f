#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace needle::kernels {

enum class Metric : uint8_t { Cosine = 0, L2 = 1 };

float dot(const float* a, const float* b, size_t dim) noexcept;
float l2Squared(const float* a, const float* b, size_t dim) noexcept;

// Internal comparison distance. Cosine assumes both inputs are unit length
// and returns 1 - <a,b>; L2 returns the squared euclidean distance.
inline float rawDistance(Metric metric, const float* a, const float* b, size_t dim) noexcept {
  return metric == Metric::Cosine ? 1.0f - dot(a, b, dim) : l2Squared(a, b, dim);
}

// Reported distance: cosine distance clamped to [0,2], or euclidean distance.
float reportedDistance(Metric metric, float raw) noexcept;

// Normalizes in place; returns false for a zero vector.
bool normalize(std::span<float> v) noexcept;

struct ScoredIndex {
  float distance;  // raw distance
  uint64_t id;
  uint32_t index;

  friend bool operator<(const ScoredIndex& a, const ScoredIndex& b) noexcept {
    return a.distance != b.distance ? a.distance < b.distance : a.id < b.id;
  }
};

// Brute-force top-k over a row-major matrix. Rows flagged in `skip` are
// skipped. Output is sorted by (distance, id). Both variants produce
// identical results; the serial one is the reference.
struct ScanInput {
  std::span<const float> rows;
  std::span<const uint64_t> ids;
  std::span<const uint8_t> skip;  // nonzero rows are ignored; empty means none
  size_t dim = 0;
  Metric metric = Metric::Cosine;
};

std::vector<ScoredIndex> exactTopKSerial(const ScanInput& in, std::span<const float> query, size_t k);
std::vector<ScoredIndex> exactTopKParallel(const ScanInput& in, std::span<const float> query, size_t k);

// Symmetric n×n euclidean distance matrix (double precision), row-major.
std::vector<double> pairwiseEuclideanSerial(std::span<const double> points, size_t n, size_t dim);
std::vector<double> pairwiseEuclideanParallel(std::span<const double> points, size_t n, size_t dim);

}  // namespace needle::kernels
