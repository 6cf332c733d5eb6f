#include "needle/kernels/distance.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>

namespace needle::kernels {

float dot(const float* a, const float* b, size_t dim) noexcept {
  float s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  size_t i = 0;
  for (; i + 4 <= dim; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < dim; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

float l2Squared(const float* a, const float* b, size_t dim) noexcept {
  float s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  size_t i = 0;
  for (; i + 4 <= dim; i += 4) {
    float d0 = a[i] - b[i], d1 = a[i + 1] - b[i + 1];
    float d2 = a[i + 2] - b[i + 2], d3 = a[i + 3] - b[i + 3];
    s0 += d0 * d0;
    s1 += d1 * d1;
    s2 += d2 * d2;
    s3 += d3 * d3;
  }
  for (; i < dim; ++i) {
    float d = a[i] - b[i];
    s0 += d * d;
  }
  return (s0 + s1) + (s2 + s3);
}

float reportedDistance(Metric metric, float raw) noexcept {
  if (metric == Metric::Cosine) return std::clamp(raw, 0.0f, 2.0f);
  return std::sqrt(std::max(raw, 0.0f));
}

bool normalize(std::span<float> v) noexcept {
  double sq = 0;
  for (float x : v) sq += double{x} * x;
  if (!(sq > 0) || !std::isfinite(sq)) return false;
  const double inv = 1.0 / std::sqrt(sq);
  for (float& x : v) x = static_cast<float>(x * inv);
  return true;
}

namespace {

// Keeps the k best entries; heap top is the current worst.
void pushBounded(std::vector<ScoredIndex>& heap, const ScoredIndex& cand, size_t k) {
  if (heap.size() < k) {
    heap.push_back(cand);
    std::push_heap(heap.begin(), heap.end());
  } else if (cand < heap.front()) {
    std::pop_heap(heap.begin(), heap.end());
    heap.back() = cand;
    std::push_heap(heap.begin(), heap.end());
  }
}

}  // namespace

std::vector<ScoredIndex> exactTopKSerial(const ScanInput& in, std::span<const float> query, size_t k) {
  std::vector<ScoredIndex> heap;
  if (k == 0) return heap;
  const size_t n = in.ids.size();
  for (size_t i = 0; i < n; ++i) {
    if (!in.skip.empty() && in.skip[i]) continue;
    float d = rawDistance(in.metric, in.rows.data() + i * in.dim, query.data(), in.dim);
    pushBounded(heap, {d, in.ids[i], static_cast<uint32_t>(i)}, k);
  }
  std::sort(heap.begin(), heap.end());
  return heap;
}

std::vector<ScoredIndex> exactTopKParallel(const ScanInput& in, std::span<const float> query, size_t k) {
  std::vector<ScoredIndex> merged;
  if (k == 0) return merged;
  const long n = static_cast<long>(in.ids.size());
#pragma omp parallel
  {
    std::vector<ScoredIndex> local;
#pragma omp for schedule(static) nowait
    for (long i = 0; i < n; ++i) {
      if (!in.skip.empty() && in.skip[i]) continue;
      float d = rawDistance(in.metric, in.rows.data() + i * in.dim, query.data(), in.dim);
      pushBounded(local, {d, in.ids[i], static_cast<uint32_t>(i)}, k);
    }
#pragma omp critical
    merged.insert(merged.end(), local.begin(), local.end());
  }
  std::sort(merged.begin(), merged.end());
  if (merged.size() > k) merged.resize(k);
  return merged;
}

std::vector<double> pairwiseEuclideanSerial(std::span<const double> points, size_t n, size_t dim) {
  std::vector<double> out(n * n, 0.0);
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = i + 1; j < n; ++j) {
      double s = 0;
      for (size_t c = 0; c < dim; ++c) {
        double d = points[i * dim + c] - points[j * dim + c];
        s += d * d;
      }
      out[i * n + j] = out[j * n + i] = std::sqrt(s);
    }
  }
  return out;
}

std::vector<double> pairwiseEuclideanParallel(std::span<const double> points, size_t n, size_t dim) {
  std::vector<double> out(n * n, 0.0);
  const long rows = static_cast<long>(n);
#pragma omp parallel for schedule(dynamic, 8)
  for (long i = 0; i < rows; ++i) {
    for (size_t j = static_cast<size_t>(i) + 1; j < n; ++j) {
      double s = 0;
      for (size_t c = 0; c < dim; ++c) {
        double d = points[i * dim + c] - points[j * dim + c];
        s += d * d;
      }
      out[i * n + j] = out[j * n + i] = std::sqrt(s);
    }
  }
  return out;
}

}  // namespace needle::kernels
