#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>
#include <span>
#include <vector>

#include "needle/kernels/distance.hpp"

namespace needle::vecstore {

using kernels::Metric;

struct HnswParams {
  uint32_t M = 48;
  uint32_t efConstruction = 200;
  uint32_t efSearch = 200;
  Metric metric = Metric::Cosine;

  // Throws Error(InvalidArgument) unless M >= 2, efConstruction >= M, efSearch >= 1.
  void validate() const;
  bool operator==(const HnswParams&) const = default;
};

// Hierarchical navigable small world graph over a growing set of vectors.
//
// Nodes are identified by a dense internal index; each node also carries
// the caller's 64-bit id, used for result ordering. Deletion only flags a
// node: flagged nodes keep routing traffic but never appear in results, and
// construction ignores the flags so the graph depends only on insertion
// order and seed. Not thread-safe; the owning Collection serializes writers.
class HnswGraph {
 public:
  HnswGraph(size_t dim, HnswParams params, uint64_t seed);

  // `vec` must already be unit length for the cosine metric.
  uint32_t add(std::span<const float> vec, uint64_t externalId);
  void markDeleted(uint32_t node) noexcept;

  // At most k live nodes sorted by (distance, externalId). ef is raised to k.
  std::vector<kernels::ScoredIndex> search(std::span<const float> query, size_t k, size_t ef) const;

  size_t dim() const noexcept { return dim_; }
  const HnswParams& params() const noexcept { return params_; }
  uint64_t seed() const noexcept { return seed_; }
  size_t size() const noexcept { return externalIds_.size(); }
  size_t deletedCount() const noexcept { return deletedCount_; }
  bool isDeleted(uint32_t node) const noexcept { return deleted_[node] != 0; }
  uint64_t externalId(uint32_t node) const noexcept { return externalIds_[node]; }
  const float* vector(uint32_t node) const noexcept { return data_.data() + size_t{node} * dim_; }
  int level(uint32_t node) const noexcept { return static_cast<int>(links_[node].size()) - 1; }
  int maxLevel() const noexcept { return maxLevel_; }
  std::span<const uint32_t> neighbors(uint32_t node, int layer) const noexcept {
    return links_[node][static_cast<size_t>(layer)];
  }
  size_t maxDegree(int layer) const noexcept { return layer == 0 ? 2 * params_.M : params_.M; }

  kernels::ScanInput scanInput() const noexcept;

  // Link structure only; vectors live in the collection's segment file.
  void writeStructure(std::ostream& out) const;
  // Restores links onto a graph whose vectors were appended via appendUnlinked.
  void readStructure(std::istream& in);
  void appendUnlinked(std::span<const float> vec, uint64_t externalId);

 private:
  struct Cand {
    float dist;
    uint32_t node;
  };
  struct Closer {
    bool operator()(const Cand& a, const Cand& b) const noexcept {
      return a.dist != b.dist ? a.dist > b.dist : a.node > b.node;
    }
  };
  struct Farther {
    bool operator()(const Cand& a, const Cand& b) const noexcept {
      return a.dist != b.dist ? a.dist < b.dist : a.node < b.node;
    }
  };

  float distance(const float* a, uint32_t node) const noexcept {
    return kernels::rawDistance(params_.metric, a, vector(node), dim_);
  }
  int drawLevel();
  uint32_t greedyDescend(const float* q, uint32_t entry, int fromLayer, int toLayer) const;
  std::vector<Cand> searchLayer(const float* q, std::span<const Cand> entries, size_t ef, int layer,
                                bool liveOnly) const;
  std::vector<uint32_t> selectNeighbors(std::vector<Cand> candidates, size_t limit) const;
  void shrink(uint32_t node, int layer);

  size_t dim_;
  HnswParams params_;
  uint64_t seed_;
  double levelMult_;
  std::mt19937_64 rng_;
  uint64_t levelDraws_ = 0;

  std::vector<float> data_;
  std::vector<uint64_t> externalIds_;
  std::vector<uint8_t> deleted_;
  std::vector<std::vector<std::vector<uint32_t>>> links_;
  size_t deletedCount_ = 0;
  int64_t entry_ = -1;
  int maxLevel_ = -1;
};

}  // namespace needle::vecstore
