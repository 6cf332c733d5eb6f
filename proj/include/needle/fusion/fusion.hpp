#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "needle/genhub/hub.hpp"
#include "needle/vecstore/collection.hpp"

namespace needle::embedders {
class Embedder;
}
namespace needle::vecstore {
class VectorStore;
}

namespace needle::fusion {

struct QueryPlan {
  uint32_t m = 2;     // guide images
  uint32_t k = 100;   // per-source search depth
  uint32_t n = 10;    // results returned
  double kappa = 60;  // RRF constant
  std::optional<uint32_t> lofK;  // default min(3, m - 1)
  double lofThreshold = 1.5;
  uint32_t resolution = 512;
  std::optional<uint64_t> seed;
  std::vector<std::string> engines;  // generator subset; empty means all

  uint32_t effectiveLofK() const { return lofK ? *lofK : std::min<uint32_t>(3, m > 0 ? m - 1 : 0); }
  // Throws InvalidArgument on m = 0, k = 0, n > k, kappa <= 0, threshold <= 0,
  // or lofK >= m when filtering is active (m >= 3).
  void validate() const;
};

struct RankedList {
  std::string guideId;
  size_t guideIndex = 0;
  std::string embedder;
  bool kept = true;  // false when the guide was dropped by the LOF filter
  std::vector<vecstore::SearchHit> hits;
};

struct FusedHit {
  uint64_t id = 0;
  double score = 0;

  bool operator==(const FusedHit&) const = default;
};

// score(d) = sum over lists containing d of w_e / (kappa + rank), rank
// 1-based. Each document's terms are summed in ascending order so equal
// term multisets give bit-equal scores. Sorted by descending score, then
// ascending id. Throws MissingWeight.
std::vector<FusedHit> rrfFuse(const std::vector<RankedList>& lists, const std::map<std::string, double>& weights,
                              double kappa);

// Local Outlier Factor with Euclidean distance. The k-neighbourhood includes
// every point tied with the k-th nearest. A point whose reach distances are
// all zero has lrd = +inf; inf/inf counts as 1. Throws TooFewPoints when
// points.size() < k + 1.
std::vector<double> lofScores(const std::vector<std::vector<float>>& points, size_t k);

struct FilterResult {
  std::vector<size_t> kept;     // ascending guide indices
  std::vector<double> meanLof;  // per guide; 1.0 when filtering is off
};

// embeddings: embedder name -> one vector per guide.
FilterResult filterGuides(const std::map<std::string, std::vector<std::vector<float>>>& embeddings,
                          const QueryPlan& plan);

struct GuideInfo {
  genhub::GuideImage image;
  bool kept = true;
  double lof = 1.0;
};

struct Timings {
  double generateMs = 0;
  double searchMs = 0;  // guide embedding, LOF filtering and the m x l searches
  double fuseMs = 0;
  double totalMs = 0;
};

struct QueryResult {
  std::vector<FusedHit> results;
  std::vector<GuideInfo> guides;
  std::vector<RankedList> sources;
  Timings timings;
};

struct QueryDeps {
  genhub::GeneratorHub& hub;
  std::vector<const embedders::Embedder*> embedders;  // the l enabled embedders
  vecstore::VectorStore& store;
};

// generate -> embed guides -> filter -> per (guide, embedder) search -> fuse -> top n.
// Weights come from each embedder's spec. Sources are searched for every
// guide so dropped guides still appear in verbose output; only kept guides
// are fused.
QueryResult runQuery(const std::string& prompt, const QueryPlan& plan, const QueryDeps& deps);

}  // namespace needle::fusion
