#include "needle/vecstore/hnsw.hpp"

#include <algorithm>
#include <cmath>
#include <queue>

#include "needle/common/binio.hpp"
#include "needle/common/error.hpp"

namespace needle::vecstore {

void HnswParams::validate() const {
  if (M < 2) fail(Errc::InvalidArgument, "HNSW M must be >= 2");
  if (efConstruction < M) fail(Errc::InvalidArgument, "HNSW efConstruction must be >= M");
  if (efSearch < 1) fail(Errc::InvalidArgument, "HNSW efSearch must be >= 1");
}

namespace {

constexpr int kMaxLevel = 16;

// Epoch-stamped visited marks, one per thread so concurrent searches don't share.
struct VisitedList {
  std::vector<uint32_t> marks;
  uint32_t epoch = 0;

  void reset(size_t n) {
    if (marks.size() < n) marks.resize(n, 0);
    if (++epoch == 0) {
      std::fill(marks.begin(), marks.end(), 0);
      epoch = 1;
    }
  }
  bool visit(uint32_t node) {
    if (marks[node] == epoch) return false;
    marks[node] = epoch;
    return true;
  }
};

thread_local VisitedList tlsVisited;

}  // namespace

HnswGraph::HnswGraph(size_t dim, HnswParams params, uint64_t seed)
    : dim_(dim), params_(params), seed_(seed), levelMult_(1.0 / std::log(double(params.M))), rng_(seed) {
  params_.validate();
  if (dim == 0) fail(Errc::InvalidDim, "dimension must be >= 1");
}

int HnswGraph::drawLevel() {
  ++levelDraws_;
  // u in (0, 1], built from 53 random bits so it is identical on every platform.
  const double u = double((rng_() >> 11) + 1) * 0x1.0p-53;
  const double level = std::floor(-std::log(u) * levelMult_);
  return static_cast<int>(std::min<double>(level, kMaxLevel));
}

void HnswGraph::appendUnlinked(std::span<const float> vec, uint64_t externalId) {
  data_.insert(data_.end(), vec.begin(), vec.end());
  externalIds_.push_back(externalId);
  deleted_.push_back(0);
  links_.emplace_back();
}

uint32_t HnswGraph::add(std::span<const float> vec, uint64_t externalId) {
  const auto node = static_cast<uint32_t>(size());
  appendUnlinked(vec, externalId);
  const int level = drawLevel();
  links_[node].resize(static_cast<size_t>(level) + 1);

  if (entry_ < 0) {
    entry_ = node;
    maxLevel_ = level;
    return node;
  }

  const float* q = vector(node);
  uint32_t ep = greedyDescend(q, static_cast<uint32_t>(entry_), maxLevel_, level + 1);
  std::vector<Cand> entries{{distance(q, ep), ep}};

  for (int layer = std::min(level, maxLevel_); layer >= 0; --layer) {
    auto found = searchLayer(q, entries, params_.efConstruction, layer, false);
    auto chosen = selectNeighbors(found, params_.M);
    links_[node][static_cast<size_t>(layer)] = chosen;
    for (uint32_t nb : chosen) {
      auto& back = links_[nb][static_cast<size_t>(layer)];
      back.push_back(node);
      if (back.size() > maxDegree(layer)) shrink(nb, layer);
    }
    entries = std::move(found);
  }

  if (level > maxLevel_) {
    maxLevel_ = level;
    entry_ = node;
  }
  return node;
}

void HnswGraph::markDeleted(uint32_t node) noexcept {
  if (!deleted_[node]) {
    deleted_[node] = 1;
    ++deletedCount_;
  }
}

uint32_t HnswGraph::greedyDescend(const float* q, uint32_t entry, int fromLayer, int toLayer) const {
  uint32_t cur = entry;
  float curDist = distance(q, cur);
  for (int layer = fromLayer; layer >= toLayer; --layer) {
    bool moved = true;
    while (moved) {
      moved = false;
      for (uint32_t nb : neighbors(cur, layer)) {
        float d = distance(q, nb);
        if (d < curDist || (d == curDist && nb < cur)) {
          curDist = d;
          cur = nb;
          moved = true;
        }
      }
    }
  }
  return cur;
}

std::vector<HnswGraph::Cand> HnswGraph::searchLayer(const float* q, std::span<const Cand> entries, size_t ef,
                                                    int layer, bool liveOnly) const {
  auto& visited = tlsVisited;
  visited.reset(size());
  std::priority_queue<Cand, std::vector<Cand>, Closer> frontier;
  std::priority_queue<Cand, std::vector<Cand>, Farther> best;

  for (const Cand& e : entries) {
    if (!visited.visit(e.node)) continue;
    frontier.push(e);
    if (!liveOnly || !deleted_[e.node]) best.push(e);
  }
  while (best.size() > ef) best.pop();

  while (!frontier.empty()) {
    const Cand c = frontier.top();
    // Only stop once the result set is full; with deletions the set can lag
    // behind the frontier.
    if (best.size() >= ef && c.dist > best.top().dist) break;
    frontier.pop();
    for (uint32_t nb : neighbors(c.node, layer)) {
      if (!visited.visit(nb)) continue;
      const float d = distance(q, nb);
      if (best.size() < ef || d < best.top().dist) {
        frontier.push({d, nb});
        if (!liveOnly || !deleted_[nb]) {
          best.push({d, nb});
          if (best.size() > ef) best.pop();
        }
      }
    }
  }

  std::vector<Cand> out;
  out.reserve(best.size());
  while (!best.empty()) {
    out.push_back(best.top());
    best.pop();
  }
  std::reverse(out.begin(), out.end());
  return out;
}

// Diversity heuristic: keep a candidate only if it is closer to the base
// than to every neighbor already kept.
std::vector<uint32_t> HnswGraph::selectNeighbors(std::vector<Cand> candidates, size_t limit) const {
  std::sort(candidates.begin(), candidates.end(), [](const Cand& a, const Cand& b) {
    return a.dist != b.dist ? a.dist < b.dist : a.node < b.node;
  });
  std::vector<uint32_t> kept;
  if (candidates.size() <= limit) {
    for (const Cand& c : candidates) kept.push_back(c.node);
    return kept;
  }
  for (const Cand& c : candidates) {
    if (kept.size() >= limit) break;
    bool good = true;
    for (uint32_t k : kept) {
      if (distance(vector(c.node), k) < c.dist) {
        good = false;
        break;
      }
    }
    if (good) kept.push_back(c.node);
  }
  return kept;
}

void HnswGraph::shrink(uint32_t node, int layer) {
  auto& list = links_[node][static_cast<size_t>(layer)];
  std::vector<Cand> cands;
  cands.reserve(list.size());
  const float* base = vector(node);
  for (uint32_t nb : list) cands.push_back({distance(base, nb), nb});
  list = selectNeighbors(std::move(cands), maxDegree(layer));
}

std::vector<kernels::ScoredIndex> HnswGraph::search(std::span<const float> query, size_t k, size_t ef) const {
  std::vector<kernels::ScoredIndex> out;
  if (entry_ < 0 || k == 0 || deletedCount_ == size()) return out;
  ef = std::max(ef, k);
  const float* q = query.data();
  uint32_t ep = greedyDescend(q, static_cast<uint32_t>(entry_), maxLevel_, 1);
  const Cand start{distance(q, ep), ep};
  auto found = searchLayer(q, std::span(&start, 1), ef, 0, true);
  out.reserve(found.size());
  for (const Cand& c : found) out.push_back({c.dist, externalIds_[c.node], c.node});
  std::sort(out.begin(), out.end());
  if (out.size() > k) out.resize(k);
  return out;
}

kernels::ScanInput HnswGraph::scanInput() const noexcept {
  kernels::ScanInput in;
  in.rows = data_;
  in.ids = externalIds_;
  in.skip = deleted_;
  in.dim = dim_;
  in.metric = params_.metric;
  return in;
}

void HnswGraph::writeStructure(std::ostream& out) const {
  binio::put<uint64_t>(out, size());
  binio::put<int64_t>(out, entry_);
  binio::put<int32_t>(out, maxLevel_);
  binio::put<uint64_t>(out, levelDraws_);
  for (size_t node = 0; node < size(); ++node) {
    binio::put<uint8_t>(out, deleted_[node]);
    binio::put<uint32_t>(out, static_cast<uint32_t>(links_[node].size()));
    for (const auto& layer : links_[node]) {
      binio::put<uint32_t>(out, static_cast<uint32_t>(layer.size()));
      out.write(reinterpret_cast<const char*>(layer.data()),
                static_cast<std::streamsize>(layer.size() * sizeof(uint32_t)));
    }
  }
}

void HnswGraph::readStructure(std::istream& in) {
  const auto n = binio::get<uint64_t>(in);
  if (n != size()) fail(Errc::Corrupt, "graph snapshot node count does not match segment file");
  entry_ = binio::get<int64_t>(in);
  maxLevel_ = binio::get<int32_t>(in);
  levelDraws_ = binio::get<uint64_t>(in);
  rng_.seed(seed_);
  rng_.discard(levelDraws_);
  deletedCount_ = 0;
  for (size_t node = 0; node < n; ++node) {
    deleted_[node] = binio::get<uint8_t>(in);
    deletedCount_ += deleted_[node];
    const auto levels = binio::get<uint32_t>(in);
    if (levels == 0 || levels > kMaxLevel + 1) fail(Errc::Corrupt, "bad node level in graph snapshot");
    links_[node].assign(levels, {});
    for (auto& layer : links_[node]) {
      const auto count = binio::get<uint32_t>(in);
      layer.resize(count);
      if (!in.read(reinterpret_cast<char*>(layer.data()), static_cast<std::streamsize>(count * sizeof(uint32_t)))) {
        fail(Errc::Corrupt, "truncated graph snapshot");
      }
      for (uint32_t nb : layer) {
        if (nb >= n) fail(Errc::Corrupt, "graph snapshot references unknown node");
      }
    }
  }
  if (entry_ >= static_cast<int64_t>(n)) fail(Errc::Corrupt, "graph snapshot entry point out of range");
}

}  // namespace needle::vecstore
