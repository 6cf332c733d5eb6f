#include "needle/fusion/fusion.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <limits>
#include <unordered_map>

#include "needle/common/error.hpp"
#include "needle/embedders/embedder.hpp"
#include "needle/kernels/distance.hpp"
#include "needle/vecstore/store.hpp"

namespace needle::fusion {

void QueryPlan::validate() const {
  if (m == 0) fail(Errc::InvalidArgument, "m must be >= 1");
  if (k == 0) fail(Errc::InvalidArgument, "k must be >= 1");
  if (n == 0 || n > k) fail(Errc::InvalidArgument, "n must be in [1, k]");
  if (!(kappa > 0) || !std::isfinite(kappa)) fail(Errc::InvalidArgument, "kappa must be positive");
  if (!(lofThreshold > 0)) fail(Errc::InvalidArgument, "lofThreshold must be positive");
  if (m >= 3 && (effectiveLofK() == 0 || effectiveLofK() >= m)) {
    fail(Errc::InvalidArgument, "lofK must be in [1, m - 1]");
  }
}

std::vector<FusedHit> rrfFuse(const std::vector<RankedList>& lists, const std::map<std::string, double>& weights,
                              double kappa) {
  if (!(kappa > 0)) fail(Errc::InvalidArgument, "kappa must be positive");
  std::unordered_map<uint64_t, std::vector<double>> terms;
  for (const auto& list : lists) {
    auto w = weights.find(list.embedder);
    if (w == weights.end()) fail(Errc::MissingWeight, "no weight for embedder '" + list.embedder + "'");
    std::unordered_map<uint64_t, bool> seen;
    for (size_t r = 0; r < list.hits.size(); ++r) {
      if (!seen.emplace(list.hits[r].id, true).second) continue;  // best rank only
      terms[list.hits[r].id].push_back(w->second / (kappa + double(r + 1)));
    }
  }
  std::vector<FusedHit> out;
  out.reserve(terms.size());
  for (auto& [id, t] : terms) {
    std::sort(t.begin(), t.end());
    double s = 0;
    for (double x : t) s += x;
    out.push_back({id, s});
  }
  std::sort(out.begin(), out.end(), [](const FusedHit& a, const FusedHit& b) {
    return a.score != b.score ? a.score > b.score : a.id < b.id;
  });
  return out;
}

std::vector<double> lofScores(const std::vector<std::vector<float>>& points, size_t k) {
  const size_t n = points.size();
  if (k == 0) fail(Errc::InvalidArgument, "LOF neighbourhood must be >= 1");
  if (n < k + 1) {
    fail(Errc::TooFewPoints, std::to_string(n) + " points cannot support a " + std::to_string(k) + "-neighbourhood");
  }
  const size_t dim = points[0].size();
  std::vector<double> flat;
  flat.reserve(n * dim);
  for (const auto& p : points) {
    if (p.size() != dim) fail(Errc::DimensionMismatch, "LOF points differ in dimension");
    flat.insert(flat.end(), p.begin(), p.end());
  }
  auto d = kernels::pairwiseEuclideanParallel(flat, n, dim);
  auto D = [&](size_t a, size_t b) { return d[a * n + b]; };

  std::vector<double> kdist(n);
  std::vector<std::vector<size_t>> nbrs(n);
  std::vector<double> row;
  for (size_t a = 0; a < n; ++a) {
    row.clear();
    for (size_t b = 0; b < n; ++b)
      if (b != a) row.push_back(D(a, b));
    std::nth_element(row.begin(), row.begin() + long(k - 1), row.end());
    kdist[a] = row[k - 1];
    for (size_t b = 0; b < n; ++b)
      if (b != a && D(a, b) <= kdist[a]) nbrs[a].push_back(b);
  }

  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> lrd(n);
  for (size_t a = 0; a < n; ++a) {
    double sum = 0;
    for (size_t b : nbrs[a]) sum += std::max(kdist[b], D(a, b));
    lrd[a] = sum == 0 ? inf : double(nbrs[a].size()) / sum;
  }

  std::vector<double> lof(n);
  for (size_t a = 0; a < n; ++a) {
    double sum = 0;
    for (size_t b : nbrs[a]) {
      if (std::isinf(lrd[a])) sum += std::isinf(lrd[b]) ? 1.0 : 0.0;
      else sum += lrd[b] / lrd[a];
    }
    lof[a] = sum / double(nbrs[a].size());
  }
  return lof;
}

FilterResult filterGuides(const std::map<std::string, std::vector<std::vector<float>>>& embeddings,
                          const QueryPlan& plan) {
  const size_t m = plan.m;
  for (const auto& [name, vecs] : embeddings) {
    if (vecs.size() != m) {
      fail(Errc::MisalignedEmbeddings,
           name + " has " + std::to_string(vecs.size()) + " guide vectors, expected " + std::to_string(m));
    }
  }
  FilterResult out;
  out.meanLof.assign(m, 1.0);
  if (m < 3 || embeddings.empty()) {
    for (size_t i = 0; i < m; ++i) out.kept.push_back(i);
    return out;
  }
  std::vector<double> mean(m, 0.0);
  for (const auto& [name, vecs] : embeddings) {
    auto lof = lofScores(vecs, plan.effectiveLofK());
    for (size_t i = 0; i < m; ++i) mean[i] += lof[i];
  }
  for (auto& v : mean) v /= double(embeddings.size());
  out.meanLof = mean;
  for (size_t i = 0; i < m; ++i)
    if (mean[i] <= plan.lofThreshold) out.kept.push_back(i);
  if (out.kept.empty()) {
    out.kept.push_back(size_t(std::min_element(mean.begin(), mean.end()) - mean.begin()));
  }
  return out;
}

namespace {

double msSince(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

QueryResult runQuery(const std::string& prompt, const QueryPlan& plan, const QueryDeps& deps) {
  plan.validate();
  if (deps.embedders.empty()) fail(Errc::InvalidArgument, "no enabled embedders");
  const auto start = std::chrono::steady_clock::now();
  QueryResult result;

  auto t = std::chrono::steady_clock::now();
  auto guides = deps.hub.generate({prompt, plan.m, plan.resolution, plan.seed, plan.engines});
  result.timings.generateMs = msSince(t);

  t = std::chrono::steady_clock::now();
  std::vector<ImagePixels> pixels;
  pixels.reserve(guides.size());
  for (const auto& g : guides) pixels.push_back(g.pixels);

  std::map<std::string, std::vector<std::vector<float>>> guideVecs;
  std::map<std::string, double> weights;
  for (const auto* e : deps.embedders) {
    auto& dst = guideVecs[e->spec().name];
    for (size_t off = 0; off < pixels.size(); off += embedders::kDefaultBatchLimit) {
      size_t len = std::min(embedders::kDefaultBatchLimit, pixels.size() - off);
      auto part = e->embedBatch(std::span<const ImagePixels>(pixels).subspan(off, len));
      for (auto& v : part) dst.push_back(std::move(v));
    }
    weights[e->spec().name] = e->spec().weight;
  }
  auto filter = filterGuides(guideVecs, plan);
  std::vector<bool> kept(guides.size(), false);
  for (size_t i : filter.kept) kept[i] = true;

  std::vector<const vecstore::Collection*> collections;
  for (const auto* e : deps.embedders) collections.push_back(&deps.store.collection(e->spec().name));

  const size_t l = deps.embedders.size();
  result.sources.resize(guides.size() * l);
  std::exception_ptr error;
  const long tasks = static_cast<long>(result.sources.size());
#pragma omp parallel for schedule(dynamic)
  for (long task = 0; task < tasks; ++task) {
    size_t gi = size_t(task) / l, ei = size_t(task) % l;
    auto& src = result.sources[size_t(task)];
    src.guideId = guides[gi].id;
    src.guideIndex = gi;
    src.embedder = deps.embedders[ei]->spec().name;
    src.kept = kept[gi];
    try {
      src.hits = collections[ei]->search(guideVecs.at(src.embedder)[gi], plan.k);
    } catch (...) {
#pragma omp critical(needle_query_error)
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
  result.timings.searchMs = msSince(t);

  t = std::chrono::steady_clock::now();
  std::vector<RankedList> fused;
  for (const auto& s : result.sources)
    if (s.kept) fused.push_back(s);
  result.results = rrfFuse(fused, weights, plan.kappa);
  if (result.results.size() > plan.n) result.results.resize(plan.n);
  result.timings.fuseMs = msSince(t);

  for (size_t i = 0; i < guides.size(); ++i) {
    result.guides.push_back({std::move(guides[i]), kept[i], filter.meanLof[i]});
  }
  result.timings.totalMs = msSince(start);
  return result;
}

}  // namespace needle::fusion
