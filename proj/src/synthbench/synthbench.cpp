#include "needle/synthbench/synthbench.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "needle/common/error.hpp"
#include "needle/common/hash.hpp"
#include "needle/common/rng.hpp"
#include "needle/vecstore/store.hpp"

namespace needle::synthbench {

using genhub::Color;
using genhub::Position;
using genhub::SceneSpec;
using genhub::Shape;

std::string_view hardnessName(Hardness h) { return h == Hardness::Simple ? "simple" : "hard"; }

std::vector<LabeledImage> buildCorpus(size_t count, uint64_t seed, uint32_t side) {
  SplitMix64 rng(seed);
  std::vector<LabeledImage> out;
  out.reserve(count);
  for (size_t i = 0; i < count; ++i) {
    LabeledImage li;
    li.imageId = i + 1;
    li.scene.shape = static_cast<Shape>(rng.below(genhub::kShapeCount));
    li.scene.shapeColor = static_cast<Color>(rng.below(genhub::kColorCount));
    int bg = static_cast<int>(rng.below(genhub::kColorCount - 1));
    if (bg >= static_cast<int>(li.scene.shapeColor)) ++bg;
    li.scene.background = static_cast<Color>(bg);
    li.scene.position = static_cast<Position>(rng.below(genhub::kPositionCount));
    li.renderSeed = rng.next();
    out.push_back(std::move(li));
  }
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < long(count); ++i) {
    auto& li = out[size_t(i)];
    li.pixels = genhub::mockRender(li.scene, li.renderSeed, side);
  }
  return out;
}

std::vector<BenchQuery> buildQueries(const std::vector<LabeledImage>& corpus, uint64_t seed, size_t simple,
                                     size_t hard) {
  std::map<std::pair<int, int>, std::set<uint64_t>> byPair;
  std::map<std::string, std::pair<SceneSpec, std::set<uint64_t>>> byScene;
  for (const auto& li : corpus) {
    byPair[{int(li.scene.shapeColor), int(li.scene.background)}].insert(li.imageId);
    auto& slot = byScene[genhub::promptFor(li.scene)];
    slot.first = li.scene;
    slot.second.insert(li.imageId);
  }
  std::mt19937_64 rng(seed);
  std::vector<BenchQuery> out;

  std::vector<std::pair<int, int>> pairs;
  for (const auto& [p, ids] : byPair) pairs.push_back(p);
  std::shuffle(pairs.begin(), pairs.end(), rng);
  if (pairs.size() < simple) fail(Errc::InvalidArgument, "corpus too small for the simple query suite");
  for (size_t i = 0; i < simple; ++i) {
    SceneSpec s{Shape::Any, Color(pairs[i].first), Color(pairs[i].second), Position::Center};
    out.push_back({genhub::promptFor(s), byPair[pairs[i]], Hardness::Simple});
  }

  std::vector<std::string> scenes;
  for (const auto& [text, v] : byScene) scenes.push_back(text);
  std::shuffle(scenes.begin(), scenes.end(), rng);
  if (scenes.size() < hard) fail(Errc::InvalidArgument, "corpus too small for the hard query suite");
  for (size_t i = 0; i < hard; ++i) out.push_back({scenes[i], byScene[scenes[i]].second, Hardness::Hard});
  return out;
}

double averagePrecision(std::span<const uint64_t> ranked, const std::set<uint64_t>& relevant, size_t depth) {
  if (relevant.empty()) fail(Errc::EmptyRelevantSet, "query has no relevant items");
  double sum = 0;
  size_t hits = 0;
  std::set<uint64_t> seen;
  for (size_t i = 0; i < std::min(depth, ranked.size()); ++i) {
    if (!seen.insert(ranked[i]).second) continue;
    if (relevant.count(ranked[i])) {
      ++hits;
      sum += double(hits) / double(i + 1);
    }
  }
  return sum / double(relevant.size());
}

double reciprocalRank(std::span<const uint64_t> ranked, const std::set<uint64_t>& relevant, size_t depth) {
  for (size_t i = 0; i < std::min(depth, ranked.size()); ++i)
    if (relevant.count(ranked[i])) return 1.0 / double(i + 1);
  return 0.0;
}

BenchReport evaluate(const std::vector<BenchQuery>& queries, const RetrievalSystem& system, std::string name,
                     size_t depth) {
  BenchReport r;
  r.system = std::move(name);
  std::vector<double> totals;
  double simpleSum = 0, hardSum = 0;
  size_t simpleN = 0, hardN = 0;
  for (const auto& q : queries) {
    auto ans = system(q);
    QueryScore s{q.text, q.hardness, q.relevant.size(), averagePrecision(ans.ranked, q.relevant, depth),
                 reciprocalRank(ans.ranked, q.relevant, depth)};
    r.map += s.ap;
    r.mrr += s.rr;
    (q.hardness == Hardness::Simple ? simpleSum : hardSum) += s.ap;
    (q.hardness == Hardness::Simple ? simpleN : hardN)++;
    if (ans.timings) {
      r.latency.generateMs += ans.timings->generateMs;
      r.latency.searchMs += ans.timings->searchMs;
      r.latency.fuseMs += ans.timings->fuseMs;
      r.latency.totalMs += ans.timings->totalMs;
      totals.push_back(ans.timings->totalMs);
    }
    r.perQuery.push_back(std::move(s));
  }
  if (!queries.empty()) {
    r.map /= double(queries.size());
    r.mrr /= double(queries.size());
  }
  r.mapSimple = simpleN ? simpleSum / double(simpleN) : 0;
  r.mapHard = hardN ? hardSum / double(hardN) : 0;
  if (!totals.empty()) {
    auto n = double(totals.size());
    r.latency.samples = totals.size();
    r.latency.generateMs /= n;
    r.latency.searchMs /= n;
    r.latency.fuseMs /= n;
    r.latency.totalMs /= n;
    std::sort(totals.begin(), totals.end());
    size_t mid = totals.size() / 2;
    r.latency.medianTotalMs = totals.size() % 2 ? totals[mid] : (totals[mid - 1] + totals[mid]) / 2;
  }
  return r;
}

std::string formatReports(const std::vector<BenchReport>& reports) {
  std::ostringstream out;
  char buf[512];
  out << "# summary\n";
  out << "system\tmap\tmap_simple\tmap_hard\tmrr\tqueries\tgenerate_ms\tsearch_ms\tfuse_ms\ttotal_ms\tmedian_total_ms\n";
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof buf, "%s\t%.4f\t%.4f\t%.4f\t%.4f\t%zu\t%.2f\t%.2f\t%.2f\t%.2f\t%.2f\n", r.system.c_str(),
                  r.map, r.mapSimple, r.mapHard, r.mrr, r.perQuery.size(), r.latency.generateMs, r.latency.searchMs,
                  r.latency.fuseMs, r.latency.totalMs, r.latency.medianTotalMs);
    out << buf;
  }
  out << "# per query\n";
  out << "system\thardness\trelevant\tap\trr\tquery\n";
  for (const auto& r : reports) {
    for (const auto& q : r.perQuery) {
      std::snprintf(buf, sizeof buf, "%s\t%s\t%zu\t%.4f\t%.4f\t%s\n", r.system.c_str(),
                    std::string(hardnessName(q.hardness)).c_str(), q.relevantCount, q.ap, q.rr, q.text.c_str());
      out << buf;
    }
  }
  return out.str();
}

BenchIndex::BenchIndex(const std::vector<LabeledImage>& corpus, const std::filesystem::path& dir,
                       std::vector<embedders::EmbedderSpec> specs)
    : store_(std::make_unique<vecstore::VectorStore>(dir)) {
  embedders::ensureCollections(specs, *store_);
  for (const auto& s : specs) {
    if (!s.enabled) continue;
    embedders_.push_back(embedders::makeEmbedder(s));
  }
  std::vector<ImagePixels> batch;
  std::vector<uint64_t> ids;
  auto flush = [&] {
    for (const auto& e : embedders_) {
      auto vecs = e->embedBatch(batch);
      auto& c = store_->collection(e->spec().name);
      for (size_t i = 0; i < ids.size(); ++i)
        if (!c.contains(ids[i])) c.insert(ids[i], vecs[i]);
    }
    batch.clear();
    ids.clear();
  };
  for (const auto& li : corpus) {
    batch.push_back(li.pixels);
    ids.push_back(li.imageId);
    if (batch.size() == embedders::kDefaultBatchLimit) flush();
  }
  if (!batch.empty()) flush();
  store_->flushAll();
}

BenchIndex::~BenchIndex() = default;

const embedders::Embedder& BenchIndex::embedder(const std::string& name) const {
  for (const auto& e : embedders_)
    if (e->spec().name == name) return *e;
  fail(Errc::UnknownEmbedder, name);
}

std::vector<std::string> BenchIndex::embedderNames() const {
  std::vector<std::string> out;
  for (const auto& e : embedders_) out.push_back(e->spec().name);
  return out;
}

RetrievalSystem pipelineSystem(BenchIndex& index, genhub::GeneratorHub& hub, PipelineConfig cfg) {
  std::vector<const embedders::Embedder*> embs;
  for (const auto& name : cfg.embedders) embs.push_back(&index.embedder(name));
  return [&index, &hub, cfg, embs](const BenchQuery& q) {
    fusion::QueryPlan plan;
    plan.m = cfg.m;
    plan.k = cfg.k;
    plan.n = cfg.k;
    plan.kappa = cfg.kappa;
    plan.resolution = cfg.resolution;
    plan.seed = xxh64(q.text);
    auto res = fusion::runQuery(q.text, plan, {hub, embs, index.store()});
    Answer a;
    for (const auto& h : res.results) a.ranked.push_back(h.id);
    a.timings = res.timings;
    return a;
  };
}

RetrievalSystem oracleSystem() {
  return [](const BenchQuery& q) { return Answer{std::vector<uint64_t>(q.relevant.begin(), q.relevant.end()), {}}; };
}

RetrievalSystem randomSystem(const std::vector<LabeledImage>& corpus, uint64_t seed) {
  std::vector<uint64_t> ids;
  for (const auto& li : corpus) ids.push_back(li.imageId);
  auto rng = std::make_shared<std::mt19937_64>(seed);
  return [ids, rng](const BenchQuery&) {
    Answer a{ids, {}};
    std::shuffle(a.ranked.begin(), a.ranked.end(), *rng);
    return a;
  };
}

std::vector<BenchReport> runStandardSuite(const SuiteOptions& opts, const std::filesystem::path& workDir) {
  auto corpus = buildCorpus(opts.corpusSize, opts.corpusSeed);
  auto queries = buildQueries(corpus, opts.querySeed);
  BenchIndex index(corpus, workDir / "vectors");
  genhub::GeneratorHub hub(genhub::defaultGenerators());

  struct Variant {
    std::string name;
    PipelineConfig cfg;
  };
  const uint32_t res = opts.resolution;
  std::vector<Variant> variants = {
      {"ensemble m=2 colorhist64+grid64", {{"colorhist64", "grid64"}, 2, res}},
      {"single m=1 colorhist64", {{"colorhist64"}, 1, res}},
      {"single m=1 grid64", {{"grid64"}, 1, res}},
      {"single m=1 edge36", {{"edge36"}, 1, res}},
      {"one guide m=1 colorhist64+grid64", {{"colorhist64", "grid64"}, 1, res}},
      {"full m=2 colorhist64+grid64+edge36", {{"colorhist64", "grid64", "edge36"}, 2, res}},
  };
  std::vector<BenchReport> out;
  for (const auto& v : variants) out.push_back(evaluate(queries, pipelineSystem(index, hub, v.cfg), v.name));
  return out;
}

}  // namespace needle::synthbench
