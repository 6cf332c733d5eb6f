#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "doctest.h"
#include "expect_error.hpp"
#include "needle/embedders/embedder.hpp"
#include "needle/fusion/fusion.hpp"
#include "needle/genhub/scene.hpp"
#include "needle/vecstore/store.hpp"
#include "oracles.hpp"
#include "temp_dir.hpp"

using namespace needle;
using namespace needle::fusion;
using needle::testing::codeOf;
using needle::testing::lofOracle;
using needle::testing::rrfOracle;

namespace {

RankedList list(std::string embedder, std::vector<uint64_t> ids) {
  RankedList l;
  l.embedder = std::move(embedder);
  for (auto id : ids) l.hits.push_back({id, 0.0f});
  return l;
}

}  // namespace

TEST_CASE("rrfFuse examples") {
  auto single = rrfFuse({list("e", {5, 3, 9, 1})}, {{"e", 1.0}}, 60);
  REQUIRE(single.size() == 4);
  CHECK(single[0].id == 5);
  CHECK(single[1].id == 3);
  CHECK(single[2].id == 9);
  CHECK(single[3].id == 1);

  const uint64_t A = 1, B = 2;
  auto tie = rrfFuse({list("e1", {A, B}), list("e2", {B, A})}, {{"e1", 1}, {"e2", 1}}, 60);
  CHECK(tie[0].id == A);
  CHECK(tie[0].score == tie[1].score);
  CHECK(tie[0].score == doctest::Approx(1.0 / 61 + 1.0 / 62));

  auto weighted = rrfFuse({list("e1", {A}), list("e2", {B})}, {{"e1", 2}, {"e2", 1}}, 60);
  CHECK(weighted[0].id == A);
  CHECK(weighted[0].score == doctest::Approx(2.0 / 61));
  CHECK(weighted[1].score == doctest::Approx(1.0 / 61));

  CHECK(codeOf([&] { rrfFuse({list("x", {1})}, {{"e", 1}}, 60); }) == Errc::MissingWeight);
  CHECK(rrfFuse({}, {}, 60).empty());
}

TEST_CASE("rrfFuse matches the score-table oracle") {
  std::mt19937_64 rng(17);
  for (int inst = 0; inst < 300; ++inst) {
    size_t nl = 1 + rng() % 8;
    std::map<std::string, double> w;
    std::vector<RankedList> lists;
    bool coarse = inst % 2 == 0;  // small weight alphabet forces exact ties
    for (size_t i = 0; i < nl; ++i) {
      std::string e = "e" + std::to_string(rng() % 4);
      if (!w.count(e)) w[e] = coarse ? double(1 + rng() % 2) : std::uniform_real_distribution<double>(0, 3)(rng);
      std::vector<uint64_t> ids(50);
      std::iota(ids.begin(), ids.end(), 0);
      std::shuffle(ids.begin(), ids.end(), rng);
      ids.resize(rng() % 20);
      lists.push_back(list(e, ids));
    }
    double kappa = inst % 3 == 0 ? 60 : 1 + double(rng() % 100);
    auto got = rrfFuse(lists, w, kappa);
    auto want = rrfOracle(lists, w, kappa);
    REQUIRE(got.size() == want.size());
    for (size_t i = 0; i < got.size(); ++i) {
      CHECK(got[i].id == want[i].id);
      CHECK(got[i].score == want[i].score);
    }
    // weight scaling leaves the order unchanged
    auto scaled = w;
    for (auto& [k, v] : scaled) v *= 4.0;
    auto s = rrfFuse(lists, scaled, kappa);
    for (size_t i = 0; i < got.size(); ++i) CHECK(s[i].id == got[i].id);
  }
}

TEST_CASE("a document first in every list wins for any kappa") {
  std::mt19937_64 rng(3);
  for (double kappa : {0.01, 1.0, 60.0, 1e6}) {
    std::vector<RankedList> lists;
    for (int i = 0; i < 5; ++i) {
      std::vector<uint64_t> ids{999};
      for (int j = 0; j < 10; ++j) ids.push_back(rng() % 900);
      std::sort(ids.begin() + 1, ids.end());
      ids.erase(std::unique(ids.begin() + 1, ids.end()), ids.end());
      lists.push_back(list("e" + std::to_string(i % 2), ids));
    }
    CHECK(rrfFuse(lists, {{"e0", 1.0}, {"e1", 0.3}}, kappa)[0].id == 999);
  }
}

TEST_CASE("lofScores examples") {
  std::vector<std::vector<float>> square{{0, 0}, {1, 0}, {0, 1}, {1, 1}};
  for (double v : lofScores(square, 2)) CHECK(v == 1.0);
  auto withFar = square;
  withFar.push_back({10, 10});
  auto lof = lofScores(withFar, 2);
  CHECK(lof[4] > 1.5);
  for (int i = 0; i < 4; ++i) CHECK(lof[size_t(i)] < 1.3);
  CHECK(codeOf([] { lofScores({{0}, {1}, {2}}, 3); }) == Errc::TooFewPoints);
  std::vector<std::vector<float>> same(5, std::vector<float>{0.5f, 0.5f});
  for (double v : lofScores(same, 3)) CHECK(v == 1.0);
}

TEST_CASE("lofScores matches the O(n^2) oracle") {
  std::mt19937_64 rng(8);
  for (size_t n : {4, 10, 50, 200}) {
    for (size_t k : {1, 2, 3, 7}) {
      if (k + 1 > n) continue;
      std::vector<std::vector<float>> pts(n, std::vector<float>(3));
      bool grid = (n + k) % 2 == 0;  // integer grids create distance ties
      for (auto& p : pts)
        for (auto& x : p) x = grid ? float(rng() % 4) : std::uniform_real_distribution<float>(-1, 1)(rng);
      auto got = lofScores(pts, k);
      auto want = lofOracle(pts, k);
      for (size_t i = 0; i < n; ++i) {
        if (std::isinf(want[i])) {
          CHECK(std::isinf(got[i]));
        } else {
          CHECK(std::abs(got[i] - want[i]) <= 1e-9);
        }
      }
    }
  }
}

TEST_CASE("filterGuides") {
  QueryPlan plan;
  plan.m = 2;
  auto two = filterGuides({{"e", {{0, 0}, {100, 100}}}}, plan);
  CHECK(two.kept == std::vector<size_t>{0, 1});

  plan.m = 5;
  auto hub = genhub::GeneratorHub(genhub::defaultGenerators());
  auto guides = hub.generate({"a red circle on a white background", 5, 128, 3});
  std::map<std::string, std::vector<std::vector<float>>> emb;
  for (auto& g : guides) {
    emb["hist"].push_back(embedders::colorHistogram64(g.pixels));
    emb["grid"].push_back(embedders::gridIntensity64(g.pixels));
  }
  auto none = filterGuides(emb, plan);
  CHECK(none.kept.size() == 5);
  emb["hist"][2] = std::vector<float>(64, 0.0f);
  emb["hist"][2][63] = 1.0f;
  emb["grid"][2] = std::vector<float>(64, 0.0f);
  auto f = filterGuides(emb, plan);
  CHECK(std::find(f.kept.begin(), f.kept.end(), 2) == f.kept.end());
  CHECK(f.kept.size() == 4);
  CHECK(f.meanLof[2] > plan.lofThreshold);

  std::map<std::string, std::vector<std::vector<float>>> same{{"e", std::vector<std::vector<float>>(5, {1, 2})}};
  CHECK(filterGuides(same, plan).kept.size() == 5);

  plan.lofThreshold = 1e-9;  // everything above threshold: keep the best one
  auto spread = filterGuides({{"e", {{0}, {1}, {3}, {7}, {20}}}}, plan);
  CHECK(spread.kept.size() == 1);

  CHECK(codeOf([&] { filterGuides({{"e", {{0}, {1}}}}, plan); }) == Errc::MisalignedEmbeddings);
}

TEST_CASE("QueryPlan validation") {
  QueryPlan p;
  CHECK_NOTHROW(p.validate());
  CHECK(p.effectiveLofK() == 1);
  p.m = 8;
  CHECK(p.effectiveLofK() == 3);
  p.n = 200;
  CHECK(codeOf([&] { p.validate(); }) == Errc::InvalidArgument);
  p.n = 10;
  p.lofK = 8;
  CHECK(codeOf([&] { p.validate(); }) == Errc::InvalidArgument);
}

TEST_CASE("runQuery on an empty index and n truncation") {
  needle::testing::TempDir tmp;
  vecstore::VectorStore store(tmp / "vectors");
  auto specs = embedders::builtinRegistry();
  specs.pop_back();
  embedders::ensureCollections(specs, store);
  std::vector<std::unique_ptr<embedders::Embedder>> owned;
  std::vector<const embedders::Embedder*> embs;
  for (auto& s : specs) {
    owned.push_back(embedders::makeEmbedder(s));
    embs.push_back(owned.back().get());
  }
  genhub::GeneratorHub hub(genhub::defaultGenerators());
  QueryPlan plan;
  plan.resolution = 64;
  plan.seed = 1;
  QueryDeps deps{hub, embs, store};
  auto empty = runQuery("a red circle on a white background", plan, deps);
  CHECK(empty.results.empty());
  CHECK(empty.guides.size() == 2);
  CHECK(empty.sources.size() == 4);

  std::mt19937_64 rng(4);
  for (uint64_t id = 1; id <= 40; ++id) {
    genhub::SceneSpec scene{genhub::Shape(rng() % 3), genhub::Color(rng() % 6), genhub::Color::White,
                            genhub::Position(rng() % 3)};
    auto img = genhub::mockRender(scene, id, 64);
    for (auto& e : owned) store.collection(e->spec().name).insert(id, e->embed(img));
  }
  auto full = runQuery("a red circle on a white background", plan, deps);
  CHECK(full.results.size() == 10);
  plan.n = 1;
  auto top1 = runQuery("a red circle on a white background", plan, deps);
  REQUIRE(top1.results.size() == 1);
  CHECK(top1.results[0] == full.results[0]);
  CHECK(top1.timings.totalMs >= top1.timings.generateMs);
}
