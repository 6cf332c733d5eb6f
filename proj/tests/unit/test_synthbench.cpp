#include <cmath>
#include <map>
#include <random>

#include "doctest.h"
#include "expect_error.hpp"
#include "needle/synthbench/synthbench.hpp"
#include "needle/vecstore/store.hpp"
#include "temp_dir.hpp"

using namespace needle;
using namespace needle::synthbench;
using needle::testing::codeOf;

namespace {

// precision@i summed by brute force over every prefix
double apOracle(const std::vector<uint64_t>& ranked, const std::set<uint64_t>& rel) {
  double s = 0;
  for (size_t i = 0; i < ranked.size(); ++i) {
    if (!rel.count(ranked[i])) continue;
    double hits = 0;
    for (size_t j = 0; j <= i; ++j) hits += rel.count(ranked[j]);
    s += hits / double(i + 1);
  }
  return s / double(rel.size());
}

}  // namespace

TEST_CASE("buildCorpus determinism and marginals") {
  CHECK(buildCorpus(0, 1).empty());
  auto a = buildCorpus(2000, 42, 32);
  auto b = buildCorpus(2000, 42, 32);
  REQUIRE(a.size() == 2000);
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].imageId == b[i].imageId);
    CHECK(a[i].pixels == b[i].pixels);
  }
  std::map<int, int> shape, color, bg, pos;
  for (const auto& li : a) {
    shape[int(li.scene.shape)]++;
    color[int(li.scene.shapeColor)]++;
    bg[int(li.scene.background)]++;
    pos[int(li.scene.position)]++;
    CHECK(li.scene.shapeColor != li.scene.background);
    CHECK(li.scene.shape != genhub::Shape::Any);
  }
  auto within = [](const std::map<int, int>& counts, int buckets) {
    REQUIRE(int(counts.size()) == buckets);
    for (auto [k, v] : counts) CHECK(std::abs(v / 2000.0 - 1.0 / buckets) <= 0.05);
  };
  within(shape, 3);
  within(color, 8);
  within(bg, 8);
  within(pos, 3);
}

TEST_CASE("query suite") {
  auto corpus = buildCorpus(2000, 42, 24);
  auto qs = buildQueries(corpus, 7);
  REQUIRE(qs.size() == 40);
  std::set<std::string> texts;
  size_t hard = 0;
  for (const auto& q : qs) {
    CHECK(!q.relevant.empty());
    CHECK(texts.insert(q.text).second);
    auto scene = genhub::parsePrompt(q.text);
    CHECK(genhub::matchesGrammar(q.text));
    hard += q.hardness == Hardness::Hard;
    // relevant set equals the predicate evaluated over the corpus
    std::set<uint64_t> want;
    for (const auto& li : corpus) {
      bool ok = li.scene.shapeColor == scene.shapeColor && li.scene.background == scene.background;
      if (q.hardness == Hardness::Hard) ok = ok && li.scene.shape == scene.shape && li.scene.position == scene.position;
      if (ok) want.insert(li.imageId);
    }
    CHECK(q.relevant == want);
  }
  CHECK(hard == 20);
}

TEST_CASE("averagePrecision examples") {
  const uint64_t A = 1, B = 2, x = 9, y = 10;
  CHECK(averagePrecision(std::vector<uint64_t>{B, A}, {A, B}) == 1.0);
  CHECK(averagePrecision(std::vector<uint64_t>{x, A}, {A}) == 0.5);
  CHECK(averagePrecision(std::vector<uint64_t>{A, x, B}, {A, B}) == doctest::Approx(5.0 / 6.0));
  CHECK(averagePrecision(std::vector<uint64_t>{x, y}, {A}) == 0.0);
  CHECK(averagePrecision(std::vector<uint64_t>{x, A}, {A}, 1) == 0.0);
  CHECK(codeOf([] { averagePrecision(std::vector<uint64_t>{1}, {}); }) == Errc::EmptyRelevantSet);
  CHECK(reciprocalRank(std::vector<uint64_t>{x, y, A}, {A}) == doctest::Approx(1.0 / 3));

  std::mt19937_64 rng(2);
  for (int t = 0; t < 200; ++t) {
    std::vector<uint64_t> ranked(30);
    for (size_t i = 0; i < ranked.size(); ++i) ranked[i] = i;
    std::shuffle(ranked.begin(), ranked.end(), rng);
    ranked.resize(1 + rng() % 30);
    std::set<uint64_t> rel;
    for (int i = 0; i < 1 + int(rng() % 10); ++i) rel.insert(rng() % 40);
    double ap = averagePrecision(ranked, rel);
    CHECK(ap == doctest::Approx(apOracle(ranked, rel)));
    CHECK(ap >= 0.0);
    CHECK(ap <= 1.0);
  }
}

TEST_CASE("evaluate: oracle, random baseline, MRR") {
  auto corpus = buildCorpus(2000, 42, 16);
  auto qs = buildQueries(corpus, 7);
  auto oracle = evaluate(qs, oracleSystem(), "oracle");
  CHECK(oracle.map == doctest::Approx(1.0));
  CHECK(oracle.mrr == 1.0);

  // One-attribute predicates give prevalences far from zero.
  std::vector<BenchQuery> attr;
  for (int s = 0; s < 3; ++s) {
    BenchQuery q{"shape " + std::to_string(s), {}, Hardness::Simple};
    for (auto& li : corpus)
      if (int(li.scene.shape) == s) q.relevant.insert(li.imageId);
    attr.push_back(q);
  }
  for (int c = 0; c < 8; ++c) {
    BenchQuery q{"color " + std::to_string(c), {}, Hardness::Simple};
    for (auto& li : corpus)
      if (int(li.scene.shapeColor) == c) q.relevant.insert(li.imageId);
    attr.push_back(q);
  }
  for (int c = 0; c < 8; ++c) {
    BenchQuery q{"bg " + std::to_string(c), {}, Hardness::Simple};
    for (auto& li : corpus)
      if (int(li.scene.background) == c) q.relevant.insert(li.imageId);
    attr.push_back(q);
  }
  for (int p = 0; p < 3; ++p) {
    BenchQuery q{"position " + std::to_string(p), {}, Hardness::Simple};
    for (auto& li : corpus)
      if (int(li.scene.position) == p) q.relevant.insert(li.imageId);
    attr.push_back(q);
  }
  attr.erase(attr.begin() + 1, attr.begin() + 3);  // 20 queries
  double prevalence = 0;
  for (auto& q : attr) prevalence += double(q.relevant.size()) / 2000.0;
  prevalence /= double(attr.size());
  auto random = evaluate(attr, randomSystem(corpus, 5), "random", corpus.size());
  CHECK(std::abs(random.map - prevalence) <= 0.05);
}

TEST_CASE("runQuery surfaces red circles") {
  // 190 corpus scenes without red circles plus 10 renders of the prompt's
  // scene under distinct jitter seeds.
  std::vector<LabeledImage> corpus;
  for (auto& li : buildCorpus(400, 11)) {
    if (li.scene.shape == genhub::Shape::Circle && li.scene.shapeColor == genhub::Color::Red) continue;
    if (corpus.size() == 190) break;
    li.imageId = corpus.size() + 1;
    corpus.push_back(std::move(li));
  }
  std::set<uint64_t> circles;
  for (int i = 0; i < 10; ++i) {
    LabeledImage li;
    li.imageId = corpus.size() + 1;
    li.scene = {genhub::Shape::Circle, genhub::Color::Red, genhub::Color::White, genhub::Position::Center};
    li.renderSeed = 1000 + uint64_t(i);
    li.pixels = genhub::mockRender(li.scene, li.renderSeed, kCorpusSide);
    circles.insert(li.imageId);
    corpus.push_back(std::move(li));
  }
  needle::testing::TempDir tmp;
  BenchIndex index(corpus, tmp / "vectors");
  genhub::GeneratorHub hub(genhub::defaultGenerators());
  auto system = pipelineSystem(index, hub, {{"colorhist64", "grid64"}, 2, 512, 60, 50});
  auto ans = system({"a red circle on a white background", circles, Hardness::Hard});
  int hits = 0;
  for (size_t i = 0; i < 10 && i < ans.ranked.size(); ++i) hits += circles.count(ans.ranked[i]);
  CHECK(hits >= 7);
  // same query again: deterministic
  CHECK(system({"a red circle on a white background", circles, Hardness::Hard}).ranked == ans.ranked);
}

TEST_CASE("report formatting and determinism") {
  needle::testing::TempDir tmp;
  SuiteOptions opts;
  opts.corpusSize = 300;
  opts.resolution = 128;
  auto a = runStandardSuite(opts, tmp / "a");
  auto b = runStandardSuite(opts, tmp / "b");
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].map == b[i].map);
    CHECK(a[i].mrr == b[i].mrr);
    CHECK(a[i].map >= 0.0);
    CHECK(a[i].map <= 1.0);
  }
  auto text = formatReports(a);
  CHECK(text.rfind("# summary\n", 0) == 0);
  CHECK(text.find("ensemble m=2 colorhist64+grid64\t") != std::string::npos);
}
