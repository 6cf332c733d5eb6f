#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "needle/embedders/embedder.hpp"
#include "needle/fusion/fusion.hpp"
#include "needle/genhub/scene.hpp"

namespace needle::vecstore {
class VectorStore;
}

namespace needle::synthbench {

inline constexpr uint32_t kCorpusSide = 96;
inline constexpr size_t kDefaultDepth = 100;

struct LabeledImage {
  uint64_t imageId = 0;
  genhub::SceneSpec scene;  // concrete shape, exact render parameters
  uint64_t renderSeed = 0;
  ImagePixels pixels;
};

// Scenes uniform over shape x color x background (!= color) x position.
// Image ids are 1..count.
std::vector<LabeledImage> buildCorpus(size_t count, uint64_t seed, uint32_t side = kCorpusSide);

enum class Hardness { Simple, Hard };
std::string_view hardnessName(Hardness h);

struct BenchQuery {
  std::string text;
  std::set<uint64_t> relevant;
  Hardness hardness = Hardness::Simple;
};

// Simple queries fix the colour pair and leave shape and position free
// ("a red shape on a blue background"); hard queries fix all four scene
// attributes. Every query has at least one relevant image; texts are distinct.
std::vector<BenchQuery> buildQueries(const std::vector<LabeledImage>& corpus, uint64_t seed, size_t simple = 20,
                                     size_t hard = 20);

// (1/|relevant|) * sum of precision@i over relevant hits at rank i <= depth.
// Throws EmptyRelevantSet.
double averagePrecision(std::span<const uint64_t> ranked, const std::set<uint64_t>& relevant,
                        size_t depth = kDefaultDepth);
// 1/rank of the first relevant item within depth, 0 when none.
double reciprocalRank(std::span<const uint64_t> ranked, const std::set<uint64_t>& relevant,
                      size_t depth = kDefaultDepth);

struct Answer {
  std::vector<uint64_t> ranked;
  std::optional<fusion::Timings> timings;
};
using RetrievalSystem = std::function<Answer(const BenchQuery&)>;

struct QueryScore {
  std::string text;
  Hardness hardness = Hardness::Simple;
  size_t relevantCount = 0;
  double ap = 0;
  double rr = 0;
};

struct LatencySummary {
  size_t samples = 0;
  double generateMs = 0;  // means
  double searchMs = 0;
  double fuseMs = 0;
  double totalMs = 0;
  double medianTotalMs = 0;
};

struct BenchReport {
  std::string system;
  std::vector<QueryScore> perQuery;
  double map = 0;
  double mapSimple = 0;
  double mapHard = 0;
  double mrr = 0;
  LatencySummary latency;
};

// Runs queries sequentially.
BenchReport evaluate(const std::vector<BenchQuery>& queries, const RetrievalSystem& system, std::string name,
                     size_t depth = kDefaultDepth);

// Tab-separated tables: one summary row per report, then one row per
// (report, query). Lines starting with '#' are comments.
std::string formatReports(const std::vector<BenchReport>& reports);

// A corpus indexed into a private vector store with the built-in embedders.
class BenchIndex {
 public:
  BenchIndex(const std::vector<LabeledImage>& corpus, const std::filesystem::path& dir,
             std::vector<embedders::EmbedderSpec> specs = embedders::builtinRegistry());
  ~BenchIndex();

  vecstore::VectorStore& store() { return *store_; }
  const embedders::Embedder& embedder(const std::string& name) const;
  std::vector<std::string> embedderNames() const;

 private:
  std::unique_ptr<vecstore::VectorStore> store_;
  std::vector<std::unique_ptr<embedders::Embedder>> embedders_;
};

struct PipelineConfig {
  std::vector<std::string> embedders;
  uint32_t m = 2;
  uint32_t resolution = 512;
  double kappa = 60;
  uint32_t k = kDefaultDepth;
};

// The full runQuery pipeline with a mock generator; the guide seed is a hash
// of the query text so reports are reproducible.
RetrievalSystem pipelineSystem(BenchIndex& index, genhub::GeneratorHub& hub, PipelineConfig cfg);

// Exact relevant set in ascending id order.
RetrievalSystem oracleSystem();
// Uniform random permutation of the corpus ids.
RetrievalSystem randomSystem(const std::vector<LabeledImage>& corpus, uint64_t seed);

struct SuiteOptions {
  size_t corpusSize = 2000;
  uint64_t corpusSeed = 42;
  uint64_t querySeed = 7;
  uint32_t resolution = 512;
};

// Builds corpus, queries and index, then evaluates the ensemble
// (m=2, colorhist64 + grid64) plus its ablations: each single embedder with
// one guide, one guide with both embedders, and two guides with all three.
std::vector<BenchReport> runStandardSuite(const SuiteOptions& opts, const std::filesystem::path& workDir);

}  // namespace needle::synthbench
