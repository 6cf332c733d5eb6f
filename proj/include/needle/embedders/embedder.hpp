#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "needle/common/image.hpp"

namespace needle::vecstore {
class VectorStore;
}

namespace needle::embedders {

inline constexpr size_t kDefaultBatchLimit = 50;

struct EmbedderSpec {
  std::string name;
  std::string model;  // builtin:colorhist64 | builtin:grid64 | builtin:edge36 | remote:<url>
  uint32_t dim = 0;
  double weight = 1.0;
  bool enabled = true;

  bool isRemote() const { return model.rfind("remote:", 0) == 0; }
  bool operator==(const EmbedderSpec&) const = default;
};

// Parses embedders.json content. `source` prefixes diagnostics, which take
// the form "<source>:<line>: field '<key>': <problem>".
std::vector<EmbedderSpec> parseRegistry(std::string_view text, const std::string& source = "embedders.json");
std::vector<EmbedderSpec> loadRegistry(const std::filesystem::path& path);
std::string dumpRegistry(const std::vector<EmbedderSpec>& specs);
void saveRegistry(const std::filesystem::path& path, const std::vector<EmbedderSpec>& specs);

// colorhist64, grid64, edge36 with weight 1.
std::vector<EmbedderSpec> builtinRegistry();

// Creates a collection for every enabled spec that lacks one.
void ensureCollections(const std::vector<EmbedderSpec>& specs, vecstore::VectorStore& store);

// Built-in pixel embedders.
std::vector<float> colorHistogram64(const ImagePixels& img);
std::vector<float> gridIntensity64(const ImagePixels& img);
std::vector<float> edgeOrientHist36(const ImagePixels& img);

class Embedder {
 public:
  explicit Embedder(EmbedderSpec spec) : spec_(std::move(spec)) {}
  virtual ~Embedder() = default;

  const EmbedderSpec& spec() const noexcept { return spec_; }

  // Positionally aligned with `images`. Throws BatchTooLarge when
  // images.size() > batchLimit.
  std::vector<std::vector<float>> embedBatch(std::span<const ImagePixels> images,
                                             size_t batchLimit = kDefaultBatchLimit) const;
  std::vector<float> embed(const ImagePixels& img) const;

 protected:
  virtual std::vector<std::vector<float>> run(std::span<const ImagePixels> images) const = 0;

 private:
  EmbedderSpec spec_;
};

using PixelFn = std::vector<float> (*)(const ImagePixels&);

// One thread per image under OpenMP, and the single-threaded reference.
std::vector<std::vector<float>> embedAllParallel(PixelFn fn, std::span<const ImagePixels> images);
std::vector<std::vector<float>> embedAllSerial(PixelFn fn, std::span<const ImagePixels> images);

// Throws ParseError for an unknown model tag or a dim the model cannot emit.
std::unique_ptr<Embedder> makeEmbedder(const EmbedderSpec& spec);

// Remote protocol: POST <url> {"images": [base64 PNG, ...]} answered by
// {"vectors": [[float, ...], ...]}. At most `maxInFlight` requests run at once.
struct RemoteOptions {
  int maxInFlight = 2;
  int timeoutMs = 30000;
};
std::unique_ptr<Embedder> makeRemoteEmbedder(const EmbedderSpec& spec, RemoteOptions opts = {});

}  // namespace needle::embedders
