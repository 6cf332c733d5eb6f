#include <algorithm>
#include <cmath>

#include "needle/common/error.hpp"
#include "needle/embedders/embedder.hpp"

namespace needle::embedders {

namespace {

inline double luma(const uint8_t* p) { return 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]; }

void requireValid(const ImagePixels& img) {
  if (!img.valid()) fail(Errc::InvalidArgument, "image has no pixels or a short buffer");
}

// Half-open pixel span covered by cell i of 8 along an axis of length n; never empty.
std::pair<uint32_t, uint32_t> cellSpan(uint32_t i, uint32_t n) {
  uint32_t lo = static_cast<uint32_t>(uint64_t{i} * n / 8);
  uint32_t hi = static_cast<uint32_t>(uint64_t{i + 1} * n / 8);
  if (hi <= lo) {
    lo = std::min(lo, n - 1);
    hi = lo + 1;
  }
  return {lo, hi};
}

}  // namespace

std::vector<float> colorHistogram64(const ImagePixels& img) {
  requireValid(img);
  std::vector<uint64_t> counts(64, 0);
  const uint8_t* p = img.data.data();
  const size_t n = img.pixelCount();
  for (size_t i = 0; i < n; ++i, p += 3) counts[(p[0] >> 6) * 16 + (p[1] >> 6) * 4 + (p[2] >> 6)]++;
  std::vector<float> out(64);
  for (size_t b = 0; b < 64; ++b) out[b] = static_cast<float>(double(counts[b]) / double(n));
  return out;
}

std::vector<float> gridIntensity64(const ImagePixels& img) {
  requireValid(img);
  std::vector<float> out(64);
  for (uint32_t r = 0; r < 8; ++r) {
    auto [y0, y1] = cellSpan(r, img.height);
    for (uint32_t c = 0; c < 8; ++c) {
      auto [x0, x1] = cellSpan(c, img.width);
      double sum = 0;
      for (uint32_t y = y0; y < y1; ++y)
        for (uint32_t x = x0; x < x1; ++x) sum += luma(img.at(x, y));
      out[r * 8 + c] = static_cast<float>(sum / (double(y1 - y0) * double(x1 - x0)) / 255.0);
    }
  }
  return out;
}

std::vector<float> edgeOrientHist36(const ImagePixels& img) {
  requireValid(img);
  std::vector<float> out(36, 0.0f);
  const uint32_t w = img.width, h = img.height;
  if (w < 3 || h < 3) return out;
  std::vector<double> L(size_t{w} * h);
  for (uint32_t y = 0; y < h; ++y)
    for (uint32_t x = 0; x < w; ++x) L[size_t{y} * w + x] = luma(img.at(x, y));
  auto at = [&](uint32_t x, uint32_t y) { return L[size_t{y} * w + x]; };

  std::vector<double> hist(36, 0.0);
  double total = 0;
  for (uint32_t y = 1; y + 1 < h; ++y) {
    for (uint32_t x = 1; x + 1 < w; ++x) {
      double gx = (at(x + 1, y - 1) + 2 * at(x + 1, y) + at(x + 1, y + 1)) -
                  (at(x - 1, y - 1) + 2 * at(x - 1, y) + at(x - 1, y + 1));
      double gy = (at(x - 1, y + 1) + 2 * at(x, y + 1) + at(x + 1, y + 1)) -
                  (at(x - 1, y - 1) + 2 * at(x, y - 1) + at(x + 1, y - 1));
      double mag = std::hypot(gx, gy);
      if (mag == 0) continue;
      double deg = std::atan2(gy, gx) * 180.0 / M_PI;  // y grows downward
      if (deg < 0) deg += 360.0;
      int bin = static_cast<int>(std::floor(deg / 10.0 + 1e-9)) % 36;
      hist[static_cast<size_t>(bin)] += mag;
      total += mag;
    }
  }
  if (total == 0) return out;
  for (size_t b = 0; b < 36; ++b) out[b] = static_cast<float>(hist[b] / total);
  return out;
}

std::vector<std::vector<float>> embedAllSerial(PixelFn fn, std::span<const ImagePixels> images) {
  std::vector<std::vector<float>> out;
  out.reserve(images.size());
  for (const auto& img : images) out.push_back(fn(img));
  return out;
}

std::vector<std::vector<float>> embedAllParallel(PixelFn fn, std::span<const ImagePixels> images) {
  for (const auto& img : images) requireValid(img);
  std::vector<std::vector<float>> out(images.size());
  const long n = static_cast<long>(images.size());
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < n; ++i) out[static_cast<size_t>(i)] = fn(images[static_cast<size_t>(i)]);
  return out;
}

std::vector<std::vector<float>> Embedder::embedBatch(std::span<const ImagePixels> images, size_t batchLimit) const {
  if (images.size() > batchLimit) {
    fail(Errc::BatchTooLarge, std::to_string(images.size()) + " images exceed the limit of " +
                                  std::to_string(batchLimit));
  }
  if (images.empty()) return {};
  auto out = run(images);
  if (out.size() != images.size()) {
    fail(Errc::EmbedderUnavailable, spec_.name + " returned " + std::to_string(out.size()) + " vectors for " +
                                        std::to_string(images.size()) + " images");
  }
  for (const auto& v : out) {
    if (v.size() != spec_.dim) {
      fail(Errc::DimensionMismatch, spec_.name + " emitted " + std::to_string(v.size()) + " components, expected " +
                                        std::to_string(spec_.dim));
    }
  }
  return out;
}

std::vector<float> Embedder::embed(const ImagePixels& img) const {
  return embedBatch(std::span<const ImagePixels>(&img, 1), 1).front();
}

namespace {

class BuiltinEmbedder final : public Embedder {
 public:
  BuiltinEmbedder(EmbedderSpec spec, PixelFn fn) : Embedder(std::move(spec)), fn_(fn) {}

 protected:
  std::vector<std::vector<float>> run(std::span<const ImagePixels> images) const override {
    return embedAllParallel(fn_, images);
  }

 private:
  PixelFn fn_;
};

struct BuiltinModel {
  const char* tag;
  uint32_t dim;
  PixelFn fn;
};

constexpr BuiltinModel kBuiltins[] = {
    {"builtin:colorhist64", 64, &colorHistogram64},
    {"builtin:grid64", 64, &gridIntensity64},
    {"builtin:edge36", 36, &edgeOrientHist36},
};

}  // namespace

std::unique_ptr<Embedder> makeEmbedder(const EmbedderSpec& spec) {
  if (spec.isRemote()) return makeRemoteEmbedder(spec);
  for (const auto& m : kBuiltins) {
    if (spec.model != m.tag) continue;
    if (spec.dim != m.dim) {
      fail(Errc::ParseError, "embedder " + spec.name + ": model " + spec.model + " emits " + std::to_string(m.dim) +
                                 " dimensions, not " + std::to_string(spec.dim));
    }
    return std::make_unique<BuiltinEmbedder>(spec, m.fn);
  }
  fail(Errc::ParseError, "embedder " + spec.name + ": unknown model '" + spec.model + "'");
}

std::vector<EmbedderSpec> builtinRegistry() {
  return {
      {"colorhist64", "builtin:colorhist64", 64, 1.0, true},
      {"grid64", "builtin:grid64", 64, 1.0, true},
      {"edge36", "builtin:edge36", 36, 1.0, true},
  };
}

}  // namespace needle::embedders
