#include <httplib.h>

#include <atomic>
#include <cmath>
#include <json.hpp>
#include <map>
#include <numeric>
#include <random>
#include <thread>

#include "doctest.h"
#include "expect_error.hpp"
#include "needle/common/base64.hpp"
#include "needle/embedders/embedder.hpp"
#include "needle/vecstore/store.hpp"
#include "temp_dir.hpp"

using namespace needle;
using namespace needle::embedders;
using needle::testing::codeOf;
using needle::testing::TempDir;

namespace {

ImagePixels solid(uint32_t w, uint32_t h, uint8_t r, uint8_t g, uint8_t b) {
  ImagePixels img(w, h);
  for (uint32_t y = 0; y < h; ++y)
    for (uint32_t x = 0; x < w; ++x) {
      auto* p = img.at(x, y);
      p[0] = r, p[1] = g, p[2] = b;
    }
  return img;
}

ImagePixels noise(uint32_t w, uint32_t h, uint64_t seed) {
  std::mt19937_64 rng(seed);
  ImagePixels img(w, h);
  for (auto& b : img.data) b = static_cast<uint8_t>(rng() & 0xff);
  return img;
}

ImagePixels rotateCw(const ImagePixels& src) {
  ImagePixels out(src.height, src.width);
  for (uint32_t y = 0; y < src.height; ++y)
    for (uint32_t x = 0; x < src.width; ++x) {
      auto* d = out.at(src.height - 1 - y, x);
      const auto* s = src.at(x, y);
      d[0] = s[0], d[1] = s[1], d[2] = s[2];
    }
  return out;
}

// Sobel oracle written with explicit 3x3 kernels.
std::vector<double> sobelOracle(const ImagePixels& img) {
  const int KX[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
  const int KY[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};
  std::vector<double> hist(36, 0);
  double total = 0;
  auto lum = [&](int x, int y) {
    auto* p = img.at(uint32_t(x), uint32_t(y));
    return 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
  };
  for (int y = 1; y < int(img.height) - 1; ++y)
    for (int x = 1; x < int(img.width) - 1; ++x) {
      double gx = 0, gy = 0;
      for (int j = -1; j <= 1; ++j)
        for (int i = -1; i <= 1; ++i) {
          gx += KX[j + 1][i + 1] * lum(x + i, y + j);
          gy += KY[j + 1][i + 1] * lum(x + i, y + j);
        }
      double m = std::sqrt(gx * gx + gy * gy);
      if (m == 0) continue;
      double a = std::fmod(std::atan2(gy, gx) * 180 / M_PI + 360.0, 360.0);
      hist[size_t(int(std::floor(a / 10 + 1e-9)) % 36)] += m;
      total += m;
    }
  if (total > 0)
    for (auto& v : hist) v /= total;
  return hist;
}

}  // namespace

TEST_CASE("colorHistogram64 examples") {
  auto red = colorHistogram64(solid(10, 10, 255, 0, 0));
  CHECK(red[3 * 16] == 1.0f);
  CHECK(std::accumulate(red.begin(), red.end(), 0.0) == doctest::Approx(1.0));
  auto gray = colorHistogram64(solid(7, 5, 128, 128, 128));
  CHECK(gray[2 * 16 + 2 * 4 + 2] == 1.0f);

  ImagePixels half = solid(10, 10, 255, 0, 0);
  for (uint32_t y = 0; y < 10; ++y)
    for (uint32_t x = 5; x < 10; ++x) {
      auto* p = half.at(x, y);
      p[0] = 0, p[2] = 255;
    }
  auto h = colorHistogram64(half);
  CHECK(h[48] == doctest::Approx(0.5));
  CHECK(h[3] == doctest::Approx(0.5));

  // brute-force count oracle on noise
  auto img = noise(33, 17, 5);
  std::map<int, int> counts;
  for (size_t i = 0; i < img.pixelCount(); ++i) {
    int r = img.data[i * 3] / 64, g = img.data[i * 3 + 1] / 64, b = img.data[i * 3 + 2] / 64;
    counts[r * 16 + g * 4 + b]++;
  }
  auto v = colorHistogram64(img);
  for (int b = 0; b < 64; ++b) CHECK(v[size_t(b)] == doctest::Approx(counts[b] / double(img.pixelCount())));
}

TEST_CASE("gridIntensity64 examples") {
  for (float x : gridIntensity64(solid(16, 16, 0, 0, 0))) CHECK(x == 0.0f);
  for (float x : gridIntensity64(solid(16, 16, 255, 255, 255))) CHECK(x == doctest::Approx(1.0));
  ImagePixels split = solid(64, 40, 0, 0, 0);
  for (uint32_t y = 0; y < 40; ++y)
    for (uint32_t x = 0; x < 32; ++x) std::fill_n(split.at(x, y), 3, uint8_t(255));
  auto g = gridIntensity64(split);
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 8; ++c) CHECK(g[size_t(r * 8 + c)] == doctest::Approx(c < 4 ? 1.0 : 0.0));

  // per-cell mean oracle
  auto img = noise(80, 48, 9);
  auto v = gridIntensity64(img);
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 8; ++c) {
      double s = 0;
      for (int y = r * 6; y < r * 6 + 6; ++y)
        for (int x = c * 10; x < c * 10 + 10; ++x) {
          auto* p = img.at(uint32_t(x), uint32_t(y));
          s += (0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]) / 255.0;
        }
      CHECK(v[size_t(r * 8 + c)] == doctest::Approx(s / 60).epsilon(1e-6));
    }
}

TEST_CASE("edgeOrientHist36 examples") {
  for (float x : edgeOrientHist36(solid(20, 20, 40, 90, 200))) CHECK(x == 0.0f);

  ImagePixels step = solid(20, 20, 0, 0, 0);
  for (uint32_t y = 0; y < 20; ++y)
    for (uint32_t x = 10; x < 20; ++x) std::fill_n(step.at(x, y), 3, uint8_t(255));
  auto e = edgeOrientHist36(step);
  CHECK(e[0] + e[18] == doctest::Approx(1.0));
  CHECK(std::accumulate(e.begin(), e.end(), 0.0) == doctest::Approx(1.0));

  auto r = edgeOrientHist36(rotateCw(step));
  for (size_t b = 0; b < 36; ++b) CHECK(std::abs(r[(b + 9) % 36] - e[b]) <= 1e-6);

  auto img = noise(31, 23, 3);
  auto oracle = sobelOracle(img);
  auto got = edgeOrientHist36(img);
  for (size_t b = 0; b < 36; ++b) CHECK(got[b] == doctest::Approx(oracle[b]).epsilon(1e-5));
}

TEST_CASE("embedBatch contract") {
  auto emb = makeEmbedder(builtinRegistry()[0]);
  CHECK(emb->embedBatch({}).empty());
  std::vector<ImagePixels> imgs;
  for (int i = 0; i < 51; ++i) imgs.push_back(noise(12, 12, uint64_t(i)));
  CHECK(codeOf([&] { emb->embedBatch(imgs); }) == Errc::BatchTooLarge);
  imgs.resize(49);
  imgs.push_back(imgs[3]);
  for (const auto& spec : builtinRegistry()) {
    auto e = makeEmbedder(spec);
    auto out = e->embedBatch(imgs);
    REQUIRE(out.size() == 50);
    CHECK(out[49] == out[3]);
    for (size_t i = 0; i < imgs.size(); i += 7) CHECK(out[i] == e->embed(imgs[i]));
  }
}

TEST_CASE("parallel batch equals serial reference") {
  std::vector<ImagePixels> imgs;
  for (int i = 0; i < 24; ++i) imgs.push_back(noise(40 + uint32_t(i), 30, uint64_t(i)));
  for (PixelFn fn : {&colorHistogram64, &gridIntensity64, &edgeOrientHist36}) {
    CHECK(embedAllParallel(fn, imgs) == embedAllSerial(fn, imgs));
  }
}

TEST_CASE("registry parsing") {
  auto specs = parseRegistry(R"([
  {"name": "colorhist64", "model": "builtin:colorhist64", "dim": 64, "weight": 1.0, "enabled": true},
  {"name": "grid64", "model": "builtin:grid64", "dim": 64, "weight": 0.5, "enabled": false}
])");
  REQUIRE(specs.size() == 2);
  CHECK(specs[1].weight == 0.5);
  CHECK(!specs[1].enabled);
  CHECK(parseRegistry(dumpRegistry(specs)) == specs);

  auto errorOf = [](const std::string& text) {
    try {
      parseRegistry(text);
    } catch (const Error& e) {
      return std::make_pair(e.code(), e.detail());
    }
    return std::make_pair(Errc::Io, std::string());
  };
  auto dup = errorOf(R"([{"name":"eva","model":"remote:http://h:1/e","dim":8},
{"name":"eva","model":"remote:http://h:1/e","dim":8}])");
  CHECK(dup.first == Errc::DuplicateName);

  auto unknown = errorOf("[\n  {\"name\": \"a\",\n   \"model\": \"builtin:grid64\",\n   \"dims\": 64}\n]");
  CHECK(unknown.first == Errc::ParseError);
  CHECK(unknown.second == "embedders.json:4: field 'dims': unknown key");

  auto badDim = errorOf("[\n{\"name\":\"a\",\"model\":\"builtin:edge36\",\"dim\":64}]");
  CHECK(badDim.first == Errc::ParseError);
  CHECK(badDim.second.rfind("embedders.json:2: field 'dim':", 0) == 0);

  auto syntax = errorOf("[\n{\"name\": \"a\",\n\"dim\": }]");
  CHECK(syntax.first == Errc::ParseError);
  CHECK(syntax.second.rfind("embedders.json:3:", 0) == 0);

  CHECK(errorOf(R"([{"name":"a","model":"onnx:foo","dim":4}])").first == Errc::ParseError);
  CHECK(errorOf(R"([{"name":"a","model":"builtin:grid64","dim":64,"weight":-1}])").first == Errc::ParseError);
  CHECK(errorOf(R"({"name":"a"})").first == Errc::ParseError);
}

TEST_CASE("ensureCollections keeps registry and store coherent") {
  TempDir tmp;
  vecstore::VectorStore store(tmp / "vectors");
  auto specs = builtinRegistry();
  specs[2].enabled = false;
  ensureCollections(specs, store);
  CHECK(store.names() == std::vector<std::string>{"colorhist64", "grid64"});
  CHECK(store.collection("grid64").dim() == 64);
  ensureCollections(specs, store);

  auto changed = specs;
  changed[0] = {"colorhist64", "remote:http://127.0.0.1:1/x", 128, 1.0, true};
  CHECK(codeOf([&] { ensureCollections(changed, store); }) == Errc::DimMismatchWithExistingCollection);
}

TEST_CASE("remote embedder over HTTP") {
  httplib::Server srv;
  std::atomic<int> inFlight{0}, peak{0};
  srv.Post("/embed", [&](const httplib::Request& req, httplib::Response& res) {
    int now = ++inFlight;
    int p = peak.load();
    while (now > p && !peak.compare_exchange_weak(p, now)) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(30));
    auto body = nlohmann::json::parse(req.body);
    nlohmann::json vecs = nlohmann::json::array();
    for (const auto& b64 : body["images"]) {
      auto img = decodeImage(base64Decode(b64.get<std::string>()));
      auto h = colorHistogram64(img);
      vecs.push_back(std::vector<float>(h.begin(), h.begin() + 4));
    }
    res.set_content(nlohmann::json{{"vectors", vecs}}.dump(), "application/json");
    --inFlight;
  });
  srv.Post("/broken", [](const httplib::Request&, httplib::Response& res) { res.status = 500; });
  int port = srv.bind_to_any_port("127.0.0.1");
  std::thread th([&] { srv.listen_after_bind(); });
  srv.wait_until_ready();

  auto url = "remote:http://127.0.0.1:" + std::to_string(port);
  auto emb = makeEmbedder({"r", url + "/embed", 4, 1.0, true});
  auto img = solid(8, 8, 255, 0, 0);
  auto v = emb->embed(img);
  CHECK(v == std::vector<float>{0, 0, 0, 0});

  std::vector<std::thread> callers;
  for (int i = 0; i < 6; ++i) callers.emplace_back([&] { emb->embed(img); });
  for (auto& c : callers) c.join();
  CHECK(peak.load() <= 2);
  CHECK(peak.load() >= 1);

  auto broken = makeEmbedder({"b", url + "/broken", 4, 1.0, true});
  CHECK(codeOf([&] { broken->embed(img); }) == Errc::EmbedderUnavailable);
  auto wrongDim = makeEmbedder({"w", url + "/embed", 5, 1.0, true});
  CHECK(codeOf([&] { wrongDim->embed(img); }) == Errc::DimensionMismatch);

  srv.stop();
  th.join();
}
