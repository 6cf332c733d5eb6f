#include <httplib.h>

#include <atomic>
#include <cstdio>
#include <thread>

#include "doctest.h"
#include "expect_error.hpp"
#include "needle/api/backend.hpp"
#include "needle/api/server.hpp"
#include "needle/api/wire.hpp"
#include "needle/common/image.hpp"
#include "needle/common/version.hpp"
#include "needle/genhub/scene.hpp"
#include "service_fixture.hpp"
#include "temp_dir.hpp"

using namespace needle;
using namespace needle::api;
using namespace std::chrono_literals;
using needle::testing::TempDir;
using needle::testing::Service;
using needle::testing::mock;
using needle::testing::writeScenes;
namespace fs = std::filesystem;

TEST_CASE("health, version and a fresh status") {
  Service svc;
  auto h = svc.http->Get("/v1/health");
  REQUIRE(h);
  CHECK(h->status == 200);
  CHECK(h->body == "ok");

  auto [vs, v] = svc.get("/v1/version");
  CHECK(vs == 200);
  CHECK(SemVer::parse(v["backend"]));
  CHECK(SemVer::parse(v["ui"]));

  auto [ss, st] = svc.get("/v1/status");
  CHECK(ss == 200);
  CHECK(st["apiHealthy"] == true);
  CHECK(st["directories"].empty());
  CHECK(st["mode"] == "fast");
  CHECK(st["embedders"] == json::array({"colorhist64", "grid64"}));
  for (auto& [name, state] : st["services"].items()) CHECK_MESSAGE(state == "up", name);
  CHECK(st["generators"].size() == 1);

  svc.backend->vectorStore().stopFlushThread();
  auto [_, after] = svc.get("/v1/status");
  CHECK(after["services"]["vecstore"] == "down");

  auto [ns, nf] = svc.get("/v1/nothing-here");
  CHECK(ns == 404);
  CHECK(nf["error"]["code"] == "NotFound");
}

TEST_CASE("directory lifecycle over HTTP") {
  Service svc;
  fs::path imgs = svc.tmp / "imgs";
  writeScenes(imgs, 20);

  auto [s1, d] = svc.post("/v1/directories", {{"path", imgs.string()}});
  CHECK(s1 == 202);
  CHECK(d["path"] == fs::canonical(imgs).string());
  CHECK(d["imageCount"] == 20);
  int64_t id = d["id"];

  double progress = 0;
  for (int i = 0; i < 500 && progress < 1.0; ++i) {
    auto [s, list] = svc.get("/v1/directories");
    REQUIRE(s == 200);
    REQUIRE(list["directories"].size() == 1);
    double p = list["directories"][0]["progress"];
    CHECK(p >= progress);  // never goes backwards
    progress = p;
    std::this_thread::sleep_for(20ms);
  }
  CHECK(progress == 1.0);

  auto [s2, dup] = svc.post("/v1/directories", {{"path", (imgs / ".").string()}});
  CHECK(s2 == 409);
  CHECK(dup["error"]["code"] == "Conflict");

  auto [s3, bad] = svc.post("/v1/directories", {{"path", (svc.tmp / "nope").string()}});
  CHECK(s3 == 400);
  CHECK(bad["error"]["code"] == "PathNotFound");
  auto [s3b, _b] = svc.post("/v1/directories", {{"pathx", 1}});
  CHECK(s3b == 400);

  auto [s4, off] = svc.patch("/v1/directories/" + std::to_string(id), {{"enabled", false}});
  CHECK(s4 == 200);
  CHECK(off["enabled"] == false);
  auto [s4b, _c] = svc.patch("/v1/directories/" + std::to_string(id), {{"enabled", "no"}});
  CHECK(s4b == 400);

  auto del = svc.http->Delete("/v1/directories/" + std::to_string(id));
  REQUIRE(del);
  CHECK(del->status == 204);
  auto [s5, gone] = svc.get("/v1/directories/" + std::to_string(id));
  CHECK(s5 == 404);
  CHECK(gone["error"]["code"] == "UnknownDirectory");
  auto again = svc.http->Delete("/v1/directories/" + std::to_string(id));
  CHECK(again->status == 404);
  for (auto name : svc.backend->vectorStore().names()) CHECK(svc.backend->vectorStore().collection(name).count() == 0);
}

TEST_CASE("query endpoint") {
  Service svc;
  auto [es, empty] = svc.post("/v1/query", {{"prompt", "a red circle on a white background"}, {"n", 10}});
  CHECK(es == 200);
  CHECK(empty["results"].empty());

  auto [bs, bad] = svc.post("/v1/query", {{"prompt", ""}, {"n", 5}});
  CHECK(bs == 400);
  CHECK(bad["error"]["code"] == "InvalidArgument");
  CHECK(svc.post("/v1/query", {{"prompt", "x"}, {"n", 0}}).first == 400);
  CHECK(svc.post("/v1/query", {{"prompt", "x"}, {"overrides", {{"resolution", "HUGE"}}}}).first == 400);
  CHECK(svc.post("/v1/query", {{"prompt", "x"}, {"overrides", {{"engines", {"nope"}}}}}).first == 400);
  auto raw = svc.http->Post("/v1/query", "{not json", "application/json");
  CHECK(raw->status == 400);

  fs::path imgs = svc.tmp / "imgs";
  writeScenes(imgs, 48);
  svc.post("/v1/directories", {{"path", imgs.string()}});
  REQUIRE(svc.backend->waitIndexed(60s));

  json req = {{"prompt", "a red circle on a white background"},
              {"n", 10},
              {"seed", 5},
              {"overrides", {{"m", 2}, {"resolution", "SMALL"}}}};
  auto [qs, q] = svc.post("/v1/query", req);
  REQUIRE(qs == 200);
  auto& results = q["results"];
  CHECK(results.size() == 10);
  for (size_t i = 1; i < results.size(); ++i) CHECK(results[i - 1]["score"] >= results[i]["score"]);
  for (auto& r : results) {
    CHECK(fs::exists(r["path"].get<std::string>()));
    auto img = svc.http->Get(r["url"].get<std::string>());
    REQUIRE(img);
    CHECK(img->status == 200);
    CHECK(img->get_header_value("Content-Type") == "image/png");
  }
  CHECK(q["plan"]["m"] == 2);
  CHECK(q["plan"]["resolution"] == 256);
  REQUIRE(q["guides"].size() == 2);
  CHECK(q["sources"].size() == 4);  // m x l with l = 2 in fast mode
  for (auto& g : q["guides"]) {
    auto img = svc.http->Get(g["url"].get<std::string>());
    REQUIRE(img);
    CHECK(img->status == 200);
    auto px = decodeImage({reinterpret_cast<const uint8_t*>(img->body.data()), img->body.size()});
    CHECK(px.width == 256);
  }
  CHECK(svc.get("/v1/images/g0000000000000000").first == 404);
  CHECK(svc.get("/v1/images/999999").first == 404);

  // Same seed, same answer; the wire carries scores at 9 significant digits.
  auto direct = svc.backend->query({req["prompt"], 10, 2, 256, {}, 5});
  REQUIRE(direct.result.results.size() == results.size());
  for (size_t i = 0; i < results.size(); ++i) {
    CHECK(results[i]["id"] == direct.result.results[i].id);
    double wire = results[i]["score"];
    char expect[32], got[32];
    std::snprintf(expect, sizeof expect, "%.9g", direct.result.results[i].score);
    std::snprintf(got, sizeof got, "%.9g", wire);
    CHECK(std::string(expect) == got);
    CHECK(wire == wireScore(direct.result.results[i].score));
    CHECK(json::parse(json(wire).dump()).get<double>() == wire);
  }
  auto& t = q["timings"];
  double parts = double(t["generateMs"]) + double(t["searchMs"]) + double(t["fuseMs"]);
  CHECK(parts <= double(t["totalMs"]) * 1.05);
  CHECK(parts >= double(t["totalMs"]) * 0.95);
}

TEST_CASE("generator fallback and failure causes") {
  Service svc({mock("alpha", 0, true), mock("beta", 1)});
  fs::path imgs = svc.tmp / "imgs";
  writeScenes(imgs, 12);
  svc.post("/v1/directories", {{"path", imgs.string()}});
  REQUIRE(svc.backend->waitIndexed(60s));

  auto [s, q] = svc.post("/v1/query", {{"prompt", "a blue square on a red background"}, {"n", 5}});
  REQUIRE(s == 200);
  for (auto& g : q["guides"]) CHECK(g["engine"] == "beta");

  auto [gs, gen] = svc.get("/v1/generators");
  CHECK(gen["engines"][0]["name"] == "alpha");
  CHECK(gen["engines"][0]["lastError"] != "");

  auto [ps, patched] = svc.patch("/v1/generators", {{"perEngine", {{"beta", {{"enabled", false}}}}}});
  REQUIRE(ps == 200);
  auto [fs1, failed] = svc.post("/v1/query", {{"prompt", "a blue square on a red background"}, {"n", 5}});
  CHECK(fs1 == 503);
  CHECK(failed["error"]["code"] == "AllEnginesFailed");
  REQUIRE(failed["error"]["causes"].size() == 1);
  CHECK(failed["error"]["causes"][0]["engine"] == "alpha");

  svc.patch("/v1/generators", {{"perEngine", {{"alpha", {{"enabled", false}}}}}});
  auto [ns, none] = svc.post("/v1/query", {{"prompt", "a blue square"}, {"n", 5}});
  CHECK(ns == 503);
  CHECK(none["error"]["code"] == "NoEnabledEngines");
  CHECK(none["error"]["causes"].size() == 2);
}

TEST_CASE("generator configuration edits") {
  Service svc({mock("A", 0), mock("B", 1)});
  auto [s0, g0] = svc.get("/v1/generators");
  std::string rev = g0["revision"];

  auto [s1, g1] = svc.patch("/v1/generators", {{"revision", rev}, {"orderedNames", {"B", "A"}}});
  REQUIRE(s1 == 200);
  CHECK(g1["engines"][0]["name"] == "B");
  CHECK(g1["engines"][0]["priority"] == 0);
  CHECK(g1["revision"] != rev);

  // Persisted.
  auto onDisk = genhub::loadGenerators(svc.tmp / "data/generators.json");
  for (auto& e : onDisk) CHECK(e.priority == (e.name == "B" ? 0 : 1));

  // Stale revision.
  auto [s2, e2] = svc.patch("/v1/generators", {{"revision", rev}, {"orderedNames", {"A", "B"}}});
  CHECK(s2 == 409);
  CHECK(e2["error"]["code"] == "Conflict");

  // Unknown name leaves everything as it was.
  auto before = svc.get("/v1/generators").second;
  CHECK(svc.patch("/v1/generators", {{"orderedNames", {"B", "Z"}}}).first == 400);
  CHECK(svc.patch("/v1/generators", {{"perEngine", {{"Z", {{"enabled", false}}}}}}).first == 400);
  CHECK(svc.patch("/v1/generators", {{"orderedNames", {"B"}}}).first == 400);
  CHECK(svc.patch("/v1/generators", {{"bogus", 1}}).first == 400);
  CHECK(svc.get("/v1/generators").second == before);

  // Replaying a request whose effect is already in place is harmless.
  std::string cur = before["revision"];
  CHECK(svc.patch("/v1/generators", {{"revision", cur}, {"orderedNames", {"B", "A"}}}).first == 200);
  CHECK(svc.patch("/v1/generators", {{"revision", cur}, {"orderedNames", {"B", "A"}}}).first == 200);

  // Two writers on one revision: exactly one wins.
  std::atomic<int> ok{0}, conflict{0};
  std::vector<std::thread> ts;
  for (int i = 0; i < 2; ++i) {
    ts.emplace_back([&, i] {
      httplib::Client c(svc.server->baseUrl());
      json body = {{"revision", cur}, {"perEngine", {{i == 0 ? "A" : "B", {{"enabled", false}}}}}};
      auto r = c.Patch("/v1/generators", body.dump(), "application/json");
      if (r && r->status == 200) ++ok;
      if (r && r->status == 409) ++conflict;
    });
  }
  for (auto& t : ts) t.join();
  CHECK(ok == 1);
  CHECK(conflict == 1);
}
