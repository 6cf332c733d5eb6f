#include <filesystem>
#include <fstream>
#include <thread>

#include <unistd.h>

#include "doctest.h"
#include "expect_error.hpp"
#include "needle/catalog/catalog.hpp"
#include "temp_dir.hpp"

using namespace needle;
using namespace needle::catalog;
using needle::testing::codeOf;
using needle::testing::TempDir;
namespace fs = std::filesystem;

namespace {

ImageRecord rec(DirectoryId dir, std::string rel, uint64_t hash) {
  ImageRecord r;
  r.directoryId = dir;
  r.relativePath = std::move(rel);
  r.contentHash = hash;
  r.byteSize = 100;
  r.mtime = 1;
  return r;
}

}  // namespace

TEST_CASE("registerDirectory is idempotent and canonicalizes") {
  TempDir tmp;
  fs::create_directories(tmp / "data/imgs");
  fs::create_directories(tmp / "data/a");
  Catalog cat(":memory:");
  auto d1 = cat.registerDirectory(tmp / "data/imgs");
  auto d2 = cat.registerDirectory(tmp / "data/imgs");
  CHECK(d1.id == d2.id);
  CHECK(d1.enabled);
  auto d3 = cat.registerDirectory(tmp / "data/a/../imgs");
  CHECK(d3.id == d1.id);

  // canonicalization oracle: weakly_canonical of the symlink target
  fs::create_directory_symlink(tmp / "data/imgs", tmp / "link");
  auto d4 = cat.registerDirectory(tmp / "link");
  CHECK(d4.id == d1.id);
  CHECK(d1.path == fs::weakly_canonical(tmp.path() / "data" / "imgs").string());
  CHECK(fs::path(d1.path).is_absolute());
  CHECK(cat.directories().size() == 1);
}

TEST_CASE("registerDirectory errors") {
  TempDir tmp;
  Catalog cat(":memory:");
  CHECK(codeOf([&] { cat.registerDirectory("/nonexistent/needle/dir"); }) == Errc::PathNotFound);
  std::ofstream(tmp / "file.txt") << "x";
  CHECK(codeOf([&] { cat.registerDirectory(tmp / "file.txt"); }) == Errc::NotADirectory);
  if (::geteuid() != 0) {
    fs::create_directory(tmp / "locked");
    fs::permissions(tmp / "locked", fs::perms::none);
    CHECK(codeOf([&] { cat.registerDirectory(tmp / "locked"); }) == Errc::PermissionDenied);
    fs::permissions(tmp / "locked", fs::perms::owner_all);
  }
}

TEST_CASE("upsertImage state handling") {
  TempDir tmp;
  Catalog cat(":memory:");
  cat.setEmbedders({"a", "b"});
  auto dir = cat.registerDirectory(tmp.path());
  auto r = cat.upsertImage(rec(dir.id, "x.png", 1));
  REQUIRE(r.indexState.size() == 2);
  CHECK(r.indexState.at("a") == IndexState::Pending);
  cat.setIndexState(r.id, "a", IndexState::Indexed);
  cat.setIndexState(r.id, "b", IndexState::Failed);

  auto same = cat.upsertImage(rec(dir.id, "x.png", 1));
  CHECK(same.id == r.id);
  CHECK(same.indexState.at("a") == IndexState::Indexed);
  CHECK(same.indexState.at("b") == IndexState::Failed);

  auto changed = cat.upsertImage(rec(dir.id, "x.png", 2));
  CHECK(changed.id == r.id);
  CHECK(changed.contentHash == 2);
  for (auto& [name, st] : changed.indexState) CHECK(st == IndexState::Pending);

  cat.removeDirectory(dir.id);
  CHECK(codeOf([&] { cat.upsertImage(rec(dir.id, "y.png", 1)); }) == Errc::UnknownDirectory);
}

TEST_CASE("listPending order and limits") {
  TempDir tmp;
  Catalog cat(":memory:");
  cat.setEmbedders({"e"});
  CHECK(cat.listPending("e", 50).empty());
  CHECK(codeOf([&] { cat.listPending("nope", 5); }) == Errc::UnknownEmbedder);
  auto dir = cat.registerDirectory(tmp.path());
  for (int i = 0; i < 120; ++i) cat.upsertImage(rec(dir.id, "img" + std::to_string(i) + ".png", uint64_t(i)));
  auto a = cat.listPending("e", 50);
  auto b = cat.listPending("e", 50);
  REQUIRE(a.size() == 50);
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].id == b[i].id);
    if (i) CHECK(a[i - 1].id < a[i].id);
  }
  CHECK(a.front().relativePath == "img0.png");
  for (auto& r : cat.allImages()) cat.setIndexState(r.id, "e", IndexState::Indexed);
  CHECK(cat.listPending("e", 50).empty());
  CHECK(cat.countInState("e", IndexState::Indexed) == 120);
}

TEST_CASE("removeImage is idempotent and updates counts") {
  TempDir tmp;
  Catalog cat(":memory:");
  cat.setEmbedders({"e"});
  auto dir = cat.registerDirectory(tmp.path());
  auto x = cat.upsertImage(rec(dir.id, "x.png", 1));
  cat.upsertImage(rec(dir.id, "y.png", 2));
  CHECK(cat.directory(dir.id)->imageCount == 2);
  cat.removeImage(x.id);
  cat.removeImage(x.id);
  CHECK(cat.directory(dir.id)->imageCount == 1);
  for (auto& r : cat.listPending("e", 10)) CHECK(r.id != x.id);
  CHECK(!cat.image(x.id));
}

TEST_CASE("directory removal cascades") {
  TempDir tmp;
  Catalog cat(":memory:");
  cat.setEmbedders({"e"});
  auto dir = cat.registerDirectory(tmp.path());
  cat.upsertImage(rec(dir.id, "x.png", 1));
  cat.removeDirectory(dir.id);
  CHECK(cat.allImages().empty());
  CHECK(cat.listPending("e", 10).empty());
  cat.removeDirectory(dir.id);
}

TEST_CASE("embedder set changes") {
  TempDir tmp;
  Catalog cat(":memory:");
  cat.setEmbedders({"a"});
  auto dir = cat.registerDirectory(tmp.path());
  auto r = cat.upsertImage(rec(dir.id, "x.png", 1));
  cat.setIndexState(r.id, "a", IndexState::Indexed);
  cat.setEmbedders({"a", "b"});
  auto now = *cat.image(r.id);
  CHECK(now.indexState.at("a") == IndexState::Indexed);
  CHECK(now.indexState.at("b") == IndexState::Pending);
  cat.setEmbedders({"b"});
  CHECK(cat.image(r.id)->indexState.count("a") == 0);
  CHECK(cat.embedders() == std::vector<std::string>{"b"});
}

TEST_CASE("progress counts failed as done") {
  TempDir tmp;
  Catalog cat(":memory:");
  cat.setEmbedders({"a", "b"});
  auto dir = cat.registerDirectory(tmp.path());
  CHECK(cat.progress(dir.id).ratio() == 1.0);
  std::vector<ImageId> ids;
  for (int i = 0; i < 4; ++i) ids.push_back(cat.upsertImage(rec(dir.id, std::to_string(i), uint64_t(i))).id);
  CHECK(cat.progress(dir.id).done == 0);
  for (auto id : ids) cat.setIndexState(id, "a", IndexState::Indexed);
  CHECK(cat.progress(dir.id).done == 0);
  cat.setIndexState(ids[0], "b", IndexState::Indexed);
  cat.setIndexState(ids[1], "b", IndexState::Failed);
  auto p = cat.progress(dir.id);
  CHECK(p.total == 4);
  CHECK(p.done == 2);
  CHECK(p.ratio() == doctest::Approx(0.5));
}

TEST_CASE("persisted catalog round-trips to a byte-equal export") {
  TempDir tmp;
  fs::create_directories(tmp / "d1");
  fs::create_directories(tmp / "d2");
  std::string before;
  {
    Catalog cat(tmp / "db/catalog.db");
    cat.setEmbedders({"a", "b"});
    auto d1 = cat.registerDirectory(tmp / "d1");
    auto d2 = cat.registerDirectory(tmp / "d2");
    for (int i = 0; i < 30; ++i) cat.upsertImage(rec(i % 2 ? d1.id : d2.id, "f" + std::to_string(i), uint64_t(i)));
    auto all = cat.allImages();
    cat.removeImage(all[3].id);
    cat.setIndexState(all[5].id, "a", IndexState::Indexed);
    cat.upsertImage(rec(d1.id, "f1", 999));
    cat.setDirectoryEnabled(d2.id, false);
    before = cat.exportText();
  }
  Catalog reopened(tmp / "db/catalog.db");
  CHECK(reopened.exportText() == before);

  Catalog imported(":memory:");
  imported.importText(before);
  CHECK(imported.exportText() == before);
  CHECK(codeOf([&] { imported.importText(before); }) == Errc::Conflict);
  Catalog bad(":memory:");
  CHECK(codeOf([&] { bad.importText("{\"kind\":\"weird\"}\n"); }) == Errc::ParseError);
}

TEST_CASE("uniqueness under concurrent upserts") {
  TempDir tmp;
  Catalog cat(tmp / "c.db");
  cat.setEmbedders({"e"});
  auto dir = cat.registerDirectory(tmp.path());
  std::vector<std::thread> threads;
  for (int t = 0; t < 4; ++t) {
    threads.emplace_back([&, t] {
      for (int i = 0; i < 50; ++i) cat.upsertImage(rec(dir.id, "f" + std::to_string(i), uint64_t(t)));
    });
  }
  for (auto& th : threads) th.join();
  CHECK(cat.allImages().size() == 50);
  CHECK(cat.directory(dir.id)->imageCount == 50);
}
