#include "needle/catalog/catalog.hpp"

#include <sqlite3.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <json.hpp>
#include <set>
#include <sstream>

#include "needle/common/error.hpp"

namespace needle::catalog {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string_view indexStateName(IndexState s) {
  switch (s) {
    case IndexState::Pending: return "pending";
    case IndexState::Indexed: return "indexed";
    case IndexState::Failed: return "failed";
  }
  return "?";
}

namespace {

IndexState parseState(std::string_view s) {
  if (s == "pending") return IndexState::Pending;
  if (s == "indexed") return IndexState::Indexed;
  if (s == "failed") return IndexState::Failed;
  fail(Errc::ParseError, "unknown index state '" + std::string(s) + "'");
}

const char* kSchema = R"sql(
CREATE TABLE IF NOT EXISTS directories(
  id INTEGER PRIMARY KEY AUTOINCREMENT,
  path TEXT NOT NULL UNIQUE,
  enabled INTEGER NOT NULL DEFAULT 1,
  created_at INTEGER NOT NULL);
CREATE TABLE IF NOT EXISTS images(
  id INTEGER PRIMARY KEY AUTOINCREMENT,
  directory_id INTEGER NOT NULL REFERENCES directories(id) ON DELETE CASCADE,
  relative_path TEXT NOT NULL,
  content_hash INTEGER NOT NULL,
  byte_size INTEGER NOT NULL,
  mtime INTEGER NOT NULL,
  UNIQUE(directory_id, relative_path));
CREATE TABLE IF NOT EXISTS embedders(name TEXT PRIMARY KEY);
CREATE TABLE IF NOT EXISTS index_state(
  image_id INTEGER NOT NULL REFERENCES images(id) ON DELETE CASCADE,
  embedder TEXT NOT NULL REFERENCES embedders(name) ON DELETE CASCADE,
  state INTEGER NOT NULL,
  PRIMARY KEY(image_id, embedder));
CREATE INDEX IF NOT EXISTS index_state_by_embedder ON index_state(embedder, state, image_id);
)sql";

class Stmt {
 public:
  Stmt(sqlite3* db, const std::string& sql) : db_(db) {
    if (sqlite3_prepare_v2(db, sql.c_str(), -1, &st_, nullptr) != SQLITE_OK) {
      fail(Errc::Io, std::string("sqlite prepare: ") + sqlite3_errmsg(db));
    }
  }
  ~Stmt() { sqlite3_finalize(st_); }
  Stmt(const Stmt&) = delete;
  Stmt& operator=(const Stmt&) = delete;

  Stmt& bind(int i, int64_t v) {
    sqlite3_bind_int64(st_, i, v);
    return *this;
  }
  Stmt& bind(int i, const std::string& v) {
    sqlite3_bind_text(st_, i, v.data(), static_cast<int>(v.size()), SQLITE_TRANSIENT);
    return *this;
  }

  // True while a row is available.
  bool step() {
    int rc = sqlite3_step(st_);
    if (rc == SQLITE_ROW) return true;
    if (rc == SQLITE_DONE) return false;
    fail(Errc::Io, std::string("sqlite step: ") + sqlite3_errmsg(db_));
  }
  void run() {
    while (step()) {
    }
  }

  void reset() {
    sqlite3_reset(st_);
    sqlite3_clear_bindings(st_);
  }

  int64_t i64(int col) const { return sqlite3_column_int64(st_, col); }
  std::string text(int col) const {
    auto p = reinterpret_cast<const char*>(sqlite3_column_text(st_, col));
    return p ? std::string(p, static_cast<size_t>(sqlite3_column_bytes(st_, col))) : std::string();
  }

 private:
  sqlite3* db_;
  sqlite3_stmt* st_ = nullptr;
};

class Tx {
 public:
  explicit Tx(sqlite3* db) : db_(db) { sqlite3_exec(db_, "BEGIN IMMEDIATE", nullptr, nullptr, nullptr); }
  ~Tx() {
    if (!done_) sqlite3_exec(db_, "ROLLBACK", nullptr, nullptr, nullptr);
  }
  void commit() {
    char* msg = nullptr;
    if (sqlite3_exec(db_, "COMMIT", nullptr, nullptr, &msg) != SQLITE_OK) {
      std::string m = msg ? msg : "?";
      sqlite3_free(msg);
      fail(Errc::Io, "sqlite commit: " + m);
    }
    done_ = true;
  }

 private:
  sqlite3* db_;
  bool done_ = false;
};

int64_t nowMs() {
  using namespace std::chrono;
  return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

const char* kDirSelect =
    "SELECT d.id, d.path, d.enabled, d.created_at,"
    " (SELECT COUNT(*) FROM images i WHERE i.directory_id = d.id) FROM directories d";

DirectoryEntry readDir(const Stmt& s) {
  return DirectoryEntry{s.i64(0), s.text(1), s.i64(2) != 0, s.i64(3), static_cast<uint64_t>(s.i64(4))};
}

}  // namespace

Catalog::Catalog(const fs::path& file) {
  if (file != ":memory:" && file.has_parent_path()) fs::create_directories(file.parent_path());
  if (sqlite3_open_v2(file.c_str(), &db_, SQLITE_OPEN_READWRITE | SQLITE_OPEN_CREATE | SQLITE_OPEN_NOMUTEX,
                      nullptr) != SQLITE_OK) {
    std::string msg = db_ ? sqlite3_errmsg(db_) : "out of memory";
    sqlite3_close(db_);
    db_ = nullptr;
    fail(Errc::Io, "cannot open catalog " + file.string() + ": " + msg);
  }
  sqlite3_busy_timeout(db_, 5000);
  exec("PRAGMA foreign_keys = ON");
  if (file != ":memory:") {
    exec("PRAGMA journal_mode = WAL");
    exec("PRAGMA synchronous = NORMAL");
  }
  exec(kSchema);
}

Catalog::~Catalog() { sqlite3_close(db_); }

void Catalog::exec(const char* sql) const {
  char* msg = nullptr;
  if (sqlite3_exec(db_, sql, nullptr, nullptr, &msg) != SQLITE_OK) {
    std::string m = msg ? msg : "?";
    sqlite3_free(msg);
    fail(Errc::Io, "sqlite: " + m);
  }
}

DirectoryEntry Catalog::registerDirectory(const fs::path& path) {
  std::error_code ec;
  auto st = fs::status(path, ec);
  if (ec || !fs::exists(st)) {
    if (ec == std::errc::permission_denied) fail(Errc::PermissionDenied, path.string());
    fail(Errc::PathNotFound, path.string());
  }
  if (!fs::is_directory(st)) fail(Errc::NotADirectory, path.string());
  auto canon = fs::canonical(path, ec);
  if (ec) fail(ec == std::errc::permission_denied ? Errc::PermissionDenied : Errc::PathNotFound, path.string());
  if (::access(canon.c_str(), R_OK | X_OK) != 0) fail(Errc::PermissionDenied, canon.string());

  std::lock_guard lock(mu_);
  Tx tx(db_);
  {
    Stmt ins(db_, "INSERT OR IGNORE INTO directories(path, enabled, created_at) VALUES(?, 1, ?)");
    ins.bind(1, canon.string()).bind(2, nowMs()).run();
  }
  Stmt q(db_, std::string(kDirSelect) + " WHERE d.path = ?");
  q.bind(1, canon.string());
  q.step();
  auto entry = readDir(q);
  tx.commit();
  return entry;
}

std::optional<DirectoryEntry> Catalog::directory(DirectoryId id) const {
  std::lock_guard lock(mu_);
  Stmt q(db_, std::string(kDirSelect) + " WHERE d.id = ?");
  q.bind(1, id);
  if (!q.step()) return std::nullopt;
  return readDir(q);
}

std::optional<DirectoryEntry> Catalog::directoryByPath(const fs::path& canonicalPath) const {
  std::lock_guard lock(mu_);
  Stmt q(db_, std::string(kDirSelect) + " WHERE d.path = ?");
  q.bind(1, canonicalPath.string());
  if (!q.step()) return std::nullopt;
  return readDir(q);
}

std::vector<DirectoryEntry> Catalog::directories() const {
  std::lock_guard lock(mu_);
  Stmt q(db_, std::string(kDirSelect) + " ORDER BY d.id");
  std::vector<DirectoryEntry> out;
  while (q.step()) out.push_back(readDir(q));
  return out;
}

void Catalog::setDirectoryEnabled(DirectoryId id, bool enabled) {
  std::lock_guard lock(mu_);
  Stmt q(db_, "UPDATE directories SET enabled = ? WHERE id = ?");
  q.bind(1, enabled ? 1 : 0).bind(2, id).run();
  if (sqlite3_changes(db_) == 0) {
    Stmt e(db_, "SELECT 1 FROM directories WHERE id = ?");
    e.bind(1, id);
    if (!e.step()) fail(Errc::UnknownDirectory, std::to_string(id));
  }
}

void Catalog::removeDirectory(DirectoryId id) {
  std::lock_guard lock(mu_);
  Stmt q(db_, "DELETE FROM directories WHERE id = ?");
  q.bind(1, id).run();
}

void Catalog::setEmbedders(const std::vector<std::string>& names) {
  std::set<std::string> wanted(names.begin(), names.end());
  std::lock_guard lock(mu_);
  Tx tx(db_);
  std::set<std::string> current;
  {
    Stmt q(db_, "SELECT name FROM embedders");
    while (q.step()) current.insert(q.text(0));
  }
  for (const auto& name : current) {
    if (wanted.count(name)) continue;
    Stmt d(db_, "DELETE FROM embedders WHERE name = ?");
    d.bind(1, name).run();
  }
  for (const auto& name : wanted) {
    if (current.count(name)) continue;
    Stmt i(db_, "INSERT INTO embedders(name) VALUES(?)");
    i.bind(1, name).run();
    Stmt s(db_, "INSERT INTO index_state(image_id, embedder, state) SELECT id, ?, 0 FROM images");
    s.bind(1, name).run();
  }
  tx.commit();
}

std::vector<std::string> Catalog::embedders() const {
  std::lock_guard lock(mu_);
  Stmt q(db_, "SELECT name FROM embedders ORDER BY name");
  std::vector<std::string> out;
  while (q.step()) out.push_back(q.text(0));
  return out;
}

ImageRecord Catalog::upsertImage(const ImageRecord& record) {
  std::lock_guard lock(mu_);
  Tx tx(db_);
  {
    Stmt d(db_, "SELECT 1 FROM directories WHERE id = ?");
    d.bind(1, record.directoryId);
    if (!d.step()) fail(Errc::UnknownDirectory, std::to_string(record.directoryId));
  }
  int64_t id = 0;
  bool exists = false;
  uint64_t oldHash = 0;
  {
    Stmt q(db_, "SELECT id, content_hash FROM images WHERE directory_id = ? AND relative_path = ?");
    q.bind(1, record.directoryId).bind(2, record.relativePath);
    if (q.step()) {
      exists = true;
      id = q.i64(0);
      oldHash = static_cast<uint64_t>(q.i64(1));
    }
  }
  if (!exists) {
    Stmt i(db_,
           "INSERT INTO images(directory_id, relative_path, content_hash, byte_size, mtime)"
           " VALUES(?, ?, ?, ?, ?)");
    i.bind(1, record.directoryId)
        .bind(2, record.relativePath)
        .bind(3, static_cast<int64_t>(record.contentHash))
        .bind(4, static_cast<int64_t>(record.byteSize))
        .bind(5, record.mtime)
        .run();
    id = sqlite3_last_insert_rowid(db_);
    Stmt s(db_, "INSERT INTO index_state(image_id, embedder, state) SELECT ?, name, 0 FROM embedders");
    s.bind(1, id).run();
  } else {
    Stmt u(db_, "UPDATE images SET content_hash = ?, byte_size = ?, mtime = ? WHERE id = ?");
    u.bind(1, static_cast<int64_t>(record.contentHash))
        .bind(2, static_cast<int64_t>(record.byteSize))
        .bind(3, record.mtime)
        .bind(4, id)
        .run();
    if (oldHash != record.contentHash) {
      Stmt d(db_, "DELETE FROM index_state WHERE image_id = ?");
      d.bind(1, id).run();
      Stmt s(db_, "INSERT INTO index_state(image_id, embedder, state) SELECT ?, name, 0 FROM embedders");
      s.bind(1, id).run();
    }
  }
  tx.commit();
  auto out = queryImages("i.id = ?", {id});
  return out.front();
}

std::vector<ImageRecord> Catalog::queryImages(const std::string& where, const std::vector<int64_t>& args,
                                              const std::string& tail) const {
  std::string sql =
      "SELECT i.id, i.directory_id, i.relative_path, i.content_hash, i.byte_size, i.mtime FROM images i";
  if (!where.empty()) sql += " WHERE " + where;
  sql += tail.empty() ? " ORDER BY i.id" : " " + tail;
  Stmt q(db_, sql);
  for (size_t k = 0; k < args.size(); ++k) q.bind(static_cast<int>(k + 1), args[k]);
  std::vector<ImageRecord> out;
  while (q.step()) {
    ImageRecord r;
    r.id = q.i64(0);
    r.directoryId = q.i64(1);
    r.relativePath = q.text(2);
    r.contentHash = static_cast<uint64_t>(q.i64(3));
    r.byteSize = static_cast<uint64_t>(q.i64(4));
    r.mtime = q.i64(5);
    out.push_back(std::move(r));
  }
  loadStates(out);
  return out;
}

void Catalog::loadStates(std::vector<ImageRecord>& records) const {
  Stmt q(db_, "SELECT embedder, state FROM index_state WHERE image_id = ?");
  for (auto& r : records) {
    q.bind(1, r.id);
    while (q.step()) r.indexState[q.text(0)] = static_cast<IndexState>(q.i64(1));
    q.reset();
  }
}

std::optional<ImageRecord> Catalog::image(ImageId id) const {
  std::lock_guard lock(mu_);
  auto v = queryImages("i.id = ?", {id});
  if (v.empty()) return std::nullopt;
  return v.front();
}

std::optional<ImageRecord> Catalog::imageByPath(DirectoryId dir, const std::string& relativePath) const {
  std::lock_guard lock(mu_);
  int64_t id = 0;
  {
    Stmt q(db_, "SELECT id FROM images WHERE directory_id = ? AND relative_path = ?");
    q.bind(1, dir).bind(2, relativePath);
    if (!q.step()) return std::nullopt;
    id = q.i64(0);
  }
  return queryImages("i.id = ?", {id}).front();
}

std::vector<ImageRecord> Catalog::images(DirectoryId dir) const {
  std::lock_guard lock(mu_);
  return queryImages("i.directory_id = ?", {dir});
}

std::vector<ImageRecord> Catalog::allImages() const {
  std::lock_guard lock(mu_);
  return queryImages("", {});
}

void Catalog::removeImage(ImageId id) {
  std::lock_guard lock(mu_);
  Stmt q(db_, "DELETE FROM images WHERE id = ?");
  q.bind(1, id).run();
}

std::vector<ImageRecord> Catalog::listPending(const std::string& embedder, size_t limit,
                                              std::optional<DirectoryId> dir) const {
  std::lock_guard lock(mu_);
  {
    Stmt e(db_, "SELECT 1 FROM embedders WHERE name = ?");
    e.bind(1, embedder);
    if (!e.step()) fail(Errc::UnknownEmbedder, embedder);
  }
  if (limit == 0) return {};
  std::vector<int64_t> ids;
  {
    std::string sql = "SELECT s.image_id FROM index_state s";
    if (dir) sql += " JOIN images i ON i.id = s.image_id";
    sql += " WHERE s.embedder = ? AND s.state = 0";
    if (dir) sql += " AND i.directory_id = ?";
    sql += " ORDER BY s.image_id LIMIT ?";
    Stmt q(db_, sql);
    int k = 1;
    q.bind(k++, embedder);
    if (dir) q.bind(k++, *dir);
    q.bind(k, static_cast<int64_t>(limit));
    while (q.step()) ids.push_back(q.i64(0));
  }
  std::vector<ImageRecord> out;
  for (auto id : ids) {
    auto v = queryImages("i.id = ?", {id});
    if (!v.empty()) out.push_back(std::move(v.front()));
  }
  return out;
}

std::vector<ImageRecord> Catalog::listPendingAny(DirectoryId dir, size_t limit) const {
  std::lock_guard lock(mu_);
  if (limit == 0) return {};
  return queryImages(
      "i.directory_id = ? AND EXISTS (SELECT 1 FROM index_state s WHERE s.image_id = i.id AND s.state = 0)",
      {dir}, "ORDER BY i.id LIMIT " + std::to_string(limit));
}

void Catalog::setIndexState(ImageId id, const std::string& embedder, IndexState state) {
  std::lock_guard lock(mu_);
  {
    Stmt e(db_, "SELECT 1 FROM embedders WHERE name = ?");
    e.bind(1, embedder);
    if (!e.step()) fail(Errc::UnknownEmbedder, embedder);
  }
  Stmt u(db_, "UPDATE index_state SET state = ? WHERE image_id = ? AND embedder = ?");
  u.bind(1, static_cast<int64_t>(state)).bind(2, id).bind(3, embedder).run();
}

bool Catalog::setIndexStateIf(ImageId id, const std::string& embedder, IndexState state, uint64_t expectedHash) {
  std::lock_guard lock(mu_);
  {
    Stmt e(db_, "SELECT 1 FROM embedders WHERE name = ?");
    e.bind(1, embedder);
    if (!e.step()) fail(Errc::UnknownEmbedder, embedder);
  }
  Stmt u(db_,
         "UPDATE index_state SET state = ? WHERE image_id = ? AND embedder = ?"
         " AND image_id IN (SELECT id FROM images WHERE id = ? AND content_hash = ?)");
  u.bind(1, static_cast<int64_t>(state)).bind(2, id).bind(3, embedder).bind(4, id);
  u.bind(5, static_cast<int64_t>(expectedHash)).run();
  return sqlite3_changes(db_) > 0;
}

uint64_t Catalog::countInState(const std::string& embedder, IndexState state) const {
  std::lock_guard lock(mu_);
  Stmt q(db_, "SELECT COUNT(*) FROM index_state WHERE embedder = ? AND state = ?");
  q.bind(1, embedder).bind(2, static_cast<int64_t>(state));
  q.step();
  return static_cast<uint64_t>(q.i64(0));
}

Progress Catalog::progress(DirectoryId dir) const {
  std::lock_guard lock(mu_);
  Progress p;
  {
    Stmt q(db_, "SELECT COUNT(*) FROM images WHERE directory_id = ?");
    q.bind(1, dir);
    q.step();
    p.total = static_cast<uint64_t>(q.i64(0));
  }
  p.done = p.total;
  Stmt q(db_,
         "SELECT e.name, (SELECT COUNT(*) FROM index_state s JOIN images i ON i.id = s.image_id"
         " WHERE s.embedder = e.name AND s.state != 0 AND i.directory_id = ?) FROM embedders e");
  q.bind(1, dir);
  while (q.step()) p.done = std::min(p.done, static_cast<uint64_t>(q.i64(1)));
  return p;
}

std::string Catalog::exportText() const {
  std::ostringstream out;
  for (const auto& name : embedders()) {
    out << json{{"kind", "embedder"}, {"name", name}}.dump() << '\n';
  }
  for (const auto& d : directories()) {
    out << json{{"kind", "directory"},
                {"id", d.id},
                {"path", d.path},
                {"enabled", d.enabled},
                {"createdAt", d.createdAt}}
               .dump()
        << '\n';
  }
  for (const auto& r : allImages()) {
    json states = json::object();
    for (const auto& [k, v] : r.indexState) states[k] = std::string(indexStateName(v));
    out << json{{"kind", "image"},
                {"id", r.id},
                {"directoryId", r.directoryId},
                {"relativePath", r.relativePath},
                {"contentHash", r.contentHash},
                {"byteSize", r.byteSize},
                {"mtime", r.mtime},
                {"indexState", states}}
               .dump()
        << '\n';
  }
  return out.str();
}

void Catalog::importText(std::string_view text) {
  std::lock_guard lock(mu_);
  {
    Stmt q(db_, "SELECT (SELECT COUNT(*) FROM directories) + (SELECT COUNT(*) FROM embedders)");
    q.step();
    if (q.i64(0) != 0) fail(Errc::Conflict, "import requires an empty catalog");
  }
  Tx tx(db_);
  std::istringstream in{std::string(text)};
  std::string line;
  size_t lineNo = 0;
  while (std::getline(in, line)) {
    ++lineNo;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
      auto kind = j.at("kind").get<std::string>();
      if (kind == "embedder") {
        Stmt s(db_, "INSERT INTO embedders(name) VALUES(?)");
        s.bind(1, j.at("name").get<std::string>()).run();
      } else if (kind == "directory") {
        Stmt s(db_, "INSERT INTO directories(id, path, enabled, created_at) VALUES(?, ?, ?, ?)");
        s.bind(1, j.at("id").get<int64_t>())
            .bind(2, j.at("path").get<std::string>())
            .bind(3, j.at("enabled").get<bool>() ? 1 : 0)
            .bind(4, j.at("createdAt").get<int64_t>())
            .run();
      } else if (kind == "image") {
        auto id = j.at("id").get<int64_t>();
        Stmt s(db_,
               "INSERT INTO images(id, directory_id, relative_path, content_hash, byte_size, mtime)"
               " VALUES(?, ?, ?, ?, ?, ?)");
        s.bind(1, id)
            .bind(2, j.at("directoryId").get<int64_t>())
            .bind(3, j.at("relativePath").get<std::string>())
            .bind(4, static_cast<int64_t>(j.at("contentHash").get<uint64_t>()))
            .bind(5, static_cast<int64_t>(j.at("byteSize").get<uint64_t>()))
            .bind(6, j.at("mtime").get<int64_t>())
            .run();
        for (const auto& [k, v] : j.at("indexState").items()) {
          Stmt t(db_, "INSERT INTO index_state(image_id, embedder, state) VALUES(?, ?, ?)");
          t.bind(1, id).bind(2, k).bind(3, static_cast<int64_t>(parseState(v.get<std::string>()))).run();
        }
      } else {
        fail(Errc::ParseError, "unknown record kind '" + kind + "'");
      }
    } catch (const json::exception& e) {
      fail(Errc::ParseError, "line " + std::to_string(lineNo) + ": " + e.what());
    }
  }
  tx.commit();
}

}  // namespace needle::catalog
