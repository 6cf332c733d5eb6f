#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

struct sqlite3;

namespace needle::catalog {

using DirectoryId = int64_t;
using ImageId = int64_t;

enum class IndexState { Pending, Indexed, Failed };

std::string_view indexStateName(IndexState s);

struct DirectoryEntry {
  DirectoryId id = 0;
  std::string path;  // canonical, absolute
  bool enabled = true;
  int64_t createdAt = 0;  // ms since epoch
  uint64_t imageCount = 0;
};

struct ImageRecord {
  ImageId id = 0;
  DirectoryId directoryId = 0;
  std::string relativePath;
  uint64_t contentHash = 0;
  uint64_t byteSize = 0;
  int64_t mtime = 0;  // ns since epoch
  std::map<std::string, IndexState> indexState;
};

struct Progress {
  uint64_t total = 0;
  uint64_t done = 0;  // minimum over embedders of indexed + failed
  double ratio() const { return total == 0 ? 1.0 : double(done) / double(total); }
};

// Relational metadata store (SQLite, one file). Schema:
//
//   directories(id INTEGER PRIMARY KEY, path TEXT UNIQUE, enabled INTEGER,
//               created_at INTEGER)
//   images(id INTEGER PRIMARY KEY, directory_id INTEGER REFERENCES
//          directories ON DELETE CASCADE, relative_path TEXT, content_hash
//          INTEGER, byte_size INTEGER, mtime INTEGER,
//          UNIQUE(directory_id, relative_path))
//   index_state(image_id INTEGER REFERENCES images ON DELETE CASCADE,
//               embedder TEXT, state INTEGER, PRIMARY KEY(image_id, embedder))
//   embedders(name TEXT PRIMARY KEY)
//
// All methods are thread-safe; every mutation is a single transaction.
class Catalog {
 public:
  // ":memory:" opens a private in-memory catalog.
  explicit Catalog(const std::filesystem::path& file);
  ~Catalog();
  Catalog(const Catalog&) = delete;
  Catalog& operator=(const Catalog&) = delete;

  // Canonicalizes (symlinks, "..", separators). Re-registering an existing
  // canonical path returns the stored entry unchanged.
  DirectoryEntry registerDirectory(const std::filesystem::path& path);
  std::optional<DirectoryEntry> directory(DirectoryId id) const;
  std::optional<DirectoryEntry> directoryByPath(const std::filesystem::path& canonicalPath) const;
  std::vector<DirectoryEntry> directories() const;
  void setDirectoryEnabled(DirectoryId id, bool enabled);
  // Cascades to the directory's image records. Unknown ids are a no-op.
  void removeDirectory(DirectoryId id);

  // Declares the enabled embedder set. New names get a pending state on
  // every image; names no longer present lose their state entries.
  void setEmbedders(const std::vector<std::string>& names);
  std::vector<std::string> embedders() const;

  // Inserts, or updates hash/size/mtime of the record at (directoryId,
  // relativePath). A changed content hash resets every embedder to pending.
  ImageRecord upsertImage(const ImageRecord& record);
  std::optional<ImageRecord> image(ImageId id) const;
  std::optional<ImageRecord> imageByPath(DirectoryId dir, const std::string& relativePath) const;
  std::vector<ImageRecord> images(DirectoryId dir) const;
  std::vector<ImageRecord> allImages() const;
  void removeImage(ImageId id);

  // Oldest-registered first.
  std::vector<ImageRecord> listPending(const std::string& embedder, size_t limit,
                                       std::optional<DirectoryId> dir = std::nullopt) const;
  // Records pending for at least one embedder, oldest first.
  std::vector<ImageRecord> listPendingAny(DirectoryId dir, size_t limit) const;
  void setIndexState(ImageId id, const std::string& embedder, IndexState state);
  // Only applies while the record still carries `expectedHash`; false when
  // the record is gone or was re-hashed in the meantime.
  bool setIndexStateIf(ImageId id, const std::string& embedder, IndexState state, uint64_t expectedHash);
  uint64_t countInState(const std::string& embedder, IndexState state) const;

  Progress progress(DirectoryId dir) const;

  // Line-delimited JSON, one record per line, deterministic order.
  std::string exportText() const;
  // Loads an export into an empty catalog.
  void importText(std::string_view text);

 private:
  void exec(const char* sql) const;
  std::vector<ImageRecord> queryImages(const std::string& where, const std::vector<int64_t>& args,
                                       const std::string& tail = "") const;
  void loadStates(std::vector<ImageRecord>& records) const;

  mutable std::mutex mu_;
  sqlite3* db_ = nullptr;
};

}  // namespace needle::catalog
