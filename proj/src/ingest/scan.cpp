#include <sys/stat.h>

#include <algorithm>
#include <set>
#include <spdlog/spdlog.h>

#include "needle/common/error.hpp"
#include "needle/common/hash.hpp"
#include "needle/ingest/ingest.hpp"

namespace fs = std::filesystem;

namespace needle::ingest {

namespace {

using Inode = std::pair<dev_t, ino_t>;

struct Walk {
  const fs::path& root;
  std::set<Inode> seenDirs;
  std::set<Inode> seenFiles;
  std::vector<catalog::ImageRecord> out;
  catalog::DirectoryId dirId;

  void visit(const fs::path& dir, const fs::path& rel) {
    std::vector<std::string> names;
    std::error_code ec;
    for (fs::directory_iterator it(dir, ec), end; !ec && it != end; it.increment(ec)) {
      names.push_back(it->path().filename().string());
    }
    if (ec) {
      spdlog::warn("scan: cannot list {}: {}", dir.string(), ec.message());
      return;
    }
    std::sort(names.begin(), names.end());
    for (const auto& name : names) {
      fs::path full = dir / name;
      struct stat st {};
      if (::stat(full.c_str(), &st) != 0) continue;  // dangling link or raced delete
      Inode key{st.st_dev, st.st_ino};
      fs::path childRel = rel.empty() ? fs::path(name) : rel / name;
      if (S_ISDIR(st.st_mode)) {
        if (!seenDirs.insert(key).second) continue;
        visit(full, childRel);
      } else if (S_ISREG(st.st_mode) && isImagePath(full)) {
        if (!seenFiles.insert(key).second) continue;
        catalog::ImageRecord r;
        r.directoryId = dirId;
        r.relativePath = childRel.generic_string();
        try {
          r.contentHash = hashFile(full);
        } catch (const std::exception& e) {
          spdlog::warn("scan: cannot read {}: {}", full.string(), e.what());
          continue;
        }
        r.byteSize = static_cast<uint64_t>(st.st_size);
        r.mtime = int64_t{st.st_mtim.tv_sec} * 1'000'000'000 + st.st_mtim.tv_nsec;
        out.push_back(std::move(r));
      }
    }
  }
};

}  // namespace

bool isImagePath(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

std::vector<catalog::ImageRecord> scanDirectory(const catalog::DirectoryEntry& dir) {
  fs::path root(dir.path);
  struct stat st {};
  if (::stat(root.c_str(), &st) != 0 || !S_ISDIR(st.st_mode)) fail(Errc::PathNotFound, dir.path);
  Walk w{root, {}, {}, {}, dir.id};
  w.seenDirs.insert({st.st_dev, st.st_ino});
  w.visit(root, {});
  // Traversal is already sorted per component; sort the full strings so the
  // order is plain lexicographic on relativePath.
  std::sort(w.out.begin(), w.out.end(),
            [](const auto& a, const auto& b) { return a.relativePath < b.relativePath; });
  return std::move(w.out);
}

}  // namespace needle::ingest
