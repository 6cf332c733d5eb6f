#include <poll.h>
#include <sys/inotify.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <atomic>
#include <map>
#include <set>
#include <spdlog/spdlog.h>

#include "needle/common/error.hpp"
#include "needle/ingest/ingest.hpp"

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace needle::ingest {

namespace {

constexpr uint32_t kMask = IN_CLOSE_WRITE | IN_MODIFY | IN_CREATE | IN_MOVED_TO | IN_MOVED_FROM | IN_DELETE;

bool underOrEqual(const fs::path& p, const fs::path& root) {
  auto ps = p.native();
  auto rs = root.native();
  return ps == rs || (ps.size() > rs.size() && ps.compare(0, rs.size(), rs) == 0 && ps[rs.size()] == '/');
}

}  // namespace

struct DirectoryWatcher::Impl {
  std::chrono::milliseconds debounce;
  Callback cb;
  int fd = -1;

  std::mutex mu;
  std::condition_variable cv;
  std::map<int, fs::path> wdPath;
  std::map<fs::path, Clock::time_point> pending;  // path -> last event
  bool paused = false;
  bool stopping = false;
  std::atomic<bool> alive{false};

  std::thread reader;
  std::thread dispatcher;

  // Caller holds mu.
  void watchTree(const fs::path& root) {
    std::set<std::pair<dev_t, ino_t>> seen;
    std::vector<fs::path> stack{root};
    while (!stack.empty()) {
      fs::path dir = stack.back();
      stack.pop_back();
      struct stat st {};
      if (::stat(dir.c_str(), &st) != 0 || !S_ISDIR(st.st_mode)) continue;
      if (!seen.insert({st.st_dev, st.st_ino}).second) continue;
      int wd = inotify_add_watch(fd, dir.c_str(), kMask);
      if (wd < 0) {
        spdlog::warn("watch: cannot watch {}", dir.string());
        continue;
      }
      wdPath.emplace(wd, dir);  // keeps the first path for an inode reached twice
      std::error_code ec;
      for (fs::directory_iterator it(dir, ec), end; !ec && it != end; it.increment(ec)) {
        std::error_code ec2;
        if (it->is_directory(ec2)) stack.push_back(it->path());
      }
    }
  }

  // Caller holds mu.
  void unwatchTree(const fs::path& root) {
    for (auto it = wdPath.begin(); it != wdPath.end();) {
      if (underOrEqual(it->second, root)) {
        inotify_rm_watch(fd, it->first);
        it = wdPath.erase(it);
      } else {
        ++it;
      }
    }
  }

  void readLoop() {
    alignas(inotify_event) std::array<char, 64 * 1024> buf;
    while (true) {
      {
        std::lock_guard lock(mu);
        if (stopping) break;
      }
      pollfd p{fd, POLLIN, 0};
      int rc = ::poll(&p, 1, 100);
      if (rc <= 0) continue;
      ssize_t n = ::read(fd, buf.data(), buf.size());
      if (n <= 0) continue;
      std::lock_guard lock(mu);
      auto now = Clock::now();
      for (ssize_t off = 0; off < n;) {
        auto* ev = reinterpret_cast<const inotify_event*>(buf.data() + off);
        off += static_cast<ssize_t>(sizeof(inotify_event) + ev->len);
        if (ev->mask & IN_IGNORED) {
          wdPath.erase(ev->wd);
          continue;
        }
        auto it = wdPath.find(ev->wd);
        if (it == wdPath.end() || ev->len == 0) continue;
        fs::path full = it->second / ev->name;
        if (ev->mask & IN_ISDIR) {
          if (ev->mask & (IN_CREATE | IN_MOVED_TO)) watchTree(full);
          if (ev->mask & IN_MOVED_FROM) unwatchTree(full);
        }
        pending[full] = now;
      }
      cv.notify_all();
    }
  }

  void dispatchLoop() {
    std::unique_lock lock(mu);
    while (!stopping) {
      if (paused || pending.empty()) {
        cv.wait(lock);
        continue;
      }
      auto now = Clock::now();
      auto earliest = Clock::time_point::max();
      std::vector<fs::path> due;
      for (auto it = pending.begin(); it != pending.end();) {
        auto deadline = it->second + debounce;
        if (deadline <= now) {
          due.push_back(it->first);
          it = pending.erase(it);
        } else {
          earliest = std::min(earliest, deadline);
          ++it;
        }
      }
      if (due.empty()) {
        cv.wait_until(lock, earliest);
        continue;
      }
      lock.unlock();
      for (const auto& path : due) {
        std::error_code ec;
        bool exists = fs::exists(path, ec);
        try {
          cb(path, exists);
        } catch (const std::exception& e) {
          spdlog::error("watch: handling {} failed: {}", path.string(), e.what());
        }
      }
      lock.lock();
    }
  }
};

DirectoryWatcher::DirectoryWatcher(std::chrono::milliseconds debounce, Callback cb) : impl_(std::make_unique<Impl>()) {
  impl_->debounce = debounce;
  impl_->cb = std::move(cb);
  impl_->fd = inotify_init1(IN_NONBLOCK | IN_CLOEXEC);
  if (impl_->fd < 0) fail(Errc::Io, "inotify_init1 failed");
  impl_->alive = true;
  impl_->reader = std::thread([this] { impl_->readLoop(); });
  impl_->dispatcher = std::thread([this] { impl_->dispatchLoop(); });
}

DirectoryWatcher::~DirectoryWatcher() { stop(); }

void DirectoryWatcher::addTree(const fs::path& root) {
  std::lock_guard lock(impl_->mu);
  impl_->watchTree(root);
}

void DirectoryWatcher::removeTree(const fs::path& root) {
  std::lock_guard lock(impl_->mu);
  impl_->unwatchTree(root);
  for (auto it = impl_->pending.begin(); it != impl_->pending.end();) {
    it = underOrEqual(it->first, root) ? impl_->pending.erase(it) : std::next(it);
  }
}

void DirectoryWatcher::pause() {
  std::lock_guard lock(impl_->mu);
  impl_->paused = true;
}

void DirectoryWatcher::resume() {
  {
    std::lock_guard lock(impl_->mu);
    impl_->paused = false;
  }
  impl_->cv.notify_all();
}

void DirectoryWatcher::stop() {
  {
    std::lock_guard lock(impl_->mu);
    if (impl_->stopping) return;
    impl_->stopping = true;
  }
  impl_->cv.notify_all();
  if (impl_->reader.joinable()) impl_->reader.join();
  if (impl_->dispatcher.joinable()) impl_->dispatcher.join();
  ::close(impl_->fd);
  impl_->alive = false;
}

bool DirectoryWatcher::running() const { return impl_->alive.load(); }

}  // namespace needle::ingest
