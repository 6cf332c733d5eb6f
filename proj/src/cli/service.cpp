#include <fcntl.h>
#include <httplib.h>
#include <signal.h>
#include <spdlog/spdlog.h>
#include <sys/stat.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <deque>
#include <fstream>
#include <thread>

#include "internal.hpp"
#include "needle/api/backend.hpp"
#include "needle/api/server.hpp"
#include "needle/common/error.hpp"
#include "needle/common/version.hpp"

namespace fs = std::filesystem;
using namespace std::chrono_literals;

namespace needle::cli {

namespace {

constexpr auto kStartTimeout = 60s;
constexpr auto kStopTimeout = 30s;

fs::path servicePidPath(const Settings& s) { return s.dataDir / "needle.pid"; }
fs::path uiPidPath(const Settings& s) { return s.dataDir / "ui.pid"; }
fs::path logPath(const Settings& s) { return s.logDir() / "needle.log"; }

// kill(pid, 0) succeeds on zombies, so check the state letter as well.
bool alive(pid_t pid) {
  if (pid <= 0 || ::kill(pid, 0) != 0) return false;
  std::ifstream stat("/proc/" + std::to_string(pid) + "/stat");
  std::string line;
  if (!std::getline(stat, line)) return true;
  auto close = line.rfind(')');
  return close == std::string::npos || close + 2 >= line.size() || line[close + 2] != 'Z';
}

pid_t readPid(const fs::path& p) {
  std::ifstream in(p);
  long pid = 0;
  if (!(in >> pid)) return 0;
  return static_cast<pid_t>(pid);
}

void writePid(const fs::path& p) {
  fs::create_directories(p.parent_path());
  std::ofstream(p) << ::getpid() << "\n";
}

// Double fork so the daemon is reparented away from the CLI and never left a
// zombie. stdout and stderr append to the log.
void spawnDetached(const fs::path& exe, const std::vector<std::string>& args, const fs::path& log) {
  fs::create_directories(log.parent_path());
  std::vector<std::string> all{exe.string()};
  all.insert(all.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : all) argv.push_back(a.data());
  argv.push_back(nullptr);
  std::string logStr = log.string();
  std::string exeStr = exe.string();

  pid_t child = ::fork();
  if (child < 0) throw Failure("fork failed");
  if (child == 0) {
    ::setsid();
    pid_t grandchild = ::fork();
    if (grandchild != 0) ::_exit(grandchild < 0 ? 1 : 0);
    int devnull = ::open("/dev/null", O_RDONLY);
    int out = ::open(logStr.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
    if (devnull >= 0) ::dup2(devnull, 0);
    if (out >= 0) {
      ::dup2(out, 1);
      ::dup2(out, 2);
    }
    for (int fd = 3; fd < 1024; ++fd) ::close(fd);
    ::execv(exeStr.c_str(), argv.data());
    ::_exit(127);
  }
  int status = 0;
  ::waitpid(child, &status, 0);
}

std::string tail(const fs::path& p, size_t lines) {
  std::ifstream in(p);
  std::deque<std::string> last;
  std::string line;
  while (std::getline(in, line)) {
    last.push_back(line);
    if (last.size() > lines) last.pop_front();
  }
  std::string out;
  for (const auto& l : last) out += l + "\n";
  return out;
}

bool waitFor(const std::function<bool()>& pred, std::chrono::milliseconds timeout) {
  auto deadline = std::chrono::steady_clock::now() + timeout;
  while (std::chrono::steady_clock::now() < deadline) {
    if (pred()) return true;
    std::this_thread::sleep_for(100ms);
  }
  return pred();
}

// Blocks SIGTERM and SIGINT in this thread (and every thread created after)
// so sigwait below is the only receiver.
sigset_t blockStopSignals() {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGTERM);
  sigaddset(&set, SIGINT);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  return set;
}

int waitStopSignal(const sigset_t& set) {
  int sig = 0;
  sigwait(&set, &sig);
  return sig;
}

void report(Context& ctx, const json& doc, const std::string& text) {
  if (ctx.structured()) {
    ctx.out << doc.dump(2) << "\n";
  } else {
    ctx.out << text << "\n";
  }
}

int stopByPidFile(Context& ctx, const fs::path& pidFile, const std::string& what) {
  pid_t pid = readPid(pidFile);
  if (!alive(pid)) {
    std::error_code ec;
    fs::remove(pidFile, ec);
    report(ctx, {{what, "not running"}}, what + " is not running");
    return 0;
  }
  ::kill(pid, SIGTERM);
  if (!waitFor([&] { return !alive(pid); }, kStopTimeout)) {
    ::kill(pid, SIGKILL);
    waitFor([&] { return !alive(pid); }, 5s);
  }
  std::error_code ec;
  fs::remove(pidFile, ec);
  report(ctx, {{what, "stopped"}, {"pid", pid}}, what + " stopped (pid " + std::to_string(pid) + ")");
  return 0;
}

const char* kPlaceholderIndex = R"(<!doctype html>
<html lang="en">
<head><meta charset="utf-8"><title>needle</title></head>
<body>
<h1>needle</h1>
<p>The web UI bundle is not installed. Put the built assets in NEEDLE_UI_DIR or the data directory's
<code>ui/</code> folder. The API is proxied under <a href="/v1/status">/v1</a>.</p>
</body>
</html>
)";

}  // namespace

int serviceStart(Context& ctx) {
  ApiClient api(ctx.cfg.apiAddr, 5);
  if (api.healthy()) {
    report(ctx, {{"service", "already running"}, {"api", api.baseUrl()}},
           "already running at " + api.baseUrl());
    return 0;
  }
  auto s = Settings::fromEnv();
  auto log = logPath(s);
  spawnDetached(ctx.env.selfExe, {"--api", ctx.cfg.apiAddr.str(), "service", "run"}, log);
  if (!waitFor([&] { return api.healthy(); }, kStartTimeout)) {
    throw Failure("backend did not become healthy within " + std::to_string(kStartTimeout.count()) +
                  " s; last log lines:\n" + tail(log, 20));
  }
  report(ctx, {{"service", "started"}, {"api", api.baseUrl()}, {"log", log.string()}},
         "started, API at " + api.baseUrl() + " (log: " + log.string() + ")");
  return 0;
}

int serviceStop(Context& ctx) { return stopByPidFile(ctx, servicePidPath(Settings::fromEnv()), "service"); }

int serviceStatus(Context& ctx) {
  auto st = expectOk(ctx.api().get("/v1/status"));
  if (ctx.structured()) {
    ctx.out << st.dump(2) << "\n";
    return 0;
  }
  Table services({"SERVICE", "STATE"});
  for (auto it = st["services"].begin(); it != st["services"].end(); ++it) {
    services.row({it.key(), it.value().get<std::string>()});
  }
  services.render(ctx.out, ctx.cfg.output);
  ctx.out << "\n";
  Table summary({"DIRECTORY", "ENABLED", "INDEXED", "TOTAL"});
  for (const auto& d : st["directories"]) {
    summary.row({d["path"], d["enabled"].get<bool>() ? "yes" : "no", std::to_string(d["indexed"].get<uint64_t>()),
                 std::to_string(d["total"].get<uint64_t>())});
  }
  summary.render(ctx.out, ctx.cfg.output);
  ctx.out << "\n";
  Table gens({"GENERATOR", "ENABLED", "HEALTHY"});
  for (const auto& g : st["generators"]) {
    gens.row({g["name"], g["enabled"].get<bool>() ? "yes" : "no", g["healthy"].get<bool>() ? "yes" : "no"});
  }
  gens.render(ctx.out, ctx.cfg.output);
  if (ctx.cfg.output == OutputFormat::Table) {
    ctx.out << "\nmode: " << st["mode"].get<std::string>() << "  backend: " << st["versions"]["backend"].get<std::string>()
            << "\n";
  }
  return 0;
}

int serviceLog(Context& ctx, size_t lines, bool follow) {
  auto log = logPath(Settings::fromEnv());
  if (!fs::exists(log)) throw Failure("no log file at " + log.string());
  ctx.out << tail(log, lines) << std::flush;
  if (!follow) return 0;
  std::ifstream in(log);
  in.seekg(0, std::ios::end);
  std::string line;
  while (true) {
    while (std::getline(in, line)) ctx.out << line << "\n" << std::flush;
    if (!ctx.out) return 0;
    in.clear();
    std::this_thread::sleep_for(250ms);
  }
}

int serviceRun(Context& ctx) {
  auto signals = blockStopSignals();
  api::BackendOptions opts;
  opts.settings = Settings::fromEnv();
  opts.settings.apiAddr = ctx.cfg.apiAddr;
  fs::create_directories(opts.settings.dataDir);

  spdlog::set_pattern("[%Y-%m-%d %H:%M:%S.%e] [%l] %v");
  spdlog::flush_on(spdlog::level::info);
  spdlog::info("needle {} starting, data dir {}", buildVersion(), opts.settings.dataDir.string());

  api::Backend backend(opts);
  backend.start();
  api::ApiServer server(backend);
  try {
    server.start(opts.settings.apiAddr);
  } catch (...) {
    backend.stop();
    throw;
  }
  auto pidFile = servicePidPath(opts.settings);
  writePid(pidFile);
  spdlog::info("serving {} in mode {}", server.baseUrl(), modeName(backend.mode()));

  int sig = waitStopSignal(signals);
  spdlog::info("signal {}, shutting down", sig);
  server.stop();
  backend.stop();
  std::error_code ec;
  if (readPid(pidFile) == ::getpid()) fs::remove(pidFile, ec);
  spdlog::info("stopped");
  return 0;
}

int uiStart(Context& ctx, uint16_t port) {
  auto s = Settings::fromEnv();
  std::string url = "http://" + ctx.cfg.apiAddr.host + ":" + std::to_string(port) + "/";
  auto probe = [&] {
    httplib::Client cl(ctx.cfg.apiAddr.host, port);
    cl.set_connection_timeout(1, 0);
    auto r = cl.Get("/");
    return r && r->status == 200;
  };
  if (alive(readPid(uiPidPath(s))) && probe()) {
    report(ctx, {{"ui", "already running"}, {"url", url}}, "already running at " + url);
    return 0;
  }
  spawnDetached(ctx.env.selfExe,
                {"--api", ctx.cfg.apiAddr.str(), "ui", "serve", "--port", std::to_string(port)}, s.logDir() / "ui.log");
  if (!waitFor(probe, 15s)) {
    throw Failure("web UI did not come up on port " + std::to_string(port) + "; last log lines:\n" +
                  tail(s.logDir() / "ui.log", 20));
  }
  report(ctx, {{"ui", "started"}, {"url", url}}, "web UI at " + url);
  return 0;
}

int uiStop(Context& ctx) { return stopByPidFile(ctx, uiPidPath(Settings::fromEnv()), "ui"); }

int uiServe(Context& ctx, uint16_t port) {
  auto signals = blockStopSignals();
  auto s = Settings::fromEnv();
  fs::path assets;
  if (const char* dir = std::getenv("NEEDLE_UI_DIR"); dir && *dir) {
    assets = dir;
  } else if (fs::is_directory(s.dataDir / "ui")) {
    assets = s.dataDir / "ui";
  }

  httplib::Server srv;
  auto apiAddr = ctx.cfg.apiAddr;
  auto proxy = [apiAddr](const httplib::Request& req, httplib::Response& res) {
    httplib::Client cl(apiAddr.host, apiAddr.port);
    cl.set_connection_timeout(2, 0);
    cl.set_read_timeout(120, 0);
    httplib::Headers headers;
    auto ct = req.get_header_value("Content-Type");
    std::string target = req.target.empty() ? req.path : req.target;
    httplib::Result r(nullptr, httplib::Error::Unknown);
    if (req.method == "GET") {
      r = cl.Get(target, headers);
    } else if (req.method == "POST") {
      r = cl.Post(target, headers, req.body, ct.empty() ? "application/json" : ct);
    } else if (req.method == "PATCH") {
      r = cl.Patch(target, headers, req.body, ct.empty() ? "application/json" : ct);
    } else if (req.method == "DELETE") {
      r = cl.Delete(target, headers);
    }
    if (!r) {
      res.status = 502;
      res.set_content(R"({"error":{"code":"Io","message":"API unreachable"}})", "application/json");
      return;
    }
    res.status = r->status;
    res.set_content(r->body, r->get_header_value("Content-Type"));
  };
  srv.Get("/v1/.*", proxy);
  srv.Post("/v1/.*", proxy);
  srv.Patch("/v1/.*", proxy);
  srv.Delete("/v1/.*", proxy);
  if (!assets.empty()) {
    srv.set_mount_point("/", assets.string());
  } else {
    srv.Get("/", [](const httplib::Request&, httplib::Response& res) {
      res.set_content(kPlaceholderIndex, "text/html; charset=utf-8");
    });
  }
  if (!srv.bind_to_port(apiAddr.host, port)) {
    throw Failure("cannot bind web UI to " + apiAddr.host + ":" + std::to_string(port));
  }
  std::thread t([&] { srv.listen_after_bind(); });
  writePid(uiPidPath(s));
  spdlog::info("web UI on http://{}:{}/ proxying {}", apiAddr.host, port, apiAddr.str());
  waitStopSignal(signals);
  srv.stop();
  t.join();
  std::error_code ec;
  if (readPid(uiPidPath(s)) == ::getpid()) fs::remove(uiPidPath(s), ec);
  return 0;
}

}  // namespace needle::cli
