#include <CLI11.hpp>
#include <httplib.h>

#include <algorithm>
#include <chrono>
#include <fstream>
#include <sstream>
#include <thread>

#include "internal.hpp"
#include "needle/common/error.hpp"
#include "needle/common/version.hpp"
#include "needle/genhub/scene.hpp"
#include "needle/synthbench/synthbench.hpp"

namespace fs = std::filesystem;

namespace needle::cli {

namespace {

constexpr uint16_t kDefaultUiPort = 8462;

std::string yesNo(bool b) { return b ? "yes" : "no"; }

std::string pct(double ratio) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%.1f%%", ratio * 100);
  return buf;
}

bool parseBool(const std::string& text) {
  std::string t = text;
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
  if (t == "true" || t == "yes" || t == "y" || t == "1" || t == "on") return true;
  if (t == "false" || t == "no" || t == "n" || t == "0" || t == "off") return false;
  throw UsageError("expected true or false, got '" + text + "'");
}

std::string ask(Context& ctx, const std::string& question, const std::string& current) {
  ctx.out << question << " [" << current << "]: " << std::flush;
  std::string line;
  if (!std::getline(*ctx.env.in, line)) return current;
  line.erase(0, line.find_first_not_of(" \t"));
  line.erase(line.find_last_not_of(" \t\r") + 1);
  return line.empty() ? current : line;
}

std::vector<std::string> splitList(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// ---- version -------------------------------------------------------------

int printVersion(Context& ctx) {
  std::string backend = "unreachable", ui = "unreachable";
  try {
    ApiClient api(ctx.cfg.apiAddr, 5);
    auto r = api.get("/v1/version");
    if (r.status == 200 && r.body.is_object()) {
      backend = r.body.value("backend", "unknown");
      ui = r.body.value("ui", "unknown");
    }
  } catch (const Failure&) {
  }
  if (ctx.structured()) {
    ctx.out << json{{"cli", buildVersion()}, {"backend", backend}, {"ui", ui}}.dump(2) << "\n";
  } else {
    ctx.out << "cli: " << buildVersion() << "\n";
    ctx.out << "backend: " << backend << "\n";
    ctx.out << "ui: " << ui << "\n";
  }
  return 0;
}

// ---- directory -------------------------------------------------------------

void renderDirectories(Context& ctx, const json& dirs) {
  if (ctx.structured()) {
    ctx.out << dirs.dump(2) << "\n";
    return;
  }
  Table t({"ID", "PATH", "ENABLED", "IMAGES", "INDEXED", "PROGRESS"});
  for (const auto& d : dirs) {
    t.row({std::to_string(d["id"].get<int64_t>()), d["path"], yesNo(d["enabled"]),
           std::to_string(d["imageCount"].get<uint64_t>()), std::to_string(d["indexed"].get<uint64_t>()),
           pct(d["progress"].get<double>())});
  }
  t.render(ctx.out, ctx.cfg.output);
}

void renderDirectory(Context& ctx, const json& d) {
  if (ctx.structured()) {
    ctx.out << d.dump(2) << "\n";
    return;
  }
  Table t({"FIELD", "VALUE"});
  t.row({"id", std::to_string(d["id"].get<int64_t>())});
  t.row({"path", d["path"]});
  t.row({"enabled", yesNo(d["enabled"])});
  t.row({"images", std::to_string(d["imageCount"].get<uint64_t>())});
  t.row({"indexed", std::to_string(d["indexed"].get<uint64_t>())});
  t.row({"progress", pct(d["progress"].get<double>())});
  t.render(ctx.out, ctx.cfg.output);
}

int directoryAdd(Context& ctx, const std::string& path, bool progress) {
  auto api = ctx.api();
  std::error_code ec;
  auto abs = fs::absolute(path, ec);
  auto d = expectOk(api.post("/v1/directories", {{"path", ec ? path : abs.string()}}));
  if (!progress) {
    if (ctx.structured()) {
      ctx.out << d.dump(2) << "\n";
    } else {
      ctx.out << "added directory " << d["id"].get<int64_t>() << " " << d["path"].get<std::string>() << " ("
              << d["imageCount"].get<uint64_t>() << " images)\n";
    }
    return 0;
  }
  auto id = std::to_string(d["id"].get<int64_t>());
  std::string last;
  while (true) {
    d = expectOk(api.get("/v1/directories/" + id));
    uint64_t done = d["indexed"], total = d["total"];
    if (!ctx.structured()) {
      auto bar = progressBar(done, total);
      if (ctx.env.interactive) {
        ctx.out << "\r" << bar << std::flush;
      } else if (bar != last) {
        ctx.out << bar << "\n";
      }
      last = bar;
    }
    if (d["progress"].get<double>() >= 1.0) break;
    std::this_thread::sleep_for(std::chrono::milliseconds(250));
  }
  if (ctx.structured()) {
    ctx.out << d.dump(2) << "\n";
  } else {
    if (ctx.env.interactive) ctx.out << "\n";
    ctx.out << "indexed directory " << id << "\n";
  }
  return 0;
}

int directoryModify(Context& ctx, int64_t id, const std::vector<std::string>& sets) {
  auto api = ctx.api();
  auto path = "/v1/directories/" + std::to_string(id);
  auto d = expectOk(api.get(path));
  std::optional<bool> enabled;
  for (const auto& s : sets) {
    auto eq = s.find('=');
    if (eq == std::string::npos || s.substr(0, eq) != "enabled") {
      throw UsageError("--set expects enabled=true|false, got '" + s + "'");
    }
    enabled = parseBool(s.substr(eq + 1));
  }
  if (!enabled) {
    if (!ctx.env.interactive) throw UsageError("not a terminal; pass --set enabled=true|false");
    enabled = parseBool(ask(ctx, "enabled", d["enabled"].get<bool>() ? "true" : "false"));
  }
  d = expectOk(api.patch(path, {{"enabled", *enabled}}));
  renderDirectory(ctx, d);
  return 0;
}

// ---- query -----------------------------------------------------------------

struct QueryArgs {
  std::string prompt;
  int n = 10;
  bool verbose = false;
  std::optional<int> m;
  std::string resolution;
  std::vector<std::string> engines;
  std::optional<uint64_t> seed;
};

std::string previewUrl(const Context& ctx, const std::string& prompt) {
  return "http://" + ctx.cfg.apiAddr.host + ":" + std::to_string(kDefaultUiPort) + "/?q=" +
         httplib::detail::encode_query_param(prompt);
}

int queryRun(Context& ctx, const QueryArgs& a) {
  json body = {{"prompt", a.prompt}, {"n", a.n}};
  json overrides = json::object();
  if (a.m) overrides["m"] = *a.m;
  if (!a.resolution.empty()) overrides["resolution"] = a.resolution;
  if (!a.engines.empty()) overrides["engines"] = a.engines;
  if (!overrides.empty()) body["overrides"] = overrides;
  if (a.seed) body["seed"] = *a.seed;

  auto q = expectOk(ctx.api().post("/v1/query", body));
  if (ctx.structured()) {
    ctx.out << q.dump(2) << "\n";
    return 0;
  }
  auto& out = ctx.out;
  if (a.verbose) {
    out << "guides:\n";
    size_t gi = 0;
    for (const auto& g : q["guides"]) {
      char lof[32];
      std::snprintf(lof, sizeof lof, "%.3f", g["lof"].get<double>());
      out << "  " << ++gi << ". " << g["id"].get<std::string>() << " engine=" << g["engine"].get<std::string>()
          << " seed=" << g["seed"].get<uint64_t>() << " lof=" << lof << (g["kept"].get<bool>() ? "" : " DROPPED")
          << "\n";
    }
    const auto& sources = q["sources"];
    size_t si = 0;
    for (const auto& s : sources) {
      out << "source " << ++si << "/" << sources.size() << ": guide " << s["guideIndex"].get<size_t>() + 1 << " ("
          << s["guide"].get<std::string>() << ") x " << s["embedder"].get<std::string>()
          << (s["kept"].get<bool>() ? "" : " [dropped guide, not fused]") << "\n";
      int rank = 0;
      for (const auto& h : s["hits"]) {
        if (rank >= a.n) break;
        char dist[32];
        std::snprintf(dist, sizeof dist, "%.6f", h["distance"].get<double>());
        out << "    " << ++rank << ". " << h.value("path", "#" + std::to_string(h["id"].get<uint64_t>())) << " "
            << dist << "\n";
      }
    }
    const auto& t = q["timings"];
    char buf[160];
    std::snprintf(buf, sizeof buf, "timings: generate %.1f ms, search %.1f ms, fuse %.1f ms, total %.1f ms\n",
                  t["generateMs"].get<double>(), t["searchMs"].get<double>(), t["fuseMs"].get<double>(),
                  t["totalMs"].get<double>());
    out << buf;
    out << "results:\n";
  }
  if (q["results"].empty()) {
    out << "no results\n";
    return 0;
  }
  for (const auto& r : q["results"]) {
    out << r["rank"].get<size_t>() << ". " << r["path"].get<std::string>() << " " << fmtScore(r["score"]) << "\n";
  }
  out << "preview: " << previewUrl(ctx, a.prompt) << "\n";
  return 0;
}

// ---- generator -------------------------------------------------------------

void renderGenerators(Context& ctx, const json& cfg) {
  if (ctx.structured()) {
    ctx.out << cfg.dump(2) << "\n";
    return;
  }
  Table t({"PRIORITY", "NAME", "KIND", "ENABLED", "HEALTHY"});
  for (const auto& e : cfg["engines"]) {
    t.row({std::to_string(e["priority"].get<int>()), e["name"], e["kind"], yesNo(e["enabled"]), yesNo(e["healthy"])});
  }
  t.render(ctx.out, ctx.cfg.output);
}

int generatorConfig(Context& ctx, const std::vector<std::string>& sets, const std::string& order) {
  auto api = ctx.api();
  auto cfg = expectOk(api.get("/v1/generators"));
  json patch = {{"revision", cfg["revision"]}};
  json perEngine = json::object();
  for (const auto& s : sets) {
    auto eq = s.find('=');
    auto dot = s.rfind(".enabled", eq);
    if (eq == std::string::npos || dot == std::string::npos || dot + 8 != eq || dot == 0) {
      throw UsageError("--set expects <engine>.enabled=true|false, got '" + s + "'");
    }
    perEngine[s.substr(0, dot)] = {{"enabled", parseBool(s.substr(eq + 1))}};
  }
  if (!order.empty()) patch["orderedNames"] = splitList(order);

  if (sets.empty() && order.empty()) {
    if (!ctx.env.interactive) throw UsageError("not a terminal; pass --set <engine>.enabled=BOOL or --order A,B,...");
    renderGenerators(ctx, cfg);
    std::string names;
    for (const auto& e : cfg["engines"]) names += (names.empty() ? "" : ",") + e["name"].get<std::string>();
    patch["orderedNames"] = splitList(ask(ctx, "priority order", names));
    for (const auto& e : cfg["engines"]) {
      auto name = e["name"].get<std::string>();
      perEngine[name] = {{"enabled", parseBool(ask(ctx, name + " enabled", e["enabled"].get<bool>() ? "yes" : "no"))}};
    }
  }
  if (!perEngine.empty()) patch["perEngine"] = perEngine;
  auto r = api.patch("/v1/generators", patch);
  if (r.status == 409) throw Failure("generator configuration changed concurrently; run the command again");
  renderGenerators(ctx, expectOk(r));
  return 0;
}

// ---- bench -----------------------------------------------------------------

int benchRun(Context& ctx, uint64_t corpusSeed, uint64_t querySeed, size_t corpusSize, const std::string& outPath) {
  synthbench::SuiteOptions o;
  o.corpusSeed = corpusSeed;
  o.querySeed = querySeed;
  o.corpusSize = corpusSize;
  auto work = fs::temp_directory_path() / ("needle-bench-" + std::to_string(::getpid()));
  std::vector<synthbench::BenchReport> reports;
  try {
    reports = synthbench::runStandardSuite(o, work);
  } catch (...) {
    fs::remove_all(work);
    throw;
  }
  fs::remove_all(work);
  if (!outPath.empty()) {
    std::ofstream f(outPath);
    if (!f) throw Failure("cannot write " + outPath);
    f << synthbench::formatReports(reports);
  }
  if (ctx.structured()) {
    json arr = json::array();
    for (const auto& r : reports) {
      arr.push_back({{"system", r.system},
                     {"map", r.map},
                     {"mapSimple", r.mapSimple},
                     {"mapHard", r.mapHard},
                     {"mrr", r.mrr},
                     {"medianTotalMs", r.latency.medianTotalMs}});
    }
    ctx.out << json{{"corpusSeed", corpusSeed}, {"reports", arr}}.dump(2) << "\n";
    return 0;
  }
  Table t({"SYSTEM", "MAP", "MAP_SIMPLE", "MAP_HARD", "MRR", "MEDIAN_MS"});
  auto f3 = [](double v) {
    char b[32];
    std::snprintf(b, sizeof b, "%.3f", v);
    return std::string(b);
  };
  for (const auto& r : reports) {
    t.row({r.system, f3(r.map), f3(r.mapSimple), f3(r.mapHard), f3(r.mrr),
           r.latency.samples ? f3(r.latency.medianTotalMs) : "-"});
  }
  t.render(ctx.out, ctx.cfg.output);
  if (!outPath.empty() && ctx.cfg.output == OutputFormat::Table) ctx.out << "report written to " << outPath << "\n";
  return 0;
}

// Structured mode still owes stdout one document, so errors get one too.
int reportError(Context& ctx, int code, const std::string& kind, const std::string& message,
                const std::string& prefix, const json& apiError = nullptr) {
  if (ctx.structured()) {
    json e = apiError.is_object() ? apiError : json{{"code", kind}, {"message", message}};
    ctx.out << json{{"error", e}}.dump(2) << "\n";
  }
  ctx.err << prefix << message << "\n";
  return code;
}

}  // namespace

int runCli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, const CliEnv& env) {
  CLI::App app{"needlectl: manage and query a needle image-retrieval service", "needlectl"};
  app.require_subcommand(0, 1);

  std::string apiFlag, outputFlag;
  bool version = false;
  app.add_option("--api", apiFlag, "API address host:port (overrides NEEDLE_API_ADDR and cli.conf)");
  app.add_option("--output", outputFlag, "table, plain or structured")
      ->check(CLI::IsMember({"table", "plain", "structured"}));
  app.add_flag("--version", version, "print cli, backend and ui versions");

  auto* service = app.add_subcommand("service", "start, stop and inspect the backend")->require_subcommand(1);
  auto* svcStart = service->add_subcommand("start", "launch the backend and wait until it is healthy");
  auto* svcStop = service->add_subcommand("stop", "stop the backend");
  auto* svcRestart = service->add_subcommand("restart", "stop, then start");
  auto* svcStatus = service->add_subcommand("status", "service, directory and generator status");
  auto* svcLog = service->add_subcommand("log", "print the backend log");
  size_t logLines = 50;
  bool follow = false;
  svcLog->add_option("-n,--lines", logLines, "lines from the end")->check(CLI::NonNegativeNumber);
  svcLog->add_flag("-f,--follow", follow, "keep printing new lines");
  auto* svcUpdate = service->add_subcommand("update", "component updates (not supported in this build)");
  auto* svcRun = service->add_subcommand("run", "run the backend in the foreground");
  svcRun->group("");

  auto* dir = app.add_subcommand("directory", "manage indexed directories")->require_subcommand(1);
  std::string dirPath;
  bool showProgress = false;
  int64_t dirId = 0;
  std::vector<std::string> dirSets;
  auto* dirAdd = dir->add_subcommand("add", "register a directory and index it");
  dirAdd->add_option("path", dirPath, "directory to index")->required();
  dirAdd->add_flag("--progress", showProgress, "wait and show indexing progress");
  auto* dirList = dir->add_subcommand("list", "list directories with progress");
  auto* dirDescribe = dir->add_subcommand("describe", "show one directory");
  dirDescribe->add_option("id", dirId)->required();
  auto* dirModify = dir->add_subcommand("modify", "enable or disable a directory");
  dirModify->add_option("id", dirId)->required();
  dirModify->add_option("--set", dirSets, "enabled=true|false");
  auto* dirRemove = dir->add_subcommand("remove", "unregister a directory and drop its vectors");
  dirRemove->add_option("id", dirId)->required();

  auto* query = app.add_subcommand("query", "search the index")->require_subcommand(1);
  QueryArgs qa;
  int mFlag = 0;
  auto* qRun = query->add_subcommand("run", "run a natural-language query");
  qRun->add_option("prompt", qa.prompt, "query text")->required();
  qRun->add_option("-n", qa.n, "number of results")->check(CLI::Range(1, 1000));
  qRun->add_flag("--verbose", qa.verbose, "show guides and every (guide, embedder) list");
  auto* mOpt = qRun->add_option("--m", mFlag, "guide images")->check(CLI::Range(1, 16));
  qRun->add_option("--resolution", qa.resolution, "SMALL, MEDIUM or LARGE")
      ->check(CLI::IsMember({"SMALL", "MEDIUM", "LARGE"}, CLI::ignore_case));
  qRun->add_option("--engine", qa.engines, "restrict generation to these engines");
  uint64_t seedFlag = 0;
  auto* seedOpt = qRun->add_option("--seed", seedFlag, "guide seed for reproducible runs");

  auto* gen = app.add_subcommand("generator", "text-to-image engines")->require_subcommand(1);
  auto* genList = gen->add_subcommand("list", "engines by priority");
  auto* genConfig = gen->add_subcommand("config", "change engine priority or enabled flags");
  std::vector<std::string> genSets;
  std::string genOrder;
  genConfig->add_option("--set", genSets, "<engine>.enabled=true|false");
  genConfig->add_option("--order", genOrder, "comma-separated engine names, highest priority first");

  auto* ui = app.add_subcommand("ui", "web UI")->require_subcommand(1);
  uint16_t uiPort = kDefaultUiPort;
  auto* uiStartCmd = ui->add_subcommand("start", "serve the web UI");
  uiStartCmd->add_option("--port", uiPort, "listen port");
  auto* uiStopCmd = ui->add_subcommand("stop", "stop the web UI");
  auto* uiServeCmd = ui->add_subcommand("serve", "serve the web UI in the foreground");
  uiServeCmd->add_option("--port", uiPort, "listen port");
  uiServeCmd->group("");

  auto* bench = app.add_subcommand("bench", "synthetic retrieval benchmark")->require_subcommand(1);
  uint64_t corpusSeed = 42, querySeed = 7;
  size_t corpusSize = 2000;
  std::string benchOut;
  auto* benchRunCmd = bench->add_subcommand("run", "build the corpus, run the suite, write a report");
  benchRunCmd->add_option("--corpus-seed", corpusSeed, "corpus seed");
  benchRunCmd->add_option("--query-seed", querySeed, "query suite seed");
  benchRunCmd->add_option("--corpus-size", corpusSize, "images in the corpus")->check(CLI::Range(1, 1000000));
  benchRunCmd->add_option("--out", benchOut, "tab-separated report file");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  Context ctx{CliConfig{}, env, out, err};
  try {
    try {
      ctx.cfg = loadCliConfig(env.configPath ? *env.configPath : defaultCliConfigPath());
      if (const char* addr = std::getenv("NEEDLE_API_ADDR"); addr && *addr) ctx.cfg.apiAddr = HostPort::parse(addr);
      if (!apiFlag.empty()) ctx.cfg.apiAddr = HostPort::parse(apiFlag);
      if (!outputFlag.empty()) ctx.cfg.output = parseOutputFormat(outputFlag);
    } catch (const Error& e) {
      throw UsageError(e.detail());
    }
    ctx.cfg.verbose = qa.verbose;

    if (version) return printVersion(ctx);

    if (svcStart->parsed()) return serviceStart(ctx);
    if (svcStop->parsed()) return serviceStop(ctx);
    if (svcRestart->parsed()) {
      serviceStop(ctx);
      return serviceStart(ctx);
    }
    if (svcStatus->parsed()) return serviceStatus(ctx);
    if (svcLog->parsed()) return serviceLog(ctx, logLines, follow);
    if (svcRun->parsed()) return serviceRun(ctx);
    if (svcUpdate->parsed()) {
      out << "component updates are not supported by this build; install a newer release and run "
             "'needlectl service restart'\n";
      return 0;
    }

    if (dirAdd->parsed()) return directoryAdd(ctx, dirPath, showProgress);
    if (dirList->parsed()) {
      renderDirectories(ctx, expectOk(ctx.api().get("/v1/directories"))["directories"]);
      return 0;
    }
    if (dirDescribe->parsed()) {
      renderDirectory(ctx, expectOk(ctx.api().get("/v1/directories/" + std::to_string(dirId))));
      return 0;
    }
    if (dirModify->parsed()) return directoryModify(ctx, dirId, dirSets);
    if (dirRemove->parsed()) {
      auto r = ctx.api().del("/v1/directories/" + std::to_string(dirId));
      expectOk(r);
      if (ctx.structured()) {
        out << json{{"removed", dirId}}.dump(2) << "\n";
      } else {
        out << "removed directory " << dirId << "\n";
      }
      return 0;
    }

    if (qRun->parsed()) {
      if (mOpt->count()) qa.m = mFlag;
      if (seedOpt->count()) qa.seed = seedFlag;
      std::transform(qa.resolution.begin(), qa.resolution.end(), qa.resolution.begin(),
                     [](unsigned char c) { return std::toupper(c); });
      return queryRun(ctx, qa);
    }

    if (genList->parsed()) {
      renderGenerators(ctx, expectOk(ctx.api().get("/v1/generators")));
      return 0;
    }
    if (genConfig->parsed()) return generatorConfig(ctx, genSets, genOrder);

    if (uiStartCmd->parsed()) return uiStart(ctx, uiPort);
    if (uiStopCmd->parsed()) return uiStop(ctx);
    if (uiServeCmd->parsed()) return uiServe(ctx, uiPort);

    if (benchRunCmd->parsed()) return benchRun(ctx, corpusSeed, querySeed, corpusSize, benchOut);

    err << app.help();
    return 2;
  } catch (const UsageError& e) {
    return reportError(ctx, 2, "UsageError", e.what(), "usage error: ");
  } catch (const Failure& e) {
    return reportError(ctx, 1, "Failure", e.what(), "error: ", e.apiError);
  } catch (const Error& e) {
    return reportError(ctx, 1, std::string(errcName(e.code())), e.detail(), "error: ");
  } catch (const std::exception& e) {
    return reportError(ctx, 1, "Internal", e.what(), "error: ");
  }
}

}  // namespace needle::cli
