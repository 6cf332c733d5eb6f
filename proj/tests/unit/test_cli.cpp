#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <fstream>
#include <regex>
#include <sstream>

#include "doctest.h"
#include "needle/cli/cli.hpp"
#include "needle/common/version.hpp"
#include "service_fixture.hpp"
#include "temp_dir.hpp"

using namespace needle;
using namespace needle::testing;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;

  std::vector<std::string> lines() const {
    std::vector<std::string> v;
    std::istringstream in(out);
    for (std::string l; std::getline(in, l);) v.push_back(l);
    return v;
  }
};

// Fresh CliEnv per call; the config path points at a file that does not
// exist so the user's ~/.needle/cli.conf never leaks in.
struct Cli {
  TempDir home;
  std::string api;
  std::istringstream input;
  bool interactive = false;

  explicit Cli(std::string apiAddr = "127.0.0.1:1") : api(std::move(apiAddr)) { ::unsetenv("NEEDLE_API_ADDR"); }

  Run operator()(std::vector<std::string> args, bool withApi = true) {
    if (withApi) args.insert(args.begin(), {"--api", api});
    cli::CliEnv env;
    env.in = &input;
    env.interactive = interactive;
    env.configPath = home / "cli.conf";
    std::ostringstream out, err;
    Run r;
    r.code = cli::runCli(args, out, err, env);
    r.out = out.str();
    r.err = err.str();
    return r;
  }
};

std::string apiOf(const Service& svc) { return "127.0.0.1:" + std::to_string(svc.server->port()); }

uint16_t freePort() {
  int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in a{};
  a.sin_family = AF_INET;
  a.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  ::bind(fd, reinterpret_cast<sockaddr*>(&a), sizeof a);
  socklen_t len = sizeof a;
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&a), &len);
  ::close(fd);
  return ntohs(a.sin_port);
}

// Indexes `count` scenes through the CLI and returns the directory id.
std::string addIndexed(Cli& cli, Service& svc, int count) {
  auto imgs = svc.tmp / "imgs";
  writeScenes(imgs, count);
  auto r = cli({"directory", "add", imgs.string(), "--progress"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  return "1";
}

const std::regex kResultLine(R"(^(\d+)\. (/\S+) ([0-9.eE+-]+)$)");

}  // namespace

TEST_CASE("--version prints three component: semver lines") {
  Service svc;
  Cli cli(apiOf(svc));
  auto r = cli({"--version"});
  CHECK(r.code == 0);
  auto lines = r.lines();
  REQUIRE(lines.size() == 3);
  const std::regex pair(R"(^(cli|backend|ui): (\S+)$)");
  std::vector<std::string> components;
  for (const auto& l : lines) {
    std::smatch m;
    REQUIRE_MESSAGE(std::regex_match(l, m, pair), l);
    components.push_back(m[1]);
    CHECK_MESSAGE(SemVer::parse(m[2]), l);
  }
  CHECK(components == std::vector<std::string>{"cli", "backend", "ui"});

  Cli down("127.0.0.1:" + std::to_string(freePort()));
  auto d = down({"--version"});
  CHECK(d.code == 0);
  REQUIRE(d.lines().size() == 3);
  CHECK(d.lines()[0] == std::string("cli: ") + buildVersion());
  CHECK(d.lines()[1] == "backend: unreachable");
}

TEST_CASE("query run prints ranked paths with scores and a preview URL") {
  Service svc;
  Cli cli(apiOf(svc));
  addIndexed(cli, svc, 30);

  auto r = cli({"query", "run", "a red circle on a white background", "-n", "10", "--seed", "3"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  auto lines = r.lines();
  REQUIRE(lines.size() == 11);

  // Same query over HTTP is the oracle for ranks, paths and scores.
  auto [st, q] = svc.post("/v1/query", {{"prompt", "a red circle on a white background"}, {"n", 10}, {"seed", 3}});
  REQUIRE(st == 200);
  REQUIRE(q["results"].size() == 10);
  double prev = 1e9;
  for (size_t i = 0; i < 10; ++i) {
    std::smatch m;
    REQUIRE_MESSAGE(std::regex_match(lines[i], m, kResultLine), lines[i]);
    CHECK(std::stoul(m[1]) == i + 1);
    CHECK(m[2] == q["results"][i]["path"].get<std::string>());
    CHECK(fs::exists(std::string(m[2])));
    double score = std::stod(m[3]);
    CHECK(score == q["results"][i]["score"].get<double>());
    CHECK(score <= prev);
    prev = score;
  }
  CHECK(lines[10].rfind("preview: http://127.0.0.1:8462/?q=a%20red%20circle", 0) == 0);

  auto few = cli({"query", "run", "a blue square", "-n", "3"});
  CHECK(few.code == 0);
  CHECK(few.lines().size() == 4);
}

TEST_CASE("query run --verbose prints one block per guide and embedder") {
  Service svc;
  Cli cli(apiOf(svc));
  addIndexed(cli, svc, 24);
  auto r = cli({"query", "run", "a green triangle", "-n", "5", "--verbose", "--m", "2", "--seed", "9"});
  REQUIRE_MESSAGE(r.code == 0, r.err);

  std::vector<std::string> blocks;
  size_t guides = 0, results = 0;
  bool inResults = false, sawTimings = false;
  const std::regex guide(R"(^  \d+\. g[0-9a-f]+ engine=\S+ seed=\d+ lof=\S+( DROPPED)?$)");
  const std::regex source(R"(^source (\d+)/(\d+): guide (\d) \(g[0-9a-f]+\) x (\S+).*$)");
  for (const auto& l : r.lines()) {
    std::smatch m;
    if (std::regex_match(l, guide)) ++guides;
    if (std::regex_match(l, m, source)) {
      CHECK(m[2] == "4");
      CHECK(std::stoul(m[1]) == blocks.size() + 1);
      blocks.push_back(std::string(m[3]) + "/" + std::string(m[4]));
    }
    if (l.rfind("timings: ", 0) == 0) sawTimings = true;
    if (inResults && std::regex_match(l, kResultLine)) ++results;
    if (l == "results:") inResults = true;
  }
  CHECK(guides == 2);
  CHECK(blocks == std::vector<std::string>{"1/colorhist64", "1/grid64", "2/colorhist64", "2/grid64"});
  CHECK(sawTimings);
  CHECK(results == 5);
}

TEST_CASE("query run on an empty index says no results and exits 0") {
  Service svc;
  Cli cli(apiOf(svc));
  auto r = cli({"query", "run", "anything at all", "-n", "10"});
  CHECK(r.code == 0);
  CHECK(r.out == "no results\n");
}

TEST_CASE("exit codes: 0 success, 1 runtime or API failure, 2 usage error") {
  Service svc;
  Cli cli(apiOf(svc));
  auto imgs = svc.tmp / "imgs";
  writeScenes(imgs, 6);
  auto down = "127.0.0.1:" + std::to_string(freePort());

  struct Case {
    std::vector<std::string> args;
    int expected;
    bool withApi = true;
  };
  std::vector<Case> corpus = {
      {{"directory", "add", imgs.string(), "--progress"}, 0},
      {{"directory", "list"}, 0},
      {{"directory", "describe", "1"}, 0},
      {{"query", "run", "a red circle", "-n", "4"}, 0},
      {{"query", "run", "a red circle", "--resolution", "small"}, 0},
      {{"generator", "list"}, 0},
      {{"service", "status"}, 0},
      {{"service", "update"}, 0},
      {{"--help"}, 0, false},
      {{"query", "run", "--help"}, 0, false},
      {{"--version"}, 0},

      {{"directory", "add", (svc.tmp / "nope").string()}, 1},
      {{"directory", "add", imgs.string()}, 1},
      {{"directory", "describe", "77"}, 1},
      {{"directory", "remove", "77"}, 1},
      {{"generator", "config", "--set", "ghost.enabled=false"}, 1},
      {{"generator", "config", "--order", "mock,ghost"}, 1},
      {{"--api", down, "service", "status"}, 1, false},
      {{"--api", down, "query", "run", "x"}, 1, false},
      {{"--api", down, "directory", "list"}, 1, false},

      {{}, 2, false},
      {{"frobnicate"}, 2},
      {{"query"}, 2},
      {{"query", "run"}, 2},
      {{"query", "run", "x", "-n", "0"}, 2},
      {{"query", "run", "x", "-n", "ten"}, 2},
      {{"query", "run", "x", "--m", "0"}, 2},
      {{"query", "run", "x", "--resolution", "HUGE"}, 2},
      {{"directory", "describe", "abc"}, 2},
      {{"directory", "modify", "1"}, 2},
      {{"directory", "modify", "1", "--set", "colour=red"}, 2},
      {{"directory", "modify", "1", "--set", "enabled=maybe"}, 2},
      {{"generator", "config"}, 2},
      {{"generator", "config", "--set", "mock=false"}, 2},
      {{"--output", "xml", "directory", "list"}, 2},
      {{"--api", "localhost:notaport", "directory", "list"}, 2, false},
  };
  for (const auto& c : corpus) {
    std::string cmd;
    for (const auto& a : c.args) cmd += a + " ";
    auto r = cli(c.args, c.withApi);
    CHECK_MESSAGE(r.code == c.expected, cmd, "\nstdout: ", r.out, "\nstderr: ", r.err);
    if (c.expected != 0) CHECK_MESSAGE(!r.err.empty(), cmd);
  }

  auto missing = cli({"directory", "add", (svc.tmp / "nope").string()});
  CHECK(missing.err.find("PathNotFound") != std::string::npos);
}

TEST_CASE("directory add --progress, modify and remove") {
  Service svc;
  Cli cli(apiOf(svc));
  auto imgs = svc.tmp / "imgs";
  writeScenes(imgs, 20);
  auto r = cli({"directory", "add", imgs.string(), "--progress"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  auto lines = r.lines();
  REQUIRE(lines.size() >= 2);
  CHECK(lines[lines.size() - 2].find("20/20 100%") != std::string::npos);
  CHECK(lines.back() == "indexed directory 1");

  auto list = cli({"--output", "plain", "directory", "list"});
  CHECK(list.out == "1\t" + fs::canonical(imgs).string() + "\tyes\t20\t20\t100.0%\n");

  auto off = cli({"directory", "modify", "1", "--set", "enabled=false"});
  CHECK(off.code == 0);
  CHECK(svc.backend->directory(1).entry.enabled == false);

  // A terminal gets a prompt instead of requiring --set.
  cli.interactive = true;
  cli.input.str("yes\n");
  auto on = cli({"directory", "modify", "1"});
  CHECK(on.code == 0);
  CHECK(on.out.rfind("enabled [false]: ", 0) == 0);
  CHECK(svc.backend->directory(1).entry.enabled == true);
  cli.interactive = false;

  CHECK(cli({"directory", "remove", "1"}).code == 0);
  auto after = cli({"--output", "plain", "directory", "list"});
  CHECK(after.code == 0);
  CHECK(after.out.empty());
}

TEST_CASE("generator list and config") {
  Service svc({mock("alpha", 0), mock("beta", 1)});
  Cli cli(apiOf(svc));

  auto list = cli({"--output", "plain", "generator", "list"});
  CHECK(list.out == "0\talpha\tmock\tyes\tyes\n1\tbeta\tmock\tyes\tyes\n");

  CHECK(cli({"generator", "config", "--set", "alpha.enabled=false"}).code == 0);
  list = cli({"--output", "plain", "generator", "list"});
  CHECK(list.out == "0\talpha\tmock\tno\tno\n1\tbeta\tmock\tyes\tyes\n");

  CHECK(cli({"generator", "config", "--order", "beta,alpha"}).code == 0);
  list = cli({"--output", "plain", "generator", "list"});
  CHECK(list.out == "0\tbeta\tmock\tyes\tyes\n1\talpha\tmock\tno\tno\n");

  auto saved = genhub::loadGenerators(svc.tmp / "data" / "generators.json");
  REQUIRE(saved.size() == 2);
  std::sort(saved.begin(), saved.end(), [](const auto& a, const auto& b) { return a.priority < b.priority; });
  CHECK(saved[0].name == "beta");
  CHECK(saved[1].name == "alpha");
  CHECK(saved[1].enabled == false);

  cli.interactive = true;
  // Prompts follow the current order: priority list, then beta, then alpha.
  cli.input.str("alpha,beta\n\nyes\n");
  auto edited = cli({"generator", "config"});
  CHECK_MESSAGE(edited.code == 0, edited.err);
  list = cli({"--output", "plain", "generator", "list"});
  CHECK(list.out == "0\talpha\tmock\tyes\tyes\n1\tbeta\tmock\tyes\tyes\n");
}

TEST_CASE("structured output is a single JSON document, errors included") {
  Service svc;
  Cli cli(apiOf(svc));
  auto imgs = svc.tmp / "imgs";
  writeScenes(imgs, 8);
  std::vector<std::vector<std::string>> commands = {
      {"directory", "add", imgs.string(), "--progress"},
      {"directory", "list"},
      {"directory", "describe", "1"},
      {"directory", "modify", "1", "--set", "enabled=true"},
      {"query", "run", "a red circle", "-n", "3", "--verbose"},
      {"generator", "list"},
      {"generator", "config", "--set", "mock.enabled=true"},
      {"service", "status"},
      {"--version"},
      {"directory", "describe", "42"},
      {"directory", "add", (svc.tmp / "missing").string()},
      {"directory", "modify", "1"},
      {"directory", "remove", "1"},
  };
  for (auto args : commands) {
    args.insert(args.begin(), {"--output", "structured"});
    auto r = cli(args);
    std::string cmd;
    for (const auto& a : args) cmd += a + " ";
    auto doc = json::parse(r.out, nullptr, false);
    CHECK_MESSAGE(!doc.is_discarded(), cmd, "\n", r.out);
    if (r.code != 0) CHECK_MESSAGE(doc.contains("error"), cmd);
  }
  auto err = cli({"--output", "structured", "directory", "add", (svc.tmp / "missing").string()});
  CHECK(json::parse(err.out)["error"]["code"] == "PathNotFound");
}

TEST_CASE("api address precedence: cli.conf, then NEEDLE_API_ADDR, then --api") {
  Service svc;
  Cli cli;
  auto good = apiOf(svc);
  auto bad = "127.0.0.1:" + std::to_string(freePort());

  std::ofstream(cli.home / "cli.conf") << "# needlectl\napi_addr = " << good << "\noutput=plain\n";
  auto r = cli({"generator", "list"}, false);
  CHECK(r.code == 0);
  CHECK(r.out == "100\tmock\tmock\tyes\tyes\n");

  ::setenv("NEEDLE_API_ADDR", bad.c_str(), 1);
  CHECK(cli({"generator", "list"}, false).code == 1);
  CHECK(cli({"--api", good, "generator", "list"}, false).code == 0);
  ::unsetenv("NEEDLE_API_ADDR");

  std::ofstream(cli.home / "cli.conf") << "colour = blue\n";
  CHECK(cli({"generator", "list"}, false).code == 2);
}

TEST_CASE("service start, status, ui start and stop through the real binary") {
  TempDir tmp;
  ::setenv("NEEDLE_DATA_DIR", (tmp / "data").c_str(), 1);
  auto port = freePort();
  Cli cli("127.0.0.1:" + std::to_string(port));
  cli::CliEnv env;
  auto run = [&](std::vector<std::string> args) {
    args.insert(args.begin(), {"--api", cli.api});
    env.in = &cli.input;
    env.configPath = cli.home / "cli.conf";
    env.selfExe = NEEDLECTL_PATH;
    std::ostringstream out, err;
    Run r;
    r.code = cli::runCli(args, out, err, env);
    r.out = out.str();
    r.err = err.str();
    return r;
  };

  auto first = run({"service", "start"});
  REQUIRE_MESSAGE(first.code == 0, first.err);
  CHECK(first.out.rfind("started", 0) == 0);
  auto second = run({"service", "start"});
  CHECK(second.code == 0);
  CHECK(second.out.find("already running") != std::string::npos);

  auto status = run({"--output", "plain", "service", "status"});
  CHECK(status.code == 0);
  for (const char* s : {"api", "catalog", "genhub", "indexer", "vecstore", "watcher"}) {
    CHECK_MESSAGE(status.out.find(std::string(s) + "\tup\n") != std::string::npos, s, "\n", status.out);
  }

  auto uiPort = freePort();
  auto ui = run({"ui", "start", "--port", std::to_string(uiPort)});
  REQUIRE_MESSAGE(ui.code == 0, ui.err);
  std::smatch m;
  REQUIRE(std::regex_search(ui.out, m, std::regex(R"(http://([0-9.]+):(\d+)/)")));
  httplib::Client page(m[1].str(), std::stoi(m[2].str()));
  auto html = page.Get("/");
  REQUIRE(html);
  CHECK(html->status == 200);
  CHECK(html->get_header_value("Content-Type").rfind("text/html", 0) == 0);
  auto proxied = page.Get("/v1/health");
  REQUIRE(proxied);
  CHECK(proxied->body == "ok");
  CHECK(run({"ui", "stop"}).code == 0);

  auto log = run({"service", "log", "-n", "5"});
  CHECK(log.code == 0);
  CHECK(log.out.find("serving http://") != std::string::npos);

  auto stop = run({"service", "stop"});
  CHECK(stop.code == 0);
  CHECK(stop.out.find("stopped") != std::string::npos);
  auto gone = run({"service", "status"});
  CHECK(gone.code == 1);
  CHECK(gone.err.find("cannot reach") != std::string::npos);
  ::unsetenv("NEEDLE_DATA_DIR");
}
