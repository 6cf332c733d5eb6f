#pragma once

#include <json.hpp>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "needle/cli/cli.hpp"

namespace needle::cli {

using nlohmann::json;

// Exit 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
// Exit 1; the message is printed as "error: <message>".
struct Failure : std::runtime_error {
  using std::runtime_error::runtime_error;
  Failure(const std::string& message, json apiError) : std::runtime_error(message), apiError(std::move(apiError)) {}
  json apiError;  // the API's error object when the failure came from a reply
};

struct Reply {
  int status = 0;
  json body;
  std::string raw;
};

class ApiClient {
 public:
  explicit ApiClient(HostPort addr, int timeoutSec = 60) : addr_(std::move(addr)), timeoutSec_(timeoutSec) {}

  // Throw Failure when the API cannot be reached.
  Reply get(const std::string& path) const;
  Reply post(const std::string& path, const json& body) const;
  Reply patch(const std::string& path, const json& body) const;
  Reply del(const std::string& path) const;
  bool healthy() const noexcept;

  const HostPort& addr() const noexcept { return addr_; }
  std::string baseUrl() const { return "http://" + addr_.str(); }

 private:
  HostPort addr_;
  int timeoutSec_;
};

// Body of a 2xx reply, or Failure carrying the API's error code, message and
// any per-engine causes.
json expectOk(const Reply& r);

class Table {
 public:
  explicit Table(std::vector<std::string> headers) : headers_(std::move(headers)) {}
  void row(std::vector<std::string> cells) { rows_.push_back(std::move(cells)); }
  // Table: padded columns under a header. Plain: tab-separated, no header.
  void render(std::ostream& out, OutputFormat fmt) const;

 private:
  std::vector<std::string> headers_;
  std::vector<std::vector<std::string>> rows_;
};

OutputFormat parseOutputFormat(const std::string& text);  // InvalidArgument
std::string fmtScore(double score);  // 9 significant digits
std::string progressBar(uint64_t done, uint64_t total, int width = 30);

struct Context {
  CliConfig cfg;
  const CliEnv& env;
  std::ostream& out;
  std::ostream& err;

  ApiClient api() const { return ApiClient(cfg.apiAddr); }
  bool structured() const { return cfg.output == OutputFormat::Structured; }
};

// service and ui groups (process management).
int serviceStart(Context& ctx);
int serviceStop(Context& ctx);
int serviceStatus(Context& ctx);
int serviceLog(Context& ctx, size_t lines, bool follow);
int serviceRun(Context& ctx);  // foreground backend, used by start
int uiStart(Context& ctx, uint16_t port);
int uiStop(Context& ctx);
int uiServe(Context& ctx, uint16_t port);  // foreground, used by ui start

}  // namespace needle::cli
