#include <httplib.h>

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "internal.hpp"
#include "needle/common/error.hpp"

namespace needle::cli {

namespace {

std::string trim(std::string s) {
  s.erase(0, s.find_first_not_of(" \t\r\n"));
  s.erase(s.find_last_not_of(" \t\r\n") + 1);
  return s;
}

Reply wrap(const httplib::Result& res, const ApiClient& c) {
  if (!res) {
    throw Failure("cannot reach the needle API at " + c.addr().str() + " (" + httplib::to_string(res.error()) +
                  "); is the service running? try 'needlectl service start'");
  }
  Reply r;
  r.status = res->status;
  r.raw = res->body;
  if (!res->body.empty()) r.body = json::parse(res->body, nullptr, false);
  return r;
}

httplib::Client client(const ApiClient& c, int timeoutSec) {
  httplib::Client cl(c.baseUrl());
  cl.set_connection_timeout(2, 0);
  cl.set_read_timeout(timeoutSec, 0);
  cl.set_write_timeout(timeoutSec, 0);
  return cl;
}

}  // namespace

OutputFormat parseOutputFormat(const std::string& text) {
  if (text == "table") return OutputFormat::Table;
  if (text == "plain") return OutputFormat::Plain;
  if (text == "structured") return OutputFormat::Structured;
  fail(Errc::InvalidArgument, "output must be table, plain or structured, got '" + text + "'");
}

CliConfig loadCliConfig(const std::filesystem::path& path) {
  CliConfig cfg;
  std::ifstream in(path);
  if (!in) return cfg;
  std::string line;
  int lineNo = 0;
  while (std::getline(in, line)) {
    ++lineNo;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      fail(Errc::InvalidArgument, path.string() + ":" + std::to_string(lineNo) + ": expected key=value");
    }
    auto key = trim(line.substr(0, eq));
    auto value = trim(line.substr(eq + 1));
    if (key == "api_addr") {
      cfg.apiAddr = HostPort::parse(value);
    } else if (key == "output") {
      cfg.output = parseOutputFormat(value);
    } else {
      fail(Errc::InvalidArgument, path.string() + ":" + std::to_string(lineNo) + ": unknown key '" + key + "'");
    }
  }
  return cfg;
}

std::filesystem::path defaultCliConfigPath() { return homeDir() / ".needle" / "cli.conf"; }

Reply ApiClient::get(const std::string& path) const {
  auto cl = client(*this, timeoutSec_);
  return wrap(cl.Get(path), *this);
}

Reply ApiClient::post(const std::string& path, const json& body) const {
  auto cl = client(*this, timeoutSec_);
  return wrap(cl.Post(path, body.dump(), "application/json"), *this);
}

Reply ApiClient::patch(const std::string& path, const json& body) const {
  auto cl = client(*this, timeoutSec_);
  return wrap(cl.Patch(path, body.dump(), "application/json"), *this);
}

Reply ApiClient::del(const std::string& path) const {
  auto cl = client(*this, timeoutSec_);
  return wrap(cl.Delete(path), *this);
}

bool ApiClient::healthy() const noexcept {
  try {
    auto cl = client(*this, 2);
    auto res = cl.Get("/v1/health");
    return res && res->status == 200 && res->body == "ok";
  } catch (...) {
    return false;
  }
}

json expectOk(const Reply& r) {
  if (r.status >= 200 && r.status < 300) return r.body;
  std::string msg;
  if (r.body.is_object() && r.body.contains("error")) {
    const auto& e = r.body["error"];
    msg = e.value("code", "Error") + ": " + e.value("message", "");
    if (e.contains("causes")) {
      for (const auto& c : e["causes"]) {
        msg += "\n  " + c.value("engine", "?") + ": " + c.value("error", "");
      }
    }
    throw Failure(msg, e);
  } else {
    msg = "HTTP " + std::to_string(r.status) + (r.raw.empty() ? "" : ": " + r.raw);
  }
  throw Failure(msg);
}

void Table::render(std::ostream& out, OutputFormat fmt) const {
  if (fmt == OutputFormat::Plain) {
    for (const auto& r : rows_) {
      for (size_t i = 0; i < r.size(); ++i) out << (i ? "\t" : "") << r[i];
      out << "\n";
    }
    return;
  }
  std::vector<size_t> w(headers_.size());
  for (size_t i = 0; i < headers_.size(); ++i) w[i] = headers_[i].size();
  for (const auto& r : rows_)
    for (size_t i = 0; i < r.size() && i < w.size(); ++i) w[i] = std::max(w[i], r[i].size());
  auto line = [&](const std::vector<std::string>& cells) {
    std::string s;
    for (size_t i = 0; i < cells.size(); ++i) {
      s += cells[i];
      if (i + 1 < cells.size()) s += std::string(w[i] - cells[i].size() + 2, ' ');
    }
    out << s << "\n";
  };
  line(headers_);
  for (const auto& r : rows_) line(r);
}

std::string fmtScore(double score) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", score);
  return buf;
}

std::string progressBar(uint64_t done, uint64_t total, int width) {
  double ratio = total == 0 ? 1.0 : double(done) / double(total);
  int fill = static_cast<int>(ratio * width + 1e-9);
  char pct[16];
  std::snprintf(pct, sizeof pct, "%3d%%", static_cast<int>(ratio * 100 + 1e-9));
  return "[" + std::string(fill, '#') + std::string(width - fill, '.') + "] " + std::to_string(done) + "/" +
         std::to_string(total) + " " + pct;
}

}  // namespace needle::cli
