#include "needle/api/server.hpp"

#include <httplib.h>

#include <spdlog/spdlog.h>

#include "needle/api/wire.hpp"

namespace needle::api {

namespace {

void sendJson(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

json parseBody(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  try {
    return json::parse(req.body);
  } catch (const json::parse_error& e) {
    fail(Errc::InvalidArgument, std::string("malformed JSON body: ") + e.what());
  }
}

catalog::DirectoryId idParam(const httplib::Request& req) {
  try {
    return std::stoll(req.matches[1].str());
  } catch (const std::logic_error&) {
    fail(Errc::UnknownDirectory, req.matches[1].str());
  }
}

// Runs `fn`, mapping needle errors onto status codes.
template <typename Fn>
httplib::Server::Handler guarded(Fn fn) {
  return [fn](const httplib::Request& req, httplib::Response& res) {
    try {
      fn(req, res);
    } catch (const Error& e) {
      int status = httpStatusFor(e.code());
      if (status >= 500) spdlog::warn("{} {} -> {}: {}", req.method, req.path, status, e.what());
      sendJson(res, status, errorJson(e));
    } catch (const std::exception& e) {
      spdlog::error("{} {} failed: {}", req.method, req.path, e.what());
      sendJson(res, 500, errorJson(e));
    }
  };
}

}  // namespace

ApiServer::ApiServer(Backend& backend) : backend_(backend), server_(std::make_unique<httplib::Server>()) { routes(); }

ApiServer::~ApiServer() { stop(); }

void ApiServer::routes() {
  auto& s = *server_;
  auto& b = backend_;

  s.Get("/v1/health", [](const httplib::Request&, httplib::Response& res) { res.set_content("ok", "text/plain"); });
  s.Get("/v1/version", guarded([](const httplib::Request&, httplib::Response& res) {
          sendJson(res, 200, versionJson());
        }));
  s.Get("/v1/status", guarded([&b](const httplib::Request&, httplib::Response& res) {
          sendJson(res, 200, toJson(b.status()));
        }));

  s.Post("/v1/query", guarded([&b](const httplib::Request& req, httplib::Response& res) {
           auto q = parseQueryRequest(parseBody(req));
           sendJson(res, 200, toJson(b.query(q)));
         }));

  s.Get("/v1/directories", guarded([&b](const httplib::Request&, httplib::Response& res) {
          json out = json::array();
          for (const auto& d : b.directories()) out.push_back(toJson(d));
          sendJson(res, 200, {{"directories", std::move(out)}});
        }));
  s.Post("/v1/directories", guarded([&b](const httplib::Request& req, httplib::Response& res) {
           auto body = parseBody(req);
           if (!body.contains("path") || !body["path"].is_string() || body["path"].get<std::string>().empty()) {
             fail(Errc::InvalidArgument, "field 'path' must be a non-empty string");
           }
           sendJson(res, 202, toJson(b.addDirectory(body["path"].get<std::string>())));
         }));
  s.Get(R"(/v1/directories/(\d+))", guarded([&b](const httplib::Request& req, httplib::Response& res) {
          sendJson(res, 200, toJson(b.directory(idParam(req))));
        }));
  s.Patch(R"(/v1/directories/(\d+))", guarded([&b](const httplib::Request& req, httplib::Response& res) {
            auto body = parseBody(req);
            auto id = idParam(req);
            b.directory(id);  // 404 before 400
            if (!body.contains("enabled") || !body["enabled"].is_boolean()) {
              fail(Errc::InvalidArgument, "field 'enabled' must be a boolean");
            }
            sendJson(res, 200, toJson(b.setDirectoryEnabled(id, body["enabled"].get<bool>())));
          }));
  s.Delete(R"(/v1/directories/(\d+))", guarded([&b](const httplib::Request& req, httplib::Response& res) {
             b.removeDirectory(idParam(req));
             res.status = 204;
           }));

  s.Get("/v1/generators", guarded([&b](const httplib::Request&, httplib::Response& res) {
          sendJson(res, 200, toJson(b.generators()));
        }));
  s.Patch("/v1/generators", guarded([&b](const httplib::Request& req, httplib::Response& res) {
            sendJson(res, 200, toJson(b.patchGenerators(parseGeneratorPatch(parseBody(req)))));
          }));

  s.Get(R"(/v1/images/([A-Za-z0-9]+))", guarded([&b](const httplib::Request& req, httplib::Response& res) {
          auto img = b.image(req.matches[1].str());
          res.set_content(reinterpret_cast<const char*>(img.bytes.data()), img.bytes.size(), img.contentType);
        }));

  s.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
    if (res.status == 404 && res.body.empty()) {
      sendJson(res, 404, {{"error", {{"code", "NotFound"}, {"message", "no route for " + req.method + " " + req.path}}}});
    }
  });
}

void ApiServer::start(const HostPort& addr) {
  if (thread_.joinable()) return;
  host_ = addr.host;
  if (addr.port == 0) {
    int p = server_->bind_to_any_port(addr.host);
    if (p < 0) fail(Errc::Io, "cannot bind " + addr.host);
    port_ = static_cast<uint16_t>(p);
  } else {
    if (!server_->bind_to_port(addr.host, addr.port)) fail(Errc::Io, "cannot bind " + addr.str());
    port_ = addr.port;
  }
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
}

void ApiServer::stop() {
  if (!thread_.joinable()) return;
  server_->stop();
  thread_.join();
}

std::string ApiServer::baseUrl() const { return "http://" + host_ + ":" + std::to_string(port_); }

}  // namespace needle::api
