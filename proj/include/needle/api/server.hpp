#pragma once

#include <memory>
#include <string>
#include <thread>

#include "needle/api/backend.hpp"
#include "needle/common/settings.hpp"

namespace httplib {
class Server;
}

namespace needle::api {

// The /v1 HTTP surface over a Backend. Port 0 binds an ephemeral port.
class ApiServer {
 public:
  explicit ApiServer(Backend& backend);
  ~ApiServer();

  // Binds and starts serving on a background thread. Throws Io when the
  // address cannot be bound.
  void start(const HostPort& addr);
  void stop();
  uint16_t port() const noexcept { return port_; }
  std::string baseUrl() const;

 private:
  void routes();

  Backend& backend_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  std::string host_;
  uint16_t port_ = 0;
};

}  // namespace needle::api
