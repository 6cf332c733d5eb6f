#include "needle/common/url.hpp"

#include "needle/common/error.hpp"

namespace needle {

HttpUrl parseHttpUrl(const std::string& url) {
  auto sep = url.find("://");
  if (sep == std::string::npos) fail(Errc::InvalidArgument, "not a URL: " + url);
  auto scheme = url.substr(0, sep);
  if (scheme != "http" && scheme != "https") fail(Errc::InvalidArgument, "unsupported scheme in " + url);
  auto slash = url.find('/', sep + 3);
  HttpUrl out;
  out.origin = url.substr(0, slash);
  out.path = slash == std::string::npos ? "/" : url.substr(slash);
  if (out.origin.size() == sep + 3) fail(Errc::InvalidArgument, "missing host in " + url);
  return out;
}

}  // namespace needle
