#pragma once

#include <string>

namespace needle {

// "http://host:port/path" split into an origin usable by an HTTP client
// ("http://host:port") and a path ("/path", defaulting to "/").
struct HttpUrl {
  std::string origin;
  std::string path;
};

// Throws Error(InvalidArgument) unless the scheme is http or https.
HttpUrl parseHttpUrl(const std::string& url);

}  // namespace needle
