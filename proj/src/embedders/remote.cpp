#include <httplib.h>

#include <cmath>
#include <json.hpp>
#include <semaphore>

#include "needle/common/base64.hpp"
#include "needle/common/error.hpp"
#include "needle/common/url.hpp"
#include "needle/embedders/embedder.hpp"

namespace needle::embedders {

using json = nlohmann::json;

namespace {

class RemoteEmbedder final : public Embedder {
 public:
  RemoteEmbedder(EmbedderSpec spec, RemoteOptions opts)
      : Embedder(std::move(spec)), url_(parseHttpUrl(this->spec().model.substr(7))), opts_(opts),
        slots_(std::max(1, opts.maxInFlight)) {}

 protected:
  std::vector<std::vector<float>> run(std::span<const ImagePixels> images) const override {
    json body;
    body["images"] = json::array();
    for (const auto& img : images) body["images"].push_back(base64Encode(encodePng(img)));
    auto payload = body.dump();

    slots_.acquire();
    httplib::Result res;
    {
      httplib::Client cli(url_.origin);
      auto ms = std::chrono::milliseconds(opts_.timeoutMs);
      cli.set_connection_timeout(ms);
      cli.set_read_timeout(ms);
      cli.set_write_timeout(ms);
      res = cli.Post(url_.path, payload, "application/json");
    }
    slots_.release();

    const auto& name = spec().name;
    if (!res) fail(Errc::EmbedderUnavailable, name + ": " + httplib::to_string(res.error()));
    if (res->status != 200) fail(Errc::EmbedderUnavailable, name + ": HTTP " + std::to_string(res->status));
    std::vector<std::vector<float>> out;
    try {
      auto doc = json::parse(res->body);
      for (const auto& v : doc.at("vectors")) {
        std::vector<float> vec;
        vec.reserve(v.size());
        for (const auto& x : v) {
          double d = x.get<double>();
          if (!std::isfinite(d)) fail(Errc::EmbedderUnavailable, name + ": non-finite component in response");
          vec.push_back(static_cast<float>(d));
        }
        out.push_back(std::move(vec));
      }
    } catch (const json::exception& e) {
      fail(Errc::EmbedderUnavailable, name + ": malformed response (" + e.what() + ")");
    }
    return out;
  }

 private:
  HttpUrl url_;
  RemoteOptions opts_;
  mutable std::counting_semaphore<1024> slots_;
};

}  // namespace

std::unique_ptr<Embedder> makeRemoteEmbedder(const EmbedderSpec& spec, RemoteOptions opts) {
  if (!spec.isRemote()) fail(Errc::InvalidArgument, spec.name + " is not a remote embedder");
  return std::make_unique<RemoteEmbedder>(spec, opts);
}

}  // namespace needle::embedders
