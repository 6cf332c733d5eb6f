#include "needle/genhub/hub.hpp"

#include <algorithm>
#include <cstdio>
#include <random>
#include <semaphore>
#include <set>

#include "needle/common/error.hpp"
#include "needle/common/hash.hpp"

namespace needle::genhub {

struct GeneratorHub::Slot {
  Slot(EngineSpec s, int cap) : spec(std::move(s)), engine(makeEngine(spec)), inFlight(cap) {}

  EngineSpec spec;
  std::unique_ptr<Engine> engine;
  std::counting_semaphore<1024> inFlight;

  std::mutex mu;
  int failures = 0;
  std::optional<std::chrono::steady_clock::time_point> degradedUntil;
  std::string lastError;
};

std::string guideId(const std::string& engine, const std::string& prompt, uint32_t resolution, uint64_t seed) {
  std::string key = engine + '\n' + prompt + '\n' + std::to_string(resolution) + '\n' + std::to_string(seed);
  char buf[24];
  std::snprintf(buf, sizeof buf, "g%016llx", static_cast<unsigned long long>(xxh64(key)));
  return buf;
}

GeneratorHub::GeneratorHub(std::vector<EngineSpec> specs, HubOptions opts) : opts_(std::move(opts)) {
  setEngines(std::move(specs));
}

GeneratorHub::~GeneratorHub() = default;

void GeneratorHub::setEngines(std::vector<EngineSpec> specs) {
  std::set<std::string> names;
  for (const auto& s : specs)
    if (!names.insert(s.name).second) fail(Errc::DuplicateName, "engine '" + s.name + "' repeats");
  std::vector<std::shared_ptr<Slot>> next;
  std::lock_guard lock(mu_);
  for (auto& s : specs) {
    auto it = std::find_if(slots_.begin(), slots_.end(), [&](const auto& p) { return p->spec == s; });
    if (it != slots_.end()) {
      next.push_back(*it);  // unchanged engine keeps its health record
    } else {
      next.push_back(std::make_shared<Slot>(std::move(s), std::max(1, opts_.maxInFlightPerEngine)));
    }
  }
  slots_ = std::move(next);
}

std::vector<EngineSpec> GeneratorHub::engines() const {
  std::lock_guard lock(mu_);
  std::vector<EngineSpec> out;
  for (const auto& s : slots_) out.push_back(s->spec);
  return out;
}

std::vector<EngineStatus> GeneratorHub::status() const {
  auto now = opts_.now();
  std::vector<EngineStatus> out;
  for (const auto& s : orderedSlots()) {
    std::lock_guard lock(s->mu);
    out.push_back({s->spec, s->degradedUntil && now < *s->degradedUntil, s->failures, s->lastError});
  }
  return out;
}

std::vector<std::shared_ptr<GeneratorHub::Slot>> GeneratorHub::orderedSlots() const {
  std::vector<std::shared_ptr<Slot>> out;
  {
    std::lock_guard lock(mu_);
    out = slots_;
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return std::tie(a->spec.priority, a->spec.name) < std::tie(b->spec.priority, b->spec.name);
  });
  return out;
}

std::vector<GuideImage> GeneratorHub::generate(const GenRequest& req) {
  if (req.m == 0) fail(Errc::InvalidArgument, "m must be >= 1");
  if (req.resolution == 0 || req.resolution > 4096) fail(Errc::InvalidArgument, "unsupported resolution");

  std::vector<uint64_t> seeds(req.m);
  if (req.seed) {
    for (uint32_t i = 0; i < req.m; ++i) seeds[i] = *req.seed + i;
  } else {
    std::random_device rd;
    for (auto& s : seeds) s = (uint64_t{rd()} << 32) ^ rd();
  }

  auto slots = orderedSlots();
  for (const auto& name : req.engines) {
    if (std::none_of(slots.begin(), slots.end(), [&](const auto& s) { return s->spec.name == name; })) {
      fail(Errc::InvalidArgument, "unknown generator engine '" + name + "'");
    }
  }
  auto wanted = [&](const std::string& name) {
    return req.engines.empty() || std::find(req.engines.begin(), req.engines.end(), name) != req.engines.end();
  };

  auto now = opts_.now();
  std::vector<std::shared_ptr<Slot>> healthy, degraded;
  for (auto& s : slots) {
    if (!s->spec.enabled || !wanted(s->spec.name)) continue;
    std::lock_guard lock(s->mu);
    (s->degradedUntil && now < *s->degradedUntil ? degraded : healthy).push_back(s);
  }
  if (healthy.empty() && degraded.empty()) {
    std::vector<std::pair<std::string, std::string>> why;
    for (auto& s : slots) why.emplace_back(s->spec.name, s->spec.enabled ? "not selected" : "disabled");
    throw EnginesFailedError(Errc::NoEnabledEngines, std::move(why));
  }
  healthy.insert(healthy.end(), degraded.begin(), degraded.end());

  std::vector<std::pair<std::string, std::string>> causes;
  for (auto& slot : healthy) {
    std::vector<ImagePixels> images;
    std::string error;
    slot->inFlight.acquire();
    try {
      images = slot->engine->generate(req, seeds);
      if (images.size() != req.m) {
        fail(Errc::BadResponse, "expected " + std::to_string(req.m) + " images, got " + std::to_string(images.size()));
      }
      for (const auto& img : images) {
        if (img.width != req.resolution || img.height != req.resolution) {
          fail(Errc::BadResponse, "image is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                                      ", expected " + std::to_string(req.resolution) + " square");
        }
      }
    } catch (const std::exception& e) {
      error = e.what();
    }
    slot->inFlight.release();

    std::lock_guard lock(slot->mu);
    if (!error.empty()) {
      slot->lastError = error;
      if (++slot->failures >= opts_.degradeAfter) slot->degradedUntil = opts_.now() + opts_.backoff;
      causes.emplace_back(slot->spec.name, error);
      continue;
    }
    slot->failures = 0;
    slot->degradedUntil.reset();
    slot->lastError.clear();
    std::vector<GuideImage> out;
    out.reserve(req.m);
    for (uint32_t i = 0; i < req.m; ++i) {
      out.push_back(GuideImage{guideId(slot->spec.name, req.prompt, req.resolution, seeds[i]), slot->spec.name,
                               seeds[i], std::move(images[i]), req.prompt});
    }
    return out;
  }
  throw EnginesFailedError(Errc::AllEnginesFailed, std::move(causes));
}

namespace {
std::string joinCauses(const std::vector<std::pair<std::string, std::string>>& causes) {
  std::string out;
  for (const auto& [name, why] : causes) out += (out.empty() ? "" : "; ") + name + ": " + why;
  return out;
}
}  // namespace

EnginesFailedError::EnginesFailedError(Errc code, std::vector<std::pair<std::string, std::string>> causes)
    : Error(code, causes.empty() ? std::string("no generator engines configured") : joinCauses(causes)),
      causes_(std::move(causes)) {}

}  // namespace needle::genhub
