#include "needle/vecstore/collection.hpp"

#include <unistd.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "needle/common/binio.hpp"
#include "needle/common/error.hpp"

namespace needle::vecstore {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[5] = {'N', 'D', 'L', 'V', '1'};
constexpr const char* kSegments = "segments.bin";
constexpr const char* kTombstones = "tombstones.bin";
constexpr const char* kSnapshot = "graph.snap";
constexpr const char* kCommitMarker = "compact.commit";

struct SnapshotHeader {
  uint32_t dim = 0;
  HnswParams params;
  uint64_t seed = 0;
  uint64_t segmentRecords = 0;
  uint64_t tombstoneRecords = 0;
};

void writeHeader(std::ostream& out, const SnapshotHeader& h) {
  out.write(kMagic, sizeof(kMagic));
  binio::put<uint32_t>(out, h.dim);
  binio::put<uint32_t>(out, h.params.M);
  binio::put<uint32_t>(out, h.params.efConstruction);
  binio::put<uint64_t>(out, h.seed);
  binio::put<uint32_t>(out, h.params.efSearch);
  binio::put<uint8_t>(out, static_cast<uint8_t>(h.params.metric));
  binio::put<uint64_t>(out, h.segmentRecords);
  binio::put<uint64_t>(out, h.tombstoneRecords);
}

SnapshotHeader readHeader(std::istream& in) {
  char magic[sizeof(kMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    fail(Errc::Corrupt, "graph snapshot has bad magic");
  }
  SnapshotHeader h;
  h.dim = binio::get<uint32_t>(in);
  h.params.M = binio::get<uint32_t>(in);
  h.params.efConstruction = binio::get<uint32_t>(in);
  h.seed = binio::get<uint64_t>(in);
  h.params.efSearch = binio::get<uint32_t>(in);
  const auto metric = binio::get<uint8_t>(in);
  if (metric > 1) fail(Errc::Corrupt, "graph snapshot has unknown metric");
  h.params.metric = static_cast<Metric>(metric);
  h.segmentRecords = binio::get<uint64_t>(in);
  h.tombstoneRecords = binio::get<uint64_t>(in);
  return h;
}

void syncFile(std::FILE* f) {
  if (!f) return;
  std::fflush(f);
  ::fsync(::fileno(f));
}

void writeFileDurable(const fs::path& path, std::string_view bytes) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) fail(Errc::Io, "cannot write " + path.string());
  const bool ok = std::fwrite(bytes.data(), 1, bytes.size(), f) == bytes.size();
  syncFile(f);
  std::fclose(f);
  if (!ok) fail(Errc::Io, "short write to " + path.string());
}

std::string readAll(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return {};
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Redo step of a compaction whose commit marker was written.
void finishCompaction(const fs::path& dir) {
  std::error_code ec;
  if (fs::exists(dir / (std::string(kSegments) + ".new"))) {
    fs::rename(dir / (std::string(kSegments) + ".new"), dir / kSegments);
  }
  writeFileDurable(dir / kTombstones, {});
  if (fs::exists(dir / (std::string(kSnapshot) + ".new"))) {
    fs::rename(dir / (std::string(kSnapshot) + ".new"), dir / kSnapshot);
  }
  fs::remove(dir / kCommitMarker, ec);
}

void recoverCompaction(const fs::path& dir) {
  std::error_code ec;
  if (fs::exists(dir / kCommitMarker)) {
    finishCompaction(dir);
  } else {
    fs::remove(dir / (std::string(kSegments) + ".new"), ec);
    fs::remove(dir / (std::string(kSnapshot) + ".new"), ec);
  }
}

}  // namespace

Collection::Collection(fs::path dir, std::string name, uint32_t dim, HnswParams params, uint64_t seed)
    : dir_(std::move(dir)), name_(std::move(name)), dim_(dim), params_(params), seed_(seed) {
  graph_ = std::make_unique<HnswGraph>(dim_, params_, seed_);
}

Collection::~Collection() {
  try {
    flush();
  } catch (...) {
  }
  closeAppendFiles();
}

std::unique_ptr<Collection> Collection::create(const fs::path& dir, std::string name, uint32_t dim,
                                               HnswParams params, uint64_t seed) {
  if (dim == 0) fail(Errc::InvalidDim, "dimension must be >= 1");
  params.validate();
  fs::create_directories(dir);
  std::unique_ptr<Collection> c(new Collection(dir, std::move(name), dim, params, seed));
  writeFileDurable(dir / kSegments, {});
  writeFileDurable(dir / kTombstones, {});
  c->writeSnapshot(dir / kSnapshot, *c->graph_, 0, 0);
  c->openAppendFiles();
  return c;
}

std::unique_ptr<Collection> Collection::open(const fs::path& dir, std::string name) {
  recoverCompaction(dir);
  std::ifstream in(dir / kSnapshot, std::ios::binary);
  if (!in) fail(Errc::Corrupt, "collection " + name + " has no graph snapshot");
  const auto header = readHeader(in);
  std::unique_ptr<Collection> c(new Collection(dir, std::move(name), header.dim, header.params, header.seed));
  c->loadFromDisk();
  c->openAppendFiles();
  return c;
}

void Collection::openAppendFiles() {
  segments_ = std::fopen((dir_ / kSegments).c_str(), "ab");
  tombstones_ = std::fopen((dir_ / kTombstones).c_str(), "ab");
  if (!segments_ || !tombstones_) fail(Errc::Io, "cannot open append files in " + dir_.string());
}

void Collection::closeAppendFiles() {
  if (segments_) std::fclose(segments_);
  if (tombstones_) std::fclose(tombstones_);
  segments_ = tombstones_ = nullptr;
}

void Collection::loadFromDisk() {
  const size_t recordSize = sizeof(uint64_t) + size_t{dim_} * sizeof(float);

  std::string segBytes = readAll(dir_ / kSegments);
  const size_t records = segBytes.size() / recordSize;
  if (segBytes.size() % recordSize != 0) {
    // Torn tail from an interrupted append.
    fs::resize_file(dir_ / kSegments, records * recordSize);
  }
  std::string tombBytes = readAll(dir_ / kTombstones);
  const size_t tombs = tombBytes.size() / sizeof(uint64_t);
  if (tombBytes.size() % sizeof(uint64_t) != 0) fs::resize_file(dir_ / kTombstones, tombs * sizeof(uint64_t));

  std::ifstream snap(dir_ / kSnapshot, std::ios::binary);
  const auto header = readHeader(snap);
  const bool snapshotFresh = header.segmentRecords == records && header.tombstoneRecords == tombs;

  graph_ = std::make_unique<HnswGraph>(dim_, params_, seed_);
  raw_.clear();
  raw_.reserve(records * dim_);
  std::vector<float> vec(dim_);
  for (size_t r = 0; r < records; ++r) {
    const char* p = segBytes.data() + r * recordSize;
    uint64_t id;
    std::memcpy(&id, p, sizeof(id));
    std::memcpy(vec.data(), p + sizeof(id), size_t{dim_} * sizeof(float));
    raw_.insert(raw_.end(), vec.begin(), vec.end());
    auto prepared = prepare(vec);
    if (snapshotFresh) {
      graph_->appendUnlinked(prepared, id);
    } else {
      graph_->add(prepared, id);
    }
  }
  if (snapshotFresh) graph_->readStructure(snap);

  for (size_t t = 0; t < tombs; ++t) {
    uint64_t node;
    std::memcpy(&node, tombBytes.data() + t * sizeof(uint64_t), sizeof(node));
    if (node >= records) fail(Errc::Corrupt, "tombstone references unknown record in " + name_);
    graph_->markDeleted(static_cast<uint32_t>(node));
  }
  tombstoneRecords_ = tombs;

  live_.clear();
  for (uint32_t node = 0; node < graph_->size(); ++node) {
    if (!graph_->isDeleted(node)) live_[graph_->externalId(node)] = node;
  }
  if (!snapshotFresh) {
    writeSnapshot(dir_ / kSnapshot, *graph_, records, tombs);
  }
  dirty_ = false;
}

std::vector<float> Collection::prepare(std::span<const float> vec) const {
  if (vec.size() != dim_) {
    fail(Errc::DimensionMismatch,
         "expected " + std::to_string(dim_) + " components, got " + std::to_string(vec.size()));
  }
  for (float x : vec) {
    if (!std::isfinite(x)) fail(Errc::NonFiniteComponent, "vector has a non-finite component");
  }
  std::vector<float> out(vec.begin(), vec.end());
  if (params_.metric == Metric::Cosine && !kernels::normalize(out)) {
    fail(Errc::NonFiniteComponent, "zero vector cannot be stored under the cosine metric");
  }
  return out;
}

std::vector<float> Collection::prepareQuery(std::span<const float> query) const { return prepare(query); }

void Collection::writeSnapshot(const fs::path& path, const HnswGraph& graph, uint64_t segmentRecords,
                               uint64_t tombstoneRecords) const {
  std::ostringstream out(std::ios::binary);
  writeHeader(out, {dim_, params_, seed_, segmentRecords, tombstoneRecords});
  graph.writeStructure(out);
  const auto tmp = fs::path(path.string() + ".tmp");
  writeFileDurable(tmp, out.str());
  fs::rename(tmp, path);
}

size_t Collection::count() const {
  std::shared_lock lock(mu_);
  return live_.size();
}

bool Collection::contains(uint64_t id) const {
  std::shared_lock lock(mu_);
  return live_.count(id) != 0;
}

std::vector<uint64_t> Collection::liveIds() const {
  std::shared_lock lock(mu_);
  std::vector<uint64_t> ids;
  ids.reserve(live_.size());
  for (const auto& [id, node] : live_) ids.push_back(id);
  std::sort(ids.begin(), ids.end());
  return ids;
}

void Collection::insert(uint64_t id, std::span<const float> vec) {
  auto prepared = prepare(vec);
  std::unique_lock lock(mu_);
  if (live_.count(id)) fail(Errc::DuplicateId, "id " + std::to_string(id) + " already in " + name_);
  if (std::fwrite(&id, sizeof(id), 1, segments_) != 1 ||
      std::fwrite(vec.data(), sizeof(float), vec.size(), segments_) != vec.size()) {
    fail(Errc::Io, "append to segment file failed");
  }
  std::fflush(segments_);
  raw_.insert(raw_.end(), vec.begin(), vec.end());
  live_[id] = graph_->add(prepared, id);
  dirty_ = true;
}

void Collection::remove(uint64_t id) {
  std::unique_lock lock(mu_);
  auto it = live_.find(id);
  if (it == live_.end()) return;
  const uint64_t node = it->second;
  if (std::fwrite(&node, sizeof(node), 1, tombstones_) != 1) fail(Errc::Io, "append to tombstone file failed");
  std::fflush(tombstones_);
  ++tombstoneRecords_;
  graph_->markDeleted(it->second);
  live_.erase(it);
  dirty_ = true;
  if (double(graph_->deletedCount()) >= kCompactionDeadRatio * double(graph_->size())) compactLocked();
}

std::vector<SearchHit> Collection::toHits(const std::vector<kernels::ScoredIndex>& scored) const {
  std::vector<SearchHit> hits;
  hits.reserve(scored.size());
  for (const auto& s : scored) hits.push_back({s.id, kernels::reportedDistance(params_.metric, s.distance)});
  return hits;
}

std::vector<SearchHit> Collection::search(std::span<const float> query, size_t k, size_t efSearch) const {
  if (k == 0) fail(Errc::InvalidArgument, "k must be >= 1");
  auto q = prepareQuery(query);
  std::shared_lock lock(mu_);
  return toHits(graph_->search(q, k, std::max(efSearch, k)));
}

std::vector<SearchHit> Collection::exactSearch(std::span<const float> query, size_t k) const {
  if (k == 0) fail(Errc::InvalidArgument, "k must be >= 1");
  auto q = prepareQuery(query);
  std::shared_lock lock(mu_);
  return toHits(kernels::exactTopKParallel(graph_->scanInput(), q, k));
}

void Collection::flush() {
  std::unique_lock lock(mu_);
  syncFile(segments_);
  syncFile(tombstones_);
  if (!dirty_) return;
  writeSnapshot(dir_ / kSnapshot, *graph_, graph_->size(), tombstoneRecords_);
  dirty_ = false;
}

void Collection::compact() {
  std::unique_lock lock(mu_);
  compactLocked();
}

void Collection::compactLocked() {
  auto rebuilt = std::make_unique<HnswGraph>(dim_, params_, seed_);
  std::vector<float> raw;
  std::string segBytes;
  for (uint32_t node = 0; node < graph_->size(); ++node) {
    if (graph_->isDeleted(node)) continue;
    const float* src = raw_.data() + size_t{node} * dim_;
    std::span<const float> vec(src, dim_);
    raw.insert(raw.end(), vec.begin(), vec.end());
    const uint64_t id = graph_->externalId(node);
    segBytes.append(reinterpret_cast<const char*>(&id), sizeof(id));
    segBytes.append(reinterpret_cast<const char*>(src), size_t{dim_} * sizeof(float));
    rebuilt->add(prepare(vec), id);
  }

  writeFileDurable(dir_ / (std::string(kSegments) + ".new"), segBytes);
  writeSnapshot(dir_ / (std::string(kSnapshot) + ".new"), *rebuilt, rebuilt->size(), 0);
  writeFileDurable(dir_ / kCommitMarker, "commit");
  closeAppendFiles();
  finishCompaction(dir_);
  openAppendFiles();

  graph_ = std::move(rebuilt);
  raw_ = std::move(raw);
  tombstoneRecords_ = 0;
  live_.clear();
  for (uint32_t node = 0; node < graph_->size(); ++node) live_[graph_->externalId(node)] = node;
  dirty_ = false;
}

}  // namespace needle::vecstore
