#include <cmath>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

#include "needle/common/error.hpp"
#include "needle/common/url.hpp"
#include "needle/embedders/embedder.hpp"
#include "needle/vecstore/store.hpp"

namespace needle::embedders {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

size_t lineAt(std::string_view text, size_t offset) {
  offset = std::min(offset, text.size());
  size_t line = 1;
  for (size_t i = 0; i < offset; ++i) line += text[i] == '\n';
  return line;
}

// Byte ranges [begin, end) of the elements of a top-level JSON array,
// found by bracket depth outside string literals.
std::vector<std::pair<size_t, size_t>> elementRanges(std::string_view text) {
  std::vector<std::pair<size_t, size_t>> out;
  int depth = 0;
  bool inString = false, escaped = false;
  size_t start = std::string_view::npos;
  for (size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    if (inString) {
      if (escaped) escaped = false;
      else if (c == '\\') escaped = true;
      else if (c == '"') inString = false;
      continue;
    }
    if (depth == 1 && start == std::string_view::npos && c != ',' && c != ']' && !std::isspace(static_cast<unsigned char>(c))) {
      start = i;
    }
    if (c == '"') {
      inString = true;
    } else if (c == '[' || c == '{') {
      ++depth;
    } else if (c == ']' || c == '}') {
      --depth;
      if (depth == 1 && start != std::string_view::npos) {
        out.emplace_back(start, i + 1);
        start = std::string_view::npos;
      } else if (depth == 0 && start != std::string_view::npos) {
        out.emplace_back(start, i);
        start = std::string_view::npos;
      }
    } else if (c == ',' && depth == 1 && start != std::string_view::npos) {
      out.emplace_back(start, i);
      start = std::string_view::npos;
    }
  }
  return out;
}

const std::set<std::string> kKeys = {"name", "model", "dim", "weight", "enabled"};

}  // namespace

std::vector<EmbedderSpec> parseRegistry(std::string_view text, const std::string& source) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(Errc::ParseError, source + ":" + std::to_string(lineAt(text, e.byte == 0 ? 0 : e.byte - 1)) +
                               ": malformed JSON (" + e.what() + ")");
  }
  if (!doc.is_array()) fail(Errc::ParseError, source + ":1: top level must be an array of embedders");

  auto ranges = elementRanges(text);
  auto where = [&](size_t idx, const std::string& field) {
    size_t line = 1;
    if (idx < ranges.size()) {
      auto [b, e] = ranges[idx];
      size_t off = b;
      if (!field.empty()) {
        auto pos = text.substr(b, e - b).find("\"" + field + "\"");
        if (pos != std::string_view::npos) off = b + pos;
      }
      line = lineAt(text, off);
    }
    std::string out = source + ":" + std::to_string(line) + ":";
    if (!field.empty()) out += " field '" + field + "':";
    return out;
  };

  std::vector<EmbedderSpec> specs;
  std::set<std::string> names;
  for (size_t i = 0; i < doc.size(); ++i) {
    const auto& el = doc[i];
    if (!el.is_object()) fail(Errc::ParseError, where(i, "") + " entry must be an object");
    for (const auto& [key, _] : el.items()) {
      if (!kKeys.count(key)) fail(Errc::ParseError, where(i, key) + " unknown key");
    }
    EmbedderSpec s;
    if (!el.contains("name") || !el["name"].is_string() || el["name"].get<std::string>().empty()) {
      fail(Errc::ParseError, where(i, "name") + " expected a non-empty string");
    }
    s.name = el["name"].get<std::string>();
    for (char c : s.name) {
      if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.')) {
        fail(Errc::ParseError, where(i, "name") + " only letters, digits, '-', '_' and '.' are allowed");
      }
    }
    if (!el.contains("model") || !el["model"].is_string()) {
      fail(Errc::ParseError, where(i, "model") + " expected a string");
    }
    s.model = el["model"].get<std::string>();
    if (!el.contains("dim") || !el["dim"].is_number_integer() || el["dim"].get<int64_t>() < 1 ||
        el["dim"].get<int64_t>() > (1 << 20)) {
      fail(Errc::ParseError, where(i, "dim") + " expected a positive integer");
    }
    s.dim = static_cast<uint32_t>(el["dim"].get<int64_t>());
    if (el.contains("weight")) {
      if (!el["weight"].is_number() || !std::isfinite(el["weight"].get<double>()) || el["weight"].get<double>() < 0) {
        fail(Errc::ParseError, where(i, "weight") + " expected a finite non-negative number");
      }
      s.weight = el["weight"].get<double>();
    }
    if (el.contains("enabled")) {
      if (!el["enabled"].is_boolean()) fail(Errc::ParseError, where(i, "enabled") + " expected true or false");
      s.enabled = el["enabled"].get<bool>();
    }
    if (s.isRemote()) {
      try {
        parseHttpUrl(s.model.substr(7));
      } catch (const Error& e) {
        fail(Errc::ParseError, where(i, "model") + " " + e.detail());
      }
    } else {
      try {
        makeEmbedder(s);
      } catch (const Error& e) {
        bool dimProblem = e.detail().find("dimensions") != std::string::npos;
        fail(Errc::ParseError, where(i, dimProblem ? "dim" : "model") + " " + e.detail());
      }
    }
    if (!names.insert(s.name).second) fail(Errc::DuplicateName, where(i, "name") + " '" + s.name + "' repeats");
    specs.push_back(std::move(s));
  }
  return specs;
}

std::vector<EmbedderSpec> loadRegistry(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::PathNotFound, path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parseRegistry(ss.str(), path.filename().string());
}

std::string dumpRegistry(const std::vector<EmbedderSpec>& specs) {
  json arr = json::array();
  for (const auto& s : specs) {
    arr.push_back(json{{"name", s.name}, {"model", s.model}, {"dim", s.dim}, {"weight", s.weight}, {"enabled", s.enabled}});
  }
  return arr.dump(2) + "\n";
}

void saveRegistry(const fs::path& path, const std::vector<EmbedderSpec>& specs) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << dumpRegistry(specs);
    if (!out) fail(Errc::Io, "cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

void ensureCollections(const std::vector<EmbedderSpec>& specs, vecstore::VectorStore& store) {
  for (const auto& s : specs) {
    if (!s.enabled) continue;
    if (auto* c = store.find(s.name); c && c->dim() != s.dim) {
      fail(Errc::DimMismatchWithExistingCollection, s.name + ": registry says " + std::to_string(s.dim) +
                                                        ", collection holds " + std::to_string(c->dim()));
    }
  }
  for (const auto& s : specs) {
    if (s.enabled && !store.find(s.name)) store.createCollection(s.name, s.dim);
  }
}

}  // namespace needle::embedders
