#include "needle/genhub/scene.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <regex>

#include "needle/common/error.hpp"
#include "needle/common/hash.hpp"
#include "needle/common/rng.hpp"

namespace needle::genhub {

namespace {

constexpr std::string_view kShapeNames[] = {"circle", "square", "triangle", "shape"};
constexpr std::string_view kColorNames[] = {"red", "green", "blue", "yellow", "cyan", "magenta", "white", "black"};
constexpr std::string_view kPositionNames[] = {"left", "center", "right"};

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::optional<SceneSpec> parseGrammar(std::string_view prompt) {
  static const std::regex re(
      R"(^\s*an?\s+([a-z]+)\s+([a-z]+)\s+on\s+an?\s+([a-z]+)\s+background(?:\s+on\s+the\s+([a-z]+))?\s*\.?\s*$)");
  auto text = lower(prompt);
  std::smatch m;
  if (!std::regex_match(text, m, re)) return std::nullopt;
  auto color = parseColor(m[1].str());
  auto shape = parseShape(m[2].str());
  auto bg = parseColor(m[3].str());
  auto pos = m[4].matched ? parsePosition(m[4].str()) : std::optional<Position>(Position::Center);
  if (!color || !shape || !bg || !pos || *color == *bg) return std::nullopt;
  return SceneSpec{*shape, *color, *bg, *pos};
}

}  // namespace

std::string_view shapeName(Shape s) { return kShapeNames[static_cast<int>(s)]; }
std::string_view colorName(Color c) { return kColorNames[static_cast<int>(c)]; }
std::string_view positionName(Position p) { return kPositionNames[static_cast<int>(p)]; }

std::optional<Shape> parseShape(std::string_view word) {
  for (int i = 0; i < 4; ++i)
    if (kShapeNames[i] == word) return static_cast<Shape>(i);
  return std::nullopt;
}

std::optional<Color> parseColor(std::string_view word) {
  for (int i = 0; i < kColorCount; ++i)
    if (kColorNames[i] == word) return static_cast<Color>(i);
  return std::nullopt;
}

std::optional<Position> parsePosition(std::string_view word) {
  if (word == "centre" || word == "middle") return Position::Center;
  for (int i = 0; i < kPositionCount; ++i)
    if (kPositionNames[i] == word) return static_cast<Position>(i);
  return std::nullopt;
}

std::array<uint8_t, 3> colorRgb(Color c) {
  switch (c) {
    case Color::Red: return {255, 0, 0};
    case Color::Green: return {0, 255, 0};
    case Color::Blue: return {0, 0, 255};
    case Color::Yellow: return {255, 255, 0};
    case Color::Cyan: return {0, 255, 255};
    case Color::Magenta: return {255, 0, 255};
    case Color::White: return {255, 255, 255};
    case Color::Black: return {0, 0, 0};
  }
  return {0, 0, 0};
}

SceneSpec fallbackScene(std::string_view prompt) {
  uint64_t h = xxh64(lower(prompt));
  SceneSpec s;
  s.shape = static_cast<Shape>(h % 3);
  s.shapeColor = static_cast<Color>((h >> 8) % 8);
  int bg = static_cast<int>((h >> 16) % 7);
  if (bg >= static_cast<int>(s.shapeColor)) ++bg;
  s.background = static_cast<Color>(bg);
  s.position = static_cast<Position>((h >> 24) % 3);
  return s;
}

SceneSpec parsePrompt(std::string_view prompt) {
  if (auto s = parseGrammar(prompt)) return *s;
  return fallbackScene(prompt);
}

bool matchesGrammar(std::string_view prompt) { return parseGrammar(prompt).has_value(); }

std::string promptFor(const SceneSpec& scene) {
  std::string out = "a " + std::string(colorName(scene.shapeColor)) + " " + std::string(shapeName(scene.shape)) +
                    " on a " + std::string(colorName(scene.background)) + " background";
  if (scene.position != Position::Center) out += " on the " + std::string(positionName(scene.position));
  return out;
}

std::optional<uint32_t> tryResolutionSide(std::string_view name) {
  auto n = lower(name);
  if (n == "small" || n == "256") return 256;
  if (n == "medium" || n == "512") return 512;
  if (n == "large" || n == "1024") return 1024;
  return std::nullopt;
}

uint32_t resolutionSide(std::string_view name) {
  auto side = tryResolutionSide(name);
  if (!side) fail(Errc::InvalidArgument, "resolution must be SMALL, MEDIUM or LARGE, got '" + std::string(name) + "'");
  return *side;
}

Shape resolvedShape(const SceneSpec& scene, uint64_t seed) {
  if (scene.shape != Shape::Any) return scene.shape;
  SplitMix64 rng(seed ^ 0x5ca1ab1e0ddba11ULL);
  return static_cast<Shape>(rng.below(kShapeCount));
}

ImagePixels mockRender(const SceneSpec& scene, uint64_t seed, uint32_t side) {
  if (side == 0) fail(Errc::InvalidArgument, "render side must be positive");
  SplitMix64 rng(seed);
  const double frame = side;
  const double size = (0.40 + 0.10 * rng.symmetric()) * frame;
  static constexpr double kCentres[] = {0.30, 0.50, 0.70};
  const double cx = (kCentres[static_cast<int>(scene.position)] + 0.05 * rng.symmetric()) * frame;
  const double cy = (0.50 + 0.05 * rng.symmetric()) * frame;
  const Shape shape = resolvedShape(scene, seed);
  const auto fg = colorRgb(scene.shapeColor);
  const auto bg = colorRgb(scene.background);
  const double half = size / 2;

  auto inside = [&](double px, double py) {
    double dx = px - cx, dy = py - cy;
    switch (shape) {
      case Shape::Circle: return dx * dx + dy * dy <= half * half;
      case Shape::Square: return std::abs(dx) <= half && std::abs(dy) <= half;
      default: {
        double top = cy - half;
        if (py < top || py > cy + half) return false;
        return std::abs(dx) <= (py - top) / 2;
      }
    }
  };

  ImagePixels img(side, side);
  for (uint32_t y = 0; y < side; ++y) {
    for (uint32_t x = 0; x < side; ++x) {
      const auto& base = inside(x + 0.5, y + 0.5) ? fg : bg;
      uint8_t* p = img.at(x, y);
      for (int c = 0; c < 3; ++c) {
        int v = base[c] + static_cast<int>(rng.below(11)) - 5;
        p[c] = static_cast<uint8_t>(std::clamp(v, 0, 255));
      }
    }
  }
  return img;
}

}  // namespace needle::genhub
