#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "needle/common/image.hpp"

namespace needle::genhub {

// Shape::Any comes from the word "shape" in a prompt; the renderer then picks
// a concrete shape from the seed.
enum class Shape { Circle, Square, Triangle, Any };
enum class Color { Red, Green, Blue, Yellow, Cyan, Magenta, White, Black };
enum class Position { Left, Center, Right };

inline constexpr int kShapeCount = 3;  // concrete shapes
inline constexpr int kColorCount = 8;
inline constexpr int kPositionCount = 3;

std::string_view shapeName(Shape s);
std::string_view colorName(Color c);
std::string_view positionName(Position p);
std::optional<Shape> parseShape(std::string_view word);
std::optional<Color> parseColor(std::string_view word);
std::optional<Position> parsePosition(std::string_view word);
std::array<uint8_t, 3> colorRgb(Color c);

struct SceneSpec {
  Shape shape = Shape::Circle;
  Color shapeColor = Color::Red;
  Color background = Color::White;
  Position position = Position::Center;

  bool operator==(const SceneSpec&) const = default;
};

// Grammar (case-insensitive):
//   a <color> <shape> on a <color> background [on the <position>]
// with shape in {circle, square, triangle, shape}. Anything else, including
// equal shape and background colors, maps through fallbackScene.
SceneSpec parsePrompt(std::string_view prompt);
bool matchesGrammar(std::string_view prompt);

// h = XXH64(lowercased prompt, seed 0):
//   shape = h % 3, shapeColor = (h >> 8) % 8,
//   background = (h >> 16) % 7 skipping shapeColor, position = (h >> 24) % 3.
SceneSpec fallbackScene(std::string_view prompt);

// Prompt text that parses back to `scene`.
std::string promptFor(const SceneSpec& scene);

// Resolution names map SMALL=256, MEDIUM=512, LARGE=1024.
uint32_t resolutionSide(std::string_view name);
std::optional<uint32_t> tryResolutionSide(std::string_view name);

// Deterministic raster of side x side pixels: background fill, then the shape
// centred at x = 0.30/0.50/0.70 of the frame (left/center/right), y = 0.5.
// Seed-driven jitter: side 0.40 +- 0.10 of the frame, centre offset +-0.05
// of the frame per axis, +-5 per-channel noise. A triangle is isosceles,
// apex up, base and height equal to the side.
ImagePixels mockRender(const SceneSpec& scene, uint64_t seed, uint32_t side);

// The concrete shape mockRender draws for `scene` under `seed`.
Shape resolvedShape(const SceneSpec& scene, uint64_t seed);

}  // namespace needle::genhub
