#pragma once

#include <string_view>

#include "svtc/common/image.hpp"
#include "svtc/datagen/scene.hpp"
#include "svtc/datagen/vocab.hpp"

namespace svtc {

inline constexpr Rgb kBackground{0xD9, 0xD9, 0xD9};
inline constexpr Rgb kMaskTile{0x80, 0x80, 0x80};
inline constexpr Rgb kMaskGlyph{0xFF, 0xFF, 0xFF};

inline constexpr int kLargeBox = 26;
inline constexpr int kSmallBox = 14;
inline constexpr int kTileMargin = 2;

bool has_rasterizer(std::string_view shape_id);

// Point test in normalized box coordinates: u to the right, v downward, the
// shape's bounding box is [-1, 1]^2.
bool shape_contains(std::string_view shape_id, double u, double v);

// 128x128 RGB rendering. No anti-aliasing, so every pixel carries either the
// background, a palette color, or one of the mask-tile colors.
Image render_scene(const Scene& scene, const Vocabulary& vocab);

} // namespace svtc
