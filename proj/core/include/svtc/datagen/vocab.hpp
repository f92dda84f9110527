#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "svtc/common/image.hpp"

namespace svtc {

struct ColorSpec {
    std::string id;
    std::string name;
    Rgb rgb{};
};

struct ShapeSpec {
    std::string id;
    std::string display_name;
};

// The 12-color / 15-shape vocabulary. Shape ids must name a built-in rasterizer.
class Vocabulary {
public:
    static constexpr int kNumColors = 12;
    static constexpr int kNumShapes = 15;

    Vocabulary(std::vector<ColorSpec> colors, std::vector<ShapeSpec> shapes);

    static const Vocabulary& builtin();
    static Vocabulary load(const std::filesystem::path& path);
    static Vocabulary from_json(const nlohmann::json& j);
    nlohmann::ordered_json to_json() const;

    const std::vector<ColorSpec>& colors() const { return colors_; }
    const std::vector<ShapeSpec>& shapes() const { return shapes_; }

    // Index lookups; throw ValidationError for unknown ids.
    int color_index(std::string_view id) const;
    int shape_index(std::string_view id) const;
    const ColorSpec& color(int i) const { return colors_.at(static_cast<size_t>(i)); }
    const ShapeSpec& shape(int i) const { return shapes_.at(static_cast<size_t>(i)); }

private:
    std::vector<ColorSpec> colors_;
    std::vector<ShapeSpec> shapes_;
};

std::string rgb_to_hex(Rgb c);
Rgb hex_to_rgb(std::string_view hex);

// Plural of a display name ("cross" -> "crosses").
std::string pluralize(std::string_view noun);

} // namespace svtc
