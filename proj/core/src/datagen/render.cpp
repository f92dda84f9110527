#include "svtc/datagen/render.hpp"

#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "svtc/common/error.hpp"

namespace svtc {

namespace {

using Point = std::pair<double, double>;

bool in_polygon(const std::vector<Point>& poly, double u, double v) {
    bool inside = false;
    for (size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
        const auto [xi, yi] = poly[i];
        const auto [xj, yj] = poly[j];
        if ((yi > v) != (yj > v) && u < (xj - xi) * (v - yi) / (yj - yi) + xi) inside = !inside;
    }
    return inside;
}

// Regular polygon with a vertex pointing up.
std::vector<Point> regular_polygon(int sides, double radius) {
    std::vector<Point> pts;
    for (int i = 0; i < sides; ++i) {
        const double a = -std::numbers::pi / 2 + 2 * std::numbers::pi * i / sides;
        pts.emplace_back(radius * std::cos(a), radius * std::sin(a));
    }
    return pts;
}

std::vector<Point> star_polygon() {
    std::vector<Point> pts;
    for (int i = 0; i < 10; ++i) {
        const double r = i % 2 == 0 ? 1.0 : 0.42;
        const double a = -std::numbers::pi / 2 + std::numbers::pi * i / 5;
        pts.emplace_back(r * std::cos(a), r * std::sin(a) + 0.08);
    }
    return pts;
}

const std::vector<Point>& polygon_for(std::string_view id) {
    static const std::vector<Point> kStar = star_polygon();
    static const std::vector<Point> kPentagon = regular_polygon(5, 1.0);
    static const std::vector<Point> kHexagon = regular_polygon(6, 1.0);
    static const std::vector<Point> kArrow = {{-1, -0.3}, {0.2, -0.3}, {0.2, -0.8}, {1, 0},
                                              {0.2, 0.8}, {0.2, 0.3},  {-1, 0.3}};
    static const std::vector<Point> kTrapezoid = {{-1, 0.7}, {1, 0.7}, {0.55, -0.7}, {-0.55, -0.7}};
    if (id == "star") return kStar;
    if (id == "pentagon") return kPentagon;
    if (id == "hexagon") return kHexagon;
    if (id == "arrow") return kArrow;
    return kTrapezoid;
}

constexpr std::array<std::string_view, 15> kShapeIds = {
    "circle",  "square",   "triangle", "ellipse", "diamond", "star", "heart",      "arrow",
    "moon",    "pentagon", "hexagon",  "cross",   "ring",    "semicircle", "trapezoid"};

// 5x7 bitmap of "?".
constexpr std::array<std::string_view, 7> kQuestionGlyph = {
    " ### ", "#   #", "    #", "   # ", "  #  ", "     ", "  #  ",
};

void draw_object(Image& img, const SceneObject& o, const Vocabulary& vocab) {
    const int box = o.size == ObjectSize::large ? kLargeBox : kSmallBox;
    const double half = box / 2.0;
    const double cx = o.cell.x * kCellPixels + kCellPixels / 2.0;
    const double cy = o.cell.y * kCellPixels + kCellPixels / 2.0;
    const auto& id = vocab.shape(o.shape).id;
    const Rgb rgb = vocab.color(o.color).rgb;
    for (int py = o.cell.y * kCellPixels; py < (o.cell.y + 1) * kCellPixels; ++py) {
        for (int px = o.cell.x * kCellPixels; px < (o.cell.x + 1) * kCellPixels; ++px) {
            const double u = (px + 0.5 - cx) / half;
            const double v = (py + 0.5 - cy) / half;
            if (std::abs(u) <= 1.0 && std::abs(v) <= 1.0 && shape_contains(id, u, v)) img.set(px, py, rgb);
        }
    }
}

void draw_panel(Image& img, const PatternPanel& p, const Vocabulary& vocab) {
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) {
            const int x0 = (kPanelOrigin + c) * kCellPixels;
            const int y0 = (kPanelOrigin + r) * kCellPixels;
            const bool masked = r == p.masked_row && c == p.masked_col;
            img.fill_rect(x0 + kTileMargin, y0 + kTileMargin, x0 + kCellPixels - kTileMargin,
                          y0 + kCellPixels - kTileMargin, masked ? kMaskTile : vocab.color(p.grid[r][c]).rgb);
            if (!masked) continue;
            constexpr int scale = 3;
            const int gx = x0 + (kCellPixels - 5 * scale) / 2;
            const int gy = y0 + (kCellPixels - 7 * scale) / 2;
            for (int row = 0; row < 7; ++row) {
                for (int col = 0; col < 5; ++col) {
                    if (kQuestionGlyph[row][col] != '#') continue;
                    img.fill_rect(gx + col * scale, gy + row * scale, gx + (col + 1) * scale,
                                  gy + (row + 1) * scale, kMaskGlyph);
                }
            }
        }
    }
}

} // namespace

bool has_rasterizer(std::string_view shape_id) {
    for (auto id : kShapeIds) {
        if (id == shape_id) return true;
    }
    return false;
}

bool shape_contains(std::string_view id, double u, double v) {
    if (id == "circle") return u * u + v * v <= 1.0;
    if (id == "square") return std::abs(u) <= 0.9 && std::abs(v) <= 0.9;
    if (id == "triangle") return v <= 0.9 && std::abs(u) <= (v + 1.0) / 1.9;
    if (id == "ellipse") return u * u + v * v / 0.36 <= 1.0;
    if (id == "diamond") return std::abs(u) + std::abs(v) <= 1.0;
    if (id == "heart") {
        const double x = u * 1.25;
        const double y = -v * 1.25 + 0.25;
        const double a = x * x + y * y - 1.0;
        return a * a * a - x * x * y * y * y <= 0.0;
    }
    if (id == "moon") {
        const double du = u - 0.45;
        const double dv = v + 0.15;
        return u * u + v * v <= 1.0 && du * du + dv * dv > 0.72;
    }
    if (id == "cross") return (std::abs(u) <= 0.3) || (std::abs(v) <= 0.3);
    if (id == "ring") {
        const double r2 = u * u + v * v;
        return r2 <= 1.0 && r2 >= 0.3;
    }
    if (id == "semicircle") {
        const double dv = v - 0.45;
        return v <= 0.45 && u * u + dv * dv <= 1.0;
    }
    if (id == "star" || id == "pentagon" || id == "hexagon" || id == "arrow" || id == "trapezoid") {
        return in_polygon(polygon_for(id), u, v);
    }
    throw ValidationError("no rasterizer for shape '" + std::string(id) + "'");
}

Image render_scene(const Scene& scene, const Vocabulary& vocab) {
    Image img(kCanvasPixels, kCanvasPixels, kBackground);
    if (scene.panel) draw_panel(img, *scene.panel, vocab);
    for (const auto& o : scene.objects) draw_object(img, o, vocab);
    return img;
}

} // namespace svtc
