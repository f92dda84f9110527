#include "svtc/datagen/vocab.hpp"

#include <fstream>
#include <set>

#include "svtc/common/error.hpp"
#include "svtc/datagen/render.hpp"

namespace svtc {

Vocabulary::Vocabulary(std::vector<ColorSpec> colors, std::vector<ShapeSpec> shapes)
    : colors_(std::move(colors)), shapes_(std::move(shapes)) {
    if (colors_.size() != kNumColors) {
        throw ValidationError("vocabulary: expected 12 colors, got " + std::to_string(colors_.size()));
    }
    if (shapes_.size() != kNumShapes) {
        throw ValidationError("vocabulary: expected 15 shapes, got " + std::to_string(shapes_.size()));
    }
    std::set<std::string> ids, names;
    std::set<Rgb> codes;
    for (const auto& c : colors_) {
        if (!ids.insert(c.id).second) throw ValidationError("vocabulary: duplicate color id " + c.id);
        if (!names.insert(c.name).second) throw ValidationError("vocabulary: duplicate color name " + c.name);
        if (!codes.insert(c.rgb).second) throw ValidationError("vocabulary: duplicate color code for " + c.id);
    }
    ids.clear();
    names.clear();
    for (const auto& s : shapes_) {
        if (!ids.insert(s.id).second) throw ValidationError("vocabulary: duplicate shape id " + s.id);
        if (!names.insert(s.display_name).second) {
            throw ValidationError("vocabulary: duplicate shape name " + s.display_name);
        }
        if (!has_rasterizer(s.id)) throw ValidationError("vocabulary: no rasterizer for shape " + s.id);
    }
}

const Vocabulary& Vocabulary::builtin() {
    static const Vocabulary v(
        {
            {"navy", "navy", hex_to_rgb("003049")},
            {"red", "red", hex_to_rgb("D62828")},
            {"orange", "orange", hex_to_rgb("F77F00")},
            {"yellow", "yellow", hex_to_rgb("FCBF49")},
            {"green", "green", hex_to_rgb("2B9348")},
            {"teal", "teal", hex_to_rgb("2A9D8F")},
            {"blue", "blue", hex_to_rgb("1D4ED8")},
            {"purple", "purple", hex_to_rgb("7B2CBF")},
            {"pink", "pink", hex_to_rgb("F15BB5")},
            {"rust", "rust red", hex_to_rgb("B7410E")},
            {"black", "black", hex_to_rgb("111111")},
            {"white", "white", hex_to_rgb("F8F9FA")},
        },
        {
            {"circle", "circle"},     {"square", "square"},     {"triangle", "triangle"},
            {"ellipse", "ellipse"},   {"diamond", "diamond"},   {"star", "star"},
            {"heart", "heart"},       {"arrow", "arrow"},       {"moon", "moon"},
            {"pentagon", "pentagon"}, {"hexagon", "hexagon"},   {"cross", "cross"},
            {"ring", "ring"},         {"semicircle", "semicircle"}, {"trapezoid", "trapezoid"},
        });
    return v;
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
    std::vector<ColorSpec> colors;
    std::vector<ShapeSpec> shapes;
    try {
        for (const auto& c : j.at("colors")) {
            colors.push_back({c.at("id").get<std::string>(), c.at("name").get<std::string>(),
                              hex_to_rgb(c.at("hex").get<std::string>())});
        }
        for (const auto& s : j.at("shapes")) {
            shapes.push_back({s.at("id").get<std::string>(), s.at("display_name").get<std::string>()});
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("vocabulary: ") + e.what());
    }
    return Vocabulary(std::move(colors), std::move(shapes));
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open vocabulary " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    return from_json(j);
}

nlohmann::ordered_json Vocabulary::to_json() const {
    nlohmann::ordered_json j;
    j["colors"] = nlohmann::ordered_json::array();
    for (const auto& c : colors_) {
        j["colors"].push_back({{"id", c.id}, {"name", c.name}, {"hex", rgb_to_hex(c.rgb)}});
    }
    j["shapes"] = nlohmann::ordered_json::array();
    for (const auto& s : shapes_) j["shapes"].push_back({{"id", s.id}, {"display_name", s.display_name}});
    return j;
}

int Vocabulary::color_index(std::string_view id) const {
    for (size_t i = 0; i < colors_.size(); ++i) {
        if (colors_[i].id == id) return static_cast<int>(i);
    }
    throw ValidationError("unknown color id '" + std::string(id) + "'");
}

int Vocabulary::shape_index(std::string_view id) const {
    for (size_t i = 0; i < shapes_.size(); ++i) {
        if (shapes_[i].id == id) return static_cast<int>(i);
    }
    throw ValidationError("unknown shape id '" + std::string(id) + "'");
}

std::string rgb_to_hex(Rgb c) {
    static constexpr char kHex[] = "0123456789ABCDEF";
    std::string s;
    for (auto b : c) {
        s.push_back(kHex[b >> 4]);
        s.push_back(kHex[b & 0xF]);
    }
    return s;
}

Rgb hex_to_rgb(std::string_view hex) {
    if (hex.size() == 7 && hex[0] == '#') hex.remove_prefix(1);
    if (hex.size() != 6) throw ValidationError("bad hex color '" + std::string(hex) + "'");
    auto nibble = [&](char ch) -> int {
        if (ch >= '0' && ch <= '9') return ch - '0';
        if (ch >= 'a' && ch <= 'f') return ch - 'a' + 10;
        if (ch >= 'A' && ch <= 'F') return ch - 'A' + 10;
        throw ValidationError("bad hex color '" + std::string(hex) + "'");
    };
    Rgb c{};
    for (int i = 0; i < 3; ++i) c[i] = static_cast<std::uint8_t>(nibble(hex[2 * i]) * 16 + nibble(hex[2 * i + 1]));
    return c;
}

std::string pluralize(std::string_view noun) {
    std::string s(noun);
    auto ends_with = [&](std::string_view suf) {
        return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
    };
    if (ends_with("s") || ends_with("x") || ends_with("sh") || ends_with("ch")) return s + "es";
    return s + "s";
}

} // namespace svtc
