#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace svtc {

using Rgb = std::array<std::uint8_t, 3>;

// 8-bit interleaved RGB raster, row-major, origin at the top-left.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;

    Image() = default;
    Image(int w, int h, Rgb fill);

    Rgb at(int x, int y) const;
    void set(int x, int y, Rgb c);
    void fill_rect(int x0, int y0, int x1, int y1, Rgb c); // half-open [x0,x1) x [y0,y1)

    // Pixels in [x0,x1) x [y0,y1) exactly equal to c.
    int count(Rgb c, int x0, int y0, int x1, int y1) const;

    bool operator==(const Image&) const = default;
};

// PNG I/O through libpng. Output bytes are a pure function of the image.
void write_png(const std::filesystem::path& path, const Image& img);
Image read_png(const std::filesystem::path& path);

} // namespace svtc
