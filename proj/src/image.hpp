#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

namespace latenthop::image {

using Rgb = std::array<uint8_t, 3>;

inline constexpr Rgb kWhite{255, 255, 255};
inline constexpr Rgb kBlack{0, 0, 0};
inline constexpr Rgb kGrey{160, 160, 160};

class Canvas {
public:
    Canvas(int width, int height, Rgb background = kWhite);

    int width() const { return width_; }
    int height() const { return height_; }

    void set(int x, int y, Rgb c);
    void fill_rect(int x, int y, int w, int h, Rgb c);
    void rect(int x, int y, int w, int h, Rgb c);
    void hline(int x0, int x1, int y, Rgb c);
    void vline(int x, int y0, int y1, Rgb c);
    /// 3x5 bitmap glyphs scaled by `scale`. Digits, letters and a few symbols.
    void text(int x, int y, std::string_view s, Rgb c, int scale = 2);
    static int text_width(std::string_view s, int scale = 2) { return static_cast<int>(s.size()) * 4 * scale; }

    void write_png(const std::filesystem::path& path) const;

private:
    int width_;
    int height_;
    std::vector<uint8_t> rgb_;
};

/// White to dark blue.
Rgb sequential(double t);

}  // namespace latenthop::image
