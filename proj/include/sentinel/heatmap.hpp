#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <vector>

#include "sentinel/error.hpp"
#include "sentinel/image.hpp"
#include "sentinel/morphology.hpp"
#include "sentinel/slide.hpp"

namespace sentinel {

struct TilePrediction {
    std::int64_t x = 0; // tile origin at the tiling level
    std::int64_t y = 0;
    double p_tumor = 0.0;
};

/// Grid of tumor probabilities, one cell per tile. Cells never covered by a
/// tile hold the no-tissue sentinel (-1, outside the valid range). Cell
/// footprints are disjoint by construction.
struct Heatmap {
    static constexpr float no_tissue = -1.0f;

    int cells_w = 0;
    int cells_h = 0;
    int cell_pixel_size = 0; // at the output level (tile_size / ratio)
    int tile_size = 0;       // at the tiling level
    int tiling_level = 0;
    int output_level = 0;    // tiling_level + log2(ratio); a coordinate scale,
                             // whether or not the pyramid stores that level
    std::vector<float> cells;

    float at(int cx, int cy) const { return cells[static_cast<std::size_t>(cy) * cells_w + cx]; }
    float& at(int cx, int cy) { return cells[static_cast<std::size_t>(cy) * cells_w + cx]; }
    bool defined(int cx, int cy) const { return at(cx, cy) >= 0.0f; }

    std::int64_t defined_count() const {
        std::int64_t n = 0;
        for (float v : cells)
            n += (v >= 0.0f);
        return n;
    }

    /// Footprint of one cell at the output level.
    Rect cell_rect(int cx, int cy) const {
        return Rect{static_cast<std::int64_t>(cx) * cell_pixel_size,
                    static_cast<std::int64_t>(cy) * cell_pixel_size, cell_pixel_size,
                    cell_pixel_size};
    }
    /// The originating tile rectangle at the tiling level.
    Rect tile_rect(int cx, int cy) const {
        return Rect{static_cast<std::int64_t>(cx) * tile_size,
                    static_cast<std::int64_t>(cy) * tile_size, tile_size, tile_size};
    }
};

/// Assembles per-tile probabilities into the downsampled heatmap. Tiles must
/// lie on the non-overlapping tile_size grid; the ratio must divide the tile
/// size and be a power of two so cell geometry maps back exactly.
inline Heatmap build_heatmap(int level_width, int level_height, int tiling_level, int tile_size,
                             const std::vector<TilePrediction>& predictions,
                             int output_downsample_ratio) {
    if (tile_size < 1 || level_width < tile_size || level_height < tile_size)
        throw ConfigError("build_heatmap: tile size does not fit the level");
    if (output_downsample_ratio < 1 || tile_size % output_downsample_ratio != 0)
        throw ConfigError("build_heatmap: ratio must divide the tile size");
    if (!std::has_single_bit(static_cast<unsigned>(output_downsample_ratio)))
        throw ConfigError("build_heatmap: ratio must be a power of two");

    Heatmap hm;
    hm.cells_w = level_width / tile_size;
    hm.cells_h = level_height / tile_size;
    hm.cell_pixel_size = tile_size / output_downsample_ratio;
    hm.tile_size = tile_size;
    hm.tiling_level = tiling_level;
    hm.output_level = tiling_level + std::countr_zero(static_cast<unsigned>(output_downsample_ratio));
    hm.cells.assign(static_cast<std::size_t>(hm.cells_w) * hm.cells_h, Heatmap::no_tissue);

    for (const TilePrediction& pred : predictions) {
        if (pred.x < 0 || pred.y < 0 || pred.x % tile_size != 0 || pred.y % tile_size != 0)
            throw ConfigError("build_heatmap: tile origin off the tiling grid");
        std::int64_t cx = pred.x / tile_size, cy = pred.y / tile_size;
        if (cx >= hm.cells_w || cy >= hm.cells_h)
            throw ConfigError("build_heatmap: tile outside the level");
        float& cell = hm.at(static_cast<int>(cx), static_cast<int>(cy));
        if (cell != Heatmap::no_tissue)
            throw ConfigError("build_heatmap: overlapping tiles at cell (" + std::to_string(cx) +
                              "," + std::to_string(cy) + ")");
        cell = static_cast<float>(std::clamp(pred.p_tumor, 0.0, 1.0));
    }
    return hm;
}

/// Linear blue-to-red colormap; no-tissue cells render neutral gray
/// (128,128,128). p=0 is pure blue (0,0,255), p=1 pure red (255,0,0).
inline std::array<std::uint8_t, 3> heatmap_color(float p) {
    if (p < 0.0f)
        return {128, 128, 128};
    double v = std::clamp<double>(p, 0.0, 1.0);
    return {clamp_u8(255.0 * v), 0, clamp_u8(255.0 * (1.0 - v))};
}

/// Renders the heatmap with one cell_pixel_size square per cell, matching the
/// output-level geometry.
inline RasterImage render_heatmap(const Heatmap& hm) {
    RasterImage img(hm.cells_w * hm.cell_pixel_size, hm.cells_h * hm.cell_pixel_size, 3);
    for (int cy = 0; cy < hm.cells_h; ++cy)
        for (int cx = 0; cx < hm.cells_w; ++cx) {
            auto rgb = heatmap_color(hm.at(cx, cy));
            Rect r = hm.cell_rect(cx, cy);
            for (std::int64_t y = r.y; y < r.y + r.h; ++y)
                for (std::int64_t x = r.x; x < r.x + r.w; ++x)
                    for (int c = 0; c < 3; ++c)
                        img.at(static_cast<int>(x), static_cast<int>(y), c) = rgb[c];
        }
    return img;
}

/// Alpha-blends the rendered heatmap onto a slide level resized to the render
/// geometry (nearest neighbor); no-tissue cells show the slide unchanged.
inline RasterImage overlay_heatmap(const Heatmap& hm, const PyramidalSlide& slide,
                                   double alpha = 0.5) {
    RasterImage out(hm.cells_w * hm.cell_pixel_size, hm.cells_h * hm.cell_pixel_size, 3);
    // pick the smallest stored level at least as large as the render
    int src_level = 0;
    for (int k = slide.level_count() - 1; k >= 0; --k)
        if (slide.level(k).width >= out.width && slide.level(k).height >= out.height) {
            src_level = k;
            break;
        }
    const RasterImage& src = slide.level_raster(src_level);
    const double sx = static_cast<double>(src.width) / out.width;
    const double sy = static_cast<double>(src.height) / out.height;
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x) {
            int ix = std::min(src.width - 1, static_cast<int>(x * sx));
            int iy = std::min(src.height - 1, static_cast<int>(y * sy));
            float p = hm.at(x / hm.cell_pixel_size, y / hm.cell_pixel_size);
            for (int c = 0; c < 3; ++c) {
                double base = src.at(ix, iy, c);
                if (p >= 0.0f) {
                    auto rgb = heatmap_color(p);
                    base = (1.0 - alpha) * base + alpha * rgb[c];
                }
                out.at(x, y, c) = clamp_u8(base);
            }
        }
    return out;
}

/// Cell-level threshold: foreground iff p > t (strictly); no-tissue cells are
/// background.
inline BinaryMask threshold_heatmap(const Heatmap& hm, double t) {
    if (t < 0.0 || t > 1.0)
        throw ConfigError("threshold_heatmap: threshold must lie in [0, 1]");
    BinaryMask mask(hm.cells_w, hm.cells_h);
    for (int cy = 0; cy < hm.cells_h; ++cy)
        for (int cx = 0; cx < hm.cells_w; ++cx) {
            float p = hm.at(cx, cy);
            mask.set(cx, cy, p >= 0.0f && p > t);
        }
    return mask;
}

// ---------------------------------------------------------------------------
// Raw heatmap file: header plus row-major 32-bit little-endian floats.
// Rendering is a separate lossy view; this round-trips bit-exactly.
// ---------------------------------------------------------------------------

inline void write_heatmap(const std::filesystem::path& path, const Heatmap& hm) {
    static_assert(std::endian::native == std::endian::little);
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw ConfigError("cannot write heatmap: " + path.string());
    out.write("SHMP", 4);
    auto put_u32 = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
    auto put_i32 = [&](std::int32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
    put_u32(1); // format version
    put_u32(static_cast<std::uint32_t>(hm.cells_w));
    put_u32(static_cast<std::uint32_t>(hm.cells_h));
    put_u32(static_cast<std::uint32_t>(hm.cell_pixel_size));
    put_u32(static_cast<std::uint32_t>(hm.tile_size));
    put_i32(hm.tiling_level);
    put_i32(hm.output_level);
    float sentinel_value = Heatmap::no_tissue;
    out.write(reinterpret_cast<const char*>(&sentinel_value), 4);
    out.write(reinterpret_cast<const char*>(hm.cells.data()),
              static_cast<std::streamsize>(hm.cells.size() * sizeof(float)));
}

inline Heatmap read_heatmap(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw MissingArtifactError("heatmap not found: " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (in.gcount() != 4 || std::memcmp(magic, "SHMP", 4) != 0)
        throw ConfigError("not a heatmap file: " + path.string());
    auto get_u32 = [&] {
        std::uint32_t v;
        in.read(reinterpret_cast<char*>(&v), 4);
        return v;
    };
    auto get_i32 = [&] {
        std::int32_t v;
        in.read(reinterpret_cast<char*>(&v), 4);
        return v;
    };
    std::uint32_t version = get_u32();
    if (version != 1)
        throw ConfigError("unsupported heatmap version in " + path.string());
    Heatmap hm;
    hm.cells_w = static_cast<int>(get_u32());
    hm.cells_h = static_cast<int>(get_u32());
    hm.cell_pixel_size = static_cast<int>(get_u32());
    hm.tile_size = static_cast<int>(get_u32());
    hm.tiling_level = get_i32();
    hm.output_level = get_i32();
    float sentinel_value;
    in.read(reinterpret_cast<char*>(&sentinel_value), 4);
    hm.cells.resize(static_cast<std::size_t>(hm.cells_w) * hm.cells_h);
    in.read(reinterpret_cast<char*>(hm.cells.data()),
            static_cast<std::streamsize>(hm.cells.size() * sizeof(float)));
    if (in.gcount() != static_cast<std::streamsize>(hm.cells.size() * sizeof(float)))
        throw ConfigError("heatmap file truncated: " + path.string());
    return hm;
}

} // namespace sentinel
