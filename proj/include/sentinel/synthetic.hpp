#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sentinel/error.hpp"
#include "sentinel/image.hpp"
#include "sentinel/rng.hpp"
#include "sentinel/slide.hpp"

namespace sentinel {

/// Per-channel Gaussian color model: mean RGB plus jitter stddev.
struct ColorModel {
    std::array<double, 3> mean{0, 0, 0};
    double stddev = 0.0;
};

/// Configuration for the deterministic synthetic slide generator. Stands in
/// for scanner output at desk scale: saturated tissue blobs on a gray
/// background, with tumor blobs (color-shifted) nested inside tissue so a
/// small classifier can genuinely learn the task.
struct SyntheticSlideConfig {
    std::string slide_id = "slide";
    int level0_width = 1024;
    int level0_height = 1024;
    int level_count = 3; // downsample factors 1, 2, 4, ...

    int tissue_blob_count = 3;
    int tissue_radius_min = 120;
    int tissue_radius_max = 200;
    int tumor_blob_count = 0;
    int tumor_radius_min = 32;
    int tumor_radius_max = 64;

    ColorModel background{{235, 233, 238}, 0.0};
    ColorModel tissue_color{{206, 126, 168}, 12.0};
    ColorModel tumor_color{{138, 92, 188}, 12.0};

    // superellipse exponent; 2 = ellipse, higher fills the bounding box more
    double blob_exponent = 4.0;
    std::uint64_t seed = 1;
};

struct SyntheticSlideReport {
    SlideManifest manifest;
    std::filesystem::path manifest_path;
    std::int64_t tissue_pixels = 0; // level-0 pixels covered by tissue blobs (tumor included)
    std::int64_t tumor_pixels = 0;  // level-0 pixels in the ground-truth mask
};

namespace detail {

struct Blob {
    double cx, cy; // center
    double a, b;   // semi-axes
    double n;      // exponent

    bool inside(double x, double y) const {
        return std::pow(std::abs((x - cx) / a), n) + std::pow(std::abs((y - cy) / b), n) <= 1.0;
    }
    // integer pixel bbox (half-open)
    std::int64_t x0() const { return static_cast<std::int64_t>(std::floor(cx - a)); }
    std::int64_t y0() const { return static_cast<std::int64_t>(std::floor(cy - b)); }
    std::int64_t x1() const { return static_cast<std::int64_t>(std::ceil(cx + a)) + 1; }
    std::int64_t y1() const { return static_cast<std::int64_t>(std::ceil(cy + b)) + 1; }

    bool bbox_disjoint(const Blob& o, double gap) const {
        return cx + a + gap < o.cx - o.a || o.cx + o.a + gap < cx - a ||
               cy + b + gap < o.cy - o.b || o.cy + o.b + gap < cy - b;
    }
};

// True when every boundary sample of `inner` satisfies `outer`'s inequality.
inline bool blob_contains(const Blob& outer, const Blob& inner) {
    constexpr int samples = 64;
    for (int k = 0; k < samples; ++k) {
        double theta = 2.0 * 3.14159265358979323846 * k / samples;
        double c = std::cos(theta), s = std::sin(theta);
        double px = inner.cx + inner.a * std::copysign(std::pow(std::abs(c), 2.0 / inner.n), c);
        double py = inner.cy + inner.b * std::copysign(std::pow(std::abs(s), 2.0 / inner.n), s);
        if (!outer.inside(px, py))
            return false;
    }
    return true;
}

inline void paint_blob(RasterImage& canvas, RasterImage* mask, const Blob& blob,
                       const ColorModel& color, const Blob* clip, Rng& rng,
                       std::int64_t& painted) {
    std::int64_t x0 = std::max<std::int64_t>(0, blob.x0());
    std::int64_t y0 = std::max<std::int64_t>(0, blob.y0());
    std::int64_t x1 = std::min<std::int64_t>(canvas.width, blob.x1());
    std::int64_t y1 = std::min<std::int64_t>(canvas.height, blob.y1());
    for (std::int64_t y = y0; y < y1; ++y)
        for (std::int64_t x = x0; x < x1; ++x) {
            double px = x + 0.5, py = y + 0.5;
            if (!blob.inside(px, py))
                continue;
            if (clip && !clip->inside(px, py))
                continue;
            for (int c = 0; c < 3; ++c) {
                double v = color.mean[c];
                if (color.stddev > 0.0)
                    v += color.stddev * rng.gaussian();
                canvas.at(static_cast<int>(x), static_cast<int>(y), c) = clamp_u8(v);
            }
            if (mask)
                mask->at(static_cast<int>(x), static_cast<int>(y)) = 255;
            ++painted;
        }
}

} // namespace detail

/// Writes a complete synthetic slide (pyramid rasters, ground-truth mask,
/// manifest) into output_dir. Byte-identical output for identical
/// config+seed. Throws ConfigError when blobs cannot be placed under the
/// config's geometry.
inline SyntheticSlideReport generate_synthetic_slide(const SyntheticSlideConfig& cfg,
                                                     const std::filesystem::path& output_dir) {
    if (cfg.level_count < 1 || cfg.level0_width < 4 || cfg.level0_height < 4)
        throw ConfigError("synthetic slide: invalid geometry");
    if (cfg.tissue_blob_count < 1 && cfg.tumor_blob_count > 0)
        throw ConfigError("synthetic slide: tumor blobs require tissue blobs");

    std::error_code ec;
    std::filesystem::create_directories(output_dir, ec);
    if (ec)
        throw ConfigError("synthetic slide: cannot create output directory " +
                          output_dir.string() + ": " + ec.message());

    Rng rng(cfg.seed);
    const double W = cfg.level0_width, H = cfg.level0_height;

    // Place tissue blobs with disjoint bounding boxes; a small gap keeps
    // components separate after blurring at thumbnail scale.
    std::vector<detail::Blob> tissue;
    for (int i = 0; i < cfg.tissue_blob_count; ++i) {
        bool placed = false;
        for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
            detail::Blob blob;
            blob.a = static_cast<double>(rng.uniform_int(cfg.tissue_radius_min, cfg.tissue_radius_max));
            blob.b = static_cast<double>(rng.uniform_int(cfg.tissue_radius_min, cfg.tissue_radius_max));
            blob.n = cfg.blob_exponent;
            if (2 * blob.a + 2 >= W || 2 * blob.b + 2 >= H)
                continue;
            blob.cx = rng.uniform_range(blob.a + 1, W - blob.a - 1);
            blob.cy = rng.uniform_range(blob.b + 1, H - blob.b - 1);
            placed = true;
            for (const auto& other : tissue)
                if (!blob.bbox_disjoint(other, 24.0)) {
                    placed = false;
                    break;
                }
            if (placed)
                tissue.push_back(blob);
        }
        if (!placed)
            throw ConfigError("synthetic slide: cannot place tissue blob " + std::to_string(i) +
                              " (too many / too large for the canvas)");
    }

    std::vector<detail::Blob> tumors;
    std::vector<int> tumor_parent;
    for (int i = 0; i < cfg.tumor_blob_count; ++i) {
        bool placed = false;
        for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
            int parent = static_cast<int>(rng.uniform_u64(tissue.size()));
            const detail::Blob& host = tissue[parent];
            detail::Blob blob;
            blob.a = static_cast<double>(rng.uniform_int(cfg.tumor_radius_min, cfg.tumor_radius_max));
            blob.b = static_cast<double>(rng.uniform_int(cfg.tumor_radius_min, cfg.tumor_radius_max));
            blob.n = cfg.blob_exponent;
            if (blob.a >= host.a || blob.b >= host.b)
                continue;
            blob.cx = rng.uniform_range(host.cx - (host.a - blob.a), host.cx + (host.a - blob.a));
            blob.cy = rng.uniform_range(host.cy - (host.b - blob.b), host.cy + (host.b - blob.b));
            if (!detail::blob_contains(host, blob))
                continue;
            placed = true;
            for (const auto& other : tumors)
                if (!blob.bbox_disjoint(other, 4.0)) {
                    placed = false;
                    break;
                }
            if (placed) {
                tumors.push_back(blob);
                tumor_parent.push_back(parent);
            }
        }
        if (!placed)
            throw ConfigError("synthetic slide: tumor blob " + std::to_string(i) +
                              " cannot fit inside any tissue blob under this config");
    }

    // Rasterize level 0 and the mask.
    RasterImage level0(cfg.level0_width, cfg.level0_height, 3);
    for (int y = 0; y < level0.height; ++y)
        for (int x = 0; x < level0.width; ++x)
            for (int c = 0; c < 3; ++c) {
                double v = cfg.background.mean[c];
                if (cfg.background.stddev > 0.0)
                    v += cfg.background.stddev * rng.gaussian();
                level0.at(x, y, c) = clamp_u8(v);
            }
    RasterImage mask(cfg.level0_width, cfg.level0_height, 1, 0);

    SyntheticSlideReport report;
    for (const auto& blob : tissue)
        detail::paint_blob(level0, nullptr, blob, cfg.tissue_color, nullptr, rng,
                           report.tissue_pixels);
    for (std::size_t i = 0; i < tumors.size(); ++i)
        detail::paint_blob(level0, &mask, tumors[i], cfg.tumor_color, &tissue[tumor_parent[i]], rng,
                           report.tumor_pixels);

    // Pyramid levels, each a direct box-filtered downsample of level 0.
    SlideManifest manifest;
    manifest.slide_id = cfg.slide_id;
    manifest.label = cfg.tumor_blob_count > 0 ? "tumor" : "normal";
    manifest.mask_path = "mask.pgm";
    for (int k = 0; k < cfg.level_count; ++k) {
        int factor = 1 << k;
        RasterImage raster = box_downsample(level0, factor);
        LevelDescriptor lv;
        lv.index = k;
        lv.width = raster.width;
        lv.height = raster.height;
        lv.downsample = static_cast<double>(factor);
        lv.path = "level_" + std::to_string(k) + ".ppm";
        write_pnm(output_dir / lv.path, raster);
        manifest.levels.push_back(lv);
    }
    write_pnm(output_dir / manifest.mask_path, mask);

    report.manifest = manifest;
    report.manifest_path = output_dir / "manifest.json";
    write_manifest(report.manifest_path, manifest);
    return report;
}

} // namespace sentinel
