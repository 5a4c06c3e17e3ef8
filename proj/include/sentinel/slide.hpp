#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sentinel/error.hpp"
#include "sentinel/geometry.hpp"
#include "sentinel/image.hpp"

namespace sentinel {

struct LevelDescriptor {
    int index = 0;
    int width = 0;
    int height = 0;
    double downsample = 1.0; // linear factor relative to level 0
    std::string path;        // raster file, relative to the manifest directory
};

/// On-disk slide container: a directory of lossless rasters (one per pyramid
/// level) described by a JSON manifest, plus an optional level-0 tumor mask.
struct SlideManifest {
    std::string slide_id;
    std::vector<LevelDescriptor> levels;
    std::string mask_path; // empty when absent
    std::string label;     // "normal", "tumor", or empty when unlabeled

    nlohmann::json to_json() const {
        nlohmann::json levels_json = nlohmann::json::array();
        for (const auto& lv : levels) {
            levels_json.push_back({{"index", lv.index},
                                   {"width", lv.width},
                                   {"height", lv.height},
                                   {"downsample", lv.downsample},
                                   {"path", lv.path}});
        }
        nlohmann::json j{{"format_version", 1},
                         {"slide_id", slide_id},
                         {"levels", levels_json}};
        if (!mask_path.empty())
            j["mask_path"] = mask_path;
        if (!label.empty())
            j["label"] = label;
        return j;
    }

    static SlideManifest from_json(const nlohmann::json& j) {
        SlideManifest m;
        try {
            m.slide_id = j.at("slide_id").get<std::string>();
            for (const auto& lj : j.at("levels")) {
                LevelDescriptor lv;
                lv.index = lj.at("index").get<int>();
                lv.width = lj.at("width").get<int>();
                lv.height = lj.at("height").get<int>();
                lv.downsample = lj.at("downsample").get<double>();
                lv.path = lj.at("path").get<std::string>();
                m.levels.push_back(lv);
            }
            if (j.contains("mask_path"))
                m.mask_path = j.at("mask_path").get<std::string>();
            if (j.contains("label"))
                m.label = j.at("label").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("slide manifest: ") + e.what());
        }
        return m;
    }
};

/// An opened slide: all level rasters validated and resident in memory
/// (desk-scale slides fit per level). Immutable after open; concurrent reads
/// are safe.
class PyramidalSlide {
public:
    static PyramidalSlide open(const std::filesystem::path& manifest_path) {
        std::ifstream in(manifest_path);
        if (!in)
            throw MissingArtifactError("slide manifest not found: " + manifest_path.string());
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("slide manifest parse error in " + manifest_path.string() + ": " +
                              e.what());
        }
        return open(SlideManifest::from_json(j), manifest_path.parent_path());
    }

    static PyramidalSlide open(const SlideManifest& manifest, const std::filesystem::path& dir) {
        PyramidalSlide slide;
        slide.manifest_ = manifest;
        validate_descriptors(manifest);
        for (const auto& lv : manifest.levels) {
            RasterImage raster = read_pnm(dir / lv.path);
            if (raster.width != lv.width || raster.height != lv.height)
                throw ConfigError("slide " + manifest.slide_id + " level " +
                                  std::to_string(lv.index) + ": raster is " +
                                  std::to_string(raster.width) + "x" + std::to_string(raster.height) +
                                  " but descriptor says " + std::to_string(lv.width) + "x" +
                                  std::to_string(lv.height));
            if (raster.channels != 3)
                throw ConfigError("slide " + manifest.slide_id + ": level rasters must be 3-channel");
            slide.rasters_.push_back(std::move(raster));
        }
        if (!manifest.mask_path.empty()) {
            RasterImage mask = read_pnm(dir / manifest.mask_path);
            if (mask.channels != 1)
                throw ConfigError("slide " + manifest.slide_id + ": mask must be 1-channel");
            if (mask.width != manifest.levels[0].width || mask.height != manifest.levels[0].height)
                throw ConfigError("slide " + manifest.slide_id +
                                  ": mask dimensions must match level 0");
            slide.mask_ = std::move(mask);
        }
        return slide;
    }

    const SlideManifest& manifest() const { return manifest_; }
    const std::string& id() const { return manifest_.slide_id; }
    int level_count() const { return static_cast<int>(manifest_.levels.size()); }

    const LevelDescriptor& level(int index) const {
        if (index < 0 || index >= level_count())
            throw ConfigError("unknown level index " + std::to_string(index) + " (slide has " +
                              std::to_string(level_count()) + " levels)");
        return manifest_.levels[index];
    }

    const RasterImage& level_raster(int index) const {
        level(index);
        return rasters_[index];
    }

    bool has_mask() const { return !mask_.empty(); }
    const RasterImage& mask() const {
        if (!has_mask())
            throw ConfigError("slide " + manifest_.slide_id + " has no ground-truth mask");
        return mask_;
    }

    /// Pure rectangular read from one level. The rectangle must lie entirely
    /// within the level's bounds.
    RasterImage read_region(int level_index, std::int64_t x, std::int64_t y, std::int64_t w,
                            std::int64_t h) const {
        const LevelDescriptor& lv = level(level_index);
        if (w <= 0 || h <= 0 || x < 0 || y < 0 || x + w > lv.width || y + h > lv.height)
            throw ConfigError("read_region: rectangle (" + std::to_string(x) + "," +
                              std::to_string(y) + "," + std::to_string(w) + "," + std::to_string(h) +
                              ") exceeds level " + std::to_string(level_index) + " bounds " +
                              std::to_string(lv.width) + "x" + std::to_string(lv.height));
        const RasterImage& src = rasters_[level_index];
        RasterImage out(static_cast<int>(w), static_cast<int>(h), src.channels);
        for (std::int64_t row = 0; row < h; ++row) {
            const std::uint8_t* from =
                &src.samples[((y + row) * src.width + x) * src.channels];
            std::uint8_t* to = &out.samples[row * w * src.channels];
            std::copy(from, from + w * src.channels, to);
        }
        return out;
    }

    /// Linear cross-level coordinate scaling: point * (downsample(from) /
    /// downsample(to)), each coordinate rounded to nearest with ties away
    /// from zero (llround), so contour scaling is reproducible.
    Point scale_point(int from_level, int to_level, Point p) const {
        double factor = level(from_level).downsample / level(to_level).downsample;
        return Point{std::llround(static_cast<double>(p.x) * factor),
                     std::llround(static_cast<double>(p.y) * factor)};
    }

    /// Exact integer linear factor between two levels; throws when the ratio
    /// is not an integer. Tiling and labeling arithmetic requires this.
    std::int64_t integer_scale(int from_level, int to_level) const {
        double factor = level(from_level).downsample / level(to_level).downsample;
        std::int64_t f = std::llround(factor);
        if (f < 1 || std::abs(factor - static_cast<double>(f)) > 1e-9)
            throw ConfigError("levels " + std::to_string(from_level) + "->" +
                              std::to_string(to_level) + " are not related by an integer factor");
        return f;
    }

private:
    static void validate_descriptors(const SlideManifest& m) {
        if (m.levels.empty())
            throw ConfigError("slide " + m.slide_id + ": manifest has no levels");
        if (m.levels[0].downsample != 1.0)
            throw ConfigError("slide " + m.slide_id + ": level 0 downsample must be 1");
        for (std::size_t k = 0; k < m.levels.size(); ++k) {
            const auto& lv = m.levels[k];
            if (lv.index != static_cast<int>(k))
                throw ConfigError("slide " + m.slide_id + ": level indices must be 0..n-1 in order");
            if (lv.width <= 0 || lv.height <= 0 || lv.downsample < 1.0)
                throw ConfigError("slide " + m.slide_id + ": invalid level descriptor");
            if (k > 0 && lv.downsample <= m.levels[k - 1].downsample)
                throw ConfigError("slide " + m.slide_id +
                                  ": downsample factors must strictly increase (level " +
                                  std::to_string(k) + ")");
            long expect_w = std::lround(m.levels[0].width / lv.downsample);
            long expect_h = std::lround(m.levels[0].height / lv.downsample);
            if (lv.width != expect_w || lv.height != expect_h)
                throw ConfigError("slide " + m.slide_id + ": level " + std::to_string(k) +
                                  " dimensions are inconsistent with its downsample factor");
        }
    }

    SlideManifest manifest_;
    std::vector<RasterImage> rasters_;
    RasterImage mask_;
};

inline void write_manifest(const std::filesystem::path& path, const SlideManifest& m) {
    std::ofstream out(path);
    if (!out)
        throw ConfigError("cannot write manifest: " + path.string());
    out << m.to_json().dump(2) << "\n";
}

} // namespace sentinel
