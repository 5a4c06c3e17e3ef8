#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sentinel/error.hpp"
#include "sentinel/image.hpp"
#include "sentinel/rng.hpp"
#include "sentinel/segmentation.hpp"
#include "sentinel/slide.hpp"

namespace sentinel {

enum class TileLabel { tissue, tumor, excluded };

inline const char* to_string(TileLabel label) {
    switch (label) {
    case TileLabel::tissue: return "tissue";
    case TileLabel::tumor: return "tumor";
    case TileLabel::excluded: return "excluded";
    }
    return "tissue";
}

inline TileLabel tile_label_from_string(const std::string& s) {
    if (s == "tissue")
        return TileLabel::tissue;
    if (s == "tumor")
        return TileLabel::tumor;
    if (s == "excluded")
        return TileLabel::excluded;
    throw ConfigError("unknown tile label: " + s);
}

struct TileRecord {
    std::string slide_id;
    int level = 0;
    std::int64_t x = 0;
    std::int64_t y = 0;
    int size = 256;
    TileLabel label = TileLabel::tissue;
    double tumor_fraction = 0.0;
};

/// Labeling rule: tumor above the majority cutpoint, tissue only when the
/// tile is completely clear of the mask, excluded in between.
inline TileLabel label_for_fraction(double fraction) {
    if (fraction > 0.5)
        return TileLabel::tumor;
    if (fraction == 0.0)
        return TileLabel::tissue;
    return TileLabel::excluded;
}

/// Partitions tissue contours into grid tiles. One global grid with stride =
/// tile_size is anchored at (0,0) of the tiling level: a cell is emitted when
/// it lies fully inside a contour bbox and at least min_tissue_fraction of
/// its footprint is tissue in the detection mask. Cells shared by multiple
/// contour bboxes are emitted once; records are sorted by (y, x).
inline std::vector<TileRecord> tile_contours(const PyramidalSlide& slide,
                                             const SegmentationResult& seg, int tile_size,
                                             double min_tissue_fraction = 0.25) {
    const LevelDescriptor& lv = slide.level(seg.tiling_level);
    if (tile_size <= 0 || tile_size > lv.width || tile_size > lv.height)
        throw ConfigError("tile_contours: tile size " + std::to_string(tile_size) +
                          " does not fit level " + std::to_string(seg.tiling_level));
    const double det_scale =
        slide.level(seg.detection_level).downsample / slide.level(seg.tiling_level).downsample;

    // tissue coverage of a tiling-level cell, sampled on a 16x16 sub-grid of
    // the detection mask
    auto coverage = [&](std::int64_t cx, std::int64_t cy) {
        constexpr int samples = 16;
        int hits = 0;
        for (int sy = 0; sy < samples; ++sy)
            for (int sx = 0; sx < samples; ++sx) {
                double px = cx + (sx + 0.5) * tile_size / samples;
                double py = cy + (sy + 0.5) * tile_size / samples;
                auto mx = static_cast<std::int64_t>(px / det_scale);
                auto my = static_cast<std::int64_t>(py / det_scale);
                if (seg.detection_mask.in_bounds(mx, my) &&
                    seg.detection_mask.at(static_cast<int>(mx), static_cast<int>(my)))
                    ++hits;
            }
        return static_cast<double>(hits) / (samples * samples);
    };

    std::set<std::pair<std::int64_t, std::int64_t>> cells; // (y, x), de-duplicated and ordered
    for (const Contour& contour : seg.contours) {
        const Rect& bbox = contour.bbox;
        std::int64_t first_x = (bbox.x + tile_size - 1) / tile_size;
        std::int64_t first_y = (bbox.y + tile_size - 1) / tile_size;
        std::int64_t last_x = (bbox.x + bbox.w) / tile_size; // exclusive cell index bound
        std::int64_t last_y = (bbox.y + bbox.h) / tile_size;
        for (std::int64_t gy = first_y; gy < last_y; ++gy)
            for (std::int64_t gx = first_x; gx < last_x; ++gx) {
                std::int64_t cx = gx * tile_size, cy = gy * tile_size;
                if (cx + tile_size > lv.width || cy + tile_size > lv.height)
                    continue;
                cells.insert({cy, cx});
            }
    }

    std::vector<TileRecord> records;
    for (const auto& [cy, cx] : cells) {
        if (coverage(cx, cy) < min_tissue_fraction)
            continue;
        TileRecord rec;
        rec.slide_id = slide.id();
        rec.level = seg.tiling_level;
        rec.x = cx;
        rec.y = cy;
        rec.size = tile_size;
        records.push_back(std::move(rec));
    }
    return records;
}

/// Fills in tumor_fraction and label from the slide's level-0 ground-truth
/// mask. Slides labeled "normal" carry no mask and get all-tissue labels;
/// anything else without a mask is an error.
inline std::vector<TileRecord> label_tiles(const std::vector<TileRecord>& tiles,
                                           const PyramidalSlide& slide) {
    std::vector<TileRecord> out = tiles;
    if (!slide.has_mask()) {
        if (slide.manifest().label == "normal") {
            for (TileRecord& rec : out) {
                rec.tumor_fraction = 0.0;
                rec.label = TileLabel::tissue;
            }
            return out;
        }
        throw ConfigError("label_tiles: slide " + slide.id() +
                          " has no ground-truth mask and is not labeled normal");
    }
    const RasterImage& mask = slide.mask();
    for (TileRecord& rec : out) {
        std::int64_t f = slide.integer_scale(rec.level, 0);
        std::int64_t x0 = rec.x * f, y0 = rec.y * f;
        std::int64_t side = static_cast<std::int64_t>(rec.size) * f;
        std::int64_t inside = 0;
        for (std::int64_t y = y0; y < y0 + side; ++y)
            for (std::int64_t x = x0; x < x0 + side; ++x)
                if (mask.at(static_cast<int>(x), static_cast<int>(y)) != 0)
                    ++inside;
        rec.tumor_fraction = static_cast<double>(inside) / static_cast<double>(side * side);
        rec.label = label_for_fraction(rec.tumor_fraction);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Slide-level dataset split
// ---------------------------------------------------------------------------

enum class Split { train, validation, test };

inline const char* to_string(Split s) {
    switch (s) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::test: return "test";
    }
    return "train";
}

inline Split split_from_string(const std::string& s) {
    if (s == "train")
        return Split::train;
    if (s == "validation")
        return Split::validation;
    if (s == "test")
        return Split::test;
    throw ConfigError("unknown split: " + s);
}

struct SplitAssignment {
    std::map<std::string, Split> assignment; // keyed by slide_id
    std::uint64_t seed = 0;

    Split of(const std::string& slide_id) const {
        auto it = assignment.find(slide_id);
        if (it == assignment.end())
            throw ConfigError("slide " + slide_id + " is not in the split assignment");
        return it->second;
    }

    nlohmann::json to_json() const {
        nlohmann::json a = nlohmann::json::object();
        for (const auto& [id, split] : assignment)
            a[id] = to_string(split);
        return {{"format_version", 1}, {"seed", seed}, {"assignment", a}};
    }
    static SplitAssignment from_json(const nlohmann::json& j) {
        SplitAssignment s;
        try {
            s.seed = j.at("seed").get<std::uint64_t>();
            for (const auto& [id, split] : j.at("assignment").items())
                s.assignment[id] = split_from_string(split.get<std::string>());
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("split document: ") + e.what());
        }
        return s;
    }
};

/// 60-20-20 slide-level split, stratified by label where labels exist, with
/// largest-remainder rounding per stratum (ties favor train, then validation).
/// Deterministic in the seed.
inline SplitAssignment split_dataset(const std::vector<std::pair<std::string, std::string>>& slides,
                                     std::uint64_t seed) {
    if (slides.size() < 5)
        throw ConfigError("split_dataset: need at least 5 slides");
    std::map<std::string, std::vector<std::string>> strata;
    for (const auto& [id, label] : slides)
        strata[label].push_back(id);

    constexpr double proportions[3] = {0.6, 0.2, 0.2};
    SplitAssignment result;
    result.seed = seed;
    Rng rng(seed);
    for (auto& [label, ids] : strata) {
        std::sort(ids.begin(), ids.end());
        rng.shuffle(ids);
        const std::size_t n = ids.size();
        std::size_t counts[3];
        double remainders[3];
        std::size_t assigned = 0;
        for (int s = 0; s < 3; ++s) {
            double want = proportions[s] * static_cast<double>(n);
            counts[s] = static_cast<std::size_t>(want);
            remainders[s] = want - static_cast<double>(counts[s]);
            assigned += counts[s];
        }
        while (assigned < n) {
            int pick = 0;
            for (int s = 1; s < 3; ++s)
                if (remainders[s] > remainders[pick])
                    pick = s;
            ++counts[pick];
            remainders[pick] = -1.0;
            ++assigned;
        }
        std::size_t i = 0;
        for (int s = 0; s < 3; ++s)
            for (std::size_t k = 0; k < counts[s]; ++k)
                result.assignment[ids[i++]] = static_cast<Split>(s);
    }
    return result;
}

// ---------------------------------------------------------------------------
// Mean image and augmentation
// ---------------------------------------------------------------------------

/// Exact per-pixel arithmetic mean over uniformly sized training tiles.
inline ImageF compute_mean_image(std::span<const RasterImage> tiles) {
    if (tiles.empty())
        throw ConfigError("compute_mean_image: need at least one tile");
    const RasterImage& first = tiles.front();
    ImageF mean(first.width, first.height, first.channels);
    for (const RasterImage& tile : tiles) {
        if (tile.width != first.width || tile.height != first.height ||
            tile.channels != first.channels)
            throw ConfigError("compute_mean_image: mixed tile shapes");
        for (std::size_t i = 0; i < tile.samples.size(); ++i)
            mean.samples[i] += tile.samples[i];
    }
    for (double& v : mean.samples)
        v /= static_cast<double>(tiles.size());
    return mean;
}

/// Random crop plus horizontal reflection. Draw order is fixed (origin x,
/// origin y, flip) so a seeded Rng reproduces the same augmentation.
inline RasterImage augment(const RasterImage& tile, int crop_size, Rng& rng) {
    if (crop_size > tile.width || crop_size > tile.height)
        throw ConfigError("augment: crop size exceeds tile size");
    int max_x = tile.width - crop_size;
    int max_y = tile.height - crop_size;
    int ox = max_x == 0 ? 0 : static_cast<int>(rng.uniform_int(0, max_x));
    int oy = max_y == 0 ? 0 : static_cast<int>(rng.uniform_int(0, max_y));
    bool flip = rng.bernoulli(0.5);
    RasterImage out(crop_size, crop_size, tile.channels);
    for (int y = 0; y < crop_size; ++y)
        for (int x = 0; x < crop_size; ++x) {
            int sx = flip ? ox + crop_size - 1 - x : ox + x;
            for (int c = 0; c < tile.channels; ++c)
                out.at(x, y, c) = tile.at(sx, oy + y, c);
        }
    return out;
}

inline RasterImage augment(const RasterImage& tile, int crop_size, std::uint64_t seed) {
    Rng rng(seed);
    return augment(tile, crop_size, rng);
}

/// Deterministic center crop used at inference time (no flip).
inline RasterImage center_crop(const RasterImage& tile, int crop_size) {
    if (crop_size > tile.width || crop_size > tile.height)
        throw ConfigError("center_crop: crop size exceeds tile size");
    int ox = (tile.width - crop_size) / 2;
    int oy = (tile.height - crop_size) / 2;
    RasterImage out(crop_size, crop_size, tile.channels);
    for (int y = 0; y < crop_size; ++y)
        for (int x = 0; x < crop_size; ++x)
            for (int c = 0; c < tile.channels; ++c)
                out.at(x, y, c) = tile.at(ox + x, oy + y, c);
    return out;
}

// ---------------------------------------------------------------------------
// Tile store: one directory per slide, one raster per tile named by origin,
// plus a tab-delimited index of TileRecords.
// ---------------------------------------------------------------------------

inline std::filesystem::path tile_path(const std::filesystem::path& store_root,
                                       const TileRecord& rec) {
    return store_root / rec.slide_id / (std::to_string(rec.x) + "_" + std::to_string(rec.y) + ".ppm");
}

inline void write_tile_index(const std::filesystem::path& path,
                             const std::vector<TileRecord>& records) {
    std::ofstream out(path);
    if (!out)
        throw ConfigError("cannot write tile index: " + path.string());
    out << "slide_id\tlevel\tx\ty\tsize\tlabel\ttumor_fraction\n";
    out.precision(17);
    for (const TileRecord& r : records)
        out << r.slide_id << '\t' << r.level << '\t' << r.x << '\t' << r.y << '\t' << r.size
            << '\t' << to_string(r.label) << '\t' << r.tumor_fraction << '\n';
}

inline std::vector<TileRecord> read_tile_index(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw MissingArtifactError("tile index not found: " + path.string());
    std::string line;
    if (!std::getline(in, line))
        throw ConfigError("tile index is empty: " + path.string());
    std::vector<TileRecord> records;
    while (std::getline(in, line)) {
        if (line.empty())
            continue;
        std::istringstream ss(line);
        TileRecord r;
        std::string label;
        if (!(ss >> r.slide_id >> r.level >> r.x >> r.y >> r.size >> label >> r.tumor_fraction))
            throw ConfigError("malformed tile index row: " + line);
        r.label = tile_label_from_string(label);
        records.push_back(std::move(r));
    }
    return records;
}

} // namespace sentinel
