#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "sentinel/error.hpp"
#include "sentinel/heatmap.hpp"
#include "sentinel/regions.hpp"

namespace sentinel {

struct MomentStats {
    double max = 0.0;
    double mean = 0.0;
    double variance = 0.0; // population (divide by n)
    double skewness = 0.0; // m3 / m2^1.5
    double kurtosis = 0.0; // excess: m4 / m2^2 - 3
};

/// Population moments with fixed degenerate conventions: empty input gives
/// all zeros; a singleton or zero-variance sample gives zero
/// variance/skewness/kurtosis.
inline MomentStats moment_stats(std::span<const double> values) {
    MomentStats s;
    if (values.empty())
        return s;
    const double n = static_cast<double>(values.size());
    s.max = values[0];
    double sum = 0.0;
    for (double v : values) {
        s.max = std::max(s.max, v);
        sum += v;
    }
    s.mean = sum / n;
    double m2 = 0.0, m3 = 0.0, m4 = 0.0;
    for (double v : values) {
        double d = v - s.mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    if (m2 > 0.0) {
        s.variance = m2;
        s.skewness = m3 / std::pow(m2, 1.5);
        s.kurtosis = m4 / (m2 * m2) - 3.0;
    }
    return s;
}

/// The 28 slide-level features: {max, mean, variance, skewness, kurtosis} of
/// each of {area, perimeter, compactness, rectangularity, solidity} over
/// tumor regions, plus the average prediction across tumor-region cells, the
/// region count, and the count of cells with p > 0.90.
struct SlideFeatureVector {
    static constexpr int size = 28;
    std::array<double, size> values{};

    static const std::array<std::string, size>& names() {
        static const std::array<std::string, size> n = [] {
            std::array<std::string, size> out;
            const char* props[5] = {"area", "perimeter", "compactness", "rectangularity",
                                    "solidity"};
            const char* stats[5] = {"max", "mean", "variance", "skewness", "kurtosis"};
            int i = 0;
            for (const char* prop : props)
                for (const char* stat : stats)
                    out[i++] = std::string(prop) + "_" + stat;
            out[25] = "average_prediction_across_tumor_regions";
            out[26] = "tumor_region_count";
            out[27] = "count_pixels_p_gt_090";
            return out;
        }();
        return n;
    }

    double operator[](int i) const { return values[i]; }
};

/// Thresholds the heatmap, extracts tumor regions, and assembles the
/// 28-feature vector. Slides with zero tumor regions get the all-zero vector.
inline SlideFeatureVector slide_features(const Heatmap& heatmap, double threshold) {
    BinaryMask mask = threshold_heatmap(heatmap, threshold);
    std::vector<TumorRegion> regions = extract_regions(mask, heatmap);

    SlideFeatureVector fv;
    if (regions.empty())
        return fv;

    std::array<std::vector<double>, 5> props;
    for (auto& p : props)
        p.reserve(regions.size());
    double prob_sum = 0.0;
    std::int64_t cell_count = 0;
    for (const TumorRegion& r : regions) {
        props[0].push_back(r.geometry.area);
        props[1].push_back(r.geometry.perimeter);
        props[2].push_back(r.geometry.compactness);
        props[3].push_back(r.geometry.rectangularity);
        props[4].push_back(r.geometry.solidity);
        for (const Point& cell : r.cells)
            prob_sum += heatmap.at(static_cast<int>(cell.x), static_cast<int>(cell.y));
        cell_count += static_cast<std::int64_t>(r.cells.size());
    }
    int i = 0;
    for (const auto& values : props) {
        MomentStats ms = moment_stats(values);
        fv.values[i++] = ms.max;
        fv.values[i++] = ms.mean;
        fv.values[i++] = ms.variance;
        fv.values[i++] = ms.skewness;
        fv.values[i++] = ms.kurtosis;
    }
    fv.values[25] = prob_sum / static_cast<double>(cell_count);
    fv.values[26] = static_cast<double>(regions.size());

    std::int64_t hot = 0; // strictly greater than 0.90
    for (float p : heatmap.cells)
        hot += (p > 0.90f);
    fv.values[27] = static_cast<double>(hot);
    return fv;
}

// ---------------------------------------------------------------------------
// Feature matrix: slide_id, label, then the 28 named columns.
// ---------------------------------------------------------------------------

struct FeatureRow {
    std::string slide_id;
    std::string label; // "normal" or "tumor"
    SlideFeatureVector features;
};

inline void write_feature_matrix(const std::filesystem::path& path,
                                 const std::vector<FeatureRow>& rows) {
    std::ofstream out(path);
    if (!out)
        throw ConfigError("cannot write feature matrix: " + path.string());
    out << "slide_id\tlabel";
    for (const std::string& name : SlideFeatureVector::names())
        out << '\t' << name;
    out << '\n';
    out.precision(17);
    for (const FeatureRow& row : rows) {
        out << row.slide_id << '\t' << row.label;
        for (double v : row.features.values)
            out << '\t' << v;
        out << '\n';
    }
}

inline std::vector<FeatureRow> read_feature_matrix(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw MissingArtifactError("feature matrix not found: " + path.string());
    std::string line;
    if (!std::getline(in, line))
        throw ConfigError("feature matrix is empty: " + path.string());
    std::vector<FeatureRow> rows;
    while (std::getline(in, line)) {
        if (line.empty())
            continue;
        std::istringstream ss(line);
        FeatureRow row;
        if (!(ss >> row.slide_id >> row.label))
            throw ConfigError("malformed feature row: " + line);
        for (double& v : row.features.values)
            if (!(ss >> v))
                throw ConfigError("feature row has fewer than 28 features: " + line);
        rows.push_back(std::move(row));
    }
    return rows;
}

} // namespace sentinel
