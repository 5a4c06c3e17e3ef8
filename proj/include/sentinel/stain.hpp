#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sentinel/error.hpp"
#include "sentinel/image.hpp"
#include "sentinel/morphology.hpp"

namespace sentinel {

// ---------------------------------------------------------------------------
// Perceptual colorspace: CIELAB (D65, sRGB primaries). Neutral colors have
// zero chroma and the double-precision round trip is far inside the +-1
// intensity contract, which is what the Reinhard-style mean/std mapping needs.
// ---------------------------------------------------------------------------

namespace detail {

inline double srgb_to_linear(double u8) {
    double c = u8 / 255.0;
    return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}

inline double linear_to_srgb(double lin) {
    double c = lin <= 0.0031308 ? lin * 12.92 : 1.055 * std::pow(lin, 1.0 / 2.4) - 0.055;
    return c * 255.0;
}

constexpr double lab_xn = 0.9504559270516716, lab_yn = 1.0, lab_zn = 1.0890577507598784;

inline double lab_f(double t) {
    constexpr double delta3 = (6.0 / 29.0) * (6.0 / 29.0) * (6.0 / 29.0);
    constexpr double scale = (29.0 / 6.0) * (29.0 / 6.0) / 3.0;
    return t > delta3 ? std::cbrt(t) : scale * t + 4.0 / 29.0;
}

inline double lab_f_inv(double u) {
    constexpr double delta = 6.0 / 29.0;
    return u > delta ? u * u * u : 3.0 * delta * delta * (u - 4.0 / 29.0);
}

inline std::array<double, 3> rgb_to_lab(double r8, double g8, double b8) {
    double r = srgb_to_linear(r8), g = srgb_to_linear(g8), b = srgb_to_linear(b8);
    // full-precision sRGB matrix so row sums hit the white point exactly and
    // neutral inputs land on a = b = 0
    double x = 0.41239079926595934 * r + 0.357584339383878 * g + 0.18048078840183429 * b;
    double y = 0.21263900587151027 * r + 0.715168678767756 * g + 0.07219231536073371 * b;
    double z = 0.01933081871559182 * r + 0.11919477979462598 * g + 0.9505321522496607 * b;
    double fx = lab_f(x / lab_xn), fy = lab_f(y / lab_yn), fz = lab_f(z / lab_zn);
    return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

inline std::array<double, 3> lab_to_rgb(double L, double a, double b) {
    double fy = (L + 16.0) / 116.0;
    double fx = fy + a / 500.0;
    double fz = fy - b / 200.0;
    double x = lab_xn * lab_f_inv(fx);
    double y = lab_yn * lab_f_inv(fy);
    double z = lab_zn * lab_f_inv(fz);
    double rl = 3.2409699419045226 * x - 1.5373831775700956 * y - 0.4986107602930034 * z;
    double gl = -0.9692436362808796 * x + 1.8759675015077202 * y + 0.04155505740717559 * z;
    double bl = 0.05563007969699366 * x - 0.20397695888897652 * y + 1.0569715142428786 * z;
    return {linear_to_srgb(rl), linear_to_srgb(gl), linear_to_srgb(bl)};
}

/// 8-bit HSV saturation of one RGB pixel, matching rgb_to_hsv's quantization.
inline int saturation_u8(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    int v = std::max({r, g, b});
    int m = std::min({r, g, b});
    if (v == 0)
        return 0;
    return static_cast<int>(std::llround(255.0 * (v - m) / v));
}

} // namespace detail

/// Forward transform to the perceptual space (channels: L, a, b).
inline ImageF rgb_to_perceptual(const RasterImage& tile) {
    if (tile.channels != 3)
        throw ConfigError("rgb_to_perceptual: input must be 3-channel");
    ImageF out(tile.width, tile.height, 3);
    for (int y = 0; y < tile.height; ++y)
        for (int x = 0; x < tile.width; ++x) {
            auto lab = detail::rgb_to_lab(tile.at(x, y, 0), tile.at(x, y, 1), tile.at(x, y, 2));
            for (int c = 0; c < 3; ++c)
                out.at(x, y, c) = lab[c];
        }
    return out;
}

/// Inverse transform; out-of-gamut values are clamped to [0, 255].
inline RasterImage perceptual_to_rgb(const ImageF& lab) {
    if (lab.channels != 3)
        throw ConfigError("perceptual_to_rgb: input must be 3-channel");
    RasterImage out(lab.width, lab.height, 3);
    for (int y = 0; y < lab.height; ++y)
        for (int x = 0; x < lab.width; ++x) {
            auto rgb = detail::lab_to_rgb(lab.at(x, y, 0), lab.at(x, y, 1), lab.at(x, y, 2));
            for (int c = 0; c < 3; ++c)
                out.at(x, y, c) = clamp_u8(rgb[c]);
        }
    return out;
}

/// Per-channel mean and standard deviation in the perceptual space; the
/// parameters of the stain mapping.
struct StainStats {
    std::array<double, 3> mean{0, 0, 0};
    std::array<double, 3> stddev{0, 0, 0};

    nlohmann::json to_json() const {
        return {{"format_version", 1},
                {"colorspace", "cielab-d65"},
                {"mean", mean},
                {"stddev", stddev}};
    }
    static StainStats from_json(const nlohmann::json& j) {
        StainStats s;
        try {
            if (j.at("colorspace").get<std::string>() != "cielab-d65")
                throw ConfigError("stain profile: unsupported colorspace");
            auto m = j.at("mean"), d = j.at("stddev");
            for (int c = 0; c < 3; ++c) {
                s.mean[c] = m.at(c).get<double>();
                s.stddev[c] = d.at(c).get<double>();
                if (s.stddev[c] < 0)
                    throw ConfigError("stain profile: negative stddev");
            }
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("stain profile: ") + e.what());
        }
        return s;
    }
};

/// Pixels that participate in stain statistics: saturation above the floor,
/// so the gray background cannot dominate the means.
inline BinaryMask stain_qualifying_mask(const RasterImage& tile, int saturation_floor = 20) {
    if (tile.channels != 3)
        throw ConfigError("stain_qualifying_mask: input must be 3-channel");
    BinaryMask mask(tile.width, tile.height);
    for (int y = 0; y < tile.height; ++y)
        for (int x = 0; x < tile.width; ++x)
            mask.set(x, y,
                     detail::saturation_u8(tile.at(x, y, 0), tile.at(x, y, 1), tile.at(x, y, 2)) >=
                         saturation_floor);
    return mask;
}

/// Two-pass population mean/stddev over the masked pixels of a perceptual
/// image. mask may be null (all pixels qualify).
inline StainStats perceptual_stats(const ImageF& lab, const BinaryMask* mask = nullptr) {
    std::array<double, 3> sum{0, 0, 0};
    std::int64_t n = 0;
    for (int y = 0; y < lab.height; ++y)
        for (int x = 0; x < lab.width; ++x) {
            if (mask && !mask->at(x, y))
                continue;
            ++n;
            for (int c = 0; c < 3; ++c)
                sum[c] += lab.at(x, y, c);
        }
    if (n == 0)
        throw NumericError("stain stats: no qualifying pixels");
    StainStats s;
    for (int c = 0; c < 3; ++c)
        s.mean[c] = sum[c] / static_cast<double>(n);
    std::array<double, 3> ss{0, 0, 0};
    for (int y = 0; y < lab.height; ++y)
        for (int x = 0; x < lab.width; ++x) {
            if (mask && !mask->at(x, y))
                continue;
            for (int c = 0; c < 3; ++c) {
                double d = lab.at(x, y, c) - s.mean[c];
                ss[c] += d * d;
            }
        }
    for (int c = 0; c < 3; ++c)
        s.stddev[c] = std::sqrt(ss[c] / static_cast<double>(n));
    return s;
}

/// Stain statistics over the qualifying pixels of a set of RGB tiles.
/// Two-pass (mean, then variance), streaming tile by tile.
inline StainStats compute_stain_stats(std::span<const RasterImage> tiles,
                                      int saturation_floor = 20) {
    if (tiles.empty())
        throw ConfigError("compute_stain_stats: need at least one tile");
    std::array<double, 3> sum{0, 0, 0};
    std::int64_t n = 0;
    auto for_each_qualifying = [&](auto&& fn) {
        for (const auto& tile : tiles) {
            ImageF lab = rgb_to_perceptual(tile);
            BinaryMask q = stain_qualifying_mask(tile, saturation_floor);
            for (int y = 0; y < tile.height; ++y)
                for (int x = 0; x < tile.width; ++x)
                    if (q.at(x, y))
                        fn(lab.at(x, y, 0), lab.at(x, y, 1), lab.at(x, y, 2));
        }
    };
    for_each_qualifying([&](double l, double a, double b) {
        sum[0] += l;
        sum[1] += a;
        sum[2] += b;
        ++n;
    });
    if (n == 0)
        throw NumericError("compute_stain_stats: no qualifying pixels");
    StainStats s;
    for (int c = 0; c < 3; ++c)
        s.mean[c] = sum[c] / static_cast<double>(n);
    std::array<double, 3> ss{0, 0, 0};
    for_each_qualifying([&](double l, double a, double b) {
        double d0 = l - s.mean[0], d1 = a - s.mean[1], d2 = b - s.mean[2];
        ss[0] += d0 * d0;
        ss[1] += d1 * d1;
        ss[2] += d2 * d2;
    });
    for (int c = 0; c < 3; ++c)
        s.stddev[c] = std::sqrt(ss[c] / static_cast<double>(n));
    return s;
}

/// The Reinhard-style affine map in perceptual space, pre-clamping:
/// x -> (x - mean_src) * (std_tgt / std_src) + mean_tgt, per channel.
inline ImageF map_perceptual(const ImageF& lab, const StainStats& source,
                             const StainStats& target) {
    ImageF out(lab.width, lab.height, 3);
    for (int c = 0; c < 3; ++c) {
        double scale = target.stddev[c] / source.stddev[c];
        for (int y = 0; y < lab.height; ++y)
            for (int x = 0; x < lab.width; ++x)
                out.at(x, y, c) = (lab.at(x, y, c) - source.mean[c]) * scale + target.mean[c];
    }
    return out;
}

struct NormalizeResult {
    RasterImage image;
    bool degenerate_source = false; // source stain was flat; tile passed through
};

constexpr double stain_std_epsilon = 1e-6;

/// Maps a tile's color distribution onto the target stain profile. A source
/// stddev below epsilon in any channel flags the tile and passes it through
/// unmodified rather than amplifying noise by a huge scale.
inline NormalizeResult normalize_tile(const RasterImage& tile, const StainStats& source,
                                      const StainStats& target,
                                      double epsilon = stain_std_epsilon) {
    for (int c = 0; c < 3; ++c)
        if (source.stddev[c] < epsilon)
            return {tile, true};
    return {perceptual_to_rgb(map_perceptual(rgb_to_perceptual(tile), source, target)), false};
}

// ---------------------------------------------------------------------------
// Optical-density color deconvolution
// ---------------------------------------------------------------------------

/// 3x3 stain matrix; rows are optical-density vectors of the stains and are
/// normalized to unit Euclidean length on construction.
struct StainMatrix {
    std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1}; // row-major

    static StainMatrix from_rows(const std::array<double, 9>& rows) {
        StainMatrix sm;
        for (int r = 0; r < 3; ++r) {
            double norm = std::sqrt(rows[r * 3] * rows[r * 3] + rows[r * 3 + 1] * rows[r * 3 + 1] +
                                    rows[r * 3 + 2] * rows[r * 3 + 2]);
            if (norm < 1e-12)
                throw ConfigError("stain matrix: zero row");
            for (int c = 0; c < 3; ++c)
                sm.m[r * 3 + c] = rows[r * 3 + c] / norm;
        }
        return sm;
    }

    double det() const {
        return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
               m[2] * (m[3] * m[7] - m[4] * m[6]);
    }

    /// Inverse via the adjugate; throws NumericError when the condition
    /// number (Frobenius estimate) exceeds 1e6.
    std::array<double, 9> inverse() const {
        double d = det();
        std::array<double, 9> inv{};
        if (d == 0.0)
            throw NumericError("stain matrix is singular");
        inv[0] = (m[4] * m[8] - m[5] * m[7]) / d;
        inv[1] = (m[2] * m[7] - m[1] * m[8]) / d;
        inv[2] = (m[1] * m[5] - m[2] * m[4]) / d;
        inv[3] = (m[5] * m[6] - m[3] * m[8]) / d;
        inv[4] = (m[0] * m[8] - m[2] * m[6]) / d;
        inv[5] = (m[2] * m[3] - m[0] * m[5]) / d;
        inv[6] = (m[3] * m[7] - m[4] * m[6]) / d;
        inv[7] = (m[1] * m[6] - m[0] * m[7]) / d;
        inv[8] = (m[0] * m[4] - m[1] * m[3]) / d;
        double fro = 0.0, fro_inv = 0.0;
        for (int i = 0; i < 9; ++i) {
            fro += m[i] * m[i];
            fro_inv += inv[i] * inv[i];
        }
        if (std::sqrt(fro) * std::sqrt(fro_inv) > 1e6)
            throw NumericError("stain matrix is near-singular (condition number > 1e6)");
        return inv;
    }

    nlohmann::json to_json() const {
        return {{"format_version", 1}, {"rows", m}};
    }
    static StainMatrix from_json(const nlohmann::json& j) {
        std::array<double, 9> rows{};
        try {
            const auto& r = j.at("rows");
            for (int i = 0; i < 9; ++i)
                rows[i] = r.at(i).get<double>();
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("stain matrix: ") + e.what());
        }
        return from_rows(rows);
    }
};

/// Per-pixel optical density: OD_c = -log10(max(I_c, 1) / 255).
inline ImageF optical_density(const RasterImage& tile) {
    if (tile.channels != 3)
        throw ConfigError("optical_density: input must be 3-channel");
    ImageF od(tile.width, tile.height, 3);
    for (int y = 0; y < tile.height; ++y)
        for (int x = 0; x < tile.width; ++x)
            for (int c = 0; c < 3; ++c)
                od.at(x, y, c) =
                    -std::log10(std::max<double>(tile.at(x, y, c), 1.0) / 255.0);
    return od;
}

/// Unmixes a tile into per-stain concentrations: conc = OD (row vector) *
/// matrix^-1.
inline ImageF od_deconvolve(const RasterImage& tile, const StainMatrix& matrix) {
    std::array<double, 9> inv = matrix.inverse();
    ImageF od = optical_density(tile);
    ImageF conc(tile.width, tile.height, 3);
    for (int y = 0; y < tile.height; ++y)
        for (int x = 0; x < tile.width; ++x)
            for (int c = 0; c < 3; ++c)
                conc.at(x, y, c) = od.at(x, y, 0) * inv[c] + od.at(x, y, 1) * inv[3 + c] +
                                   od.at(x, y, 2) * inv[6 + c];
    return conc;
}

/// Recomposes RGB from stain concentrations: OD = conc * matrix, then
/// I = 255 * 10^-OD, clamped.
inline RasterImage od_recompose(const ImageF& conc, const StainMatrix& matrix) {
    RasterImage out(conc.width, conc.height, 3);
    for (int y = 0; y < conc.height; ++y)
        for (int x = 0; x < conc.width; ++x)
            for (int c = 0; c < 3; ++c) {
                double od = conc.at(x, y, 0) * matrix.m[c] + conc.at(x, y, 1) * matrix.m[3 + c] +
                            conc.at(x, y, 2) * matrix.m[6 + c];
                out.at(x, y, c) = clamp_u8(255.0 * std::pow(10.0, -od));
            }
    return out;
}

} // namespace sentinel
