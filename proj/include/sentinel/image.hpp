#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "sentinel/error.hpp"

namespace sentinel {

/// 8-bit interleaved raster, row-major. 3 channels for slides and tiles,
/// 1 channel for masks and extracted planes.
struct RasterImage {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<std::uint8_t> samples;

    RasterImage() = default;
    RasterImage(int w, int h, int c, std::uint8_t fill = 0)
        : width(w), height(h), channels(c),
          samples(static_cast<std::size_t>(w) * h * c, fill) {}

    bool empty() const { return samples.empty(); }

    std::uint8_t& at(int x, int y, int c = 0) {
        return samples[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    std::uint8_t at(int x, int y, int c = 0) const {
        return samples[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }

    bool operator==(const RasterImage&) const = default;
};

/// Real-valued image, same layout as RasterImage. Working type for colorspace
/// transforms, mean images and stain concentrations.
struct ImageF {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<double> samples;

    ImageF() = default;
    ImageF(int w, int h, int c, double fill = 0.0)
        : width(w), height(h), channels(c),
          samples(static_cast<std::size_t>(w) * h * c, fill) {}

    bool empty() const { return samples.empty(); }

    double& at(int x, int y, int c = 0) {
        return samples[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    double at(int x, int y, int c = 0) const {
        return samples[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
};

inline std::uint8_t clamp_u8(double v) {
    return static_cast<std::uint8_t>(std::clamp<double>(std::llround(v), 0.0, 255.0));
}

/// Extracts one channel as a single-channel image.
inline RasterImage extract_channel(const RasterImage& img, int channel) {
    if (channel < 0 || channel >= img.channels)
        throw ConfigError("extract_channel: channel out of range");
    RasterImage out(img.width, img.height, 1);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            out.at(x, y) = img.at(x, y, channel);
    return out;
}

// ---------------------------------------------------------------------------
// PNM (portable anymap) I/O. P6 for 3-channel, P5 for 1-channel, maxval 255.
// Binary PNM is lossless and byte-deterministic, which the pipeline's
// reproducibility contract relies on.
// ---------------------------------------------------------------------------

inline void write_pnm(const std::filesystem::path& path, const RasterImage& img) {
    if (img.channels != 1 && img.channels != 3)
        throw ConfigError("write_pnm: only 1- or 3-channel images supported");
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw ConfigError("write_pnm: cannot open for writing: " + path.string());
    out << (img.channels == 3 ? "P6" : "P5") << "\n"
        << img.width << " " << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.samples.data()),
              static_cast<std::streamsize>(img.samples.size()));
    if (!out)
        throw ConfigError("write_pnm: write failed: " + path.string());
}

namespace detail {

inline int pnm_read_token(std::istream& in) {
    // skips whitespace and '#' comments between header fields
    int c = in.get();
    while (c != EOF && (std::isspace(c) || c == '#')) {
        if (c == '#')
            while (c != EOF && c != '\n') c = in.get();
        c = in.get();
    }
    int value = 0;
    bool any = false;
    while (c != EOF && std::isdigit(c)) {
        value = value * 10 + (c - '0');
        any = true;
        c = in.get();
    }
    if (!any)
        throw ConfigError("read_pnm: malformed header");
    return value;
}

} // namespace detail

inline RasterImage read_pnm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw MissingArtifactError("read_pnm: cannot open: " + path.string());
    char magic[2] = {0, 0};
    in.read(magic, 2);
    int channels;
    if (magic[0] == 'P' && magic[1] == '6')
        channels = 3;
    else if (magic[0] == 'P' && magic[1] == '5')
        channels = 1;
    else
        throw ConfigError("read_pnm: unsupported magic in " + path.string());
    int w = detail::pnm_read_token(in);
    int h = detail::pnm_read_token(in);
    int maxval = detail::pnm_read_token(in);
    if (maxval != 255)
        throw ConfigError("read_pnm: only maxval 255 supported");
    RasterImage img(w, h, channels);
    in.read(reinterpret_cast<char*>(img.samples.data()),
            static_cast<std::streamsize>(img.samples.size()));
    if (in.gcount() != static_cast<std::streamsize>(img.samples.size()))
        throw ConfigError("read_pnm: truncated pixel data in " + path.string());
    return img;
}

/// Box-filter downsample by an integer factor. Output dimensions follow the
/// pyramid convention round(extent / factor); edge blocks average whatever
/// source pixels they cover.
inline RasterImage box_downsample(const RasterImage& img, int factor) {
    if (factor < 1)
        throw ConfigError("box_downsample: factor must be >= 1");
    if (factor == 1)
        return img;
    int ow = static_cast<int>(std::llround(static_cast<double>(img.width) / factor));
    int oh = static_cast<int>(std::llround(static_cast<double>(img.height) / factor));
    ow = std::max(ow, 1);
    oh = std::max(oh, 1);
    RasterImage out(ow, oh, img.channels);
    for (int oy = 0; oy < oh; ++oy) {
        int y0 = oy * factor;
        int y1 = std::min(img.height, y0 + factor);
        y0 = std::min(y0, img.height - 1);
        for (int ox = 0; ox < ow; ++ox) {
            int x0 = ox * factor;
            int x1 = std::min(img.width, x0 + factor);
            x0 = std::min(x0, img.width - 1);
            for (int c = 0; c < img.channels; ++c) {
                std::int64_t sum = 0;
                std::int64_t n = 0;
                for (int y = y0; y < y1; ++y)
                    for (int x = x0; x < x1; ++x) {
                        sum += img.at(x, y, c);
                        ++n;
                    }
                out.at(ox, oy, c) =
                    static_cast<std::uint8_t>(std::llround(static_cast<double>(sum) / n));
            }
        }
    }
    return out;
}

} // namespace sentinel
