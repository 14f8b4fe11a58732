// Copyright Contributors to the swiftgs project
// SPDX-License-Identifier: Apache-2.0
//
// Raster containers and their file formats: PFM (float32, little-endian),
// 8-bit PGM/PPM previews, and ESRI-style ASCII grids for elevation.
#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace swiftgs {

struct Image {
    int height = 0;
    int width = 0;
    int channels = 1;
    std::vector<double> data;  // row-major, channels interleaved

    Image() = default;
    Image(int h, int w, int c, double fill = 0.0)
        : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, fill) {}

    std::size_t size() const { return data.size(); }
    double &at(int r, int c, int ch = 0) { return data[(static_cast<std::size_t>(r) * width + c) * channels + ch]; }
    double at(int r, int c, int ch = 0) const {
        return data[(static_cast<std::size_t>(r) * width + c) * channels + ch];
    }
    bool same_shape(const Image &o) const {
        return height == o.height && width == o.width && channels == o.channels;
    }
    bool operator==(const Image &) const = default;
};

class FormatError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Rounds every sample to the nearest float32 so that PFM storage is lossless.
void quantize_to_float(Image &img);

void write_pfm(const std::filesystem::path &path, const Image &img);
Image read_pfm(const std::filesystem::path &path);

/// 8-bit preview; values are clamped to [0, 1]. One channel writes PGM, three write PPM.
void write_pnm(const std::filesystem::path &path, const Image &img);

struct AsciiGrid {
    int ncols = 0;
    int nrows = 0;
    double xllcorner = 0.0;
    double yllcorner = 0.0;
    double cellsize = 1.0;
    double nodata = -9999.0;
    std::vector<double> values;  // row-major, first row first

    bool operator==(const AsciiGrid &) const = default;
};

void write_ascii_grid(const std::filesystem::path &path, const AsciiGrid &grid);
AsciiGrid read_ascii_grid(const std::filesystem::path &path);
std::string format_ascii_grid(const AsciiGrid &grid);
AsciiGrid parse_ascii_grid(const std::string &text);

/// Shortest decimal text that parses back to the same double.
std::string shortest_repr(double v);

}  // namespace swiftgs
