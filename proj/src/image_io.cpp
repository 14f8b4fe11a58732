// Copyright Contributors to the swiftgs project
// SPDX-License-Identifier: Apache-2.0
//
#include "swiftgs/image_io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace swiftgs {

std::string shortest_repr(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

void quantize_to_float(Image &img) {
    for (double &v : img.data) v = static_cast<double>(static_cast<float>(v));
}

namespace {

std::uint32_t to_little(std::uint32_t v) {
    if constexpr (std::endian::native == std::endian::big) {
        v = ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
    }
    return v;
}

std::ifstream open_in(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open '" + path.string() + "'");
    return in;
}

std::ofstream open_out(const std::filesystem::path &path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write '" + path.string() + "'");
    return out;
}

std::string next_token(std::istream &in) {
    std::string tok;
    in >> tok;
    return tok;
}

double parse_double(const std::string &tok, const std::string &what) {
    double v = 0.0;
    const char *first = tok.data();
    const char *last = tok.data() + tok.size();
    if (first != last && *first == '+') ++first;
    const auto res = std::from_chars(first, last, v);
    if (res.ec != std::errc() || res.ptr != last) throw FormatError("malformed number '" + tok + "' in " + what);
    return v;
}

}  // namespace

void write_pfm(const std::filesystem::path &path, const Image &img) {
    if (img.channels != 1 && img.channels != 3) throw FormatError("PFM supports 1 or 3 channels");
    auto out = open_out(path);
    out << (img.channels == 3 ? "PF" : "Pf") << '\n' << img.width << ' ' << img.height << "\n-1.0\n";
    // Rows are stored bottom to top.
    for (int r = img.height - 1; r >= 0; --r) {
        for (int c = 0; c < img.width; ++c) {
            for (int ch = 0; ch < img.channels; ++ch) {
                const auto bits = to_little(std::bit_cast<std::uint32_t>(static_cast<float>(img.at(r, c, ch))));
                out.write(reinterpret_cast<const char *>(&bits), 4);
            }
        }
    }
    if (!out) throw FormatError("write failed for '" + path.string() + "'");
}

Image read_pfm(const std::filesystem::path &path) {
    auto in = open_in(path);
    const std::string magic = next_token(in);
    int channels = 0;
    if (magic == "PF") {
        channels = 3;
    } else if (magic == "Pf") {
        channels = 1;
    } else {
        throw FormatError("'" + path.string() + "' is not a PFM file");
    }
    int w = 0, h = 0;
    in >> w >> h;
    const double scale = parse_double(next_token(in), path.string());
    in.get();
    if (!in || w <= 0 || h <= 0) throw FormatError("bad PFM header in '" + path.string() + "'");
    const bool little = scale < 0.0;
    Image img(h, w, channels);
    for (int r = h - 1; r >= 0; --r) {
        for (int c = 0; c < w; ++c) {
            for (int ch = 0; ch < channels; ++ch) {
                std::uint32_t bits = 0;
                in.read(reinterpret_cast<char *>(&bits), 4);
                if (little != (std::endian::native == std::endian::little)) {
                    bits = ((bits & 0xffu) << 24) | ((bits & 0xff00u) << 8) | ((bits >> 8) & 0xff00u) | (bits >> 24);
                }
                img.at(r, c, ch) = static_cast<double>(std::bit_cast<float>(bits));
            }
        }
    }
    if (!in) throw FormatError("truncated PFM data in '" + path.string() + "'");
    return img;
}

void write_pnm(const std::filesystem::path &path, const Image &img) {
    if (img.channels != 1 && img.channels != 3) throw FormatError("PNM supports 1 or 3 channels");
    auto out = open_out(path);
    out << (img.channels == 3 ? "P6" : "P5") << '\n' << img.width << ' ' << img.height << "\n255\n";
    for (double v : img.data) {
        const double c = std::clamp(v, 0.0, 1.0);
        out.put(static_cast<char>(static_cast<unsigned char>(std::lround(c * 255.0))));
    }
}

std::string format_ascii_grid(const AsciiGrid &g) {
    std::ostringstream out;
    out << "ncols " << g.ncols << "\nnrows " << g.nrows << "\nxllcorner " << shortest_repr(g.xllcorner)
        << "\nyllcorner " << shortest_repr(g.yllcorner) << "\ncellsize " << shortest_repr(g.cellsize)
        << "\nNODATA_value " << shortest_repr(g.nodata) << '\n';
    for (int r = 0; r < g.nrows; ++r) {
        for (int c = 0; c < g.ncols; ++c) {
            if (c) out << ' ';
            out << shortest_repr(g.values[static_cast<std::size_t>(r) * g.ncols + c]);
        }
        out << '\n';
    }
    return out.str();
}

AsciiGrid parse_ascii_grid(const std::string &text) {
    std::istringstream in(text);
    AsciiGrid g;
    const char *keys[] = {"ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "NODATA_value"};
    for (const char *key : keys) {
        const std::string k = next_token(in);
        std::string lower = k;
        std::string want = key;
        std::transform(lower.begin(), lower.end(), lower.begin(), ::tolower);
        std::transform(want.begin(), want.end(), want.begin(), ::tolower);
        if (lower != want) throw FormatError("ASCII grid: expected '" + std::string(key) + "', found '" + k + "'");
        const double v = parse_double(next_token(in), key);
        if (want == "ncols") g.ncols = static_cast<int>(v);
        if (want == "nrows") g.nrows = static_cast<int>(v);
        if (want == "xllcorner") g.xllcorner = v;
        if (want == "yllcorner") g.yllcorner = v;
        if (want == "cellsize") g.cellsize = v;
        if (want == "nodata_value") g.nodata = v;
    }
    if (g.ncols <= 0 || g.nrows <= 0) throw FormatError("ASCII grid: empty dimensions");
    g.values.resize(static_cast<std::size_t>(g.ncols) * g.nrows);
    for (double &v : g.values) {
        const std::string tok = next_token(in);
        if (tok.empty()) throw FormatError("ASCII grid: truncated data");
        v = parse_double(tok, "ASCII grid");
    }
    if (!next_token(in).empty()) throw FormatError("ASCII grid: trailing data");
    return g;
}

void write_ascii_grid(const std::filesystem::path &path, const AsciiGrid &grid) {
    auto out = open_out(path);
    out << format_ascii_grid(grid);
}

AsciiGrid read_ascii_grid(const std::filesystem::path &path) {
    auto in = open_in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_ascii_grid(ss.str());
}

}  // namespace swiftgs
