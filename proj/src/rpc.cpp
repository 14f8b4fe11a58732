// Copyright Contributors to the swiftgs project
// SPDX-License-Identifier: Apache-2.0
//
#include "swiftgs/rpc.hpp"

#include <charconv>
#include <map>
#include <sstream>

namespace swiftgs {

namespace {

struct Field {
    std::string key;
    double *ptr;
    const char *unit;
};

template <class R>
std::vector<Field> fields_of(R &rpc) {
    std::vector<Field> f = {
        {"LINE_OFF", &rpc.line_off, "pixels"},       {"SAMP_OFF", &rpc.samp_off, "pixels"},
        {"LAT_OFF", &rpc.lat_off, "meters"},         {"LONG_OFF", &rpc.long_off, "meters"},
        {"HEIGHT_OFF", &rpc.height_off, "meters"},   {"LINE_SCALE", &rpc.line_scale, "pixels"},
        {"SAMP_SCALE", &rpc.samp_scale, "pixels"},   {"LAT_SCALE", &rpc.lat_scale, "meters"},
        {"LONG_SCALE", &rpc.long_scale, "meters"},   {"HEIGHT_SCALE", &rpc.height_scale, "meters"},
    };
    const std::pair<const char *, std::array<double, 20> *> arrays[] = {
        {"LINE_NUM_COEFF_", &rpc.line_num},
        {"LINE_DEN_COEFF_", &rpc.line_den},
        {"SAMP_NUM_COEFF_", &rpc.samp_num},
        {"SAMP_DEN_COEFF_", &rpc.samp_den},
    };
    for (const auto &[prefix, arr] : arrays) {
        for (int k = 0; k < 20; ++k) f.push_back({prefix + std::to_string(k + 1), &(*arr)[k], ""});
    }
    return f;
}

std::string shortest(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\r'; }

}  // namespace

void validate_rpc(const RpcMetadata &rpc) {
    if (rpc.line_den[0] != 1.0 || rpc.samp_den[0] != 1.0) {
        throw std::invalid_argument("rpc: denominator constant term must be 1");
    }
    for (double s : {rpc.line_scale, rpc.samp_scale, rpc.lat_scale, rpc.long_scale, rpc.height_scale}) {
        if (!(s > 0.0)) throw std::invalid_argument("rpc: scales must be positive");
    }
}

std::string write_rpc(const RpcMetadata &rpc) {
    RpcMetadata copy = rpc;
    std::ostringstream out;
    for (const auto &f : fields_of(copy)) {
        out << f.key << ": " << shortest(*f.ptr);
        if (*f.unit) out << ' ' << f.unit;
        out << '\n';
    }
    return out.str();
}

RpcMetadata parse_rpc(std::string_view text) {
    RpcMetadata rpc;
    std::map<std::string, Field> by_key;
    for (const auto &f : fields_of(rpc)) by_key.emplace(f.key, f);
    std::map<std::string, int> seen;
    int line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const std::size_t end = std::min(text.find('\n', pos), text.size());
        const std::string_view line = text.substr(pos, end - pos);
        ++line_no;
        pos = end + 1;
        std::size_t i = 0;
        while (i < line.size() && is_space(line[i])) ++i;
        if (i == line.size() || line[i] == '#') {
            if (end == text.size()) break;
            continue;
        }
        const std::size_t colon = line.find(':', i);
        if (colon == std::string_view::npos) {
            throw RpcParseError("expected 'KEY: value'", line_no, static_cast<int>(i) + 1);
        }
        std::size_t key_end = colon;
        while (key_end > i && is_space(line[key_end - 1])) --key_end;
        const std::string key(line.substr(i, key_end - i));
        const auto it = by_key.find(key);
        if (it == by_key.end()) throw RpcParseError("unknown key '" + key + "'", line_no, static_cast<int>(i) + 1);
        if (seen.count(key)) throw RpcParseError("duplicate key '" + key + "'", line_no, static_cast<int>(i) + 1);
        std::size_t v = colon + 1;
        while (v < line.size() && is_space(line[v])) ++v;
        std::size_t v_end = v;
        while (v_end < line.size() && !is_space(line[v_end])) ++v_end;
        double value = 0.0;
        const char *first = line.data() + v;
        const char *last = line.data() + v_end;
        if (v == v_end) throw RpcParseError("missing value for '" + key + "'", line_no, static_cast<int>(v) + 1);
        if (*first == '+') ++first;
        const auto res = std::from_chars(first, last, value);
        if (res.ec != std::errc() || res.ptr != last) {
            throw RpcParseError("malformed number for '" + key + "'", line_no, static_cast<int>(v) + 1);
        }
        std::size_t rest = v_end;
        while (rest < line.size() && is_space(line[rest])) ++rest;
        if (rest < line.size()) {
            std::size_t unit_end = rest;
            while (unit_end < line.size() && !is_space(line[unit_end])) ++unit_end;
            std::size_t tail = unit_end;
            while (tail < line.size() && is_space(line[tail])) ++tail;
            if (tail < line.size()) throw RpcParseError("unexpected trailing text", line_no, static_cast<int>(tail) + 1);
        }
        *it->second.ptr = value;
        seen[key] = line_no;
        if (end == text.size()) break;
    }
    for (const auto &f : fields_of(rpc)) {
        if (!seen.count(f.key)) throw RpcParseError("missing key '" + f.key + "'", line_no, 1);
    }
    try {
        validate_rpc(rpc);
    } catch (const std::invalid_argument &e) {
        throw RpcParseError(e.what(), line_no, 1);
    }
    return rpc;
}

RpcMetadata rpc_from_affine(const Eigen::Matrix<double, 3, 4> &affine, const Vec3<double> &center,
                            const Vec3<double> &half_extent, double cubic) {
    RpcMetadata rpc;
    rpc.long_off = center[0];
    rpc.lat_off = center[1];
    rpc.height_off = center[2];
    rpc.long_scale = half_extent[0];
    rpc.lat_scale = half_extent[1];
    rpc.height_scale = half_extent[2];
    auto fill = [&](int row, double &off, double &scale, std::array<double, 20> &num, std::array<double, 20> &den) {
        off = affine.row(row).head<3>().dot(center) + affine(row, 3);
        const Vec3<double> g(affine(row, 0) * half_extent[0], affine(row, 1) * half_extent[1],
                             affine(row, 2) * half_extent[2]);
        scale = std::max(1.0, g.cwiseAbs().sum());
        num.fill(0.0);
        den.fill(0.0);
        num[1] = g[0] / scale;
        num[2] = g[1] / scale;
        num[3] = g[2] / scale;
        den[0] = 1.0;
        if (cubic != 0.0) {
            num[7] = cubic;
            num[11] = 0.5 * cubic;
            num[15] = -0.5 * cubic;
            num[9] = 0.25 * cubic;
            den[1] = 0.1 * cubic;
            den[2] = -0.1 * cubic;
        }
    };
    fill(0, rpc.line_off, rpc.line_scale, rpc.line_num, rpc.line_den);
    fill(1, rpc.samp_off, rpc.samp_scale, rpc.samp_num, rpc.samp_den);
    return rpc;
}

RpcMetadata perturb_rpc(const RpcMetadata &rpc, double sigma, Rng &rng) {
    RpcMetadata out = rpc;
    for (auto *arr : {&out.line_num, &out.line_den, &out.samp_num, &out.samp_den}) {
        for (int k = 0; k < 20; ++k) {
            const double n = rng.normal();
            if ((arr == &out.line_den || arr == &out.samp_den) && k == 0) continue;
            (*arr)[k] *= 1.0 + sigma * n;
        }
    }
    return out;
}

}  // namespace swiftgs
