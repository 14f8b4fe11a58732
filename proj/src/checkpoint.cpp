// Copyright Contributors to the swiftgs project
// SPDX-License-Identifier: Apache-2.0
//
#include "swiftgs/checkpoint.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace swiftgs {

namespace {

using nlohmann::ordered_json;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

ordered_json config_json(const ModelConfig &c) {
    ordered_json j;
    j["slot_grid"] = c.slot_grid;
    j["embed_dim"] = c.embed_dim;
    j["heads"] = c.heads;
    j["top_k"] = c.top_k;
    j["head_width"] = c.head_width;
    j["router_temperature"] = c.router_temperature;
    j["sdf_layers"] = c.sdf_layers;
    j["sdf_width"] = c.sdf_width;
    j["sdf_frequencies"] = c.sdf_frequencies;
    j["sdf_conditioning"] = c.sdf_conditioning;
    j["gate_width"] = c.gate_width;
    j["encoder_channels"] = c.encoder_channels;
    j["pooled_size"] = c.pooled_size;
    j["sweep_levels"] = c.sweep_levels;
    return j;
}

ModelConfig config_from(const ordered_json &j) {
    if (!j.is_object()) throw std::invalid_argument("model config must be a JSON object");
    ModelConfig c;
    for (const auto &[key, v] : j.items()) {
        if (key == "slot_grid") c.slot_grid = v.get<int>();
        else if (key == "embed_dim") c.embed_dim = v.get<int>();
        else if (key == "heads") c.heads = v.get<int>();
        else if (key == "top_k") c.top_k = v.get<int>();
        else if (key == "head_width") c.head_width = v.get<int>();
        else if (key == "router_temperature") c.router_temperature = v.get<double>();
        else if (key == "sdf_layers") c.sdf_layers = v.get<int>();
        else if (key == "sdf_width") c.sdf_width = v.get<int>();
        else if (key == "sdf_frequencies") c.sdf_frequencies = v.get<int>();
        else if (key == "sdf_conditioning") c.sdf_conditioning = v.get<int>();
        else if (key == "gate_width") c.gate_width = v.get<int>();
        else if (key == "encoder_channels") c.encoder_channels = v.get<int>();
        else if (key == "pooled_size") c.pooled_size = v.get<int>();
        else if (key == "sweep_levels") c.sweep_levels = v.get<int>();
        else throw std::invalid_argument("unknown model config key '" + key + "'");
    }
    c.validate();
    return c;
}

void put_u32(std::string &out, std::uint32_t v) {
    char b[4];
    std::memcpy(b, &v, 4);
    out.append(b, 4);
}

std::uint32_t get_u32(const std::string &in, std::size_t at) {
    if (at + 4 > in.size()) throw CheckpointError("checkpoint truncated");
    std::uint32_t v;
    std::memcpy(&v, in.data() + at, 4);
    return v;
}

}  // namespace

std::string model_config_to_json(const ModelConfig &config) { return config_json(config).dump(2) + "\n"; }

ModelConfig model_config_from_json(const std::string &text) { return config_from(ordered_json::parse(text)); }

std::string encode_checkpoint(const SharedParams<double> &params) {
    const ParamVector flat = flatten(params);
    ordered_json header;
    header["model"] = config_json(params.config);
    ordered_json blocks = ordered_json::array();
    for (const auto &b : flat.blocks) blocks.push_back({{"name", b.name}, {"size", b.size}});
    header["blocks"] = blocks;
    const std::string text = header.dump();
    std::string out = "SWGS";
    put_u32(out, kCheckpointVersion);
    put_u32(out, static_cast<std::uint32_t>(text.size()));
    out += text;
    const std::size_t at = out.size();
    out.resize(at + flat.values.size() * sizeof(double));
    std::memcpy(out.data() + at, flat.values.data(), flat.values.size() * sizeof(double));
    return out;
}

SharedParams<double> decode_checkpoint(const std::string &bytes) {
    if (bytes.size() < 12 || bytes.compare(0, 4, "SWGS") != 0) throw CheckpointError("not a swiftgs checkpoint");
    const std::uint32_t version = get_u32(bytes, 4);
    if (version != kCheckpointVersion) {
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                              std::to_string(kCheckpointVersion) + ")");
    }
    const std::uint32_t len = get_u32(bytes, 8);
    if (12 + static_cast<std::size_t>(len) > bytes.size()) throw CheckpointError("checkpoint truncated");
    ordered_json header;
    ModelConfig config;
    try {
        header = ordered_json::parse(bytes.substr(12, len));
        config = config_from(header.at("model"));
    } catch (const std::exception &e) {
        throw CheckpointError(std::string("bad checkpoint header: ") + e.what());
    }
    SharedParams<double> params = init_shared(config, 0);
    const ParamVector layout = flatten(params);
    const auto &blocks = header.at("blocks");
    if (blocks.size() != layout.blocks.size()) throw CheckpointError("checkpoint block count does not match the model");
    for (std::size_t k = 0; k < blocks.size(); ++k) {
        if (blocks[k].at("name").get<std::string>() != layout.blocks[k].name ||
            blocks[k].at("size").get<std::size_t>() != layout.blocks[k].size) {
            throw CheckpointError("checkpoint block '" + blocks[k].at("name").get<std::string>() +
                                  "' does not match the model layout");
        }
    }
    const std::size_t at = 12 + len;
    const std::size_t n = layout.values.size();
    if (bytes.size() != at + n * sizeof(double)) throw CheckpointError("checkpoint payload has the wrong length");
    std::vector<double> values(n);
    std::memcpy(values.data(), bytes.data() + at, n * sizeof(double));
    assign(params, std::span<const double>(values));
    return params;
}

void save_checkpoint(const std::filesystem::path &path, const SharedParams<double> &params) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("cannot write " + path.string());
    const std::string bytes = encode_checkpoint(params);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("write failed for " + path.string());
}

SharedParams<double> load_checkpoint(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return decode_checkpoint(ss.str());
}

}  // namespace swiftgs
