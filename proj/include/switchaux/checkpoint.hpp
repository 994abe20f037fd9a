#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

#include "switchaux/config.hpp"
#include "switchaux/data.hpp"
#include "switchaux/model.hpp"

// Checkpoint layout:
//
//   SWAUX-CHECKPOINT 1
//   meta <key> <value>            (zero or more)
//   params <count>
//   <name> <rank> <d0> ... <dn>   (one line per parameter, registry order)
//   END
//   <raw little-endian float64 values, parameters concatenated in order>
//
// The model meta keys (block_type, stage_channels, stage_strides,
// blocks_per_stage, decoder_width) are enough to rebuild the architecture;
// stain_mean / stain_std carry the colour-normalisation target.
namespace swaux {

struct Checkpoint {
    EncoderConfig model_config;
    std::optional<ColorStats> stain_target;
    std::map<std::string, std::string> meta;
};

namespace detail {

inline std::uint64_t to_le(std::uint64_t v) {
    if constexpr (std::endian::native == std::endian::big) {
        std::uint64_t r = 0;
        for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xFF) << (8 * (7 - i));
        return r;
    }
    return v;
}

inline std::string triple(const std::array<double, 3>& a) {
    return fmt_double(a[0]) + "," + fmt_double(a[1]) + "," + fmt_double(a[2]);
}

inline std::array<double, 3> parse_triple(const std::string& s) {
    std::array<double, 3> out{};
    std::stringstream ss(s);
    std::string item;
    for (auto& v : out) {
        if (!std::getline(ss, item, ',')) throw std::runtime_error("checkpoint: bad triple '" + s + "'");
        v = std::stod(item);
    }
    return out;
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const SegModel& model,
                            const std::optional<ColorStats>& stain_target = std::nullopt,
                            const std::map<std::string, std::string>& extra_meta = {}) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint '" + path.string() + "'");
    const auto& cfg = model.config();
    out << "SWAUX-CHECKPOINT 1\n";
    out << "meta block_type " << to_string(cfg.block_type) << "\n";
    out << "meta stage_channels " << detail::join(cfg.stage_channels) << "\n";
    out << "meta stage_strides " << detail::join(cfg.stage_strides) << "\n";
    out << "meta blocks_per_stage " << cfg.blocks_per_stage << "\n";
    out << "meta decoder_width " << cfg.decoder_width << "\n";
    out << "meta in_channels " << cfg.in_channels << "\n";
    if (stain_target) {
        out << "meta stain_mean " << detail::triple(stain_target->mean) << "\n";
        out << "meta stain_std " << detail::triple(stain_target->stddev) << "\n";
    }
    for (const auto& [k, v] : extra_meta) {
        if (k.find_first_of(" \n") != std::string::npos || v.find('\n') != std::string::npos)
            throw std::invalid_argument("checkpoint meta must be single-line, key without spaces");
        out << "meta " << k << " " << v << "\n";
    }
    const auto& params = model.parameters();
    out << "params " << params.size() << "\n";
    for (const auto& p : params) {
        out << p.name << " " << p.tensor.rank();
        for (auto d : p.tensor.shape()) out << " " << d;
        out << "\n";
    }
    out << "END\n";
    for (const auto& p : params)
        for (double v : p.tensor.values()) {
            const std::uint64_t bits = detail::to_le(std::bit_cast<std::uint64_t>(v));
            out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
        }
    if (!out) throw std::runtime_error("failed writing checkpoint '" + path.string() + "'");
}

/// Rebuild the model described by a checkpoint and fill in its weights.
inline SegModel load_checkpoint(const std::filesystem::path& path, Checkpoint* info = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read checkpoint '" + path.string() + "'");
    std::string line;
    std::getline(in, line);
    if (line != "SWAUX-CHECKPOINT 1") throw std::runtime_error("'" + path.string() + "' is not a checkpoint");

    Checkpoint ck;
    std::size_t count = 0;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        if (tag == "meta") {
            std::string key, value;
            ls >> key;
            std::getline(ls >> std::ws, value);
            ck.meta[key] = value;
        } else if (tag == "params") {
            ls >> count;
            break;
        } else {
            throw std::runtime_error("checkpoint: unexpected header line '" + line + "'");
        }
    }
    auto need = [&](const std::string& k) -> const std::string& {
        auto it = ck.meta.find(k);
        if (it == ck.meta.end()) throw std::runtime_error("checkpoint: missing meta '" + k + "'");
        return it->second;
    };
    ck.model_config.block_type = parse_block_type(need("block_type"));
    ck.model_config.stage_channels = detail::parse_stage_list("stage_channels", need("stage_channels"));
    ck.model_config.stage_strides = detail::parse_stage_list("stage_strides", need("stage_strides"));
    ck.model_config.blocks_per_stage = std::stoul(need("blocks_per_stage"));
    ck.model_config.decoder_width = std::stoul(need("decoder_width"));
    if (ck.meta.count("in_channels")) ck.model_config.in_channels = std::stoul(ck.meta.at("in_channels"));
    if (ck.meta.count("stain_mean") && ck.meta.count("stain_std"))
        ck.stain_target = ColorStats{detail::parse_triple(ck.meta.at("stain_mean")), detail::parse_triple(ck.meta.at("stain_std"))};

    SegModel model(ck.model_config);
    auto& params = model.parameters();
    if (count != params.size())
        throw std::runtime_error("checkpoint: " + std::to_string(count) + " parameters, model expects " +
                                 std::to_string(params.size()));
    for (auto& p : params) {
        std::getline(in, line);
        std::istringstream ls(line);
        std::string name;
        std::size_t rank = 0;
        ls >> name >> rank;
        Shape shape(rank);
        for (auto& d : shape) ls >> d;
        if (name != p.name || shape != p.tensor.shape())
            throw std::runtime_error("checkpoint: parameter '" + name + "' " + shape_str(shape) + " does not match model '" +
                                     p.name + "' " + shape_str(p.tensor.shape()));
    }
    std::getline(in, line);
    if (line != "END") throw std::runtime_error("checkpoint: missing END marker");
    for (auto& p : params)
        for (auto& v : p.tensor.mutable_values()) {
            std::uint64_t bits = 0;
            in.read(reinterpret_cast<char*>(&bits), sizeof bits);
            if (!in) throw std::runtime_error("checkpoint: truncated weight data");
            v = std::bit_cast<double>(detail::to_le(bits));
        }
    if (info) *info = std::move(ck);
    return model;
}

}  // namespace swaux
