#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "switchaux/data.hpp"
#include "switchaux/tensor.hpp"

// Binary PPM (P6) / PGM (P5) at 8 bits, and the dataset manifest CSV.
namespace swaux {

namespace detail {

inline unsigned char to_byte(double v) { return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

inline void write_netpbm(const std::filesystem::path& path, const char* magic, std::size_t w, std::size_t h,
                         const std::vector<unsigned char>& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    out << magic << "\n" << w << " " << h << "\n255\n";
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline std::string next_token(std::istream& in) {
    std::string tok;
    while (in >> tok) {
        if (tok[0] == '#') {
            std::string rest;
            std::getline(in, rest);
            continue;
        }
        return tok;
    }
    throw std::runtime_error("netpbm: truncated header");
}

inline std::vector<unsigned char> read_netpbm(const std::filesystem::path& path, const std::string& magic,
                                              std::size_t channels, std::size_t& w, std::size_t& h) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read '" + path.string() + "'");
    if (next_token(in) != magic) throw std::runtime_error("'" + path.string() + "' is not a " + magic + " file");
    w = std::stoul(next_token(in));
    h = std::stoul(next_token(in));
    if (std::stoul(next_token(in)) != 255) throw std::runtime_error("'" + path.string() + "': only maxval 255 supported");
    in.get();  // single whitespace after maxval
    std::vector<unsigned char> bytes(w * h * channels);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
        throw std::runtime_error("'" + path.string() + "': truncated pixel data");
    return bytes;
}

}  // namespace detail

inline void write_ppm(const std::filesystem::path& path, const Tensor& image) {
    if (image.rank() != 3 || image.dim(0) != 3) throw ShapeError("write_ppm: expected [3,H,W], got " + shape_str(image.shape()));
    const std::size_t h = image.dim(1), w = image.dim(2), n = h * w;
    std::vector<unsigned char> bytes(3 * n);
    auto v = image.values();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < 3; ++c) bytes[3 * i + c] = detail::to_byte(v[c * n + i]);
    detail::write_netpbm(path, "P6", w, h, bytes);
}

/// Single-channel map in [0,1]; binary masks come out as 0/255.
inline void write_pgm(const std::filesystem::path& path, const Tensor& map) {
    if (map.rank() != 3 || map.dim(0) != 1) throw ShapeError("write_pgm: expected [1,H,W], got " + shape_str(map.shape()));
    std::vector<unsigned char> bytes(map.numel());
    auto v = map.values();
    for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = detail::to_byte(v[i]);
    detail::write_netpbm(path, "P5", map.dim(2), map.dim(1), bytes);
}

inline Tensor read_ppm(const std::filesystem::path& path) {
    std::size_t w = 0, h = 0;
    auto bytes = detail::read_netpbm(path, "P6", 3, w, h);
    const std::size_t n = w * h;
    Tensor img = Tensor::zeros({3, h, w});
    auto v = img.mutable_values();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < 3; ++c) v[c * n + i] = bytes[3 * i + c] / 255.0;
    return img;
}

/// Reads a P5 mask; any nonzero byte is foreground.
inline Tensor read_pgm_mask(const std::filesystem::path& path) {
    std::size_t w = 0, h = 0;
    auto bytes = detail::read_netpbm(path, "P5", 1, w, h);
    Tensor m = Tensor::zeros({1, h, w});
    auto v = m.mutable_values();
    for (std::size_t i = 0; i < bytes.size(); ++i) v[i] = bytes[i] >= 128 ? 1.0 : 0.0;
    return m;
}

struct ManifestEntry {
    int id = 0;
    Organ organ = Organ::kidney;
    Domain domain = Domain::hpa;
    std::uint64_t seed = 0;
    std::string image_path;
    std::string mask_path;
};

inline constexpr const char* kManifestHeader = "id,organ,domain,seed,image_path,mask_path";

/// Write images/, masks/ and manifest.csv under `dir`; paths in the
/// manifest are relative to `dir`.
inline void write_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples) {
    std::filesystem::create_directories(dir / "images");
    std::filesystem::create_directories(dir / "masks");
    std::ofstream man(dir / "manifest.csv");
    if (!man) throw std::runtime_error("cannot write manifest in '" + dir.string() + "'");
    man << kManifestHeader << "\n";
    for (const auto& s : samples) {
        const std::string stem = "sample_" + std::to_string(s.id);
        const std::string img = "images/" + stem + ".ppm";
        const std::string msk = "masks/" + stem + ".pgm";
        write_ppm(dir / img, s.image);
        write_pgm(dir / msk, s.mask);
        man << s.id << ',' << to_string(s.organ) << ',' << to_string(s.domain) << ',' << s.seed << ',' << img << ',' << msk
            << "\n";
    }
}

inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read manifest '" + path.string() + "'");
    std::string line;
    std::getline(in, line);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kManifestHeader) throw std::runtime_error("manifest '" + path.string() + "': unexpected header '" + line + "'");
    std::vector<ManifestEntry> out;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
        if (f.size() != 6) throw std::runtime_error("manifest line " + std::to_string(lineno) + ": expected 6 fields");
        ManifestEntry e;
        e.id = std::stoi(f[0]);
        e.organ = parse_organ(f[1]);
        e.domain = parse_domain(f[2]);
        e.seed = std::stoull(f[3]);
        e.image_path = f[4];
        e.mask_path = f[5];
        out.push_back(std::move(e));
    }
    return out;
}

/// Load every sample listed in `dir/manifest.csv`.
inline std::vector<Sample> read_dataset(const std::filesystem::path& dir) {
    std::vector<Sample> out;
    for (const auto& e : read_manifest(dir / "manifest.csv")) {
        Sample s;
        s.id = e.id;
        s.organ = e.organ;
        s.domain = e.domain;
        s.seed = e.seed;
        s.image = read_ppm(dir / e.image_path);
        s.mask = read_pgm_mask(dir / e.mask_path);
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace swaux
