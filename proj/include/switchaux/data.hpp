#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "switchaux/ops.hpp"
#include "switchaux/random.hpp"
#include "switchaux/tensor.hpp"

namespace swaux {

enum class Organ { kidney, large_intestine, lung, prostate, spleen };
enum class Domain { hpa, hubmap };

inline constexpr std::array<Organ, 5> kAllOrgans{Organ::kidney, Organ::large_intestine, Organ::lung, Organ::prostate,
                                                 Organ::spleen};
inline constexpr std::array<Domain, 2> kAllDomains{Domain::hpa, Domain::hubmap};

inline std::string to_string(Organ o) {
    switch (o) {
        case Organ::kidney: return "kidney";
        case Organ::large_intestine: return "largeintestine";
        case Organ::lung: return "lung";
        case Organ::prostate: return "prostate";
        case Organ::spleen: return "spleen";
    }
    return "?";
}

inline std::string to_string(Domain d) { return d == Domain::hpa ? "hpa" : "hubmap"; }

inline Organ parse_organ(const std::string& s) {
    for (auto o : kAllOrgans)
        if (to_string(o) == s) return o;
    if (s == "large_intestine") return Organ::large_intestine;
    throw std::invalid_argument("unknown organ '" + s + "'");
}

inline Domain parse_domain(const std::string& s) {
    if (s == "hpa") return Domain::hpa;
    if (s == "hubmap") return Domain::hubmap;
    throw std::invalid_argument("unknown domain '" + s + "'");
}

/// Per-organ generator parameters. Radii are in pixels at a 64-pixel image
/// and scale linearly with size.
struct OrganStyle {
    int min_blobs, max_blobs;
    double min_radius, max_radius;
    double max_aspect;
    double texture_freq;     // cycles per 64 px
    double ftu_hematoxylin;  // stain density inside FTUs
    double lumen;            // 0..1 clearing towards FTU centre
};

inline const OrganStyle& organ_style(Organ o) {
    static const std::map<Organ, OrganStyle> table{
        {Organ::kidney, {3, 5, 7.0, 10.0, 1.2, 3.0, 0.70, 0.2}},
        {Organ::large_intestine, {2, 4, 7.0, 11.0, 2.2, 4.0, 0.65, 0.5}},
        {Organ::lung, {4, 8, 4.0, 6.0, 1.4, 5.0, 0.60, 0.0}},
        {Organ::prostate, {2, 4, 8.0, 12.0, 1.6, 2.5, 0.55, 0.6}},
        {Organ::spleen, {1, 2, 11.0, 15.0, 1.3, 2.0, 0.80, 0.0}},
    };
    return table.at(o);
}

inline constexpr double kMinForeground = 0.02;
inline constexpr double kMaxForeground = 0.40;

struct Sample {
    Tensor image;  // [3,H,W] in [0,1]
    Tensor mask;   // [1,H,W] in {0,1}
    Organ organ = Organ::kidney;
    Domain domain = Domain::hpa;
    std::uint64_t seed = 0;
    int id = 0;
};

inline double foreground_fraction(const Tensor& mask) {
    double n = 0.0;
    for (double v : mask.values()) n += v;
    return n / static_cast<double>(mask.numel());
}

namespace detail {

struct Blob {
    double cx, cy, radius, aspect, angle, wobble, phase;
    int lobes;

    // Normalised radial coordinate: < 1 inside the blob.
    double rho(double x, double y) const {
        const double dx = x - cx, dy = y - cy;
        const double c = std::cos(angle), s = std::sin(angle);
        const double u = c * dx + s * dy, v = -s * dx + c * dy;
        const double sa = std::sqrt(aspect);
        const double r = std::hypot(u / (radius * sa), v * sa / radius);
        const double phi = std::atan2(v, u);
        return r / (1.0 + wobble * std::sin(lobes * phi + phase));
    }
};

inline Blob random_blob(const OrganStyle& st, double scale, double size, Rng& rng) {
    Blob b{};
    b.radius = rng.uniform(st.min_radius, st.max_radius) * scale;
    const double margin = std::min(b.radius, size / 4.0);
    b.cx = rng.uniform(margin, size - margin);
    b.cy = rng.uniform(margin, size - margin);
    b.aspect = rng.uniform(1.0, st.max_aspect);
    b.angle = rng.uniform(0.0, std::numbers::pi);
    b.wobble = rng.uniform(0.0, 0.15);
    b.lobes = rng.uniform_int(3, 5);
    b.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    return b;
}

// Smooth pseudo-texture: sum of random plane waves in [-1, 1].
struct Texture {
    std::array<double, 6> fx{}, fy{}, ph{};

    Texture(double freq, double size, Rng& rng) {
        for (std::size_t i = 0; i < fx.size(); ++i) {
            const double f = freq * rng.uniform(0.5, 1.5) * 2.0 * std::numbers::pi / 64.0 * (64.0 / size);
            const double a = rng.uniform(0.0, 2.0 * std::numbers::pi);
            fx[i] = f * std::cos(a);
            fy[i] = f * std::sin(a);
            ph[i] = rng.uniform(0.0, 2.0 * std::numbers::pi);
        }
    }

    double operator()(double x, double y) const {
        double acc = 0.0;
        for (std::size_t i = 0; i < fx.size(); ++i) acc += std::cos(fx[i] * x + fy[i] * y + ph[i]);
        return acc / static_cast<double>(fx.size());
    }
};

// Optical-density stain vectors (R, G, B).
inline constexpr std::array<double, 3> kHematoxylin{0.65, 0.70, 0.29};
inline constexpr std::array<double, 3> kEosin{0.07, 0.99, 0.11};
inline constexpr std::array<double, 3> kDab{0.27, 0.57, 0.78};

struct DomainLook {
    std::array<double, 3> nuclear, counter;
    double density;
    double noise;
};

inline DomainLook domain_look(Domain d, Rng& rng) {
    DomainLook look{};
    if (d == Domain::hpa) {
        look.nuclear = kHematoxylin;
        look.counter = kDab;
        look.density = rng.uniform(0.9, 1.1);
        look.noise = 0.02;
    } else {
        look.nuclear = kHematoxylin;
        look.counter = kEosin;
        look.density = rng.uniform(1.1, 1.4);
        look.noise = 0.04;
    }
    // per-image stain drift
    for (auto& c : look.counter) c *= rng.uniform(0.9, 1.1);
    return look;
}

}  // namespace detail

/// Deterministic synthetic tissue tile. The mask depends only on
/// (seed, organ, size); the domain changes stain colours and noise only,
/// so two domains rendered from the same seed share one mask.
inline Sample generate_synthetic_sample(std::uint64_t seed, Organ organ, Domain domain, std::size_t size) {
    if (size == 0 || size % 32 != 0)
        throw std::invalid_argument("sample size must be a positive multiple of 32, got " + std::to_string(size));
    const OrganStyle& st = organ_style(organ);
    const double fsize = static_cast<double>(size);
    const double scale = fsize / 64.0;
    const std::size_t npix = size * size;

    // Mask: union of wobbly ellipses within the foreground band.
    std::vector<detail::Blob> blobs;
    std::vector<double> rho(npix);
    for (std::uint64_t attempt = 0;; ++attempt) {
        Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(organ), size, attempt, 1}));
        blobs.clear();
        std::fill(rho.begin(), rho.end(), 1e9);
        const int target = rng.uniform_int(st.min_blobs, st.max_blobs);
        double frac = 0.0;
        for (int tries = 0; tries < 200; ++tries) {
            if (static_cast<int>(blobs.size()) >= target && frac >= kMinForeground) break;
            detail::Blob b = detail::random_blob(st, scale, fsize, rng);
            std::vector<double> next = rho;
            std::size_t inside = 0;
            for (std::size_t y = 0; y < size; ++y)
                for (std::size_t x = 0; x < size; ++x) {
                    double& r = next[y * size + x];
                    r = std::min(r, b.rho(static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5));
                    inside += r < 1.0;
                }
            const double f = static_cast<double>(inside) / static_cast<double>(npix);
            if (f > kMaxForeground) continue;
            rho = std::move(next);
            frac = f;
            blobs.push_back(b);
        }
        if (frac >= kMinForeground && frac <= kMaxForeground) break;
    }

    Rng tex_rng(derive_seed(seed, {static_cast<std::uint64_t>(organ), size, 2}));
    detail::Texture tex_a(st.texture_freq, fsize, tex_rng);
    detail::Texture tex_b(st.texture_freq * 1.7, fsize, tex_rng);
    Rng dom_rng(derive_seed(seed, {static_cast<std::uint64_t>(organ), size, 3, static_cast<std::uint64_t>(domain)}));
    const detail::DomainLook look = detail::domain_look(domain, dom_rng);

    Sample s;
    s.organ = organ;
    s.domain = domain;
    s.seed = seed;
    s.mask = Tensor::zeros({1, size, size});
    s.image = Tensor::zeros({3, size, size});
    auto mv = s.mask.mutable_values();
    auto iv = s.image.mutable_values();
    for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
            const std::size_t i = y * size + x;
            const double fx = static_cast<double>(x), fy = static_cast<double>(y);
            const double ta = tex_a(fx, fy), tb = tex_b(fx, fy);
            const double r = rho[i];
            double h = 0.20 + 0.10 * ta;
            double e = 0.55 + 0.20 * tb;
            if (r < 1.0) {
                mv[i] = 1.0;
                const double ring = r > 0.75 ? 0.35 : 0.0;
                const double clear = st.lumen * std::max(0.0, 1.0 - r / 0.5);
                h = (st.ftu_hematoxylin + 0.10 * tb + ring) * (1.0 - clear);
                e = (0.30 + 0.10 * ta) * (1.0 - clear);
            }
            for (std::size_t c = 0; c < 3; ++c) {
                const double od = look.density * (h * look.nuclear[c] + e * look.counter[c]);
                const double noise = look.noise * dom_rng.normal();
                iv[c * npix + i] = std::clamp(std::exp(-od) + noise, 0.0, 1.0);
            }
        }
    return s;
}

struct DatasetSpec {
    int per_organ = 16;
    std::size_t image_size = 64;
    std::uint64_t seed = 42;
};

/// `per_organ` samples for each organ, domains alternating within an organ.
inline std::vector<Sample> generate_dataset(const DatasetSpec& spec) {
    if (spec.per_organ <= 0) throw std::invalid_argument("per_organ must be positive");
    std::vector<Sample> out;
    int id = 0;
    for (auto organ : kAllOrgans)
        for (int j = 0; j < spec.per_organ; ++j, ++id) {
            const Domain d = (j % 2 == 0) ? Domain::hpa : Domain::hubmap;
            Sample s = generate_synthetic_sample(derive_seed(spec.seed, {static_cast<std::uint64_t>(id)}), organ, d,
                                                 spec.image_size);
            s.id = id;
            out.push_back(std::move(s));
        }
    return out;
}

struct FoldSplit {
    std::vector<std::vector<int>> folds;  // sample ids per fold

    std::vector<int> train_ids(std::size_t fold) const {
        std::vector<int> ids;
        for (std::size_t f = 0; f < folds.size(); ++f)
            if (f != fold) ids.insert(ids.end(), folds[f].begin(), folds[f].end());
        std::sort(ids.begin(), ids.end());
        return ids;
    }
    std::vector<int> val_ids(std::size_t fold) const {
        std::vector<int> ids = folds.at(fold);
        std::sort(ids.begin(), ids.end());
        return ids;
    }
};

/// Organ-stratified k-fold split. Each organ's ids are shuffled and dealt
/// round-robin, continuing the deal position across organs so fold sizes
/// also stay within one of each other.
inline FoldSplit stratified_kfold(const std::vector<Sample>& samples, int k, std::uint64_t seed) {
    if (k < 2) throw std::invalid_argument("stratified_kfold: k must be >= 2");
    std::map<Organ, std::vector<int>> by_organ;
    for (const auto& s : samples) by_organ[s.organ].push_back(s.id);
    FoldSplit split;
    split.folds.resize(static_cast<std::size_t>(k));
    std::size_t deal = 0;
    for (auto& [organ, ids] : by_organ) {
        if (static_cast<int>(ids.size()) < k)
            throw std::invalid_argument("stratified_kfold: organ " + to_string(organ) + " has " +
                                        std::to_string(ids.size()) + " samples, fewer than k=" + std::to_string(k));
        Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(organ), 7}));
        rng.shuffle(ids.begin(), ids.end());
        for (int id : ids) split.folds[deal++ % static_cast<std::size_t>(k)].push_back(id);
    }
    return split;
}

// ---------------------------------------------------------------- resize

inline Tensor resize_image(const Tensor& image, std::size_t out) {
    if (image.rank() != 3) throw ShapeError("resize_image: expected [C,H,W], got " + shape_str(image.shape()));
    if (image.dim(1) == out && image.dim(2) == out) return image.detach();
    return upsample_bilinear(image.detach(), out, out).detach();
}

/// Bilinear resize followed by re-binarisation (>= 0.5 -> 1).
inline Tensor resize_mask(const Tensor& mask, std::size_t out) {
    Tensor r = resize_image(mask, out);
    for (auto& v : r.mutable_values()) v = v >= 0.5 ? 1.0 : 0.0;
    return r;
}

// ---------------------------------------------------------------- colour

/// Per-channel mean/std in the log-LMS decorrelated (l, alpha, beta) space.
struct ColorStats {
    std::array<double, 3> mean{};
    std::array<double, 3> stddev{1.0, 1.0, 1.0};
};

namespace detail {

using Mat3 = std::array<std::array<double, 3>, 3>;

inline constexpr Mat3 kRgbToLms{{{0.3811, 0.5783, 0.0402}, {0.1967, 0.7244, 0.0782}, {0.0241, 0.1288, 0.8444}}};
inline constexpr double kLmsOffset = 1e-3;

inline Mat3 lms_to_lab_matrix() {
    const double a = 1.0 / std::sqrt(3.0), b = 1.0 / std::sqrt(6.0), c = 1.0 / std::sqrt(2.0);
    return {{{a, a, a}, {b, b, -2.0 * b}, {c, -c, 0.0}}};
}

inline Mat3 inverse(const Mat3& m) {
    const double det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
                       m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
                       m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    Mat3 r{};
    r[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / det;
    r[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / det;
    r[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / det;
    r[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) / det;
    r[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / det;
    r[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / det;
    r[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) / det;
    r[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / det;
    r[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / det;
    return r;
}

inline std::array<double, 3> apply(const Mat3& m, const std::array<double, 3>& v) {
    return {m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2], m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2]};
}

}  // namespace detail

inline std::array<double, 3> rgb_to_lab(const std::array<double, 3>& rgb) {
    auto lms = detail::apply(detail::kRgbToLms, rgb);
    for (auto& v : lms) v = std::log(v + detail::kLmsOffset);
    static const auto to_lab = detail::lms_to_lab_matrix();
    return detail::apply(to_lab, lms);
}

inline std::array<double, 3> lab_to_rgb(const std::array<double, 3>& lab) {
    static const auto from_lab = detail::inverse(detail::lms_to_lab_matrix());
    static const auto from_lms = detail::inverse(detail::kRgbToLms);
    auto lms = detail::apply(from_lab, lab);
    for (auto& v : lms) v = std::exp(v) - detail::kLmsOffset;
    return detail::apply(from_lms, lms);
}

/// Image [3,H,W] -> per-pixel lab triples.
inline std::vector<std::array<double, 3>> image_to_lab(const Tensor& image) {
    if (image.rank() != 3 || image.dim(0) != 3) throw ShapeError("expected RGB image [3,H,W], got " + shape_str(image.shape()));
    const std::size_t n = image.dim(1) * image.dim(2);
    auto v = image.values();
    std::vector<std::array<double, 3>> lab(n);
    for (std::size_t i = 0; i < n; ++i) lab[i] = rgb_to_lab({v[i], v[n + i], v[2 * n + i]});
    return lab;
}

inline ColorStats color_stats(const std::vector<const Tensor*>& images) {
    std::array<double, 3> sum{}, sq{};
    double count = 0.0;
    for (const Tensor* img : images)
        for (const auto& p : image_to_lab(*img)) {
            for (std::size_t c = 0; c < 3; ++c) {
                sum[c] += p[c];
                sq[c] += p[c] * p[c];
            }
            count += 1.0;
        }
    ColorStats st;
    for (std::size_t c = 0; c < 3; ++c) {
        st.mean[c] = sum[c] / count;
        st.stddev[c] = std::sqrt(std::max(0.0, sq[c] / count - st.mean[c] * st.mean[c]));
    }
    return st;
}

inline ColorStats color_stats(const Tensor& image) { return color_stats(std::vector<const Tensor*>{&image}); }

/// Pooled statistics over a set of samples drawn from every stain domain.
inline ColorStats mosaic_target(const std::vector<Sample>& samples) {
    std::vector<const Tensor*> imgs;
    for (const auto& s : samples) imgs.push_back(&s.image);
    return color_stats(imgs);
}

/// Statistics transfer in lab space without the final clamp; returns the
/// transformed lab pixels.
inline std::vector<std::array<double, 3>> color_transfer_lab(const Tensor& image, const ColorStats& target) {
    for (std::size_t c = 0; c < 3; ++c)
        if (!std::isfinite(target.mean[c]) || !std::isfinite(target.stddev[c]) || target.stddev[c] <= 0.0)
            throw std::invalid_argument("color_normalize: target statistics must be finite with std > 0");
    auto lab = image_to_lab(image);
    const ColorStats src = color_stats(image);
    for (auto& p : lab)
        for (std::size_t c = 0; c < 3; ++c) {
            if (src.stddev[c] < 1e-8)
                p[c] = p[c] - src.mean[c] + target.mean[c];
            else
                p[c] = (p[c] - src.mean[c]) / src.stddev[c] * target.stddev[c] + target.mean[c];
        }
    return lab;
}

/// Reinhard-style colour transfer: match lab channel statistics to
/// `target`, map back to RGB and clamp to [0,1].
inline Tensor color_normalize(const Tensor& image, const ColorStats& target) {
    auto lab = color_transfer_lab(image, target);
    const std::size_t n = lab.size();
    Tensor out = Tensor::zeros(image.shape());
    auto ov = out.mutable_values();
    for (std::size_t i = 0; i < n; ++i) {
        const auto rgb = lab_to_rgb(lab[i]);
        for (std::size_t c = 0; c < 3; ++c) ov[c * n + i] = std::clamp(rgb[c], 0.0, 1.0);
    }
    return out;
}

// ---------------------------------------------------------------- augment

struct CropBox {
    std::size_t y0, x0, side;
};

/// The random draws of one augmentation pass. Spatial fields apply to
/// image and mask alike; photometric ones to the image only.
struct AugmentPlan {
    bool hflip = false;
    bool vflip = false;
    int rot90 = 0;  // quarter turns counter-clockwise
    std::optional<CropBox> crop;
    double noise_sigma = 0.0;
    std::uint64_t noise_seed = 0;
    double brightness = 0.0;  // multiplicative offset, |b| <= 0.15
    double contrast = 0.0;    // |c| <= 0.15
    double hue_shift = 0.0;   // |h| <= 0.05 of a full turn
};

inline AugmentPlan draw_augment_plan(std::size_t size, std::uint64_t seed) {
    Rng rng(seed);
    AugmentPlan p;
    p.hflip = rng.bernoulli(0.5);
    p.vflip = rng.bernoulli(0.5);
    if (rng.bernoulli(0.5)) p.rot90 = rng.uniform_int(1, 3);
    if (rng.bernoulli(0.5)) {
        const double scale = rng.uniform(0.8, 1.0);
        const auto side = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(scale * static_cast<double>(size))));
        const auto slack = static_cast<int>(size - side);
        p.crop = CropBox{static_cast<std::size_t>(rng.uniform_int(0, slack)), static_cast<std::size_t>(rng.uniform_int(0, slack)),
                         side};
    }
    if (rng.bernoulli(0.5)) {
        p.noise_sigma = rng.uniform(0.0, 0.03);
        p.noise_seed = rng.next_u64();
    }
    if (rng.bernoulli(0.5)) {
        p.brightness = rng.uniform(-0.15, 0.15);
        p.contrast = rng.uniform(-0.15, 0.15);
    }
    if (rng.bernoulli(0.5)) p.hue_shift = rng.uniform(-0.05, 0.05);
    return p;
}

namespace detail {

inline Tensor remap(const Tensor& t, std::size_t oh, std::size_t ow,
                    const std::function<std::pair<std::size_t, std::size_t>(std::size_t, std::size_t)>& src) {
    const std::size_t c = t.dim(0), h = t.dim(1), w = t.dim(2);
    Tensor out = Tensor::zeros({c, oh, ow});
    auto iv = t.values();
    auto ov = out.mutable_values();
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t x = 0; x < ow; ++x) {
                auto [sy, sx] = src(y, x);
                ov[(ch * oh + y) * ow + x] = iv[(ch * h + sy) * w + sx];
            }
    return out;
}

inline void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
    const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
    const double d = mx - mn;
    v = mx;
    s = mx > 0.0 ? d / mx : 0.0;
    if (d <= 0.0) {
        h = 0.0;
    } else if (mx == r) {
        h = std::fmod((g - b) / d, 6.0);
    } else if (mx == g) {
        h = (b - r) / d + 2.0;
    } else {
        h = (r - g) / d + 4.0;
    }
    h /= 6.0;
    if (h < 0.0) h += 1.0;
}

inline void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
    h = h - std::floor(h);
    const double hh = h * 6.0;
    const int sector = static_cast<int>(std::floor(hh)) % 6;
    const double f = hh - std::floor(hh);
    const double p = v * (1.0 - s), q = v * (1.0 - s * f), t = v * (1.0 - s * (1.0 - f));
    switch (sector) {
        case 0: r = v, g = t, b = p; break;
        case 1: r = q, g = v, b = p; break;
        case 2: r = p, g = v, b = t; break;
        case 3: r = p, g = q, b = v; break;
        case 4: r = t, g = p, b = v; break;
        default: r = v, g = p, b = q; break;
    }
}

}  // namespace detail

/// Apply the plan's spatial transforms (flip, rotate, crop-resize) to a
/// [C,H,W] map. Masks are re-binarised after the crop-resize.
inline Tensor apply_spatial(const AugmentPlan& plan, const Tensor& map, bool is_mask) {
    const std::size_t h = map.dim(1), w = map.dim(2);
    Tensor t = map.detach();
    if (plan.hflip) t = detail::remap(t, h, w, [w](std::size_t y, std::size_t x) { return std::pair{y, w - 1 - x}; });
    if (plan.vflip) t = detail::remap(t, h, w, [h](std::size_t y, std::size_t x) { return std::pair{h - 1 - y, x}; });
    for (int r = 0; r < plan.rot90; ++r) {
        const std::size_t ch = t.dim(1), cw = t.dim(2);
        // out[y][x] = in[x][cw-1-y]
        t = detail::remap(t, cw, ch, [cw](std::size_t y, std::size_t x) { return std::pair{x, cw - 1 - y}; });
    }
    if (plan.crop) {
        const auto [y0, x0, side] = *plan.crop;
        const std::size_t oh = t.dim(1), ow = t.dim(2);
        if (y0 + side > oh || x0 + side > ow) throw ShapeError("augment: crop box outside image");
        Tensor cropped = detail::remap(t, side, side, [y0, x0](std::size_t y, std::size_t x) { return std::pair{y0 + y, x0 + x}; });
        t = upsample_bilinear(cropped, oh, ow).detach();
        if (is_mask)
            for (auto& v : t.mutable_values()) v = v >= 0.5 ? 1.0 : 0.0;
    }
    return t;
}

inline Tensor apply_photometric(const AugmentPlan& plan, const Tensor& image) {
    const std::size_t n = image.dim(1) * image.dim(2);
    Tensor out = image.detach();
    auto v = out.mutable_values();
    if (plan.hue_shift != 0.0) {
        for (std::size_t i = 0; i < n; ++i) {
            double hh, s, val;
            detail::rgb_to_hsv(v[i], v[n + i], v[2 * n + i], hh, s, val);
            detail::hsv_to_rgb(hh + plan.hue_shift, s, val, v[i], v[n + i], v[2 * n + i]);
        }
    }
    if (plan.brightness != 0.0 || plan.contrast != 0.0) {
        double m = 0.0;
        for (double x : v) m += x;
        m /= static_cast<double>(v.size());
        for (auto& x : v) x = ((x - m) * (1.0 + plan.contrast) + m) * (1.0 + plan.brightness);
    }
    if (plan.noise_sigma > 0.0) {
        Rng rng(plan.noise_seed);
        for (auto& x : v) x += plan.noise_sigma * rng.normal();
    }
    for (auto& x : v) x = std::clamp(x, 0.0, 1.0);
    return out;
}

/// Seeded augmentation pipeline; each stage fires with probability 0.5.
inline Sample augment(const Sample& sample, std::uint64_t seed) {
    const std::size_t h = sample.image.dim(1), w = sample.image.dim(2);
    if (h != w) throw ShapeError("augment: square images required, got " + shape_str(sample.image.shape()));
    const AugmentPlan plan = draw_augment_plan(h, seed);
    Sample out = sample;
    out.image = apply_photometric(plan, apply_spatial(plan, sample.image, false));
    out.mask = apply_spatial(plan, sample.mask, true);
    return out;
}

}  // namespace swaux
