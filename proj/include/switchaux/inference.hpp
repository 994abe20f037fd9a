#pragma once

#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "switchaux/data.hpp"
#include "switchaux/ops.hpp"
#include "switchaux/tensor.hpp"

namespace swaux {

/// Mask threshold per (organ, domain).
class ThresholdTable {
public:
    /// 0.5 for HPA and 0.4 for HuBMAP, except lung at 0.15 / 0.1.
    static ThresholdTable defaults() {
        ThresholdTable t;
        for (auto o : kAllOrgans) {
            t.set(o, Domain::hpa, o == Organ::lung ? 0.15 : 0.5);
            t.set(o, Domain::hubmap, o == Organ::lung ? 0.1 : 0.4);
        }
        return t;
    }

    void set(Organ o, Domain d, double threshold) {
        if (!(threshold > 0.0 && threshold < 1.0))
            throw std::invalid_argument("threshold for " + to_string(o) + "/" + to_string(d) + " must lie in (0,1)");
        table_[{o, d}] = threshold;
    }

    void erase(Organ o, Domain d) { table_.erase({o, d}); }

    double at(Organ o, Domain d) const {
        auto it = table_.find({o, d});
        if (it == table_.end()) throw std::out_of_range("no threshold for " + to_string(o) + "/" + to_string(d));
        return it->second;
    }

    const std::map<std::pair<Organ, Domain>, double>& entries() const { return table_; }

private:
    std::map<std::pair<Organ, Domain>, double> table_;
};

/// Flip-group TTA: mean of sigmoid(logits) over identity, h-flip, v-flip
/// and hv-flip, each prediction flipped back before averaging.
/// `model` maps a [C,H,W] image to [1,H,W] logits.
template <class Model>
Tensor tta_predict(const Model& model, const Tensor& image) {
    static constexpr std::pair<bool, bool> kFlips[] = {{false, false}, {true, false}, {false, true}, {true, true}};
    Tensor input = image.detach();
    std::vector<Tensor> probs;
    for (const auto& [h, v] : kFlips) {
        Tensor x = (h || v) ? flip(input, h, v) : input;
        Tensor p = sigmoid(model(x).detach());
        if (h || v) p = flip(p, h, v);
        if (!probs.empty() && p.shape() != probs[0].shape()) throw ShapeError("tta_predict: inconsistent prediction shapes");
        probs.push_back(p);
    }
    // Pairwise (id + h) + (v + hv): flipping the input only permutes terms
    // within a pair or swaps the pairs, so the sum is bitwise flip-equivariant.
    std::vector<double> out(probs[0].numel());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = ((probs[0][i] + probs[1][i]) + (probs[2][i] + probs[3][i])) * 0.25;
    return Tensor::from(probs[0].shape(), std::move(out));
}

/// Binary mask with pixel = 1 iff prob > threshold (ties map to 0).
inline Tensor threshold_mask(const Tensor& probs, Organ organ, Domain domain, const ThresholdTable& table) {
    const double thr = table.at(organ, domain);
    Tensor out = Tensor::zeros(probs.shape());
    auto pv = probs.values();
    auto ov = out.mutable_values();
    for (std::size_t i = 0; i < pv.size(); ++i) {
        if (!(pv[i] >= 0.0 && pv[i] <= 1.0)) throw std::invalid_argument("threshold_mask: probability outside [0,1]");
        ov[i] = pv[i] > thr ? 1.0 : 0.0;
    }
    return out;
}

enum class RleOrder { row_major, column_major };

namespace detail {

// Flattened index of (y, x) in a [.., H, W] mask under the given order.
inline std::size_t rle_index(std::size_t y, std::size_t x, std::size_t h, std::size_t w, RleOrder order) {
    return order == RleOrder::row_major ? y * w + x : x * h + y;
}

inline std::pair<std::size_t, std::size_t> mask_hw(const Shape& shape) {
    if (shape.size() < 2) throw ShapeError("rle: mask must have at least 2 dims, got " + shape_str(shape));
    const std::size_t lead = shape_numel(Shape(shape.begin(), shape.end() - 2));
    if (lead != 1) throw ShapeError("rle: single-channel mask required, got " + shape_str(shape));
    return {shape[shape.size() - 2], shape[shape.size() - 1]};
}

}  // namespace detail

/// 1-indexed "start length" pairs over the flattened mask.
inline std::string rle_encode(const Tensor& mask, RleOrder order = RleOrder::row_major) {
    const auto [h, w] = detail::mask_hw(mask.shape());
    const std::size_t n = h * w;
    std::vector<unsigned char> flat(n);
    auto mv = mask.values();
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            const double v = mv[y * w + x];
            if (v != 0.0 && v != 1.0) throw std::invalid_argument("rle_encode: mask must be binary");
            flat[detail::rle_index(y, x, h, w, order)] = v == 1.0;
        }
    std::ostringstream os;
    bool first = true;
    for (std::size_t i = 0; i < n;) {
        if (!flat[i]) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < n && flat[j]) ++j;
        if (!first) os << ' ';
        os << (i + 1) << ' ' << (j - i);
        first = false;
        i = j;
    }
    return os.str();
}

inline Tensor rle_decode(const std::string& text, const Shape& shape, RleOrder order = RleOrder::row_major) {
    const auto [h, w] = detail::mask_hw(shape);
    const std::size_t n = h * w;
    std::vector<unsigned char> flat(n, 0);
    std::istringstream is(text);
    std::vector<long long> nums;
    std::string tok;
    while (is >> tok) {
        std::size_t used = 0;
        long long v = 0;
        try {
            v = std::stoll(tok, &used);
        } catch (const std::logic_error&) {
            throw std::invalid_argument("rle_decode: malformed token '" + tok + "'");
        }
        if (used != tok.size()) throw std::invalid_argument("rle_decode: malformed token '" + tok + "'");
        nums.push_back(v);
    }
    if (nums.size() % 2 != 0) throw std::invalid_argument("rle_decode: odd number of values");
    std::size_t prev_end = 0;
    for (std::size_t i = 0; i < nums.size(); i += 2) {
        const long long start = nums[i], len = nums[i + 1];
        if (start < 1 || len < 1) throw std::invalid_argument("rle_decode: start and length must be positive");
        const auto s = static_cast<std::size_t>(start - 1);
        const auto e = s + static_cast<std::size_t>(len);
        if (s < prev_end) throw std::invalid_argument("rle_decode: runs overlap or are not ascending");
        if (e > n) throw std::invalid_argument("rle_decode: run beyond mask bounds");
        for (std::size_t k = s; k < e; ++k) flat[k] = 1;
        prev_end = e;
    }
    Tensor out = Tensor::zeros(shape);
    auto ov = out.mutable_values();
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) ov[y * w + x] = flat[detail::rle_index(y, x, h, w, order)];
    return out;
}

}  // namespace swaux
