#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "switchaux/ops.hpp"
#include "switchaux/random.hpp"
#include "switchaux/tensor.hpp"

namespace swaux {

inline constexpr int kNumStages = 4;

enum class BlockType { attention, conv };

inline std::string to_string(BlockType t) { return t == BlockType::attention ? "attention" : "conv"; }

inline BlockType parse_block_type(const std::string& s) {
    if (s == "attention") return BlockType::attention;
    if (s == "conv") return BlockType::conv;
    throw std::invalid_argument("unknown block type '" + s + "' (expected attention|conv)");
}

/// Four-stage pyramid encoder layout. Stage 1 sits closest to the input.
struct EncoderConfig {
    std::array<std::size_t, kNumStages> stage_channels{16, 32, 64, 96};
    /// Downsampling factor of the patch-merge entering each stage.
    std::array<std::size_t, kNumStages> stage_strides{4, 2, 2, 2};
    std::size_t blocks_per_stage = 1;
    BlockType block_type = BlockType::attention;
    std::size_t in_channels = 3;
    std::size_t decoder_width = 16;

    /// Product of strides through `stage` (1-based).
    std::size_t cumulative_stride(int stage) const {
        check_stage(stage);
        std::size_t s = 1;
        for (int k = 0; k < stage; ++k) s *= stage_strides[static_cast<std::size_t>(k)];
        return s;
    }

    std::size_t total_stride() const { return cumulative_stride(kNumStages); }

    static void check_stage(int stage) {
        if (stage < 1 || stage > kNumStages)
            throw std::out_of_range("stage " + std::to_string(stage) + " outside 1.." + std::to_string(kNumStages));
    }

    void validate() const {
        for (int k = 0; k < kNumStages; ++k) {
            if (stage_channels[static_cast<std::size_t>(k)] == 0) throw std::invalid_argument("stage channels must be positive");
            if (stage_strides[static_cast<std::size_t>(k)] == 0) throw std::invalid_argument("stage strides must be positive");
        }
        if (blocks_per_stage == 0) throw std::invalid_argument("blocks_per_stage must be positive");
        if (in_channels == 0 || decoder_width == 0) throw std::invalid_argument("channel widths must be positive");
    }

    void check_input(std::size_t h, std::size_t w) const {
        const std::size_t s = total_stride();
        if (h % s != 0 || w % s != 0)
            throw ShapeError("input " + std::to_string(h) + "x" + std::to_string(w) + " not divisible by total stride " +
                             std::to_string(s));
    }
};

enum class ParamGroup { encoder, decoder, aux_head };

struct NamedParam {
    std::string name;
    ParamGroup group;
    int stage;  // 1..4 for encoder/aux_head params, 0 for decoder
    Tensor tensor;
};

namespace detail {

inline Tensor init_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Tensor t = Tensor::zeros(std::move(shape));
    for (auto& v : t.mutable_values()) v = rng.uniform(-bound, bound);
    t.set_requires_grad();
    return t;
}

inline Tensor init_zeros(Shape shape) {
    Tensor t = Tensor::zeros(std::move(shape));
    t.set_requires_grad();
    return t;
}

}  // namespace detail

struct Conv {
    Tensor weight;
    Tensor bias;
    std::size_t stride = 1;
    std::size_t padding = 0;

    Conv() = default;
    Conv(std::size_t in, std::size_t out, std::size_t k, std::size_t stride_, std::size_t pad, Rng& rng)
        : weight(detail::init_uniform({out, in, k, k}, in * k * k, rng)),
          bias(detail::init_zeros({out})),
          stride(stride_),
          padding(pad) {}

    Tensor operator()(const Tensor& x) const { return conv2d(x, weight, bias, stride, padding); }
};

struct Linear {
    Tensor weight;
    Tensor bias;

    Linear() = default;
    Linear(std::size_t in, std::size_t out, Rng& rng)
        : weight(detail::init_uniform({out, in}, in, rng)), bias(detail::init_zeros({out})) {}

    Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
};

/// Single-head self-attention over a token matrix with output projection
/// and residual: x + W_o(softmax(Q K^T / sqrt(D)) V).
struct AttentionBlock {
    Linear query, key, value, out;
    std::size_t width = 0;

    AttentionBlock() = default;
    AttentionBlock(std::size_t d, Rng& rng) : query(d, d, rng), key(d, d, rng), value(d, d, rng), out(d, d, rng), width(d) {}

    /// Row-stochastic attention matrix [N, N] for tokens x [N, D].
    Tensor attention_weights(const Tensor& x) const {
        check(x);
        Tensor scores = matmul(query(x), transpose(key(x)));
        return softmax_rows(scale(scores, 1.0 / std::sqrt(static_cast<double>(width))));
    }

    Tensor operator()(const Tensor& x) const {
        Tensor attended = matmul(attention_weights(x), value(x));
        return add(x, out(attended));
    }

    void check(const Tensor& x) const {
        if (x.rank() != 2) throw ShapeError("attention_block: tokens must be [N, D], got " + shape_str(x.shape()));
        if (x.dim(1) != width) throw ShapeError("attention_block: token width " + std::to_string(x.dim(1)) + " vs " + std::to_string(width));
    }
};

/// Free-function form taking the block explicitly.
inline Tensor attention_block(const AttentionBlock& block, const Tensor& x) { return block(x); }

/// Residual 3x3 convolution: x + gelu(conv(x)).
struct ConvBlock {
    Conv conv;

    ConvBlock() = default;
    ConvBlock(std::size_t c, Rng& rng) : conv(c, c, 3, 1, 1, rng) {}

    Tensor operator()(const Tensor& x) const { return add(x, gelu(conv(x))); }
};

/// [C,H,W] -> [H*W, C]
inline Tensor to_tokens(const Tensor& map) {
    const std::size_t c = map.dim(0), h = map.dim(1), w = map.dim(2);
    return transpose(reshape(map, {c, h * w}));
}

inline Tensor from_tokens(const Tensor& tokens, std::size_t h, std::size_t w) {
    const std::size_t c = tokens.dim(1);
    return reshape(transpose(tokens), {c, h, w});
}

struct EncoderStage {
    Conv patch_merge;
    std::vector<AttentionBlock> attention;
    std::vector<ConvBlock> convs;

    Tensor operator()(const Tensor& x) const {
        Tensor y = gelu(patch_merge(x));
        for (const auto& b : attention) {
            const std::size_t h = y.dim(1), w = y.dim(2);
            y = from_tokens(b(to_tokens(y)), h, w);
        }
        for (const auto& b : convs) y = b(y);
        return y;
    }
};

struct ModelOutput {
    Tensor main_logits;
    std::map<int, Tensor> aux_logits;
};

/// Pyramid encoder, fuse decoder and one 1x1 auxiliary head per stage.
///
/// Copying is disabled because parameters are shared graph handles; use
/// clone() for an independent copy with identical values.
class SegModel {
public:
    explicit SegModel(EncoderConfig config = {}, std::uint64_t seed = 0) : config_(config) {
        config_.validate();
        Rng rng(seed);
        std::size_t in = config_.in_channels;
        for (int k = 0; k < kNumStages; ++k) {
            const auto ku = static_cast<std::size_t>(k);
            const std::size_t c = config_.stage_channels[ku];
            const std::size_t s = config_.stage_strides[ku];
            EncoderStage stage;
            stage.patch_merge = Conv(in, c, s, s, 0, rng);
            for (std::size_t b = 0; b < config_.blocks_per_stage; ++b) {
                if (config_.block_type == BlockType::attention)
                    stage.attention.emplace_back(c, rng);
                else
                    stage.convs.emplace_back(c, rng);
            }
            stages_.push_back(std::move(stage));
            in = c;
        }
        const std::size_t e = config_.decoder_width;
        for (int k = 0; k < kNumStages; ++k)
            decoder_proj_.emplace_back(config_.stage_channels[static_cast<std::size_t>(k)], e, 1, 1, 0, rng);
        decoder_fuse_ = Conv(e * kNumStages, e, 1, 1, 0, rng);
        decoder_pred_ = Conv(e, 1, 1, 1, 0, rng);
        for (int k = 0; k < kNumStages; ++k)
            aux_heads_.emplace_back(config_.stage_channels[static_cast<std::size_t>(k)], 1, 1, 1, 0, rng);
        register_params();
    }

    SegModel(const SegModel&) = delete;
    SegModel& operator=(const SegModel&) = delete;
    SegModel(SegModel&&) noexcept = default;
    SegModel& operator=(SegModel&&) noexcept = default;

    SegModel clone() const {
        SegModel copy(config_);
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto src = params_[i].tensor.values();
            auto dst = copy.params_[i].tensor.mutable_values();
            std::copy(src.begin(), src.end(), dst.begin());
        }
        return copy;
    }

    const EncoderConfig& config() const { return config_; }

    std::vector<Tensor> encoder_forward(const Tensor& image) const {
        check_image(image);
        std::vector<Tensor> feats;
        Tensor x = image;
        for (const auto& s : stages_) {
            x = s(x);
            feats.push_back(x);
        }
        return feats;
    }

    Tensor aux_head_forward(const Tensor& feature, int stage) const {
        EncoderConfig::check_stage(stage);
        const auto k = static_cast<std::size_t>(stage - 1);
        if (feature.rank() != 3 || feature.dim(0) != config_.stage_channels[k])
            throw ShapeError("aux head " + std::to_string(stage) + ": feature shape " + shape_str(feature.shape()));
        return aux_heads_[k](feature);
    }

    Tensor decode(const std::vector<Tensor>& feats, std::size_t out_h, std::size_t out_w) const {
        const std::size_t h1 = feats[0].dim(1), w1 = feats[0].dim(2);
        std::vector<Tensor> parts;
        for (int k = 0; k < kNumStages; ++k) {
            const auto ku = static_cast<std::size_t>(k);
            Tensor p = decoder_proj_[ku](feats[ku]);
            if (p.dim(1) != h1 || p.dim(2) != w1) p = upsample_bilinear(p, h1, w1);
            parts.push_back(p);
        }
        Tensor fused = gelu(decoder_fuse_(concat(parts)));
        Tensor logits = decoder_pred_(fused);
        return upsample_bilinear(logits, out_h, out_w);
    }

    /// Main logits at input resolution plus aux logits for the requested stages.
    ModelOutput forward(const Tensor& image, const std::set<int>& aux_stages = {}) const {
        for (int s : aux_stages) EncoderConfig::check_stage(s);
        auto feats = encoder_forward(image);
        ModelOutput out;
        out.main_logits = decode(feats, image.dim(1), image.dim(2));
        for (int s : aux_stages) out.aux_logits.emplace(s, aux_head_forward(feats[static_cast<std::size_t>(s - 1)], s));
        return out;
    }

    /// Inference entry point: main logits only.
    Tensor operator()(const Tensor& image) const { return forward(image).main_logits; }

    std::vector<NamedParam>& parameters() { return params_; }
    const std::vector<NamedParam>& parameters() const { return params_; }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.tensor.numel();
        return n;
    }

    void zero_grad() {
        for (auto& p : params_) p.tensor.zero_grad();
    }

    /// Stage feature resolution for a given input extent.
    std::size_t stage_extent(std::size_t input_extent, int stage) const {
        return input_extent / config_.cumulative_stride(stage);
    }

private:
    void check_image(const Tensor& image) const {
        if (image.rank() != 3 || image.dim(0) != config_.in_channels)
            throw ShapeError("model input must be [" + std::to_string(config_.in_channels) + ",H,W], got " +
                             shape_str(image.shape()));
        config_.check_input(image.dim(1), image.dim(2));
    }

    void add_param(std::string name, ParamGroup g, int stage, Tensor t) {
        params_.push_back({std::move(name), g, stage, std::move(t)});
    }

    void register_params() {
        params_.clear();
        for (int k = 0; k < kNumStages; ++k) {
            const auto& s = stages_[static_cast<std::size_t>(k)];
            const std::string pre = "encoder.stage" + std::to_string(k + 1) + ".";
            add_param(pre + "patch_merge.weight", ParamGroup::encoder, k + 1, s.patch_merge.weight);
            add_param(pre + "patch_merge.bias", ParamGroup::encoder, k + 1, s.patch_merge.bias);
            for (std::size_t b = 0; b < s.attention.size(); ++b) {
                const auto& a = s.attention[b];
                const std::string bp = pre + "block" + std::to_string(b) + ".";
                const std::pair<const char*, const Linear*> lins[] = {
                    {"query", &a.query}, {"key", &a.key}, {"value", &a.value}, {"out", &a.out}};
                for (const auto& [nm, lin] : lins) {
                    add_param(bp + nm + ".weight", ParamGroup::encoder, k + 1, lin->weight);
                    add_param(bp + nm + ".bias", ParamGroup::encoder, k + 1, lin->bias);
                }
            }
            for (std::size_t b = 0; b < s.convs.size(); ++b) {
                const std::string bp = pre + "block" + std::to_string(b) + ".conv.";
                add_param(bp + "weight", ParamGroup::encoder, k + 1, s.convs[b].conv.weight);
                add_param(bp + "bias", ParamGroup::encoder, k + 1, s.convs[b].conv.bias);
            }
        }
        for (int k = 0; k < kNumStages; ++k) {
            const std::string pre = "decoder.proj" + std::to_string(k + 1) + ".";
            add_param(pre + "weight", ParamGroup::decoder, 0, decoder_proj_[static_cast<std::size_t>(k)].weight);
            add_param(pre + "bias", ParamGroup::decoder, 0, decoder_proj_[static_cast<std::size_t>(k)].bias);
        }
        add_param("decoder.fuse.weight", ParamGroup::decoder, 0, decoder_fuse_.weight);
        add_param("decoder.fuse.bias", ParamGroup::decoder, 0, decoder_fuse_.bias);
        add_param("decoder.pred.weight", ParamGroup::decoder, 0, decoder_pred_.weight);
        add_param("decoder.pred.bias", ParamGroup::decoder, 0, decoder_pred_.bias);
        for (int k = 0; k < kNumStages; ++k) {
            const std::string pre = "aux" + std::to_string(k + 1) + ".";
            add_param(pre + "weight", ParamGroup::aux_head, k + 1, aux_heads_[static_cast<std::size_t>(k)].weight);
            add_param(pre + "bias", ParamGroup::aux_head, k + 1, aux_heads_[static_cast<std::size_t>(k)].bias);
        }
    }

    EncoderConfig config_;
    std::vector<EncoderStage> stages_;
    std::vector<Conv> decoder_proj_;
    Conv decoder_fuse_;
    Conv decoder_pred_;
    std::vector<Conv> aux_heads_;
    std::vector<NamedParam> params_;
};

}  // namespace swaux
