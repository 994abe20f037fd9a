#pragma once

#include <map>
#include <optional>
#include <stdexcept>
#include <string>

#include "switchaux/ops.hpp"
#include "switchaux/tensor.hpp"

namespace swaux {

struct LossBreakdown {
    double main_loss = 0.0;
    std::optional<double> aux_loss;
    std::optional<int> aux_stage;
    double total = 0.0;
};

/// Differentiable total plus the scalar breakdown for logging.
struct CompositeLoss {
    Tensor total;
    LossBreakdown breakdown;
};

/// Dice coefficient 2|X∩Y| / (|X|+|Y|) of two binary masks. Two empty
/// masks score 1.0.
inline double dice_score(std::span<const double> pred, std::span<const double> truth) {
    if (pred.size() != truth.size())
        throw ShapeError("dice_score: size mismatch " + std::to_string(pred.size()) + " vs " + std::to_string(truth.size()));
    std::size_t inter = 0, np = 0, nt = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double p = pred[i], t = truth[i];
        if ((p != 0.0 && p != 1.0) || (t != 0.0 && t != 1.0))
            throw std::invalid_argument("dice_score: masks must be binary {0,1}");
        const bool bp = p == 1.0, bt = t == 1.0;
        np += bp;
        nt += bt;
        inter += bp && bt;
    }
    if (np + nt == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(np + nt);
}

inline double dice_score(const Tensor& pred, const Tensor& truth) {
    if (pred.shape() != truth.shape())
        throw ShapeError("dice_score: shape mismatch " + shape_str(pred.shape()) + " vs " + shape_str(truth.shape()));
    return dice_score(pred.values(), truth.values());
}

/// Main BCE on full-resolution logits plus, when a stage is scheduled,
/// aux_lambda * BCE of that stage's logits against the average-pooled mask.
/// With `detach_main` the main term is reported but left out of the
/// differentiable total.
inline CompositeLoss composite_loss(const Tensor& main_logits, const std::map<int, Tensor>& aux_logits,
                                    const Tensor& mask, std::optional<int> aux_stage, double aux_lambda = 1.0,
                                    bool detach_main = false) {
    Tensor main = bce_with_logits(main_logits, mask);
    CompositeLoss out;
    out.breakdown.main_loss = main.item();
    out.total = detach_main ? Tensor{} : main;
    if (aux_stage) {
        auto it = aux_logits.find(*aux_stage);
        if (it == aux_logits.end())
            throw std::invalid_argument("composite_loss: no aux logits for scheduled stage " + std::to_string(*aux_stage));
        const Tensor& aux = it->second;
        if (aux.rank() != 3 || mask.rank() != 3 || aux.dim(1) == 0 || mask.dim(1) % aux.dim(1) != 0 ||
            mask.dim(2) % aux.dim(2) != 0 || mask.dim(1) / aux.dim(1) != mask.dim(2) / aux.dim(2))
            throw ShapeError("composite_loss: aux logits " + shape_str(aux.shape()) + " incompatible with mask " +
                             shape_str(mask.shape()));
        const std::size_t factor = mask.dim(1) / aux.dim(1);
        Tensor target = downsample_avg(mask.detach(), factor);
        Tensor aux_loss = bce_with_logits(aux, target);
        out.breakdown.aux_loss = aux_loss.item();
        out.breakdown.aux_stage = aux_stage;
        Tensor weighted = aux_lambda == 1.0 ? aux_loss : scale(aux_loss, aux_lambda);
        out.total = out.total.defined() ? add(out.total, weighted) : weighted;
    }
    if (!out.total.defined()) out.total = Tensor::scalar(0.0);
    out.breakdown.total = out.total.item();
    return out;
}

}  // namespace swaux
