#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "switchaux/model.hpp"
#include "switchaux/tensor.hpp"

namespace swaux {

struct NormalRegime {};

struct SingleAux {
    int stage = 2;
};

/// Aux supervision on `from_stage` until floor(switch_fraction * total)
/// epochs have run, then on `to_stage`.
struct SwitchedAux {
    int from_stage = 2;
    int to_stage = 1;
    double switch_fraction = 0.5;
};

using Regime = std::variant<NormalRegime, SingleAux, SwitchedAux>;

inline void validate(const Regime& regime) {
    std::visit(
        [](const auto& r) {
            using T = std::decay_t<decltype(r)>;
            if constexpr (std::is_same_v<T, SingleAux>) {
                EncoderConfig::check_stage(r.stage);
            } else if constexpr (std::is_same_v<T, SwitchedAux>) {
                EncoderConfig::check_stage(r.from_stage);
                EncoderConfig::check_stage(r.to_stage);
                if (!(r.switch_fraction > 0.0 && r.switch_fraction < 1.0))
                    throw std::invalid_argument("switch_fraction must lie in (0,1)");
            }
        },
        regime);
}

/// normal | single:<stage> | switched[:<from>:<to>[:<fraction>]]
inline Regime parse_regime(const std::string& text) {
    std::vector<std::string> parts;
    std::stringstream ss(text);
    for (std::string item; std::getline(ss, item, ':');) parts.push_back(item);
    if (parts.empty()) throw std::invalid_argument("empty regime");
    Regime r;
    try {
        if (parts[0] == "normal" && parts.size() == 1) {
            r = NormalRegime{};
        } else if (parts[0] == "single" && parts.size() <= 2) {
            SingleAux s;
            if (parts.size() == 2) s.stage = std::stoi(parts[1]);
            r = s;
        } else if (parts[0] == "switched" && (parts.size() == 1 || parts.size() == 3 || parts.size() == 4)) {
            SwitchedAux s;
            if (parts.size() >= 3) {
                s.from_stage = std::stoi(parts[1]);
                s.to_stage = std::stoi(parts[2]);
            }
            if (parts.size() == 4) s.switch_fraction = std::stod(parts[3]);
            r = s;
        } else {
            throw std::invalid_argument("bad form");
        }
    } catch (const std::logic_error&) {
        throw std::invalid_argument("unrecognised regime '" + text +
                                    "' (expected normal | single:<stage> | switched:<from>:<to>[:<fraction>])");
    }
    validate(r);
    return r;
}

inline std::string to_string(const Regime& regime) {
    return std::visit(
        [](const auto& r) -> std::string {
            using T = std::decay_t<decltype(r)>;
            if constexpr (std::is_same_v<T, NormalRegime>) {
                return "normal";
            } else if constexpr (std::is_same_v<T, SingleAux>) {
                return "single:" + std::to_string(r.stage);
            } else {
                std::ostringstream os;
                os << "switched:" << r.from_stage << ':' << r.to_stage << ':' << r.switch_fraction;
                return os.str();
            }
        },
        regime);
}

inline int switch_epoch(const SwitchedAux& r, int total_epochs) {
    return static_cast<int>(std::floor(r.switch_fraction * static_cast<double>(total_epochs)));
}

/// Which encoder stage carries the aux loss at `epoch` (0-based), if any.
inline std::optional<int> aux_stage_for_epoch(const Regime& regime, int epoch, int total_epochs) {
    if (epoch < 0 || epoch >= total_epochs)
        throw std::out_of_range("epoch " + std::to_string(epoch) + " outside [0," + std::to_string(total_epochs) + ")");
    return std::visit(
        [&](const auto& r) -> std::optional<int> {
            using T = std::decay_t<decltype(r)>;
            if constexpr (std::is_same_v<T, NormalRegime>) {
                return std::nullopt;
            } else if constexpr (std::is_same_v<T, SingleAux>) {
                return r.stage;
            } else {
                return epoch < switch_epoch(r, total_epochs) ? r.from_stage : r.to_stage;
            }
        },
        regime);
}

struct AdamConfig {
    double lr = 5e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    /// Global-norm gradient clipping; 0 disables.
    double grad_clip = 0.0;
};

struct PlateauConfig {
    double factor = 0.5;
    int patience = 5;
    double min_delta = 1e-4;
    double min_lr = 1e-7;
};

/// Optimizer moments plus plateau-scheduler bookkeeping ("max" mode).
struct OptState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    long step = 0;
    double lr = 5e-5;
    int plateau_counter = 0;
    double best_metric = -std::numeric_limits<double>::infinity();

    static OptState for_params(const std::vector<NamedParam>& params, double lr) {
        OptState s;
        s.lr = lr;
        for (const auto& p : params) {
            s.m.emplace_back(p.tensor.numel(), 0.0);
            s.v.emplace_back(p.tensor.numel(), 0.0);
        }
        return s;
    }
};

/// One bias-corrected Adam update over every parameter. A parameter that
/// no gradient reached is treated as having zero gradient.
inline void adam_step(std::vector<NamedParam>& params, OptState& state, const AdamConfig& cfg = {}) {
    if (state.m.size() != params.size() || state.v.size() != params.size())
        throw std::invalid_argument("adam_step: optimizer state does not match parameter list");
    for (const auto& p : params) {
        if (!all_finite(p.tensor.grad()))
            throw std::runtime_error("adam_step: non-finite gradient in parameter '" + p.name + "'");
    }
    double clip_scale = 1.0;
    if (cfg.grad_clip > 0.0) {
        double sq = 0.0;
        for (const auto& p : params)
            for (double g : p.tensor.grad()) sq += g * g;
        const double norm = std::sqrt(sq);
        if (norm > cfg.grad_clip) clip_scale = cfg.grad_clip / norm;
    }
    ++state.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& t = params[i].tensor;
        if (state.m[i].size() != t.numel()) throw std::invalid_argument("adam_step: moment shape mismatch for " + params[i].name);
        auto vals = t.mutable_values();
        auto grad = t.grad();
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t j = 0; j < vals.size(); ++j) {
            const double g = grad.empty() ? 0.0 : grad[j] * clip_scale;
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            vals[j] -= state.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

/// Reduce-on-plateau in "max" mode. Returns true when the lr was reduced.
inline bool plateau_step(OptState& state, double val_metric, const PlateauConfig& cfg = {}) {
    if (val_metric > state.best_metric + cfg.min_delta) {
        state.best_metric = val_metric;
        state.plateau_counter = 0;
        return false;
    }
    if (++state.plateau_counter > cfg.patience) {
        state.plateau_counter = 0;
        const double next = std::max(state.lr * cfg.factor, cfg.min_lr);
        if (next < state.lr) {
            state.lr = next;
            return true;
        }
    }
    return false;
}

}  // namespace swaux
