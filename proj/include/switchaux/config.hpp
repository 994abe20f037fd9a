#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "switchaux/data.hpp"
#include "switchaux/inference.hpp"
#include "switchaux/model.hpp"
#include "switchaux/schedule.hpp"

namespace swaux {

/// Everything a training run needs. Defaults are the desk-scale setup:
/// 64 px tiles, 16 samples per organ (64 train / 16 val on fold 0),
/// 24 epochs, lr 2e-3. Batch 4/8 and the plateau scheduler follow the
/// full-scale recipe; paper_scale() restores 768 px, 120 epochs, lr 5e-5.
struct RunConfig {
    DatasetSpec data{};
    int folds = 5;
    int fold = 0;
    bool augment = true;
    bool color_normalize = true;
    bool parallel_data = false;

    EncoderConfig model{};

    Regime regime = SwitchedAux{};
    int epochs = 24;
    int batch_train = 4;
    int batch_val = 8;
    double aux_lambda = 1.0;
    AdamConfig adam{.lr = 2e-3};
    PlateauConfig plateau{};
    /// Diagnostic: keep the main loss out of backprop.
    bool zero_main_loss = false;
    /// Probability cut used for per-epoch validation dice.
    double val_threshold = 0.5;

    ThresholdTable thresholds = ThresholdTable::defaults();
    std::string out_dir = "runs/default";

    /// Full-scale recipe: 768 px inputs, 120 epochs, lr 5e-5.
    static RunConfig paper_scale() {
        RunConfig c;
        c.data.image_size = 768;
        c.epochs = 120;
        c.adam.lr = 5e-5;
        return c;
    }

    void validate() const {
        model.validate();
        swaux::validate(regime);
        if (data.image_size % model.total_stride() != 0)
            throw std::invalid_argument("image_size " + std::to_string(data.image_size) + " not divisible by total stride " +
                                        std::to_string(model.total_stride()));
        if (folds < 2) throw std::invalid_argument("folds must be >= 2");
        if (fold < 0 || fold >= folds) throw std::invalid_argument("fold must lie in [0, folds)");
        if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
        if (batch_train < 1 || batch_val < 1) throw std::invalid_argument("batch sizes must be >= 1");
        if (!(adam.lr > 0.0)) throw std::invalid_argument("lr must be > 0");
        if (aux_lambda < 0.0) throw std::invalid_argument("aux_lambda must be >= 0");
        if (!(val_threshold > 0.0 && val_threshold < 1.0)) throw std::invalid_argument("val_threshold must lie in (0,1)");
    }
};

/// Section-qualified key/value pairs ("train.lr" -> "5e-5").
using IniMap = std::map<std::string, std::string>;

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw std::invalid_argument("config key '" + key + "': expected boolean, got '" + v + "'");
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
    std::istringstream is(v);
    T out{};
    is >> out;
    if (is.fail() || !is.eof()) throw std::invalid_argument("config key '" + key + "': bad number '" + v + "'");
    return out;
}

inline std::array<std::size_t, kNumStages> parse_stage_list(const std::string& key, const std::string& v) {
    std::array<std::size_t, kNumStages> out{};
    std::stringstream ss(v);
    std::string item;
    std::size_t i = 0;
    while (std::getline(ss, item, ',')) {
        if (i >= kNumStages) throw std::invalid_argument("config key '" + key + "': expected 4 values");
        out[i++] = parse_number<std::size_t>(key, trim(item));
    }
    if (i != kNumStages) throw std::invalid_argument("config key '" + key + "': expected 4 values");
    return out;
}

inline std::string join(const std::array<std::size_t, kNumStages>& a) {
    std::string s;
    for (std::size_t i = 0; i < a.size(); ++i) s += (i ? "," : "") + std::to_string(a[i]);
    return s;
}

inline std::string fmt_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

}  // namespace detail

inline IniMap parse_ini(std::istream& in) {
    IniMap out;
    std::string section;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find_first_of("#;");
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw std::invalid_argument("config line " + std::to_string(lineno) + ": bad section header");
            section = detail::trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
        if (section.empty()) throw std::invalid_argument("config line " + std::to_string(lineno) + ": key outside a section");
        out[section + "." + detail::trim(line.substr(0, eq))] = detail::trim(line.substr(eq + 1));
    }
    return out;
}

/// Apply key/value overrides onto `cfg`. Unknown keys are rejected.
inline void apply_ini(RunConfig& cfg, const IniMap& ini) {
    using detail::parse_bool;
    using detail::parse_number;
    for (const auto& [key, v] : ini) {
        if (key == "data.per_organ") cfg.data.per_organ = parse_number<int>(key, v);
        else if (key == "data.image_size") cfg.data.image_size = parse_number<std::size_t>(key, v);
        else if (key == "data.seed") cfg.data.seed = parse_number<std::uint64_t>(key, v);
        else if (key == "data.folds") cfg.folds = parse_number<int>(key, v);
        else if (key == "data.fold") cfg.fold = parse_number<int>(key, v);
        else if (key == "data.augment") cfg.augment = parse_bool(key, v);
        else if (key == "data.color_normalize") cfg.color_normalize = parse_bool(key, v);
        else if (key == "data.parallel") cfg.parallel_data = parse_bool(key, v);
        else if (key == "model.block_type") cfg.model.block_type = parse_block_type(v);
        else if (key == "model.stage_channels") cfg.model.stage_channels = detail::parse_stage_list(key, v);
        else if (key == "model.stage_strides") cfg.model.stage_strides = detail::parse_stage_list(key, v);
        else if (key == "model.blocks_per_stage") cfg.model.blocks_per_stage = parse_number<std::size_t>(key, v);
        else if (key == "model.decoder_width") cfg.model.decoder_width = parse_number<std::size_t>(key, v);
        else if (key == "train.regime") cfg.regime = parse_regime(v);
        else if (key == "train.epochs") cfg.epochs = parse_number<int>(key, v);
        else if (key == "train.lr") cfg.adam.lr = parse_number<double>(key, v);
        else if (key == "train.batch_train") cfg.batch_train = parse_number<int>(key, v);
        else if (key == "train.batch_val") cfg.batch_val = parse_number<int>(key, v);
        else if (key == "train.aux_lambda") cfg.aux_lambda = parse_number<double>(key, v);
        else if (key == "train.beta1") cfg.adam.beta1 = parse_number<double>(key, v);
        else if (key == "train.beta2") cfg.adam.beta2 = parse_number<double>(key, v);
        else if (key == "train.eps") cfg.adam.eps = parse_number<double>(key, v);
        else if (key == "train.grad_clip") cfg.adam.grad_clip = parse_number<double>(key, v);
        else if (key == "train.plateau_factor") cfg.plateau.factor = parse_number<double>(key, v);
        else if (key == "train.plateau_patience") cfg.plateau.patience = parse_number<int>(key, v);
        else if (key == "train.plateau_min_delta") cfg.plateau.min_delta = parse_number<double>(key, v);
        else if (key == "train.min_lr") cfg.plateau.min_lr = parse_number<double>(key, v);
        else if (key == "train.zero_main_loss") cfg.zero_main_loss = parse_bool(key, v);
        else if (key == "train.val_threshold") cfg.val_threshold = parse_number<double>(key, v);
        else if (key == "train.out_dir") cfg.out_dir = v;
        else if (key.rfind("thresholds.", 0) == 0) {
            const std::string rest = key.substr(11);
            const auto dot = rest.find('.');
            if (dot == std::string::npos) throw std::invalid_argument("threshold key '" + key + "' must be thresholds.<organ>.<domain>");
            const std::string organ = rest.substr(0, dot);
            const Domain d = parse_domain(rest.substr(dot + 1));
            const double thr = parse_number<double>(key, v);
            if (organ == "*") {
                for (auto o : kAllOrgans) cfg.thresholds.set(o, d, thr);
            } else {
                cfg.thresholds.set(parse_organ(organ), d, thr);
            }
        } else {
            throw std::invalid_argument("unknown config key '" + key + "'");
        }
    }
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file '" + path + "'");
    RunConfig cfg;
    apply_ini(cfg, parse_ini(in));
    cfg.validate();
    return cfg;
}

/// Render the full effective configuration in the same format parse_ini reads.
inline std::string to_ini(const RunConfig& c) {
    using detail::fmt_double;
    std::ostringstream os;
    os << "[data]\n"
       << "per_organ = " << c.data.per_organ << "\n"
       << "image_size = " << c.data.image_size << "\n"
       << "seed = " << c.data.seed << "\n"
       << "folds = " << c.folds << "\n"
       << "fold = " << c.fold << "\n"
       << "augment = " << (c.augment ? "true" : "false") << "\n"
       << "color_normalize = " << (c.color_normalize ? "true" : "false") << "\n"
       << "parallel = " << (c.parallel_data ? "true" : "false") << "\n\n"
       << "[model]\n"
       << "block_type = " << to_string(c.model.block_type) << "\n"
       << "stage_channels = " << detail::join(c.model.stage_channels) << "\n"
       << "stage_strides = " << detail::join(c.model.stage_strides) << "\n"
       << "blocks_per_stage = " << c.model.blocks_per_stage << "\n"
       << "decoder_width = " << c.model.decoder_width << "\n\n"
       << "[train]\n"
       << "regime = " << to_string(c.regime) << "\n"
       << "epochs = " << c.epochs << "\n"
       << "lr = " << fmt_double(c.adam.lr) << "\n"
       << "batch_train = " << c.batch_train << "\n"
       << "batch_val = " << c.batch_val << "\n"
       << "aux_lambda = " << fmt_double(c.aux_lambda) << "\n"
       << "beta1 = " << fmt_double(c.adam.beta1) << "\n"
       << "beta2 = " << fmt_double(c.adam.beta2) << "\n"
       << "eps = " << fmt_double(c.adam.eps) << "\n"
       << "grad_clip = " << fmt_double(c.adam.grad_clip) << "\n"
       << "plateau_factor = " << fmt_double(c.plateau.factor) << "\n"
       << "plateau_patience = " << c.plateau.patience << "\n"
       << "plateau_min_delta = " << fmt_double(c.plateau.min_delta) << "\n"
       << "min_lr = " << fmt_double(c.plateau.min_lr) << "\n"
       << "zero_main_loss = " << (c.zero_main_loss ? "true" : "false") << "\n"
       << "val_threshold = " << fmt_double(c.val_threshold) << "\n"
       << "out_dir = " << c.out_dir << "\n\n"
       << "[thresholds]\n";
    for (const auto& [key, thr] : c.thresholds.entries())
        os << to_string(key.first) << "." << to_string(key.second) << " = " << fmt_double(thr) << "\n";
    return os.str();
}

}  // namespace swaux
