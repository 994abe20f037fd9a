#pragma once

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "switchaux/checkpoint.hpp"
#include "switchaux/config.hpp"
#include "switchaux/data.hpp"
#include "switchaux/losses.hpp"
#include "switchaux/model.hpp"
#include "switchaux/schedule.hpp"

namespace swaux {

struct EpochRow {
    int epoch = 0;
    std::string regime;
    std::optional<int> aux_stage;
    double train_total = 0.0;
    double train_main = 0.0;
    std::optional<double> train_aux;
    double val_dice_mean_per_image = 0.0;
    double val_dice_mean_per_organ = 0.0;
    double lr = 0.0;
    std::array<double, kNumStages> grad_norm{};
    double wall_seconds = 0.0;
    /// Mean validation dice per organ present in the validation fold.
    std::map<Organ, double> val_dice_by_organ;
};

struct MetricsLog {
    std::vector<EpochRow> rows;

    /// CSV with one row per epoch. Wall time is left out unless asked for,
    /// so logs from identical runs compare byte-for-byte.
    std::string to_csv(bool include_timing = false) const {
        std::ostringstream os;
        os << "epoch,regime,aux_stage,train_total,train_main,train_aux,val_dice_mean_per_image,val_dice_mean_per_organ,lr";
        for (int k = 1; k <= kNumStages; ++k) os << ",grad_norm_stage" << k;
        if (include_timing) os << ",wall_seconds";
        os << "\n";
        for (const auto& r : rows) {
            os << r.epoch << ',' << r.regime << ',';
            if (r.aux_stage) os << *r.aux_stage;
            os << ',' << num(r.train_total) << ',' << num(r.train_main) << ',';
            if (r.train_aux) os << num(*r.train_aux);
            os << ',' << num(r.val_dice_mean_per_image) << ',' << num(r.val_dice_mean_per_organ) << ',' << num(r.lr);
            for (double g : r.grad_norm) os << ',' << num(g);
            if (include_timing) os << ',' << num(r.wall_seconds);
            os << "\n";
        }
        return os.str();
    }

    double best_val_dice() const {
        double best = -1.0;
        for (const auto& r : rows) best = std::max(best, r.val_dice_mean_per_image);
        return best;
    }

    static std::string num(double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return buf;
    }
};

/// Prepared dataset: samples (colour-normalised when enabled) plus the split.
struct PreparedData {
    std::vector<Sample> samples;  // indexed by id
    std::vector<int> train_ids;
    std::vector<int> val_ids;
    std::optional<ColorStats> stain_target;
};

inline PreparedData prepare_data(const RunConfig& cfg) {
    PreparedData d;
    d.samples = generate_dataset(cfg.data);
    const FoldSplit split = stratified_kfold(d.samples, cfg.folds, cfg.data.seed);
    d.train_ids = split.train_ids(static_cast<std::size_t>(cfg.fold));
    d.val_ids = split.val_ids(static_cast<std::size_t>(cfg.fold));
    if (cfg.color_normalize) {
        // Mosaic target pooled over the training pixels of both domains.
        std::vector<const Tensor*> imgs;
        for (int id : d.train_ids) imgs.push_back(&d.samples[static_cast<std::size_t>(id)].image);
        d.stain_target = color_stats(imgs);
        for (auto& s : d.samples) s.image = color_normalize(s.image, *d.stain_target);
    }
    return d;
}

struct ValidationResult {
    double mean_per_image = 0.0;
    double mean_per_organ = 0.0;
    std::map<Organ, double> by_organ;
};

/// Dice of thresholded sigmoid(main logits) on each sample; no augmentation, no TTA.
inline ValidationResult validate_model(const SegModel& model, const std::vector<const Sample*>& samples, double threshold,
                                       int batch) {
    ValidationResult res;
    std::map<Organ, std::pair<double, int>> acc;
    double total = 0.0;
    for (std::size_t start = 0; start < samples.size(); start += static_cast<std::size_t>(batch)) {
        const std::size_t end = std::min(samples.size(), start + static_cast<std::size_t>(batch));
        for (std::size_t i = start; i < end; ++i) {
            const Sample& s = *samples[i];
            Tensor logits = model(s.image);
            Tensor pred = Tensor::zeros(logits.shape());
            auto pv = pred.mutable_values();
            for (std::size_t j = 0; j < pv.size(); ++j) pv[j] = detail::sigmoid_value(logits[j]) > threshold ? 1.0 : 0.0;
            const double d = dice_score(pred, s.mask);
            total += d;
            acc[s.organ].first += d;
            acc[s.organ].second += 1;
        }
    }
    if (samples.empty()) return res;
    res.mean_per_image = total / static_cast<double>(samples.size());
    for (const auto& [o, p] : acc) {
        res.by_organ[o] = p.first / p.second;
        res.mean_per_organ += res.by_organ[o];
    }
    res.mean_per_organ /= static_cast<double>(acc.size());
    return res;
}

/// Optional observation points, used by tests and instrumentation.
struct TrainHooks {
    std::function<void(int epoch, std::optional<int> aux_stage, const SegModel&, const OptState&)> on_epoch_begin;
    std::function<void(const EpochRow&)> on_epoch_end;
};

struct TrainResult {
    MetricsLog log;
    SegModel model;
    OptState opt;
    std::optional<ColorStats> stain_target;
};

/// L2 norm of current gradients over each encoder stage's parameters.
inline std::array<double, kNumStages> stage_grad_norms(const SegModel& model) {
    std::array<double, kNumStages> sq{};
    for (const auto& p : model.parameters()) {
        if (p.group != ParamGroup::encoder) continue;
        for (double g : p.tensor.grad()) sq[static_cast<std::size_t>(p.stage - 1)] += g * g;
    }
    for (auto& v : sq) v = std::sqrt(v);
    return sq;
}

namespace detail {

inline std::vector<Sample> epoch_inputs(const RunConfig& cfg, const PreparedData& data, const std::vector<int>& order, int epoch) {
    std::vector<Sample> out(order.size());
    auto make = [&](std::size_t i) {
        const Sample& src = data.samples[static_cast<std::size_t>(order[i])];
        out[i] = cfg.augment ? augment(src, derive_seed(cfg.data.seed, {static_cast<std::uint64_t>(epoch),
                                                                         static_cast<std::uint64_t>(src.id), 13}))
                             : src;
    };
    if (!cfg.parallel_data) {
        for (std::size_t i = 0; i < order.size(); ++i) make(i);
        return out;
    }
    const std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            for (std::size_t i = w; i < order.size(); i += workers) make(i);
        });
    pool.clear();  // join
    return out;
}

}  // namespace detail

/// Full training run on prepared data. Deterministic for a fixed config.
inline TrainResult train_run(const RunConfig& cfg, const PreparedData& data, const TrainHooks& hooks = {}) {
    cfg.validate();
    TrainResult res{MetricsLog{}, SegModel(cfg.model, derive_seed(cfg.data.seed, {101})), OptState{}, data.stain_target};
    SegModel& model = res.model;
    res.opt = OptState::for_params(model.parameters(), cfg.adam.lr);
    OptState& opt = res.opt;

    std::vector<const Sample*> val;
    for (int id : data.val_ids) val.push_back(&data.samples[static_cast<std::size_t>(id)]);
    const std::string regime_name = to_string(cfg.regime);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const std::optional<int> aux_stage = aux_stage_for_epoch(cfg.regime, epoch, cfg.epochs);
        if (hooks.on_epoch_begin) hooks.on_epoch_begin(epoch, aux_stage, model, opt);
        std::set<int> aux_request;
        if (aux_stage) aux_request.insert(*aux_stage);

        std::vector<int> order = data.train_ids;
        Rng(derive_seed(cfg.data.seed, {static_cast<std::uint64_t>(epoch), 11})).shuffle(order.begin(), order.end());
        const std::vector<Sample> inputs = detail::epoch_inputs(cfg, data, order, epoch);

        EpochRow row;
        row.epoch = epoch;
        row.regime = regime_name;
        row.aux_stage = aux_stage;
        row.lr = opt.lr;
        double sum_total = 0.0, sum_main = 0.0, sum_aux = 0.0;
        std::array<double, kNumStages> norm_acc{};
        int steps = 0;

        const auto bsz = static_cast<std::size_t>(cfg.batch_train);
        for (std::size_t start = 0; start < inputs.size(); start += bsz) {
            const std::size_t end = std::min(inputs.size(), start + bsz);
            const double inv_b = 1.0 / static_cast<double>(end - start);
            model.zero_grad();
            for (std::size_t i = start; i < end; ++i) {
                const Sample& s = inputs[i];
                ModelOutput out = model.forward(s.image, aux_request);
                CompositeLoss loss =
                    composite_loss(out.main_logits, out.aux_logits, s.mask, aux_stage, cfg.aux_lambda, cfg.zero_main_loss);
                if (!std::isfinite(loss.breakdown.total) || !std::isfinite(loss.breakdown.main_loss))
                    throw std::runtime_error("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                             std::to_string(steps) + ", sample " + std::to_string(s.id));
                scale(loss.total, inv_b).backward();
                sum_total += loss.breakdown.total;
                sum_main += loss.breakdown.main_loss;
                if (loss.breakdown.aux_loss) sum_aux += *loss.breakdown.aux_loss;
            }
            const auto norms = stage_grad_norms(model);
            for (int k = 0; k < kNumStages; ++k) norm_acc[static_cast<std::size_t>(k)] += norms[static_cast<std::size_t>(k)];
            adam_step(model.parameters(), opt, cfg.adam);
            ++steps;
        }
        const double n = static_cast<double>(inputs.size());
        row.train_total = sum_total / n;
        row.train_main = sum_main / n;
        if (aux_stage) row.train_aux = sum_aux / n;
        for (int k = 0; k < kNumStages; ++k)
            row.grad_norm[static_cast<std::size_t>(k)] = norm_acc[static_cast<std::size_t>(k)] / static_cast<double>(steps);

        const ValidationResult v = validate_model(model, val, cfg.val_threshold, cfg.batch_val);
        row.val_dice_mean_per_image = v.mean_per_image;
        row.val_dice_mean_per_organ = v.mean_per_organ;
        row.val_dice_by_organ = v.by_organ;
        plateau_step(opt, v.mean_per_image, cfg.plateau);
        row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (hooks.on_epoch_end) hooks.on_epoch_end(row);
        res.log.rows.push_back(std::move(row));
    }
    return res;
}

inline TrainResult train_run(const RunConfig& cfg, const TrainHooks& hooks = {}) {
    cfg.validate();
    return train_run(cfg, prepare_data(cfg), hooks);
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    out << text;
}

/// Write metrics.csv, timing.csv, config.ini and checkpoint.bin under `dir`.
inline void save_run(const std::filesystem::path& dir, const RunConfig& cfg, const TrainResult& res) {
    std::filesystem::create_directories(dir);
    write_text(dir / "metrics.csv", res.log.to_csv(false));
    std::ostringstream timing;
    timing << "epoch,wall_seconds\n";
    for (const auto& r : res.log.rows) timing << r.epoch << ',' << MetricsLog::num(r.wall_seconds) << "\n";
    write_text(dir / "timing.csv", timing.str());
    write_text(dir / "config.ini", to_ini(cfg));
    save_checkpoint(dir / "checkpoint.bin", res.model, res.stain_target,
                    {{"regime", to_string(cfg.regime)}, {"epochs", std::to_string(cfg.epochs)}});
}

}  // namespace swaux
