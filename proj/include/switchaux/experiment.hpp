#pragma once

#include <algorithm>
#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "switchaux/data.hpp"
#include "switchaux/image_io.hpp"
#include "switchaux/inference.hpp"
#include "switchaux/losses.hpp"
#include "switchaux/train.hpp"

namespace swaux {

// ------------------------------------------------------------ comparison

struct CompareOptions {
    std::vector<Regime> regimes{NormalRegime{}, SingleAux{2}, SwitchedAux{}};
    std::vector<BlockType> block_types{BlockType::attention};
    /// Epochs averaged for the early gradient-norm columns.
    int early_epochs = 3;
};

struct SummaryRow {
    std::string regime;
    BlockType block_type = BlockType::attention;
    double best_val_dice = 0.0;
    int best_epoch = -1;
    std::map<Organ, double> organ_dice_at_best;
    std::array<double, kNumStages> early_grad_norm{};
    std::string error;  // empty when the run completed
};

struct ComparisonReport {
    std::vector<SummaryRow> rows;
    std::vector<MetricsLog> logs;  // parallel to rows; empty log for failed runs

    bool ok() const {
        return std::all_of(rows.begin(), rows.end(), [](const SummaryRow& r) { return r.error.empty(); });
    }

    std::string summary_csv() const {
        std::ostringstream os;
        os << "regime,block_type,best_val_dice,best_epoch";
        for (auto o : kAllOrgans) os << ",dice_" << to_string(o);
        for (int k = 1; k <= kNumStages; ++k) os << ",early_grad_norm_stage" << k;
        os << ",status\n";
        for (const auto& r : rows) {
            os << r.regime << ',' << to_string(r.block_type) << ',' << MetricsLog::num(r.best_val_dice) << ',' << r.best_epoch;
            for (auto o : kAllOrgans) {
                os << ',';
                if (auto it = r.organ_dice_at_best.find(o); it != r.organ_dice_at_best.end()) os << MetricsLog::num(it->second);
            }
            for (double g : r.early_grad_norm) os << ',' << MetricsLog::num(g);
            os << ',' << (r.error.empty() ? "ok" : "error: " + r.error) << "\n";
        }
        return os.str();
    }

    /// Long-format curves: one line per (run, epoch).
    std::string curves_csv() const {
        std::ostringstream os;
        os << "regime,block_type,epoch,aux_stage,train_total,val_dice,lr";
        for (int k = 1; k <= kNumStages; ++k) os << ",grad_norm_stage" << k;
        os << "\n";
        for (std::size_t i = 0; i < rows.size(); ++i)
            for (const auto& e : logs[i].rows) {
                os << rows[i].regime << ',' << to_string(rows[i].block_type) << ',' << e.epoch << ',';
                if (e.aux_stage) os << *e.aux_stage;
                os << ',' << MetricsLog::num(e.train_total) << ',' << MetricsLog::num(e.val_dice_mean_per_image) << ','
                   << MetricsLog::num(e.lr);
                for (double g : e.grad_norm) os << ',' << MetricsLog::num(g);
                os << "\n";
            }
        return os.str();
    }
};

inline SummaryRow summarize(const std::string& regime, BlockType bt, const MetricsLog& log, int early_epochs) {
    SummaryRow row;
    row.regime = regime;
    row.block_type = bt;
    row.best_val_dice = -1.0;
    for (const auto& e : log.rows)
        if (e.val_dice_mean_per_image > row.best_val_dice) {
            row.best_val_dice = e.val_dice_mean_per_image;
            row.best_epoch = e.epoch;
            row.organ_dice_at_best = e.val_dice_by_organ;
        }
    const int n = std::min<int>(early_epochs, static_cast<int>(log.rows.size()));
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < kNumStages; ++k)
            row.early_grad_norm[static_cast<std::size_t>(k)] += log.rows[static_cast<std::size_t>(i)].grad_norm[static_cast<std::size_t>(k)] / n;
    return row;
}

/// Train every (regime, block type) pair on one shared dataset and seed.
/// A failing run is recorded in its row and the remaining runs continue.
/// `on_run`, when set, sees each finished run (e.g. to persist it).
inline ComparisonReport compare_regimes(
    const RunConfig& base, const CompareOptions& opts = {},
    const std::function<void(const RunConfig&, const TrainResult&)>& on_run = {}) {
    base.validate();
    const PreparedData data = prepare_data(base);
    ComparisonReport report;
    for (BlockType bt : opts.block_types)
        for (const Regime& regime : opts.regimes) {
            RunConfig cfg = base;
            cfg.regime = regime;
            cfg.model.block_type = bt;
            try {
                TrainResult res = train_run(cfg, data);
                report.rows.push_back(summarize(to_string(regime), bt, res.log, opts.early_epochs));
                if (on_run) on_run(cfg, res);
                report.logs.push_back(std::move(res.log));
            } catch (const std::exception& e) {
                SummaryRow row;
                row.regime = to_string(regime);
                row.block_type = bt;
                row.error = e.what();
                report.rows.push_back(std::move(row));
                report.logs.emplace_back();
            }
        }
    return report;
}

// ------------------------------------------------------------ evaluation

struct EvalOptions {
    /// Model input side; images are resized to it and predictions resized back.
    std::size_t input_size = 64;
    std::optional<ColorStats> stain_target;
    ThresholdTable thresholds = ThresholdTable::defaults();
};

/// resize -> colour-normalise -> flip TTA -> resize back -> organ/domain threshold.
template <class Model>
Tensor predict_mask(const Model& model, const Sample& sample, const EvalOptions& opts) {
    const std::size_t h = sample.image.dim(1), w = sample.image.dim(2);
    if (h != w) throw ShapeError("predict_mask: square images required, got " + shape_str(sample.image.shape()));
    Tensor img = resize_image(sample.image, opts.input_size);
    if (opts.stain_target) img = color_normalize(img, *opts.stain_target);
    Tensor probs = tta_predict(model, img);
    if (probs.dim(1) != h) {
        probs = resize_image(probs, h);
        for (auto& v : probs.mutable_values()) v = std::clamp(v, 0.0, 1.0);
    }
    return threshold_mask(probs, sample.organ, sample.domain, opts.thresholds);
}

struct EvalImageRow {
    int id = 0;
    Organ organ = Organ::kidney;
    Domain domain = Domain::hpa;
    double dice = 0.0;
};

struct EvalGroupRow {
    Organ organ;
    Domain domain;
    int count = 0;
    double mean_dice = 0.0;
};

struct EvalReport {
    std::vector<EvalImageRow> images;
    std::vector<EvalGroupRow> groups;  // one per (organ, domain) present
    double mean_per_image = 0.0;
    double mean_per_organ = 0.0;

    std::string groups_csv() const {
        std::ostringstream os;
        os << "organ,domain,count,mean_dice\n";
        for (const auto& g : groups)
            os << to_string(g.organ) << ',' << to_string(g.domain) << ',' << g.count << ',' << MetricsLog::num(g.mean_dice) << "\n";
        return os.str();
    }

    std::string images_csv() const {
        std::ostringstream os;
        os << "id,organ,domain,dice\n";
        for (const auto& r : images)
            os << r.id << ',' << to_string(r.organ) << ',' << to_string(r.domain) << ',' << MetricsLog::num(r.dice) << "\n";
        return os.str();
    }
};

template <class Model>
EvalReport eval_run(const Model& model, const std::vector<Sample>& samples, const EvalOptions& opts) {
    EvalReport rep;
    std::map<std::pair<Organ, Domain>, std::pair<double, int>> groups;
    std::map<Organ, std::pair<double, int>> organs;
    for (const auto& s : samples) {
        const Tensor pred = predict_mask(model, s, opts);
        const double d = dice_score(pred, s.mask);
        rep.images.push_back({s.id, s.organ, s.domain, d});
        auto& g = groups[{s.organ, s.domain}];
        g.first += d;
        g.second += 1;
        auto& o = organs[s.organ];
        o.first += d;
        o.second += 1;
        rep.mean_per_image += d;
    }
    if (!samples.empty()) rep.mean_per_image /= static_cast<double>(samples.size());
    for (const auto& [key, acc] : groups) rep.groups.push_back({key.first, key.second, acc.second, acc.first / acc.second});
    for (const auto& [o, acc] : organs) rep.mean_per_organ += acc.first / acc.second / static_cast<double>(organs.size());
    return rep;
}

struct Prediction {
    int id = 0;
    Tensor mask;
    std::string rle;
};

template <class Model>
std::vector<Prediction> infer(const Model& model, const std::vector<Sample>& samples, const EvalOptions& opts,
                              RleOrder order = RleOrder::row_major) {
    std::vector<Prediction> out;
    for (const auto& s : samples) {
        Tensor m = predict_mask(model, s, opts);
        out.push_back({s.id, m, rle_encode(m, order)});
    }
    return out;
}

inline std::string predictions_csv(const std::vector<Prediction>& preds) {
    std::ostringstream os;
    os << "id,rle\n";
    for (const auto& p : preds) os << p.id << ',' << p.rle << "\n";
    return os.str();
}

}  // namespace swaux
