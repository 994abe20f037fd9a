// Command-line front end: gen-data, train, eval, infer, compare.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "switchaux/switchaux.hpp"

namespace fs = std::filesystem;
using namespace swaux;

namespace {

struct CommonFlags {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    std::optional<std::string> regime;
    std::optional<int> fold;
    std::optional<int> epochs;
    std::optional<std::string> block_type;
    std::optional<double> lr;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool training_flags) {
    cmd->add_option("--config", f.config_path, "INI config with [data] [model] [train] [thresholds] sections")
        ->check(CLI::ExistingFile);
    cmd->add_option("--seed", f.seed, "Master seed (overrides data.seed)");
    cmd->add_option("--out-dir", f.out_dir, "Output directory (overrides train.out_dir)");
    cmd->add_option("--fold", f.fold, "Validation fold index");
    if (training_flags) {
        cmd->add_option("--regime", f.regime, "normal | single:<stage> | switched[:<from>:<to>[:<fraction>]]");
        cmd->add_option("--epochs", f.epochs, "Total training epochs");
        cmd->add_option("--block-type", f.block_type, "Encoder block type: attention | conv");
        cmd->add_option("--lr", f.lr, "Initial learning rate");
    }
}

RunConfig resolve(const CommonFlags& f) {
    RunConfig cfg = f.config_path.empty() ? RunConfig{} : load_config(f.config_path);
    if (f.seed) cfg.data.seed = *f.seed;
    if (!f.out_dir.empty()) cfg.out_dir = f.out_dir;
    if (f.regime) cfg.regime = parse_regime(*f.regime);
    if (f.fold) cfg.fold = *f.fold;
    if (f.epochs) cfg.epochs = *f.epochs;
    if (f.block_type) cfg.model.block_type = parse_block_type(*f.block_type);
    if (f.lr) cfg.adam.lr = *f.lr;
    cfg.validate();
    return cfg;
}

// Raw (un-normalised) validation samples of the configured split.
std::vector<Sample> validation_samples(const RunConfig& cfg) {
    auto all = generate_dataset(cfg.data);
    const auto split = stratified_kfold(all, cfg.folds, cfg.data.seed);
    std::vector<Sample> out;
    for (int id : split.val_ids(static_cast<std::size_t>(cfg.fold))) out.push_back(all[static_cast<std::size_t>(id)]);
    return out;
}

std::vector<Sample> load_eval_samples(const RunConfig& cfg, const std::string& data_dir) {
    return data_dir.empty() ? validation_samples(cfg) : read_dataset(data_dir);
}

EvalOptions eval_options(const RunConfig& cfg, const Checkpoint& ck) {
    EvalOptions o;
    o.input_size = cfg.data.image_size;
    o.stain_target = ck.stain_target;
    o.thresholds = cfg.thresholds;
    return o;
}

void print_row(const EpochRow& r) {
    std::cout << "epoch " << r.epoch << "  aux=" << (r.aux_stage ? std::to_string(*r.aux_stage) : "-")
              << "  loss=" << r.train_total << "  val_dice=" << r.val_dice_mean_per_image << "  lr=" << r.lr << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"switchaux: switched auxiliary-loss segmentation toolkit"};
    app.require_subcommand(1);

    CommonFlags gen_f, train_f, eval_f, infer_f, cmp_f;

    auto* gen = app.add_subcommand("gen-data", "Generate the synthetic dataset as PPM/PGM files plus manifest.csv");
    add_common(gen, gen_f, false);

    auto* train = app.add_subcommand("train", "Train one regime; writes metrics.csv, checkpoint.bin, config.ini");
    add_common(train, train_f, true);
    bool quiet = false;
    train->add_flag("--quiet", quiet, "Suppress per-epoch progress");

    auto* eval = app.add_subcommand("eval", "Per-(organ, domain) dice of a checkpoint with TTA and thresholds");
    add_common(eval, eval_f, false);
    std::string eval_ckpt, eval_data;
    eval->add_option("--checkpoint", eval_ckpt, "Checkpoint file (default <out-dir>/checkpoint.bin)");
    eval->add_option("--data-dir", eval_data, "Dataset directory with manifest.csv (default: regenerated validation fold)");

    auto* inf = app.add_subcommand("infer", "Predict masks; writes predictions.csv (id,rle)");
    add_common(inf, infer_f, false);
    std::string infer_ckpt, infer_data;
    bool dump_masks = false, column_major = false;
    inf->add_option("--checkpoint", infer_ckpt, "Checkpoint file (default <out-dir>/checkpoint.bin)");
    inf->add_option("--data-dir", infer_data, "Dataset directory with manifest.csv (default: regenerated validation fold)");
    inf->add_flag("--dump-masks", dump_masks, "Also write predicted masks as PGM");
    inf->add_flag("--column-major", column_major, "Column-major RLE instead of row-major");

    auto* cmp = app.add_subcommand("compare", "Train normal / single-aux / switched-aux on shared data; writes summary.csv, curves.csv");
    add_common(cmp, cmp_f, true);
    bool with_conv = false;
    cmp->add_flag("--with-conv", with_conv, "Also run every regime with conv encoder blocks");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) {
            const RunConfig cfg = resolve(gen_f);
            const auto samples = generate_dataset(cfg.data);
            write_dataset(cfg.out_dir, samples);
            std::cout << "wrote " << samples.size() << " samples to " << cfg.out_dir << "\n";
        } else if (*train) {
            const RunConfig cfg = resolve(train_f);
            TrainHooks hooks;
            if (!quiet) hooks.on_epoch_end = print_row;
            const TrainResult res = train_run(cfg, hooks);
            save_run(cfg.out_dir, cfg, res);
            std::cout << "best val dice " << res.log.best_val_dice() << "; outputs in " << cfg.out_dir << "\n";
        } else if (*eval) {
            const RunConfig cfg = resolve(eval_f);
            const fs::path ckpt = eval_ckpt.empty() ? fs::path(cfg.out_dir) / "checkpoint.bin" : fs::path(eval_ckpt);
            Checkpoint info;
            const SegModel model = load_checkpoint(ckpt, &info);
            const auto samples = load_eval_samples(cfg, eval_data);
            const EvalReport rep = eval_run(model, samples, eval_options(cfg, info));
            write_text(fs::path(cfg.out_dir) / "eval.csv", rep.groups_csv());
            write_text(fs::path(cfg.out_dir) / "eval_images.csv", rep.images_csv());
            std::cout << rep.groups_csv() << "mean dice per image " << rep.mean_per_image << ", per organ "
                      << rep.mean_per_organ << "\n";
        } else if (*inf) {
            const RunConfig cfg = resolve(infer_f);
            const fs::path ckpt = infer_ckpt.empty() ? fs::path(cfg.out_dir) / "checkpoint.bin" : fs::path(infer_ckpt);
            Checkpoint info;
            const SegModel model = load_checkpoint(ckpt, &info);
            const auto samples = load_eval_samples(cfg, infer_data);
            const auto preds = infer(model, samples, eval_options(cfg, info),
                                     column_major ? RleOrder::column_major : RleOrder::row_major);
            write_text(fs::path(cfg.out_dir) / "predictions.csv", predictions_csv(preds));
            if (dump_masks) {
                fs::create_directories(fs::path(cfg.out_dir) / "pred_masks");
                for (const auto& p : preds)
                    write_pgm(fs::path(cfg.out_dir) / "pred_masks" / ("sample_" + std::to_string(p.id) + ".pgm"), p.mask);
            }
            std::cout << "wrote " << preds.size() << " predictions to " << cfg.out_dir << "\n";
        } else if (*cmp) {
            const RunConfig cfg = resolve(cmp_f);
            CompareOptions opts;
            if (cmp_f.block_type) opts.block_types = {cfg.model.block_type};
            if (with_conv && std::find(opts.block_types.begin(), opts.block_types.end(), BlockType::conv) == opts.block_types.end())
                opts.block_types.push_back(BlockType::conv);
            const auto report = compare_regimes(cfg, opts, [&](const RunConfig& run_cfg, const TrainResult& res) {
                std::string name = to_string(run_cfg.regime) + "_" + to_string(run_cfg.model.block_type);
                std::replace(name.begin(), name.end(), ':', '-');
                save_run(fs::path(cfg.out_dir) / name, run_cfg, res);
                std::cout << name << ": best val dice " << res.log.best_val_dice() << std::endl;
            });
            write_text(fs::path(cfg.out_dir) / "summary.csv", report.summary_csv());
            write_text(fs::path(cfg.out_dir) / "curves.csv", report.curves_csv());
            std::cout << report.summary_csv();
            if (!report.ok()) return 2;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
