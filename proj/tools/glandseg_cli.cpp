// glandseg command-line driver.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "glandseg/glandseg.hpp"

namespace fs = std::filesystem;
using namespace glandseg;

namespace {

struct GlobalOptions {
    std::string config_path;
    std::vector<std::string> overrides;
    bool toy = false;
    bool dump_config = false;
    bool quiet = false;
};

PipelineConfig resolve_config(const GlobalOptions& g) {
    PipelineConfig cfg = g.toy ? PipelineConfig::toy() : PipelineConfig{};
    if (!g.config_path.empty()) cfg = load_config(g.config_path, cfg);
    for (const auto& o : g.overrides) apply_override(cfg, o);
    cfg.validate();
    return cfg;
}

Logger make_logger(const GlobalOptions& g) {
    if (g.quiet) return {};
    return [](const std::string& msg) { std::cerr << msg << '\n'; };
}

void write_channels(const fs::path& dir, const std::string& stem, const FeatureStack& stack) {
    fs::create_directories(dir);
    for (std::size_t c = 0; c < stack.channel_count(); ++c) {
        save_probability_png(dir / (stem + "_" + stack.name(c) + ".png"), stack.channel(c));
        save_probability_raw(dir / (stem + "_" + stack.name(c) + ".pfm"), stack.channel(c));
    }
}

std::vector<fs::path> image_inputs(const fs::path& input) {
    if (fs::is_directory(input)) {
        std::vector<fs::path> out;
        for (const auto& name : list_images(input)) out.push_back(image_path(input, name));
        return out;
    }
    if (!fs::exists(input)) throw DataError("input not found: " + input.string());
    return {input};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Gland segmentation toolkit: preprocessing, training, prediction and evaluation"};
    app.require_subcommand(0, 1);
    GlobalOptions g;
    app.add_option("-c,--config", g.config_path, "Configuration file (TOML subset)");
    app.add_option("-s,--set", g.overrides, "Override a config entry, e.g. training.epochs=5");
    app.add_flag("--toy", g.toy, "Start from the 64x64 synthetic-corpus preset");
    app.add_flag("--dump-config", g.dump_config, "Print the effective annotated configuration and exit");
    app.add_flag("-q,--quiet", g.quiet, "Suppress progress output");

    // synth
    auto* synth = app.add_subcommand("synth", "Generate a synthetic gland dataset");
    SynthSpec spec;
    int synth_count = 10;
    std::string synth_out, synth_prefix = "synth";
    synth->add_option("-o,--out", synth_out, "Output directory")->required();
    synth->add_option("-n,--count", synth_count, "Number of images")->check(CLI::NonNegativeNumber);
    synth->add_option("--seed", spec.seed, "Generator seed");
    synth->add_option("--width", spec.width, "Image width");
    synth->add_option("--height", spec.height, "Image height");
    synth->add_option("--min-glands", spec.min_glands, "Minimum glands per image");
    synth->add_option("--max-glands", spec.max_glands, "Maximum glands per image");
    synth->add_option("--min-radius", spec.min_radius, "Minimum gland semi-axis in pixels");
    synth->add_option("--max-radius", spec.max_radius, "Maximum gland semi-axis in pixels");
    synth->add_option("--lumen-ratio", spec.lumen_ratio, "Lumen size relative to the gland");
    synth->add_option("--noise", spec.noise, "Stain concentration noise amplitude");
    synth->add_option("--prefix", synth_prefix, "File name prefix");

    // preprocess
    auto* pre = app.add_subcommand("preprocess", "Write the network input channels of images");
    std::string pre_in, pre_out;
    pre->add_option("-i,--input", pre_in, "Image file or directory")->required();
    pre->add_option("-o,--out", pre_out, "Output directory")->required();

    // augment
    auto* aug = app.add_subcommand("augment", "Expand a dataset with the flip / crop recipe");
    std::string aug_in, aug_out;
    aug->add_option("-i,--input", aug_in, "Dataset directory (<name>.png + <name>_anno.png)")->required();
    aug->add_option("-o,--out", aug_out, "Output directory")->required();

    // train
    auto* tr = app.add_subcommand("train", "Train a model and write its checkpoint and loss log");
    std::string tr_in, tr_out;
    tr->add_option("-i,--input", tr_in, "Training dataset directory (default: paths.train_dir)");
    tr->add_option("-o,--out", tr_out, "Output directory (default: paths.output_dir)");

    // predict
    auto* pr = app.add_subcommand("predict", "Predict probability maps and instance masks");
    std::string pr_ckpt, pr_in, pr_out;
    pr->add_option("-m,--checkpoint", pr_ckpt, "Checkpoint (default: paths.checkpoint)");
    pr->add_option("-i,--input", pr_in, "Image file or directory")->required();
    pr->add_option("-o,--out", pr_out, "Output directory")->required();

    // eval
    auto* ev = app.add_subcommand("eval", "Score predicted instance masks against ground truth");
    std::string ev_pred, ev_truth, ev_out;
    ev->add_option("-p,--pred", ev_pred, "Directory of <name>_pred.png masks")->required();
    ev->add_option("-t,--truth", ev_truth, "Dataset directory with <name>_anno.png masks")->required();
    ev->add_option("-o,--out", ev_out, "CSV report path (default: stdout)");

    // run
    auto* run = app.add_subcommand("run", "Train or load, then predict, post-process and evaluate the test set");

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "Compare backward gradients with finite differences");
    GradCheckOptions gc_opt;
    double gc_tol = 1e-3;
    gc->add_option("--samples", gc_opt.samples, "Parameters to check");
    gc->add_option("--seed", gc_opt.seed, "Sampling seed");
    gc->add_option("--step", gc_opt.step, "Finite-difference step");
    gc->add_option("--tolerance", gc_tol, "Maximum accepted relative error");

    // describe-model
    auto* dm = app.add_subcommand("describe-model", "Print the layer table of the configured model");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        const PipelineConfig cfg = resolve_config(g);
        const Logger log = make_logger(g);
        if (g.dump_config) {
            std::cout << serialize_config(cfg, true);
            return 0;
        }
        if (*synth) {
            const auto samples = synth_generate(spec, synth_count);
            std::vector<LabeledImage> items;
            char name[64];
            for (std::size_t i = 0; i < samples.size(); ++i) {
                std::snprintf(name, sizeof name, "%s_%04zu", synth_prefix.c_str(), i);
                items.push_back({name, samples[i].image, samples[i].mask});
            }
            save_dataset(synth_out, items);
            if (log) log("wrote " + std::to_string(items.size()) + " images to " + synth_out);
        } else if (*pre) {
            const auto inputs = image_inputs(pre_in);
            parallel_for(inputs.size(), [&](std::size_t i) {
                write_channels(pre_out, inputs[i].stem().string(), preprocess(load_image(inputs[i]), cfg.preprocess));
            });
        } else if (*aug) {
            const auto items = load_dataset(aug_in);
            save_dataset(aug_out, augment_dataset(items));
            if (log) log("wrote " + std::to_string(items.size() * AugmentationRecipe{}.variants_per_image()) + " variants");
        } else if (*tr) {
            const fs::path in = tr_in.empty() ? fs::path(cfg.paths.train_dir) : fs::path(tr_in);
            const fs::path out = tr_out.empty() ? fs::path(cfg.paths.output_dir) : fs::path(tr_out);
            if (in.empty()) throw UsageError("train: no input directory (use --input or paths.train_dir)");
            const auto items = run_stage("load training set", [&] { return load_dataset(in); });
            const auto trained = run_stage("train", [&] { return train_on(items, cfg, log); });
            ad::save_checkpoint(out / "model.ckpt", trained.parameters);
            write_text(out / "loss_log.csv", loss_log_csv(trained.result.history));
            if (log) log("best epoch " + std::to_string(trained.result.best_epoch) + ", checkpoint " + (out / "model.ckpt").string());
        } else if (*pr) {
            const std::string ckpt = pr_ckpt.empty() ? cfg.paths.checkpoint : pr_ckpt;
            if (ckpt.empty()) throw UsageError("predict: no checkpoint (use --checkpoint or paths.checkpoint)");
            LinkNet<float> model(cfg.model);
            model.load(ad::load_checkpoint<float>(ckpt));
            for (const auto& path : image_inputs(pr_in)) {
                const auto p = run_stage("predict " + path.stem().string(),
                                         [&] { return predict_image(model, load_image(path), cfg); });
                write_prediction(pr_out, path.stem().string(), p);
            }
        } else if (*ev) {
            std::vector<std::string> names;
            std::vector<MetricsReport> rows;
            for (const auto& name : list_images(ev_truth)) {
                const auto truth = load_mask(mask_path(ev_truth, name));
                const auto pred_file = fs::path(ev_pred) / (name + "_pred.png");
                if (!fs::exists(pred_file)) throw DataError("eval: missing prediction " + pred_file.string());
                names.push_back(name);
                rows.push_back(evaluate(load_mask(pred_file), truth));
            }
            const std::string csv = metrics_csv(names, rows);
            if (ev_out.empty())
                std::cout << csv;
            else
                write_text(ev_out, csv);
        } else if (*run) {
            const auto report = run_pipeline(cfg, log);
            const auto& s = report.summary;
            std::printf("images %zu\nobject_dice %.6f\nobject_hausdorff %.6f\nf1 %.6f\n", report.names.size(),
                        s.object_dice, s.object_hausdorff, s.f1);
        } else if (*gc) {
            const auto report = gradient_check(gradcheck_model_config(), gc_opt);
            std::printf("checked %zu parameters, max relative error %.3e\n", report.entries.size(),
                        report.max_relative_error);
            if (!(report.max_relative_error < gc_tol)) {
                std::fprintf(stderr, "gradient check failed: %.3e >= %.3e\n", report.max_relative_error, gc_tol);
                return 3;
            }
        } else if (*dm) {
            LinkNet<float> model(cfg.model);
            std::cout << describe(model.layers());
        } else {
            std::cout << app.help();
            return 1;
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return e.exit_code();
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
