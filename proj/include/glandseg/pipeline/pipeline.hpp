#pragma once

// End-to-end orchestration: dataset I/O, preprocessing, training, prediction,
// post-processing and evaluation.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "glandseg/autodiff/checkpoint.hpp"
#include "glandseg/error.hpp"
#include "glandseg/image_io.hpp"
#include "glandseg/imaging.hpp"
#include "glandseg/metrics.hpp"
#include "glandseg/model.hpp"
#include "glandseg/parallel.hpp"
#include "glandseg/pipeline/config.hpp"
#include "glandseg/postproc.hpp"
#include "glandseg/stain.hpp"
#include "glandseg/texture.hpp"
#include "glandseg/train.hpp"

namespace glandseg {

namespace fs = std::filesystem;

using Logger = std::function<void(const std::string&)>;

// ---------------------------------------------------------------------------
// Datasets on disk: <name>.png with its instance mask <name>_anno.png
// ---------------------------------------------------------------------------

inline constexpr const char* kMaskSuffix = "_anno";

struct LabeledImage {
    std::string name;
    RgbImage image;
    InstanceMask mask;
};

/// Image stems of a directory in lexicographic order (mask files excluded).
inline std::vector<std::string> list_images(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (!e.is_regular_file() || e.path().extension() != ".png") continue;
        const std::string stem = e.path().stem().string();
        if (stem.ends_with(kMaskSuffix)) continue;
        names.push_back(stem);
    }
    std::sort(names.begin(), names.end());
    return names;
}

inline fs::path image_path(const fs::path& dir, const std::string& name) { return dir / (name + ".png"); }
inline fs::path mask_path(const fs::path& dir, const std::string& name) {
    return dir / (name + kMaskSuffix + ".png");
}

/// Loads every image of `dir` with its mask. A missing or mis-sized mask is
/// a data error; nothing is skipped.
inline std::vector<LabeledImage> load_dataset(const fs::path& dir) {
    const auto names = list_images(dir);
    std::vector<LabeledImage> out(names.size());
    parallel_for(names.size(), [&](std::size_t i) {
        out[i].name = names[i];
        out[i].image = load_image(image_path(dir, names[i]));
        const auto mp = mask_path(dir, names[i]);
        if (!fs::exists(mp)) throw DataError("image " + names[i] + " has no mask " + mp.string());
        out[i].mask = load_mask(mp);
        require_same_dims(out[i].image, out[i].mask, "mask of " + names[i]);
    });
    return out;
}

inline void save_dataset(const fs::path& dir, const std::vector<LabeledImage>& items) {
    fs::create_directories(dir);
    parallel_for(items.size(), [&](std::size_t i) {
        save_image(image_path(dir, items[i].name), items[i].image);
        save_mask(mask_path(dir, items[i].name), items[i].mask);
    });
}

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

/// Resize to the canonical extents, then build the red, hematoxylin and
/// rotation-invariant LBP channels (LBP over the luminance image).
inline FeatureStack preprocess(const RgbImage& img, const PreprocessConfig& cfg) {
    const auto [w, h] = canonical_size(img.width(), img.height(), cfg.sizing);
    const RgbImage sized = (img.width() == w && img.height() == h) ? img : resize_bilinear(img, w, h);
    FeatureStack stack;
    stack.add("red", extract_red(sized));
    stack.add("hematoxylin", hematoxylin_channel(sized, StainMatrix{cfg.stain_matrix}));
    stack.add(kLbpChannel, lbp_feature_channel(to_grayscale(sized), cfg.lbp));
    return stack;
}

inline Sample make_sample(const LabeledImage& item, const PreprocessConfig& cfg) {
    Sample s{preprocess(item.image, cfg), {}};
    s.mask = (item.mask.width() == s.stack.width() && item.mask.height() == s.stack.height()) ? item.mask : resize_nearest(item.mask, s.stack.width(), s.stack.height());
    return s;
}

inline std::vector<Sample> make_samples(const std::vector<LabeledImage>& items, const PreprocessConfig& cfg) {
    std::vector<Sample> out(items.size());
    parallel_for(items.size(), [&](std::size_t i) { out[i] = make_sample(items[i], cfg); });
    return out;
}

/// Every image followed by its augmentation variants, in input order.
inline std::vector<LabeledImage> augment_dataset(const std::vector<LabeledImage>& items,
                                                 const AugmentationRecipe& recipe = {}) {
    std::vector<std::vector<LabeledImage>> parts(items.size());
    parallel_for(items.size(), [&](std::size_t i) {
        const auto variants = augment(items[i].image, items[i].mask, recipe);
        for (std::size_t v = 0; v < variants.size(); ++v)
            parts[i].push_back({items[i].name + "_aug" + std::to_string(v), variants[v].image, variants[v].mask});
    });
    std::vector<LabeledImage> out;
    for (auto& p : parts)
        for (auto& x : p) out.push_back(std::move(x));
    return out;
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

/// Runs `fn`, prefixing any library error with the stage name while keeping
/// its exit-code class.
template <typename Fn>
decltype(auto) run_stage(const std::string& stage, Fn&& fn) {
    try {
        return fn();
    } catch (const UsageError& e) {
        throw UsageError(stage + ": " + e.what());
    } catch (const NumericError& e) {
        throw NumericError(stage + ": " + e.what());
    } catch (const DataError& e) {
        throw DataError(stage + ": " + e.what());
    } catch (const fs::filesystem_error& e) {
        throw DataError(stage + ": " + e.what());
    }
}

struct TrainedModel {
    ad::ParameterSet<float> parameters;
    TrainResult result;
};

/// Trains on `items` (augmented when configured); the trailing
/// validation_fraction of the images is held out for epoch selection.
inline TrainedModel train_on(const std::vector<LabeledImage>& items, const PipelineConfig& cfg,
                             const Logger& log = {}) {
    require(!items.empty(), "training set is empty");
    const std::size_t n_val = static_cast<std::size_t>(cfg.training.validation_fraction * static_cast<double>(items.size()));
    require(n_val < items.size(), "validation split leaves no training images");
    std::vector<LabeledImage> train_items(items.begin(), items.end() - static_cast<std::ptrdiff_t>(n_val));
    const std::vector<LabeledImage> val_items(items.end() - static_cast<std::ptrdiff_t>(n_val), items.end());
    if (cfg.training.augment) train_items = augment_dataset(train_items);
    const auto train_set = make_samples(train_items, cfg.preprocess);
    const auto val_set = make_samples(val_items, cfg.preprocess);
    if (log) log("training on " + std::to_string(train_set.size()) + " samples, validating on " + std::to_string(val_set.size()));

    LinkNet<float> model(cfg.model);
    TrainOptions opt;
    opt.epochs = cfg.training.epochs;
    opt.batch = cfg.training.batch;
    opt.learning_rate = cfg.training.learning_rate;
    opt.optimizer = cfg.training.optimizer;
    opt.seed = cfg.training.seed;
    TrainedModel out;
    out.result = train(model, train_set, val_set, opt, [&](const EpochReport& e) {
        if (!log) return;
        std::ostringstream os;
        os << "epoch " << e.epoch << " total " << e.train.total;
        if (e.val_total) os << " val " << *e.val_total;
        log(os.str());
    });
    out.parameters = out.result.best;
    return out;
}

struct Prediction {
    /// Fine-head probabilities at the preprocessed resolution.
    ProbabilityMap probability;
    double threshold = 0.5;
    /// Instances at the original image resolution.
    InstanceMask instances;
};

inline InstanceMask postprocess(const ProbabilityMap& p, const PostprocConfig& cfg, double* threshold_out = nullptr) {
    const double t = otsu_threshold(p);
    if (threshold_out) *threshold_out = t;
    return extract_instances(morph_cleanup(binarize(p, t), cfg.min_area_frac));
}

inline Prediction predict_image(LinkNet<float>& model, const RgbImage& img, const PipelineConfig& cfg) {
    Prediction out;
    const auto stack = preprocess(img, cfg.preprocess);
    out.probability = predict(model, stack).fine;
    const auto inst = postprocess(out.probability, cfg.postproc, &out.threshold);
    out.instances = inst.same_dims(img) ? inst : resize_nearest(inst, img.width(), img.height());
    return out;
}

inline void write_prediction(const fs::path& dir, const std::string& name, const Prediction& p) {
    fs::create_directories(dir);
    save_probability_raw(dir / (name + "_prob.pfm"), p.probability);
    save_probability_png(dir / (name + "_prob.png"), p.probability);
    save_mask(dir / (name + "_pred.png"), p.instances);
}

struct PipelineReport {
    std::vector<std::string> names;
    std::vector<MetricsReport> per_image;
    MetricsReport summary;
    fs::path checkpoint;
};

inline void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open for writing: " + path.string());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
}

/// Train (or load) a model, predict and post-process every test image,
/// score it against its mask and write:
///   <output>/model.ckpt, <output>/loss_log.csv      when training
///   <output>/predictions/<name>_{prob.pfm,prob.png,pred.png}
///   <output>/metrics.csv
inline PipelineReport run_pipeline(const PipelineConfig& cfg, const Logger& log = {}) {
    run_stage("config", [&] {
        cfg.validate();
        require(!cfg.paths.test_dir.empty(), "paths.test_dir is required");
        require(!cfg.paths.output_dir.empty(), "paths.output_dir is required");
        require(!cfg.paths.checkpoint.empty() || !cfg.paths.train_dir.empty(),
                "either paths.checkpoint or paths.train_dir is required");
    });
    const fs::path out_dir = cfg.paths.output_dir;
    PipelineReport report;

    LinkNet<float> model(cfg.model);
    if (!cfg.paths.checkpoint.empty()) {
        report.checkpoint = cfg.paths.checkpoint;
        run_stage("load checkpoint", [&] { model.load(ad::load_checkpoint<float>(report.checkpoint)); });
    } else {
        const auto train_items = run_stage("load training set", [&] { return load_dataset(cfg.paths.train_dir); });
        const auto trained = run_stage("train", [&] { return train_on(train_items, cfg, log); });
        report.checkpoint = out_dir / "model.ckpt";
        run_stage("save checkpoint", [&] {
            ad::save_checkpoint(report.checkpoint, trained.parameters);
            write_text(out_dir / "loss_log.csv", loss_log_csv(trained.result.history));
        });
        model.load(trained.parameters);
    }

    const auto test_items = run_stage("load test set", [&] { return load_dataset(cfg.paths.test_dir); });
    report.names.resize(test_items.size());
    report.per_image.resize(test_items.size());
    for (std::size_t i = 0; i < test_items.size(); ++i) {
        const auto& item = test_items[i];
        run_stage("predict " + item.name, [&] {
            const auto p = predict_image(model, item.image, cfg);
            write_prediction(out_dir / "predictions", item.name, p);
            report.names[i] = item.name;
            report.per_image[i] = evaluate(p.instances, item.mask);
        });
    }
    report.summary = corpus_mean(report.per_image);
    run_stage("report", [&] { write_text(out_dir / "metrics.csv", metrics_csv(report.names, report.per_image)); });
    if (log)
        log("images " + std::to_string(report.names.size()) + ", object dice " + std::to_string(report.summary.object_dice) +
            ", f1 " + std::to_string(report.summary.f1) + ", object hausdorff " +
            std::to_string(report.summary.object_hausdorff));
    return report;
}

}  // namespace glandseg
