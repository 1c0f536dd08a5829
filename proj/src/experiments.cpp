#include "fusionbench/experiments.hpp"

#include <cstdio>
#include <filesystem>

#include "fusionbench/rng.hpp"

namespace fusion::exp {

namespace {

// Dataset with context ids as labels, for scene-style extractor pretraining.
data::Dataset context_labeled(const data::Dataset& ds) {
    data::Dataset out = ds;
    out.meta.class_count = data::context_count(ds.meta);
    out.meta.class_to_supercat.assign(out.meta.class_count, 0);
    for (auto& s : out.samples) s.label = s.context_id;
    return out;
}

std::shared_ptr<model::FeatureExtractor> pretrain_extractor(
    const cfg::ExperimentConfig& ec, const data::Dataset& train_view,
    const data::Dataset& test_view, int label_count, std::uint64_t seed,
    train::TrainHistory& hist_out, const Log& log, const char* tag) {
    auto clf = model::build_classifier(model::Kind::foreground, ec.arch(), label_count, seed);
    auto cfg = ec.pretrain;
    cfg.mode = train::TrainConfig::Mode::full;
    hist_out = train::train(clf, train_view, test_view, cfg);
    clf.fg->set_frozen(true);
    char line[160];
    std::snprintf(line, sizeof line, "pretrained %s extractor: train_acc=%.3f test_acc=%.3f", tag,
                  hist_out.train_acc.back(), hist_out.test_acc.back());
    log(line);
    return clf.fg;
}

}  // namespace

PretrainResult pretrain_extractors(const cfg::ExperimentConfig& ec, const data::Dataset& train_set,
                                   const data::Dataset& test_set, const Log& log) {
    auto fg_train = data::object_only(train_set);
    auto fg_test = data::object_only(test_set);
    auto bg_train = context_labeled(data::context_only(train_set));
    auto bg_test = context_labeled(data::context_only(test_set));

    PretrainResult r;
    r.fg_ext = pretrain_extractor(ec, fg_train, fg_test, train_set.meta.class_count,
                                  Rng::keyed(ec.model_seed, 0xF6).next(), r.fg_hist, log,
                                  "foreground");
    r.bg_ext = pretrain_extractor(ec, bg_train, bg_test, bg_train.meta.class_count,
                                  Rng::keyed(ec.model_seed, 0xB6).next(), r.bg_hist, log,
                                  "background");
    return r;
}

model::Classifier assemble_classifier(model::Kind kind,
                                      std::shared_ptr<model::FeatureExtractor> fg_ext,
                                      std::shared_ptr<model::FeatureExtractor> bg_ext,
                                      int class_count, std::uint64_t model_seed) {
    if (kind == model::Kind::joint)
        return model::make_joint(std::move(fg_ext), std::move(bg_ext), class_count,
                                 Rng::keyed(model_seed, 0x13).next());
    model::Classifier clf;
    clf.kind = kind;
    clf.class_count = class_count;
    if (kind == model::Kind::foreground) {
        if (!fg_ext) throw ConfigError("foreground classifier needs the foreground extractor");
        clf.arch = fg_ext->arch();
        clf.fg = std::move(fg_ext);
        auto fresh = model::build_classifier(kind, clf.arch, class_count,
                                             Rng::keyed(model_seed, 0x11).next());
        clf.head = fresh.head;
    } else {
        if (!bg_ext) throw ConfigError("background classifier needs the background extractor");
        clf.arch = bg_ext->arch();
        clf.bg = std::move(bg_ext);
        auto fresh = model::build_classifier(kind, clf.arch, class_count,
                                             Rng::keyed(model_seed, 0x12).next());
        clf.head = fresh.head;
    }
    return clf;
}

Workbench build_workbench_from(const cfg::ExperimentConfig& ec, const data::Dataset& full,
                               const Log& log) {
    Workbench wb;
    auto parts = data::split(full, ec.train_fraction, ec.data_seed);
    wb.train_set = std::move(parts.first);
    wb.test_set = std::move(parts.second);

    auto pre = pretrain_extractors(ec, wb.train_set, wb.test_set, log);
    wb.fg_ext = pre.fg_ext;
    wb.bg_ext = pre.bg_ext;
    wb.fg_pretrain_hist = std::move(pre.fg_hist);
    wb.bg_pretrain_hist = std::move(pre.bg_hist);

    const int C = full.meta.class_count;
    wb.fg = assemble_classifier(model::Kind::foreground, wb.fg_ext, nullptr, C, ec.model_seed);
    wb.bg = assemble_classifier(model::Kind::background, nullptr, wb.bg_ext, C, ec.model_seed);
    wb.joint = assemble_classifier(model::Kind::joint, wb.fg_ext, wb.bg_ext, C, ec.model_seed);

    wb.fg_hist = train::train(wb.fg, wb.train_set, wb.test_set, ec.head);
    wb.bg_hist = train::train(wb.bg, wb.train_set, wb.test_set, ec.head);
    wb.joint_hist = train::train(wb.joint, wb.train_set, wb.test_set, ec.head);
    char line[200];
    std::snprintf(line, sizeof line,
                  "trained heads: foreground=%.3f background=%.3f joint=%.3f (test acc)",
                  wb.fg_hist.test_acc.back(), wb.bg_hist.test_acc.back(),
                  wb.joint_hist.test_acc.back());
    log(line);
    return wb;
}

Workbench build_workbench(const cfg::ExperimentConfig& ec, data::ContextMode mode,
                          const Log& log) {
    auto meta = ec.dataset_meta();
    meta.mode = mode;
    auto full = data::generate_synthetic(meta, ec.per_class, ec.data_seed);
    char line[120];
    std::snprintf(line, sizeof line, "generated %zu samples (%s mode)", full.samples.size(),
                  data::mode_name(mode));
    log(line);
    return build_workbench_from(ec, full, log);
}

Fig2Result run_fig2(Workbench& wb, float sigma) {
    Fig2Result r;
    r.sigma = sigma;

    attack::BlurConfig bc;
    bc.sigma = sigma;
    auto blurred = attack::blur_dataset(wb.test_set, bc);
    auto clean_batch = data::make_batch(wb.test_set);
    auto blur_batch = data::make_batch(blurred);
    r.labels = clean_batch.labels;
    r.clean_count = static_cast<int>(r.labels.size());

    NoGradGuard ng;
    auto fg_clean = wb.fg_ext->forward(clean_batch.images, false);
    auto fg_blur = wb.fg_ext->forward(blur_batch.images, false);
    auto bg_clean = wb.bg_ext->forward(clean_batch.images, false);
    auto bg_blur = wb.bg_ext->forward(blur_batch.images, false);

    r.fg_shift = analysis::subspace_shift(fg_clean, fg_blur, r.labels);
    r.bg_shift = analysis::subspace_shift(bg_clean, bg_blur, r.labels);

    auto stack = [](const Tensor& a, const Tensor& b) {
        auto out = Tensor::zeros({a.size(0) + b.size(0), a.size(1)});
        std::copy(a.data().begin(), a.data().end(), out.data().begin());
        std::copy(b.data().begin(), b.data().end(), out.data().begin() + a.numel());
        return out;
    };
    r.fg_pca = analysis::pca2(stack(fg_clean, fg_blur));
    r.bg_pca = analysis::pca2(stack(bg_clean, bg_blur));
    return r;
}

analysis::RobustnessCurve run_blur_curve(Workbench& wb, const std::vector<float>& sigma_grid) {
    return analysis::robustness_curve({&wb.fg, &wb.bg, &wb.joint},
                                      {"foreground", "background", "joint"}, wb.test_set,
                                      analysis::RobustnessCurve::Axis::sigma, sigma_grid);
}

Fig4Result run_fig4(Workbench& wb, const std::vector<float>& eps_grid) {
    Fig4Result r;
    r.transfer = analysis::robustness_curve({&wb.fg, &wb.bg, &wb.joint},
                                            {"foreground", "background", "joint"}, wb.test_set,
                                            analysis::RobustnessCurve::Axis::epsilon, eps_grid,
                                            &wb.fg);
    r.weights = analysis::weight_stream_summary(wb.joint.fusion);
    return r;
}

Fig5Result run_fig5(Workbench& wb, const cfg::ExperimentConfig& ec, const Log& log) {
    Fig5Result r;
    r.alphas = ec.alphas;

    const int C = wb.train_set.meta.class_count;
    for (float alpha : ec.alphas) {
        auto joint = assemble_classifier(model::Kind::joint, wb.fg_ext, wb.bg_ext, C,
                                         ec.model_seed);
        auto hist = train::train_regularized_joint(joint, wb.train_set, wb.test_set, ec.head,
                                                   alpha);
        r.weights.push_back(analysis::weight_stream_summary(joint.fusion));
        char line[160];
        std::snprintf(line, sizeof line, "alpha=%g: clean test acc=%.3f avg|w_fg|=%.4f", alpha,
                      hist.test_acc.back(), r.weights.back().avg_abs_fg);
        log(line);
        r.joints.push_back(std::move(joint));
    }

    // adversarial-retraining baseline: a fresh foreground head trained on
    // 50/50 clean and white-box FGSM batches at retrain_eps
    r.retrained =
        assemble_classifier(model::Kind::foreground, wb.fg_ext, nullptr, C, ec.model_seed);
    r.retrained_hist = train::adversarial_retrain(r.retrained, wb.train_set, wb.test_set,
                                                  ec.retrain_eps, ec.head);
    {
        char line[120];
        std::snprintf(line, sizeof line, "retrained foreground at eps=%.2f: clean test acc=%.3f",
                      ec.retrain_eps, r.retrained_hist.test_acc.back());
        log(line);
    }

    // transfer rows from the foreground source
    std::vector<const model::Classifier*> models{&wb.fg, &wb.bg};
    std::vector<std::string> names{"foreground", "background"};
    for (std::size_t i = 0; i < r.joints.size(); ++i) {
        models.push_back(&r.joints[i]);
        char nm[32];
        std::snprintf(nm, sizeof nm, "joint_a%g", r.alphas[i]);
        names.push_back(nm);
    }
    models.push_back(&r.retrained);
    names.push_back("retrained_transfer");
    r.curve = analysis::robustness_curve(models, names, wb.test_set,
                                         analysis::RobustnessCurve::Axis::epsilon, ec.eps_grid,
                                         &wb.fg);

    // white-box row: the adversary targets the retrained model directly
    auto wbx = analysis::robustness_curve({&r.retrained}, {"retrained_whitebox"}, wb.test_set,
                                          analysis::RobustnessCurve::Axis::epsilon, ec.eps_grid,
                                          &r.retrained);
    r.curve.model_names.push_back("retrained_whitebox");
    r.curve.accuracy.push_back(wbx.accuracy[0]);
    return r;
}

void ensure_dir(const std::string& path) {
    std::error_code ec;
    std::filesystem::create_directories(path, ec);
    if (ec) throw ConfigError("cannot create directory: " + path);
}

void write_fig2(const std::string& dir, const Fig2Result& r,
                const std::vector<std::string>& header) {
    ensure_dir(dir);
    auto write_proj = [&](const std::string& name, const analysis::Pca2Result& pca) {
        std::string text;
        for (const auto& h : header) text += "# " + h + "\n";
        text += "pc1,pc2,label,perturbed\n";
        char buf[96];
        const int n = static_cast<int>(pca.projection.size());
        for (int i = 0; i < n; ++i) {
            const int label = r.labels[i % r.clean_count];
            const int perturbed = i >= r.clean_count ? 1 : 0;
            std::snprintf(buf, sizeof buf, "%.6f,%.6f,%d,%d\n", pca.projection[i][0],
                          pca.projection[i][1], label, perturbed);
            text += buf;
        }
        std::ofstream out(dir + "/" + name, std::ios::trunc);
        if (!out) throw ConfigError("cannot write file: " + dir + "/" + name);
        out << text;
    };
    write_proj("pca_foreground.csv", r.fg_pca);
    write_proj("pca_background.csv", r.bg_pca);

    char buf[64];
    std::vector<std::pair<std::string, std::string>> pairs;
    std::snprintf(buf, sizeof buf, "%g", r.sigma);
    pairs.emplace_back("sigma", buf);
    std::snprintf(buf, sizeof buf, "%.6f", r.fg_shift.score);
    pairs.emplace_back("foreground_shift_score", buf);
    std::snprintf(buf, sizeof buf, "%.6f", r.bg_shift.score);
    pairs.emplace_back("background_shift_score", buf);
    std::snprintf(buf, sizeof buf, "%.6f", r.fg_shift.score / r.bg_shift.score);
    pairs.emplace_back("shift_ratio", buf);
    analysis::save_keyvalue(dir + "/shift.txt", pairs, header);
}

void write_curve(const std::string& dir, const std::string& name,
                 const analysis::RobustnessCurve& curve, const std::string& title,
                 const std::vector<std::string>& header) {
    ensure_dir(dir);
    analysis::save_curve_csv(dir + "/" + name + ".csv", curve, header);
    analysis::save_curve_svg(dir + "/" + name + ".svg", curve, title);
}

void write_fig4(const std::string& dir, const std::string& tag, const Fig4Result& r,
                const std::vector<std::string>& header) {
    ensure_dir(dir);
    write_curve(dir, "fgsm_transfer_" + tag, r.transfer,
                "foreground-crafted FGSM (" + tag + ")", header);
    char buf[64];
    std::vector<std::pair<std::string, std::string>> pairs;
    std::snprintf(buf, sizeof buf, "%.6f", r.weights.avg_abs_fg);
    pairs.emplace_back("avg_abs_fg", buf);
    std::snprintf(buf, sizeof buf, "%.6f", r.weights.avg_abs_bg);
    pairs.emplace_back("avg_abs_bg", buf);
    analysis::save_keyvalue(dir + "/weights_" + tag + ".txt", pairs, header);
}

void write_fig5(const std::string& dir, const Fig5Result& r,
                const std::vector<std::string>& header) {
    ensure_dir(dir);
    write_curve(dir, "fgsm_regularization", r.curve, "alpha sweep vs adversarial retraining",
                header);
    std::string text;
    for (const auto& h : header) text += "# " + h + "\n";
    text += "alpha,avg_abs_fg,avg_abs_bg\n";
    char buf[96];
    for (std::size_t i = 0; i < r.alphas.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%g,%.6f,%.6f\n", r.alphas[i], r.weights[i].avg_abs_fg,
                      r.weights[i].avg_abs_bg);
        text += buf;
    }
    std::ofstream out(dir + "/weights_vs_alpha.csv", std::ios::trunc);
    if (!out) throw ConfigError("cannot write file: " + dir + "/weights_vs_alpha.csv");
    out << text;
}

}  // namespace fusion::exp
