// Command-line front end: phantom dataset generation, the preprocessing
// pipeline, training, evaluation, the six-model comparison sweep and the
// gradient-check battery.

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "xmid/checkpoint.hpp"
#include "xmid/gradcheck.hpp"
#include "xmid/phantom.hpp"
#include "xmid/prep.hpp"
#include "xmid/report.hpp"
#include "xmid/trainer.hpp"

namespace fs = std::filesystem;
using namespace xmid;

namespace {

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << text;
}

void write_predictions(const fs::path& path, const std::vector<Prediction>& predictions) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << "index,predicted,label\n";
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        os << i << "," << predictions[i].predicted << "," << predictions[i].label << "\n";
    }
}

struct PrepFlags {
    std::string mode = "abs";
    std::string timestamps = "on";
    int max_shift = 16;
    std::uint64_t seed = 0;

    PrepOptions to_options() const {
        PrepOptions options;
        if (mode == "abs") {
            options.mode = DiffMode::absolute;
        } else if (mode == "rel") {
            options.mode = DiffMode::relative;
        } else if (mode == "none") {
            options.mode = std::nullopt;
        } else {
            throw CLI::ValidationError("--mode must be abs, rel or none");
        }
        options.timestamps = timestamps == "on";
        options.max_shift = max_shift;
        options.seed = seed;
        return options;
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"temporal cross-modal CNN experiments on slice datasets"};
    app.require_subcommand(1);
    app.set_config("--config", "", "line-oriented key=value config file; flags override");

    // --- generate ---------------------------------------------------------
    auto* gen = app.add_subcommand("generate", "render a synthetic phantom slice dataset");
    PhantomConfig phantom;
    std::string gen_out;
    gen->add_option("--out", gen_out, "output dataset directory")->required();
    gen->add_option("--seed", phantom.seed, "generator seed");
    gen->add_option("--mice-per-group", phantom.mice_per_group, "mice per treatment group");
    gen->add_option("--weeks", phantom.weeks, "week timestamps to render");
    gen->add_option("--slices-min", phantom.slices_min, "min slices per mouse-week");
    gen->add_option("--slices-max", phantom.slices_max, "max slices per mouse-week");
    gen->add_option("--height", phantom.base_h, "maximum image height");
    gen->add_option("--width", phantom.base_w, "maximum image width");
    gen->add_option("--dim-jitter", phantom.dim_jitter, "per-week dimension shrink range");
    gen->add_option("--noise-sigma", phantom.noise_sigma, "additive Gaussian noise sigma");
    gen->add_option("--pth-rate", phantom.pth_rate, "treated-class growth rate scale");
    gen->add_option("--pth-onset-week", phantom.pth_onset_week, "treatment onset week");
    gen->add_option("--shift-jitter", phantom.shift_jitter, "per-week translation jitter, px");
    gen->add_flag("--missing-final-week", phantom.missing_final_week_mouse,
                  "drop the final week for one treated mouse");

    // --- preprocess -------------------------------------------------------
    auto* prep = app.add_subcommand("preprocess",
                                    "expand, register, difference and partition a dataset");
    std::string prep_data, prep_out;
    PrepFlags prep_flags;
    prep->add_option("--data", prep_data, "raw dataset directory")->required();
    prep->add_option("--out", prep_out, "prepared dataset directory")->required();
    prep->add_option("--mode", prep_flags.mode, "differencing mode: abs, rel or none")
        ->check(CLI::IsMember({"abs", "rel", "none"}));
    prep->add_option("--timestamps", prep_flags.timestamps, "record timestamps: on or off")
        ->check(CLI::IsMember({"on", "off"}));
    prep->add_option("--max-shift", prep_flags.max_shift, "registration search window, px");
    prep->add_option("--seed", prep_flags.seed, "partition seed");

    // --- train ------------------------------------------------------------
    auto* train_cmd = app.add_subcommand("train", "train one model on a prepared dataset");
    std::string train_model = "cnn", train_data, train_out;
    ExperimentConfig experiment;
    train_cmd->add_option("--model", train_model, "model kind")
        ->check(CLI::IsMember({"cnn", "cnn-ts", "xcnn-absdiff", "xcnn-reldiff", "xcnn-ts-absdiff",
                               "xcnn-ts-reldiff"}));
    train_cmd->add_option("--epochs", experiment.epochs, "training epochs");
    train_cmd->add_option("--seed", experiment.seed, "experiment seed");
    train_cmd->add_option("--data", train_data, "prepared dataset directory")->required();
    train_cmd->add_option("--out", train_out, "output directory")->required();
    train_cmd->add_option("--batch-size", experiment.batch_size, "batch size");
    train_cmd->add_option("--lr", experiment.optimizer.learning_rate, "learning rate");
    train_cmd->add_option("--momentum", experiment.optimizer.momentum, "SGD momentum");

    // --- evaluate ---------------------------------------------------------
    auto* eval_cmd = app.add_subcommand("evaluate", "evaluate a checkpoint on a prepared split");
    std::string eval_checkpoint, eval_data, eval_split = "test", eval_out;
    eval_cmd->add_option("--checkpoint", eval_checkpoint, "model checkpoint file")->required();
    eval_cmd->add_option("--data", eval_data, "prepared dataset directory")->required();
    eval_cmd->add_option("--split", eval_split, "split to evaluate")
        ->check(CLI::IsMember({"train", "validation", "test"}));
    eval_cmd->add_option("--out", eval_out, "directory for predictions.csv (optional)");

    // --- compare ----------------------------------------------------------
    auto* cmp = app.add_subcommand("compare", "run all six model kinds on one raw dataset");
    std::string cmp_data, cmp_out;
    CompareConfig compare_config;
    cmp->add_option("--data", cmp_data, "raw dataset directory")->required();
    cmp->add_option("--out", cmp_out, "output directory")->required();
    cmp->add_option("--epochs", compare_config.epochs, "training epochs per model");
    cmp->add_option("--eval-epochs", compare_config.eval_epochs, "epochs to report accuracy at");
    cmp->add_option("--seed", compare_config.seed, "master seed");
    cmp->add_option("--batch-size", compare_config.batch_size, "batch size");
    cmp->add_option("--lr", compare_config.optimizer.learning_rate, "learning rate");
    cmp->add_option("--max-shift", compare_config.max_shift, "registration search window, px");

    // --- gradcheck --------------------------------------------------------
    auto* gc = app.add_subcommand("gradcheck", "finite-difference checks for every layer kind");
    std::uint64_t gc_seed = 7;
    gc->add_option("--seed", gc_seed, "battery seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) {
            const DatasetManifest manifest = generate_dataset(phantom, gen_out);
            std::size_t images = 0;
            for (const auto& f : manifest.files) {
                if (f.path.size() > 4 && f.path.substr(f.path.size() - 4) == ".pgm") ++images;
            }
            std::cout << "wrote " << images << " slices under " << gen_out << "\n";
        } else if (*prep) {
            const PreparedDataset prepared = prepare_dataset(fs::path(prep_data),
                                                             prep_flags.to_options());
            write_prepared(prepared, prep_out);
            const BalanceReport balance = class_balance_report(prepared.split, prepared.groups);
            std::cout << format_balance_table(balance);
            if (prepared.pair_candidates > 0) {
                std::cout << "unused slices from pairing: " << prepared.unused_slices << " ("
                          << format_fixed(100.0 * static_cast<double>(prepared.unused_slices) /
                                              static_cast<double>(prepared.pair_candidates),
                                          2)
                          << "% of candidates)\n";
            }
            std::cout << "prepared dataset written to " << prep_out << "\n";
        } else if (*train_cmd) {
            experiment.kind = parse_model_kind(train_model);
            const PreparedDataset data = load_prepared(train_data);
            fs::create_directories(train_out);
            ExperimentResult result = run_experiment(data, experiment);
            const MetricsRecord& record = result.metrics;
            std::cout << format_metrics(record);
            write_text(fs::path(train_out) / "metrics.csv", metrics_csv(record));
            write_text(fs::path(train_out) / "metrics.txt", format_metrics(record));
            write_predictions(fs::path(train_out) / "predictions.csv", record.test_predictions);
            save_checkpoint(result.model, fs::path(train_out) / "model.xmid");
            std::cout << "checkpoint written to " << (fs::path(train_out) / "model.xmid").string()
                      << "\n";
        } else if (*eval_cmd) {
            Model<float> model = load_checkpoint(eval_checkpoint);
            const PreparedDataset data = load_prepared(eval_data);
            const SplitId split = eval_split == "train"        ? SplitId::train
                                  : eval_split == "validation" ? SplitId::validation
                                                               : SplitId::test;
            auto [accuracy, predictions] = evaluate(model, data, data.samples(split));
            std::cout << eval_split << " accuracy " << format_fixed(accuracy, 4) << " over "
                      << predictions.size() << " samples\n";
            if (!eval_out.empty()) {
                fs::create_directories(eval_out);
                write_predictions(fs::path(eval_out) / "predictions.csv", predictions);
            }
        } else if (*cmp) {
            const PreparedVariants variants =
                prepare_variants(cmp_data, compare_config.seed, compare_config.max_shift);
            const CompareReport report = compare_models(variants, compare_config);
            std::cout << format_compare(report);
            fs::create_directories(cmp_out);
            write_text(fs::path(cmp_out) / "compare.txt", format_compare(report));
            write_text(fs::path(cmp_out) / "compare.csv", compare_csv(report));
            if (report.partial) return 1;
        } else if (*gc) {
            const BatteryReport report = gradcheck_battery(gc_seed);
            std::cout << format_battery(report);
            if (!report.all_passed()) return 1;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
