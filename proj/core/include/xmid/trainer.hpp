// Experiment orchestration: batching, training loops, evaluation, timing and
// the six-model comparison sweep.

#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "xmid/model.hpp"
#include "xmid/prep.hpp"

namespace xmid {

struct ExperimentConfig {
    ModelKind kind = ModelKind::cnn;
    int epochs = 5;
    int batch_size = 32;  // >= 2 for train-mode batch norm
    std::uint64_t seed = 0;
    OptimizerConfig optimizer;                 // lr 0.01, momentum 0.9 by default
    std::vector<int> eval_test_epochs;         // extra test evaluations (compare protocol)
    BnPosition bn_position = BnPosition::before_cross;

    void validate() const {
        if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
        if (batch_size < 2) throw std::invalid_argument("batch size must be >= 2");
        optimizer.validate();
    }
};

struct EpochMetrics {
    double train_loss = 0.0;
    double val_accuracy = 0.0;
    double seconds = 0.0;
};

struct Prediction {
    int predicted = 0;
    int label = 0;
};

struct MetricsRecord {
    std::vector<EpochMetrics> epochs;
    double test_accuracy = 0.0;
    std::map<int, double> test_accuracy_at;  // epoch -> accuracy (compare protocol)
    double mean_epoch_seconds = 0.0;
    ParamReport params;
    std::vector<Prediction> test_predictions;
};

// Epoch-wise reshuffled batch index groups; the trailing batch may be short.
std::vector<std::vector<std::size_t>> make_batch_plan(std::size_t sample_count, int batch_size,
                                                      SeededRng& rng);

// Materializes one batch with exactly the channels the model kind needs.
// Images are scaled to [0,1] by their own maximum; difference pixels share
// the comparison image's scale; timestamps stay raw integer weeks.
struct LabelledBatch {
    Batch<float> batch;
    Tensor<float> labels;  // one-hot
};
LabelledBatch assemble_batch(const PreparedDataset& data, const std::vector<Sample>& samples,
                             const std::vector<std::size_t>& indices, ModelKind kind);

std::vector<std::vector<std::size_t>> make_batches(const PreparedDataset& data, SplitId split,
                                                   ModelKind kind, int batch_size, SeededRng& rng);

// Argmax accuracy in infer mode.
std::pair<double, std::vector<Prediction>> evaluate(Model<float>& model,
                                                    const PreparedDataset& data,
                                                    const std::vector<Sample>& samples,
                                                    int batch_size = 32);

MetricsRecord train(Model<float>& model, const PreparedDataset& data,
                    const ExperimentConfig& config);

struct ExperimentResult {
    MetricsRecord metrics;
    Model<float> model;
};

// Builds the model for the config and trains it.
ExperimentResult run_experiment(const PreparedDataset& data, const ExperimentConfig& config);

std::string format_metrics(const MetricsRecord& record);
std::string metrics_csv(const MetricsRecord& record);

// --- six-model comparison ------------------------------------------------------

struct CompareConfig {
    int epochs = 10;
    std::vector<int> eval_epochs{5, 10};
    int batch_size = 32;
    std::uint64_t seed = 0;
    OptimizerConfig optimizer;
    int max_shift = 16;
    bool timestamps = true;
};

struct CompareRow {
    ModelKind kind = ModelKind::cnn;
    std::map<int, double> accuracy_at;     // epoch -> test accuracy
    std::map<int, double> mean_seconds_at; // epoch -> mean seconds/epoch so far
    std::int64_t params_total = 0;
    std::int64_t params_trainable = 0;
};

struct CompareReport {
    std::vector<CompareRow> rows;
    std::vector<int> eval_epochs;
    bool partial = false;       // a constituent run failed
    std::string error;
};

// Shared per-mode preprocessing for a comparison sweep over one raw dataset.
struct PreparedVariants {
    PreparedDataset none, absolute, relative;
};
PreparedVariants prepare_variants(const std::filesystem::path& raw_root, std::uint64_t seed,
                                  int max_shift, bool timestamps = true);

const PreparedDataset& variant_for_kind(const PreparedVariants& variants, ModelKind kind);

// Runs all six kinds on identical data with per-kind seeds derived from the
// master seed. A failed run aborts the sweep and surfaces the partial report.
CompareReport compare_models(const PreparedVariants& variants, const CompareConfig& config);

std::string format_compare(const CompareReport& report);
std::string compare_csv(const CompareReport& report);

}  // namespace xmid
