#include "xmid/trainer.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "xmid/phantom.hpp"
#include "xmid/report.hpp"

namespace xmid {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

void check_channels(const PreparedDataset& data, ModelKind kind) {
    if (kind_uses_difference(kind) && !data.options.mode) {
        throw std::invalid_argument(std::string(kind_name(kind)) +
                                    " needs a dataset prepared with differencing");
    }
    if (kind_uses_timestamp(kind) && !data.options.timestamps) {
        throw std::invalid_argument(std::string(kind_name(kind)) +
                                    " needs a dataset prepared with timestamps on");
    }
}

}  // namespace

std::vector<std::vector<std::size_t>> make_batch_plan(std::size_t sample_count, int batch_size,
                                                      SeededRng& rng) {
    if (sample_count == 0) throw std::invalid_argument("batching an empty split");
    if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
    std::vector<std::size_t> order(sample_count);
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t start = 0; start < sample_count; start += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(sample_count, start + static_cast<std::size_t>(batch_size));
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                             order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return batches;
}

std::vector<std::vector<std::size_t>> make_batches(const PreparedDataset& data, SplitId split,
                                                   ModelKind kind, int batch_size, SeededRng& rng) {
    check_channels(data, kind);
    return make_batch_plan(data.samples(split).size(), batch_size, rng);
}

LabelledBatch assemble_batch(const PreparedDataset& data, const std::vector<Sample>& samples,
                             const std::vector<std::size_t>& indices, ModelKind kind) {
    if (indices.empty()) throw std::invalid_argument("empty batch");
    const std::int64_t b = static_cast<std::int64_t>(indices.size());
    const std::int64_t h = data.height, w = data.width;
    const int n_classes = static_cast<int>(data.groups.size());
    const bool wants_diff = kind_uses_difference(kind);
    const bool wants_ts = kind_uses_timestamp(kind);

    LabelledBatch out;
    out.batch.image = Tensor<float>::zeros({b, 1, h, w});
    if (wants_diff) out.batch.difference = Tensor<float>::zeros({b, 1, h, w});
    if (wants_ts) out.batch.timestamp = Tensor<float>::zeros({b, 1});
    out.labels = Tensor<float>::zeros({b, n_classes});

    for (std::int64_t i = 0; i < b; ++i) {
        const Sample& s = samples[indices[static_cast<std::size_t>(i)]];
        if (s.slice.pixels.shape() != Shape{h, w}) {
            throw std::invalid_argument("sample dims differ from prepared dims");
        }
        const float mx = reduce_scalar(Reduce::max, s.slice.pixels);
        const float scale = mx > 0.0f ? 1.0f / mx : 1.0f;
        const float* sp = s.slice.pixels.data();
        float* ip = out.batch.image.data() + i * h * w;
        for (std::int64_t p = 0; p < h * w; ++p) ip[p] = sp[p] * scale;
        if (wants_diff) {
            if (!s.difference) {
                throw std::invalid_argument("sample lacks the difference channel the model needs");
            }
            const float* dp = s.difference->pixels.data();
            float* op = out.batch.difference->data() + i * h * w;
            for (std::int64_t p = 0; p < h * w; ++p) op[p] = dp[p] * scale;
        }
        if (wants_ts) (*out.batch.timestamp)[static_cast<std::size_t>(i)] = s.timestamp;
        out.labels.at(i, s.label) = 1.0f;
    }
    return out;
}

std::pair<double, std::vector<Prediction>> evaluate(Model<float>& model,
                                                    const PreparedDataset& data,
                                                    const std::vector<Sample>& samples,
                                                    int batch_size) {
    if (samples.empty()) throw std::invalid_argument("evaluate needs a nonempty sample set");
    const ModelKind kind = model.spec().kind;
    std::vector<Prediction> predictions;
    predictions.reserve(samples.size());
    std::size_t correct = 0;
    std::vector<std::size_t> indices;
    for (std::size_t start = 0; start < samples.size();
         start += static_cast<std::size_t>(batch_size)) {
        const std::size_t end =
            std::min(samples.size(), start + static_cast<std::size_t>(batch_size));
        indices.clear();
        for (std::size_t i = start; i < end; ++i) indices.push_back(i);
        const LabelledBatch lb = assemble_batch(data, samples, indices, kind);
        const Tensor<float> probs = model.forward(lb.batch, Mode::infer);
        const std::int64_t n = probs.extent(1);
        for (std::size_t i = 0; i < indices.size(); ++i) {
            const float* row = probs.data() + static_cast<std::int64_t>(i) * n;
            int arg = 0;
            for (int j = 1; j < n; ++j) {
                if (row[j] > row[arg]) arg = j;
            }
            const int label = samples[indices[i]].label;
            correct += arg == label ? 1 : 0;
            predictions.push_back({arg, label});
        }
    }
    return {static_cast<double>(correct) / static_cast<double>(samples.size()),
            std::move(predictions)};
}

MetricsRecord train(Model<float>& model, const PreparedDataset& data,
                    const ExperimentConfig& config) {
    config.validate();
    check_channels(data, model.spec().kind);
    const ModelKind kind = model.spec().kind;
    if (data.access_count(SplitId::test) != 0) {
        throw std::logic_error("test split was accessed before training started");
    }
    const std::vector<Sample>& train_samples = data.samples(SplitId::train);
    const std::vector<Sample>& val_samples = data.samples(SplitId::validation);
    if (train_samples.empty() || val_samples.empty()) {
        throw std::invalid_argument("training needs nonempty train and validation splits");
    }

    MetricsRecord record;
    record.params = model.count_params();
    SeededRng batch_rng(derive_seed(config.seed, {0xba7c4e5}));

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        const auto start = Clock::now();
        const auto plan = make_batch_plan(train_samples.size(), config.batch_size, batch_rng);
        double loss_sum = 0.0;
        std::size_t seen = 0;
        for (const auto& indices : plan) {
            if (indices.size() < 2) continue;  // train-mode batch norm needs >= 2
            const LabelledBatch lb = assemble_batch(data, train_samples, indices, kind);
            const double loss = model.backward_and_step(lb.batch, lb.labels, config.optimizer);
            if (!std::isfinite(loss)) {
                throw std::runtime_error("training diverged: non-finite loss at epoch " +
                                         std::to_string(epoch));
            }
            loss_sum += loss * static_cast<double>(indices.size());
            seen += indices.size();
        }
        EpochMetrics em;
        em.train_loss = seen ? loss_sum / static_cast<double>(seen) : 0.0;
        em.seconds = seconds_since(start);
        em.val_accuracy = evaluate(model, data, val_samples, config.batch_size).first;
        record.epochs.push_back(em);
        if (std::find(config.eval_test_epochs.begin(), config.eval_test_epochs.end(), epoch) !=
            config.eval_test_epochs.end()) {
            record.test_accuracy_at[epoch] =
                evaluate(model, data, data.samples(SplitId::test), config.batch_size).first;
        }
    }

    auto [test_acc, predictions] =
        evaluate(model, data, data.samples(SplitId::test), config.batch_size);
    record.test_accuracy = test_acc;
    record.test_accuracy_at.emplace(config.epochs, test_acc);
    record.test_predictions = std::move(predictions);
    double total = 0.0;
    for (const auto& em : record.epochs) total += em.seconds;
    record.mean_epoch_seconds = total / static_cast<double>(record.epochs.size());
    return record;
}

ExperimentResult run_experiment(const PreparedDataset& data, const ExperimentConfig& config) {
    config.validate();
    ModelSpec spec = make_model_spec(config.kind, static_cast<int>(data.groups.size()),
                                     data.height, data.width);
    spec.bn_position = config.bn_position;
    SeededRng model_rng(derive_seed(config.seed, {0x5eed}));
    Model<float> model(spec, model_rng);
    MetricsRecord record = train(model, data, config);
    return {std::move(record), std::move(model)};
}

std::string format_metrics(const MetricsRecord& record) {
    TextTable table;
    table.header({"epoch", "train_loss", "val_accuracy", "seconds"});
    for (std::size_t i = 0; i < record.epochs.size(); ++i) {
        const auto& em = record.epochs[i];
        table.row({std::to_string(i + 1), format_fixed(em.train_loss, 4),
                   format_fixed(em.val_accuracy, 4), format_fixed(em.seconds, 2)});
    }
    std::ostringstream os;
    os << table.to_string();
    os << "test accuracy " << format_fixed(record.test_accuracy, 4) << ", mean epoch seconds "
       << format_fixed(record.mean_epoch_seconds, 2) << ", parameters "
       << record.params.total() << " (" << record.params.trainable << " trainable)\n";
    return os.str();
}

std::string metrics_csv(const MetricsRecord& record) {
    std::ostringstream os;
    os << "epoch,train_loss,val_accuracy,seconds\n";
    for (std::size_t i = 0; i < record.epochs.size(); ++i) {
        const auto& em = record.epochs[i];
        os << (i + 1) << "," << format_fixed(em.train_loss, 6) << ","
           << format_fixed(em.val_accuracy, 6) << "," << format_fixed(em.seconds, 3) << "\n";
    }
    return os.str();
}

PreparedVariants prepare_variants(const std::filesystem::path& raw_root, std::uint64_t seed,
                                  int max_shift, bool timestamps) {
    const std::vector<ImageSlice> slices = load_dataset_dir(raw_root);
    PreparedVariants variants;
    PrepOptions options;
    options.timestamps = timestamps;
    options.max_shift = max_shift;
    options.seed = seed;
    options.mode = std::nullopt;
    variants.none = prepare_dataset(slices, options);
    options.mode = DiffMode::absolute;
    variants.absolute = prepare_dataset(slices, options);
    options.mode = DiffMode::relative;
    variants.relative = prepare_dataset(slices, options);
    return variants;
}

const PreparedDataset& variant_for_kind(const PreparedVariants& variants, ModelKind kind) {
    if (!kind_uses_difference(kind)) return variants.none;
    return kind_uses_absolute_diff(kind) ? variants.absolute : variants.relative;
}

CompareReport compare_models(const PreparedVariants& variants, const CompareConfig& config) {
    CompareReport report;
    report.eval_epochs = config.eval_epochs;
    for (int i = 0; i < kModelKindCount; ++i) {
        const ModelKind kind = static_cast<ModelKind>(i);
        ExperimentConfig run;
        run.kind = kind;
        run.epochs = config.epochs;
        run.batch_size = config.batch_size;
        run.optimizer = config.optimizer;
        run.eval_test_epochs = config.eval_epochs;
        run.seed = derive_seed(config.seed, {0xc0de, static_cast<std::uint64_t>(i)});
        try {
            const PreparedDataset& data = variant_for_kind(variants, kind);
            const MetricsRecord record = run_experiment(data, run).metrics;
            CompareRow row;
            row.kind = kind;
            row.params_total = record.params.total();
            row.params_trainable = record.params.trainable;
            for (int epoch : config.eval_epochs) {
                auto it = record.test_accuracy_at.find(epoch);
                if (it != record.test_accuracy_at.end()) row.accuracy_at[epoch] = it->second;
                double total = 0.0;
                const int upto = std::min<int>(epoch, static_cast<int>(record.epochs.size()));
                for (int e = 0; e < upto; ++e) total += record.epochs[static_cast<std::size_t>(e)].seconds;
                if (upto > 0) row.mean_seconds_at[epoch] = total / upto;
            }
            report.rows.push_back(std::move(row));
        } catch (const std::exception& e) {
            report.partial = true;
            report.error = std::string(kind_name(kind)) + ": " + e.what();
            return report;
        }
    }
    return report;
}

std::string format_compare(const CompareReport& report) {
    TextTable table;
    std::vector<std::string> header{"method"};
    for (int epoch : report.eval_epochs) header.push_back("acc@" + std::to_string(epoch));
    for (int epoch : report.eval_epochs) header.push_back("s/epoch@" + std::to_string(epoch));
    header.push_back("params");
    header.push_back("trainable");
    table.header(std::move(header));
    for (const auto& row : report.rows) {
        std::vector<std::string> cells{kind_name(row.kind)};
        for (int epoch : report.eval_epochs) {
            const auto it = row.accuracy_at.find(epoch);
            cells.push_back(it == row.accuracy_at.end() ? "-" : format_fixed(it->second, 4));
        }
        for (int epoch : report.eval_epochs) {
            const auto it = row.mean_seconds_at.find(epoch);
            cells.push_back(it == row.mean_seconds_at.end() ? "-" : format_fixed(it->second, 2));
        }
        cells.push_back(std::to_string(row.params_total));
        cells.push_back(std::to_string(row.params_trainable));
        table.row(std::move(cells));
    }
    std::string out = table.to_string();
    if (report.partial) out += "PARTIAL RESULTS - sweep aborted: " + report.error + "\n";
    return out;
}

std::string compare_csv(const CompareReport& report) {
    std::ostringstream os;
    os << "method";
    for (int epoch : report.eval_epochs) os << ",acc_" << epoch;
    for (int epoch : report.eval_epochs) os << ",mean_epoch_seconds_" << epoch;
    os << ",params,trainable\n";
    for (const auto& row : report.rows) {
        os << kind_name(row.kind);
        for (int epoch : report.eval_epochs) {
            const auto it = row.accuracy_at.find(epoch);
            os << "," << (it == row.accuracy_at.end() ? "" : format_fixed(it->second, 6));
        }
        for (int epoch : report.eval_epochs) {
            const auto it = row.mean_seconds_at.find(epoch);
            os << "," << (it == row.mean_seconds_at.end() ? "" : format_fixed(it->second, 3));
        }
        os << "," << row.params_total << "," << row.params_trainable << "\n";
    }
    return os.str();
}

}  // namespace xmid
