// The six classifier architectures, built from chain and X-chain blocks.
//
// A chain is conv-relu-conv-relu-pool-bn(-dropout). X-chains run one chain
// per input stream and exchange feature maps through 1x1 cross-connection
// convolutions whose outputs are concatenated into the other stream. The
// timestamp variants append a unit-sized week tensor to the flattened
// convolutional features before the dense head.

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "xmid/layers.hpp"

namespace xmid {

enum class ModelKind {
    cnn,
    cnn_ts,
    xcnn_absdiff,
    xcnn_reldiff,
    xcnn_ts_absdiff,
    xcnn_ts_reldiff,
};

constexpr int kModelKindCount = 6;

inline const char* kind_name(ModelKind kind) {
    switch (kind) {
        case ModelKind::cnn: return "cnn";
        case ModelKind::cnn_ts: return "cnn-ts";
        case ModelKind::xcnn_absdiff: return "xcnn-absdiff";
        case ModelKind::xcnn_reldiff: return "xcnn-reldiff";
        case ModelKind::xcnn_ts_absdiff: return "xcnn-ts-absdiff";
        case ModelKind::xcnn_ts_reldiff: return "xcnn-ts-reldiff";
    }
    return "?";
}

ModelKind parse_model_kind(const std::string& name);

inline bool kind_uses_difference(ModelKind kind) {
    return kind == ModelKind::xcnn_absdiff || kind == ModelKind::xcnn_reldiff ||
           kind == ModelKind::xcnn_ts_absdiff || kind == ModelKind::xcnn_ts_reldiff;
}

inline bool kind_uses_timestamp(ModelKind kind) {
    return kind == ModelKind::cnn_ts || kind == ModelKind::xcnn_ts_absdiff ||
           kind == ModelKind::xcnn_ts_reldiff;
}

// Whether the kind pairs against the earliest week (absolute) or the most
// recent preceding week (relative).
inline bool kind_uses_absolute_diff(ModelKind kind) {
    return kind == ModelKind::xcnn_absdiff || kind == ModelKind::xcnn_ts_absdiff;
}

enum class BnPosition { before_cross, after_cross };

struct ChainSpec {
    int kernels = 0;
    int conv_count = 2;  // fixed by the block definition
    bool use_dropout = true;
    double dropout_rate = 0.5;
};

struct XChainSpec {
    ChainSpec chain;
    int cross_kernels = 0;  // 1x1 filters per cross-connection; 0 disables
    BnPosition bn_position = BnPosition::before_cross;
};

struct ModelSpec {
    ModelKind kind = ModelKind::cnn;
    int n_classes = 2;
    int input_h = 0, input_w = 0;
    std::vector<int> chain_kernels;  // per stage (per stream for X kinds)
    std::vector<int> cross_kernels;  // per stage, X kinds only
    std::vector<int> dense_widths{64, 32};
    double dropout_rate = 0.5;
    bool dropout_last_chain = false;
    double l2 = 0.003;
    BnPosition bn_position = BnPosition::before_cross;

    int stages() const { return static_cast<int>(chain_kernels.size()); }
};

// Paper hyperparameters for each kind: baseline kernels 16,32,32,32,32 with
// dropout 0.5 on all but the last chain and gamma=0.003; X kinds use
// 8,8,16,16,32 per stream, dropout 0.25 and lambda=0.0003.
ModelSpec make_model_spec(ModelKind kind, int n_classes, int input_h, int input_w);

template <typename T>
struct Batch {
    Tensor<T> image;                      // [b,1,h,w]
    std::optional<Tensor<T>> difference;  // [b,1,h,w]
    std::optional<Tensor<T>> timestamp;   // [b,1], raw integer week
    std::int64_t size() const { return image.empty() ? 0 : image.extent(0); }
};

// --- rank-4 channel-axis concat/split ---------------------------------------

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 4 || b.rank() != 4) throw std::invalid_argument("concat_channels expects rank 4");
    if (a.extent(0) != b.extent(0) || a.extent(2) != b.extent(2) || a.extent(3) != b.extent(3)) {
        throw std::invalid_argument("concat_channels spatial/batch mismatch: " +
                                    shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
    }
    const std::int64_t batch = a.extent(0), ca = a.extent(1), cb = b.extent(1);
    const std::int64_t plane = a.extent(2) * a.extent(3);
    Tensor<T> out = Tensor<T>::zeros({batch, ca + cb, a.extent(2), a.extent(3)});
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    for (std::int64_t bi = 0; bi < batch; ++bi) {
        std::copy_n(pa + bi * ca * plane, ca * plane, po + bi * (ca + cb) * plane);
        std::copy_n(pb + bi * cb * plane, cb * plane, po + (bi * (ca + cb) + ca) * plane);
    }
    return out;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& t, std::int64_t first_channels) {
    if (t.rank() != 4) throw std::invalid_argument("split_channels expects rank 4");
    const std::int64_t batch = t.extent(0), c = t.extent(1);
    if (first_channels < 0 || first_channels > c) throw std::invalid_argument("split_channels bad split");
    const std::int64_t plane = t.extent(2) * t.extent(3);
    Tensor<T> a = Tensor<T>::zeros({batch, first_channels, t.extent(2), t.extent(3)});
    Tensor<T> b = Tensor<T>::zeros({batch, c - first_channels, t.extent(2), t.extent(3)});
    const T* pt = t.data();
    for (std::int64_t bi = 0; bi < batch; ++bi) {
        std::copy_n(pt + bi * c * plane, first_channels * plane, a.data() + bi * first_channels * plane);
        std::copy_n(pt + (bi * c + first_channels) * plane, (c - first_channels) * plane,
                    b.data() + bi * (c - first_channels) * plane);
    }
    return {std::move(a), std::move(b)};
}

// Cross-connection merge: mergedA = concat(A, 1x1conv(B)) and
// mergedB = concat(B, 1x1conv(A)). Null convolutions degenerate to the
// originals.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> cross_connect(const Tensor<T>& a, const Tensor<T>& b,
                                              Conv2d<T>* from_a, Conv2d<T>* from_b) {
    if (a.rank() != 4 || b.rank() != 4) throw std::invalid_argument("cross_connect expects rank 4");
    if (a.extent(2) != b.extent(2) || a.extent(3) != b.extent(3)) {
        throw std::invalid_argument("cross_connect spatial mismatch");
    }
    if (!from_a && !from_b) return {a, b};
    if (!from_a || !from_b) throw std::invalid_argument("cross_connect needs both connections or none");
    Tensor<T> into_b = from_a->forward(a);
    Tensor<T> into_a = from_b->forward(b);
    return {concat_channels(a, into_a), concat_channels(b, into_b)};
}

// --- building blocks ---------------------------------------------------------

template <typename T>
class Chain {
public:
    // owns_tail: include the bn(+dropout) regularisation tail. X stages with
    // bn after the cross-connection own that tail themselves.
    Chain(int in_channels, const ChainSpec& spec, bool owns_tail, SeededRng& rng,
          std::uint64_t dropout_seed)
        : conv1_(in_channels, spec.kernels, 3, rng),
          conv2_(spec.kernels, spec.kernels, 3, rng),
          owns_tail_(owns_tail) {
        if (owns_tail_) {
            bn_.emplace(spec.kernels);
            if (spec.use_dropout) dropout_.emplace(spec.dropout_rate, dropout_seed);
        }
    }

    Tensor<T> forward(Tensor<T> x, Mode mode) {
        Tensor<T> y = relu1_.forward(conv1_.forward(std::move(x)));
        y = relu2_.forward(conv2_.forward(std::move(y)));
        y = pool_.forward(y);
        if (owns_tail_) {
            y = bn_->forward(std::move(y), mode);
            if (dropout_) y = dropout_->forward(std::move(y), mode);
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& grad) {
        Tensor<T> g = grad;
        if (owns_tail_) {
            if (dropout_) g = dropout_->backward(g);
            g = bn_->backward(g);
        }
        g = pool_.backward(g);
        g = conv2_.backward(relu2_.backward(g));
        g = conv1_.backward(relu1_.backward(g));
        return g;
    }

    int out_channels() const { return conv2_.out_channels(); }

    template <typename Fn>
    void for_each_layer(const std::string& prefix, Fn&& fn) {
        fn(prefix + ".conv1", conv1_.params(), static_cast<BatchNorm<T>*>(nullptr));
        fn(prefix + ".conv2", conv2_.params(), static_cast<BatchNorm<T>*>(nullptr));
        if (bn_) fn(prefix + ".bn", bn_->params(), &*bn_);
    }

    void set_dropout_frozen(bool frozen) {
        if (dropout_) dropout_->freeze_mask(frozen);
    }

private:
    Conv2d<T> conv1_;
    ReLU<T> relu1_;
    Conv2d<T> conv2_;
    ReLU<T> relu2_;
    MaxPool2x2<T> pool_;
    std::optional<BatchNorm<T>> bn_;
    std::optional<Dropout<T>> dropout_;
    bool owns_tail_;
};

template <typename T>
class XStage {
public:
    XStage(int in_a, int in_b, const XChainSpec& spec, SeededRng& rng, std::uint64_t seed_a,
           std::uint64_t seed_b)
        : before_cross_(spec.bn_position == BnPosition::before_cross),
          chain_a_(in_a, spec.chain, before_cross_, rng, seed_a),
          chain_b_(in_b, spec.chain, before_cross_, rng, seed_b) {
        const int k = spec.chain.kernels;
        if (spec.cross_kernels > 0) {
            from_a_.emplace(k, spec.cross_kernels, 1, rng);
            from_b_.emplace(k, spec.cross_kernels, 1, rng);
        }
        if (!before_cross_) {
            const int merged = k + spec.cross_kernels;
            bn_a_.emplace(merged);
            bn_b_.emplace(merged);
            if (spec.chain.use_dropout) {
                drop_a_.emplace(spec.chain.dropout_rate, derive_seed(seed_a, {0xd1}));
                drop_b_.emplace(spec.chain.dropout_rate, derive_seed(seed_b, {0xd2}));
            }
        }
    }

    std::pair<Tensor<T>, Tensor<T>> forward(Tensor<T> xa, Tensor<T> xb, Mode mode) {
        Tensor<T> a = chain_a_.forward(std::move(xa), mode);
        Tensor<T> b = chain_b_.forward(std::move(xb), mode);
        chain_out_channels_ = a.extent(1);
        auto [ma, mb] = cross_connect(a, b, from_a_ ? &*from_a_ : nullptr, from_b_ ? &*from_b_ : nullptr);
        if (!before_cross_) {
            ma = bn_a_->forward(std::move(ma), mode);
            mb = bn_b_->forward(std::move(mb), mode);
            if (drop_a_) ma = drop_a_->forward(std::move(ma), mode);
            if (drop_b_) mb = drop_b_->forward(std::move(mb), mode);
        }
        return {std::move(ma), std::move(mb)};
    }

    std::pair<Tensor<T>, Tensor<T>> backward(const Tensor<T>& grad_a, const Tensor<T>& grad_b) {
        Tensor<T> ga = grad_a, gb = grad_b;
        if (!before_cross_) {
            if (drop_a_) ga = drop_a_->backward(ga);
            if (drop_b_) gb = drop_b_->backward(gb);
            ga = bn_a_->backward(ga);
            gb = bn_b_->backward(gb);
        }
        Tensor<T> g_a_out, g_b_out;
        if (from_a_) {
            auto [ga_direct, ga_cross] = split_channels(ga, chain_out_channels_);
            auto [gb_direct, gb_cross] = split_channels(gb, chain_out_channels_);
            g_a_out = ga_direct + from_a_->backward(gb_cross);
            g_b_out = gb_direct + from_b_->backward(ga_cross);
        } else {
            g_a_out = std::move(ga);
            g_b_out = std::move(gb);
        }
        return {chain_a_.backward(g_a_out), chain_b_.backward(g_b_out)};
    }

    template <typename Fn>
    void for_each_layer(const std::string& prefix, Fn&& fn) {
        chain_a_.for_each_layer(prefix + ".a", fn);
        chain_b_.for_each_layer(prefix + ".b", fn);
        if (from_a_) {
            fn(prefix + ".cross_ab", from_a_->params(), static_cast<BatchNorm<T>*>(nullptr));
            fn(prefix + ".cross_ba", from_b_->params(), static_cast<BatchNorm<T>*>(nullptr));
        }
        if (bn_a_) fn(prefix + ".bn_a", bn_a_->params(), &*bn_a_);
        if (bn_b_) fn(prefix + ".bn_b", bn_b_->params(), &*bn_b_);
    }

    void set_dropout_frozen(bool frozen) {
        chain_a_.set_dropout_frozen(frozen);
        chain_b_.set_dropout_frozen(frozen);
        if (drop_a_) drop_a_->freeze_mask(frozen);
        if (drop_b_) drop_b_->freeze_mask(frozen);
    }

private:
    bool before_cross_;
    Chain<T> chain_a_, chain_b_;
    std::optional<Conv2d<T>> from_a_, from_b_;  // from_a feeds B's merge and vice versa
    std::optional<BatchNorm<T>> bn_a_, bn_b_;
    std::optional<Dropout<T>> drop_a_, drop_b_;
    std::int64_t chain_out_channels_ = 0;
};

// Dense head: hidden (dense-relu-bn) stages then the output dense layer.
template <typename T>
class DenseHead {
public:
    DenseHead(int in_features, const std::vector<int>& widths, int n_classes, SeededRng& rng) {
        int f = in_features;
        hidden_.reserve(widths.size());
        for (int w : widths) {
            hidden_.emplace_back(f, w, rng, /*l2_on_weights=*/true);
            f = w;
        }
        relus_.resize(widths.size());
        for (int w : widths) bns_.emplace_back(w);
        out_ = std::make_unique<Dense<T>>(f, n_classes, rng, /*l2_on_weights=*/true);
    }

    Tensor<T> forward(Tensor<T> x, Mode mode) {
        Tensor<T> y = std::move(x);
        for (std::size_t i = 0; i < hidden_.size(); ++i) {
            y = hidden_[i].forward(std::move(y));
            y = relus_[i].forward(std::move(y));
            y = bns_[i].forward(std::move(y), mode);
        }
        return out_->forward(std::move(y));
    }

    Tensor<T> backward(const Tensor<T>& grad_logits) {
        Tensor<T> g = out_->backward(grad_logits);
        for (std::size_t i = hidden_.size(); i-- > 0;) {
            g = bns_[i].backward(g);
            g = relus_[i].backward(g);
            g = hidden_[i].backward(g);
        }
        return g;
    }

    template <typename Fn>
    void for_each_layer(const std::string& prefix, Fn&& fn) {
        for (std::size_t i = 0; i < hidden_.size(); ++i) {
            const std::string base = prefix + ".fc" + std::to_string(i + 1);
            fn(base, hidden_[i].params(), static_cast<BatchNorm<T>*>(nullptr));
            fn(base + ".bn", bns_[i].params(), &bns_[i]);
        }
        fn(prefix + ".out", out_->params(), static_cast<BatchNorm<T>*>(nullptr));
    }

private:
    std::vector<Dense<T>> hidden_;
    std::vector<ReLU<T>> relus_;
    std::vector<BatchNorm<T>> bns_;
    std::unique_ptr<Dense<T>> out_;
};

struct ParamReport {
    struct Entry {
        std::string name;
        std::int64_t trainable = 0;
        std::int64_t non_trainable = 0;
    };
    std::vector<Entry> per_layer;
    std::int64_t trainable = 0;
    std::int64_t non_trainable = 0;
    std::int64_t total() const { return trainable + non_trainable; }
};

std::string format_param_report(const ParamReport& report);

// --- the model ----------------------------------------------------------------

template <typename T>
class Model {
public:
    Model(const ModelSpec& spec, SeededRng& rng) : spec_(spec) {
        validate_spec();
        const std::uint64_t base = rng.seed();
        std::uint64_t drop_key = 0;
        const bool xcnn = kind_uses_difference(spec_.kind);
        int in_ch = 1;
        for (int s = 0; s < spec_.stages(); ++s) {
            ChainSpec cs;
            cs.kernels = spec_.chain_kernels[static_cast<std::size_t>(s)];
            cs.use_dropout = spec_.dropout_last_chain || s + 1 < spec_.stages();
            cs.dropout_rate = spec_.dropout_rate;
            ++drop_key;
            const std::uint64_t seed_a = derive_seed(base, {0xda, drop_key});
            const std::uint64_t seed_b = derive_seed(base, {0xdb, drop_key});
            if (xcnn) {
                XChainSpec xs;
                xs.chain = cs;
                xs.cross_kernels = spec_.cross_kernels[static_cast<std::size_t>(s)];
                xs.bn_position = spec_.bn_position;
                xstages_.emplace_back(in_ch, in_ch, xs, rng, seed_a, seed_b);
                in_ch = cs.kernels + xs.cross_kernels;
            } else {
                chains_.emplace_back(in_ch, cs, /*owns_tail=*/true, rng, seed_a);
                in_ch = cs.kernels;
            }
        }
        std::int64_t h = spec_.input_h, w = spec_.input_w;
        for (int s = 0; s < spec_.stages(); ++s) {
            h /= 2;
            w /= 2;
        }
        flat_per_stream_ = h * w * in_ch;
        std::int64_t head_in = flat_per_stream_ * (xcnn ? 2 : 1);
        if (kind_uses_timestamp(spec_.kind)) head_in += 1;
        head_ = std::make_unique<DenseHead<T>>(static_cast<int>(head_in), spec_.dense_widths,
                                               spec_.n_classes, rng);
        assert_shape_arithmetic();
    }

    const ModelSpec& spec() const { return spec_; }

    // Class probabilities; rows sum to 1.
    Tensor<T> forward(const Batch<T>& batch, Mode mode) {
        return softmax_rows(forward_logits(batch, mode));
    }

    Tensor<T> forward_logits(const Batch<T>& batch, Mode mode) {
        validate_batch(batch);
        const std::int64_t b = batch.size();
        Tensor<T> flat_a, flat_b;
        if (kind_uses_difference(spec_.kind)) {
            Tensor<T> xa = batch.image, xb = *batch.difference;
            for (auto& stage : xstages_) {
                auto [na, nb] = stage.forward(std::move(xa), std::move(xb), mode);
                xa = std::move(na);
                xb = std::move(nb);
            }
            stream_shape_ = xa.shape();
            flat_a = xa.reshaped({b, flat_per_stream_});
            flat_b = xb.reshaped({b, flat_per_stream_});
        } else {
            Tensor<T> x = batch.image;
            for (auto& chain : chains_) x = chain.forward(std::move(x), mode);
            stream_shape_ = x.shape();
            flat_a = x.reshaped({b, flat_per_stream_});
        }

        Tensor<T> feats;
        const bool ts = kind_uses_timestamp(spec_.kind);
        const std::int64_t width =
            flat_per_stream_ * (flat_b.empty() ? 1 : 2) + (ts ? 1 : 0);
        feats = Tensor<T>::zeros({b, width});
        T* fp = feats.data();
        for (std::int64_t i = 0; i < b; ++i) {
            T* row = fp + i * width;
            std::copy_n(flat_a.data() + i * flat_per_stream_, flat_per_stream_, row);
            if (!flat_b.empty()) {
                std::copy_n(flat_b.data() + i * flat_per_stream_, flat_per_stream_,
                            row + flat_per_stream_);
            }
            if (ts) row[width - 1] = (*batch.timestamp)[static_cast<std::size_t>(i)];
        }
        return head_->forward(std::move(feats), mode);
    }

    // Computes loss and all parameter gradients for a train-mode pass.
    double compute_loss_and_grads(const Batch<T>& batch, const Tensor<T>& labels) {
        if (labels.rank() != 2 || labels.extent(0) != batch.size() ||
            labels.extent(1) != spec_.n_classes) {
            throw std::invalid_argument("labels shape does not match batch/classes");
        }
        Tensor<T> logits = forward_logits(batch, Mode::train);
        LossResult<T> loss = softmax_crossentropy(logits, labels);
        backward_features(head_->backward(loss.grad_logits), batch.size());
        return loss.loss;
    }

    double backward_and_step(const Batch<T>& batch, const Tensor<T>& labels,
                             const OptimizerConfig& cfg) {
        cfg.validate();
        const double loss = compute_loss_and_grads(batch, labels);
        auto ps = params();
        sgd_step(ps, cfg);
        return loss;
    }

    std::vector<Param<T>*> params() {
        std::vector<Param<T>*> out;
        for_each_layer([&](const std::string&, std::vector<Param<T>*> ps, BatchNorm<T>*) {
            out.insert(out.end(), ps.begin(), ps.end());
        });
        return out;
    }

    // All persistent state: parameters plus batch-norm running statistics.
    std::vector<std::pair<std::string, Tensor<T>*>> state_tensors() {
        std::vector<std::pair<std::string, Tensor<T>*>> out;
        for_each_layer([&](const std::string& name, std::vector<Param<T>*> ps, BatchNorm<T>* bn) {
            for (Param<T>* p : ps) out.emplace_back(name + "." + p->name, &p->value);
            if (bn) {
                out.emplace_back(name + ".running_mean", &bn->running_mean);
                out.emplace_back(name + ".running_var", &bn->running_var);
            }
        });
        return out;
    }

    ParamReport count_params() {
        ParamReport report;
        for_each_layer([&](const std::string& name, std::vector<Param<T>*> ps, BatchNorm<T>* bn) {
            ParamReport::Entry entry;
            entry.name = name;
            for (Param<T>* p : ps) entry.trainable += p->count();
            if (bn) entry.non_trainable = bn->non_trainable_count();
            report.trainable += entry.trainable;
            report.non_trainable += entry.non_trainable;
            report.per_layer.push_back(std::move(entry));
        });
        return report;
    }

    template <typename Fn>
    void for_each_layer(Fn&& fn) {
        for (std::size_t i = 0; i < chains_.size(); ++i) {
            chains_[i].for_each_layer("chain" + std::to_string(i + 1), fn);
        }
        for (std::size_t i = 0; i < xstages_.size(); ++i) {
            xstages_[i].for_each_layer("xchain" + std::to_string(i + 1), fn);
        }
        head_->for_each_layer("head", fn);
    }

    void set_dropout_frozen(bool frozen) {
        for (auto& c : chains_) c.set_dropout_frozen(frozen);
        for (auto& s : xstages_) s.set_dropout_frozen(frozen);
    }

    std::int64_t flat_per_stream() const { return flat_per_stream_; }

private:
    void validate_spec() const {
        if (spec_.n_classes < 2) throw std::invalid_argument("model needs >= 2 classes");
        if (spec_.stages() < 1) throw std::invalid_argument("model needs >= 1 chain");
        if (spec_.dense_widths.empty()) throw std::invalid_argument("model needs dense widths");
        const std::int64_t need = std::int64_t{1} << spec_.stages();
        if (spec_.input_h < need || spec_.input_w < need) {
            throw std::invalid_argument("input " + std::to_string(spec_.input_h) + "x" +
                                        std::to_string(spec_.input_w) + " too small for " +
                                        std::to_string(spec_.stages()) + " pooling stages");
        }
        if (kind_uses_difference(spec_.kind) &&
            spec_.cross_kernels.size() != spec_.chain_kernels.size()) {
            throw std::invalid_argument("cross kernel schedule must match chain schedule");
        }
    }

    // Flatten arithmetic (floor-halved dims x channels) must match the
    // tensors a probe forward actually produces.
    void assert_shape_arithmetic() {
        Batch<T> probe;
        probe.image = Tensor<T>::zeros({1, 1, spec_.input_h, spec_.input_w});
        if (kind_uses_difference(spec_.kind)) {
            probe.difference = Tensor<T>::zeros({1, 1, spec_.input_h, spec_.input_w});
        }
        if (kind_uses_timestamp(spec_.kind)) probe.timestamp = Tensor<T>::zeros({1, 1});
        Tensor<T> logits = forward_logits(probe, Mode::infer);
        const std::int64_t flat = stream_shape_[1] * stream_shape_[2] * stream_shape_[3];
        if (flat != flat_per_stream_ || logits.shape() != Shape{1, spec_.n_classes}) {
            throw std::logic_error("architecture arithmetic mismatch: expected flatten " +
                                   std::to_string(flat_per_stream_) + ", got " + std::to_string(flat));
        }
    }

    void validate_batch(const Batch<T>& batch) const {
        if (batch.image.rank() != 4 || batch.image.extent(1) != 1 ||
            batch.image.extent(2) != spec_.input_h || batch.image.extent(3) != spec_.input_w) {
            throw std::invalid_argument("batch image must be [b,1," + std::to_string(spec_.input_h) +
                                        "," + std::to_string(spec_.input_w) + "], got " +
                                        shape_to_string(batch.image.shape()));
        }
        const bool needs_diff = kind_uses_difference(spec_.kind);
        if (needs_diff && !batch.difference) {
            throw std::invalid_argument(std::string(kind_name(spec_.kind)) +
                                        " requires a difference channel");
        }
        if (!needs_diff && batch.difference) {
            throw std::invalid_argument(std::string(kind_name(spec_.kind)) +
                                        " does not accept a difference channel");
        }
        if (needs_diff && batch.difference->shape() != batch.image.shape()) {
            throw std::invalid_argument("difference channel shape mismatch");
        }
        const bool needs_ts = kind_uses_timestamp(spec_.kind);
        if (needs_ts && !batch.timestamp) {
            throw std::invalid_argument(std::string(kind_name(spec_.kind)) +
                                        " requires a timestamp channel");
        }
        if (!needs_ts && batch.timestamp) {
            throw std::invalid_argument(std::string(kind_name(spec_.kind)) +
                                        " does not accept a timestamp channel");
        }
        if (needs_ts && batch.timestamp->shape() != Shape{batch.image.extent(0), 1}) {
            throw std::invalid_argument("timestamp channel must be [b,1]");
        }
    }

    void backward_features(const Tensor<T>& grad_feats, std::int64_t b) {
        const bool xcnn = kind_uses_difference(spec_.kind);
        const std::int64_t width = grad_feats.extent(1);
        Tensor<T> ga = Tensor<T>::zeros({b, flat_per_stream_});
        Tensor<T> gb;
        if (xcnn) gb = Tensor<T>::zeros({b, flat_per_stream_});
        const T* gf = grad_feats.data();
        for (std::int64_t i = 0; i < b; ++i) {
            const T* row = gf + i * width;
            std::copy_n(row, flat_per_stream_, ga.data() + i * flat_per_stream_);
            if (xcnn) {
                std::copy_n(row + flat_per_stream_, flat_per_stream_,
                            gb.data() + i * flat_per_stream_);
            }
            // timestamp input has no upstream layers; its gradient stops here
        }
        Shape spatial = stream_shape_;
        spatial[0] = b;
        if (xcnn) {
            Tensor<T> gxa = ga.reshaped(spatial);
            Tensor<T> gxb = gb.reshaped(spatial);
            for (std::size_t i = xstages_.size(); i-- > 0;) {
                auto [na, nb] = xstages_[i].backward(gxa, gxb);
                gxa = std::move(na);
                gxb = std::move(nb);
            }
        } else {
            Tensor<T> gx = ga.reshaped(spatial);
            for (std::size_t i = chains_.size(); i-- > 0;) gx = chains_[i].backward(gx);
        }
    }

    ModelSpec spec_;
    std::vector<Chain<T>> chains_;
    std::vector<XStage<T>> xstages_;
    std::unique_ptr<DenseHead<T>> head_;
    std::int64_t flat_per_stream_ = 0;
    Shape stream_shape_;  // [b,c,h,w] entering the flatten, cached by forward
};

}  // namespace xmid
