// Neural-network layers with hand-written forward and backward passes.
// Layout is NCHW row-major throughout. Layers cache what their backward pass
// needs; forward/backward pairs are exercised by the finite-difference
// checker in gradcheck.hpp.

#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "xmid/rng.hpp"
#include "xmid/tensor.hpp"

namespace xmid {

enum class Mode { train, infer };

template <typename T>
struct Param {
    Tensor<T> value;
    Tensor<T> grad;
    Tensor<T> velocity;
    bool weight_decay = false;  // L2 applies to dense weights only
    std::string name;

    void init(Tensor<T> v, std::string n, bool decay = false) {
        grad = Tensor<T>::zeros_like(v);
        velocity = Tensor<T>::zeros_like(v);
        value = std::move(v);
        weight_decay = decay;
        name = std::move(n);
    }
    std::int64_t count() const { return static_cast<std::int64_t>(value.numel()); }
};

struct OptimizerConfig {
    double learning_rate = 0.01;
    double momentum = 0.9;
    double l2 = 0.0;  // gamma/lambda for dense-layer weight decay

    void validate() const {
        if (learning_rate < 0.0) throw std::invalid_argument("learning rate must be >= 0");
        if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("momentum must be in [0,1)");
        if (l2 < 0.0) throw std::invalid_argument("l2 coefficient must be >= 0");
    }
};

// velocity = momentum * velocity - lr * (grad + 2*l2*w); w += velocity.
// The decay term applies only to params flagged weight_decay.
template <typename T>
void sgd_step(std::span<Param<T>* const> params, const OptimizerConfig& cfg) {
    cfg.validate();
    for (Param<T>* p : params) {
        const std::size_t n = p->value.numel();
        T* w = p->value.data();
        T* g = p->grad.data();
        T* v = p->velocity.data();
        const double lr = cfg.learning_rate;
        const double mom = cfg.momentum;
        const double decay = p->weight_decay ? 2.0 * cfg.l2 : 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double grad = static_cast<double>(g[i]) + decay * static_cast<double>(w[i]);
            const double vel = mom * static_cast<double>(v[i]) - lr * grad;
            v[i] = static_cast<T>(vel);
            w[i] = static_cast<T>(static_cast<double>(w[i]) + vel);
        }
    }
}

template <typename T>
void sgd_step(const std::vector<Param<T>*>& params, const OptimizerConfig& cfg) {
    sgd_step(std::span<Param<T>* const>(params.data(), params.size()), cfg);
}

// He Gaussian init: mean 0, stddev sqrt(2/fan_in). fan_in is the leading
// extent for dense [f_in,f_out] weights and in_ch*kh*kw for conv
// [out_ch,in_ch,kh,kw] kernels.
template <typename T>
Tensor<T> he_init(SeededRng& rng, const Shape& shape) {
    std::int64_t fan_in = 0;
    if (shape.size() == 2) {
        fan_in = shape[0];
    } else if (shape.size() == 4) {
        fan_in = shape[1] * shape[2] * shape[3];
    } else {
        throw std::invalid_argument("he_init expects a rank-2 or rank-4 shape, got " +
                                    shape_to_string(shape));
    }
    const T stddev = static_cast<T>(std::sqrt(2.0 / static_cast<double>(fan_in)));
    return rng_normal<T>(rng, shape, T{0}, stddev);
}

// ---------------------------------------------------------------------------
// Conv2d: stride 1, "same" zero padding, kernel 1x1 or 3x3 (cross-correlation
// plus bias). Spatial dims are preserved; only pooling shrinks them.
// ---------------------------------------------------------------------------
template <typename T>
class Conv2d {
public:
    Conv2d(int in_channels, int out_channels, int kernel, SeededRng& rng)
        : in_ch_(in_channels), out_ch_(out_channels), k_(kernel) {
        if (kernel != 1 && kernel != 3) throw std::invalid_argument("conv kernel must be 1 or 3");
        if (in_channels < 1 || out_channels < 1) throw std::invalid_argument("conv channels must be >= 1");
        weight.init(he_init<T>(rng, {out_ch_, in_ch_, k_, k_}), "w");
        bias.init(Tensor<T>::zeros({out_ch_}), "b");
    }

    int in_channels() const { return in_ch_; }
    int out_channels() const { return out_ch_; }
    int kernel() const { return k_; }

    Tensor<T> forward(Tensor<T> input) {
        check_input(input);
        input_ = std::move(input);
        return k_ == 3 ? forward3(input_) : forward1(input_);
    }

    Tensor<T> backward(const Tensor<T>& grad_out) {
        if (input_.empty()) throw std::logic_error("conv backward before forward");
        const std::int64_t batch = input_.extent(0), h = input_.extent(2), w = input_.extent(3);
        if (grad_out.shape() != Shape{batch, out_ch_, h, w}) {
            throw std::invalid_argument("conv grad_out shape mismatch: " +
                                        shape_to_string(grad_out.shape()));
        }
        grad_bias_sum(grad_out);
        return k_ == 3 ? backward3(grad_out) : backward1(grad_out);
    }

    Param<T> weight;
    Param<T> bias;

    std::vector<Param<T>*> params() { return {&weight, &bias}; }

private:
    void check_input(const Tensor<T>& input) const {
        if (input.rank() != 4) throw std::invalid_argument("conv input must be rank 4");
        if (input.extent(1) != in_ch_) {
            throw std::invalid_argument("conv channel mismatch: input has " +
                                        std::to_string(input.extent(1)) + ", kernel expects " +
                                        std::to_string(in_ch_));
        }
    }

    // Zero-pads each channel plane by one pixel so the 3x3 taps need no
    // border branches; pad(y,x) = src(y-1,x-1).
    static void pad_planes(const T* src, std::int64_t channels, std::int64_t h, std::int64_t w,
                           T* dst) {
        const std::int64_t ph = h + 2, pw = w + 2;
        std::fill(dst, dst + channels * ph * pw, T{0});
        for (std::int64_t c = 0; c < channels; ++c) {
            for (std::int64_t y = 0; y < h; ++y) {
                std::copy_n(src + (c * h + y) * w, w, dst + (c * ph + y + 1) * pw + 1);
            }
        }
    }

    // All nine taps accumulate into a register-resident row per (co,y); the
    // padded planes make every row access branch-free.
    Tensor<T> forward3(const Tensor<T>& input) {
        const std::int64_t batch = input.extent(0), h = input.extent(2), w = input.extent(3);
        Tensor<T> out = Tensor<T>::zeros({batch, out_ch_, h, w});
        const std::int64_t plane = h * w, ph = h + 2, pw = w + 2;
        const T* in = input.data();
        const T* wt = weight.value.data();
        const T* bs = bias.value.data();
        T* op = out.data();
#pragma omp parallel for schedule(static)
        for (std::int64_t b = 0; b < batch; ++b) {
            std::vector<T> padded(static_cast<std::size_t>(in_ch_ * ph * pw));
            pad_planes(in + b * in_ch_ * plane, in_ch_, h, w, padded.data());
            std::vector<T> acc(static_cast<std::size_t>(w));
            for (std::int64_t co = 0; co < out_ch_; ++co) {
                T* outp = op + (b * out_ch_ + co) * plane;
                for (std::int64_t y = 0; y < h; ++y) {
                    std::fill(acc.begin(), acc.end(), bs[co]);
                    T* ap = acc.data();
                    for (std::int64_t ci = 0; ci < in_ch_; ++ci) {
                        const T* wz = wt + (co * in_ch_ + ci) * 9;
                        const T w00 = wz[0], w01 = wz[1], w02 = wz[2];
                        const T w10 = wz[3], w11 = wz[4], w12 = wz[5];
                        const T w20 = wz[6], w21 = wz[7], w22 = wz[8];
                        const T* r0 = padded.data() + (ci * ph + y) * pw;
                        const T* r1 = r0 + pw;
                        const T* r2 = r1 + pw;
#pragma omp simd
                        for (std::int64_t x = 0; x < w; ++x) {
                            ap[x] += w00 * r0[x] + w01 * r0[x + 1] + w02 * r0[x + 2] +
                                     w10 * r1[x] + w11 * r1[x + 1] + w12 * r1[x + 2] +
                                     w20 * r2[x] + w21 * r2[x + 1] + w22 * r2[x + 2];
                        }
                    }
                    std::copy_n(acc.data(), w, outp + y * w);
                }
            }
        }
        return out;
    }

    Tensor<T> forward1(const Tensor<T>& input) {
        const std::int64_t batch = input.extent(0), h = input.extent(2), w = input.extent(3);
        Tensor<T> out = Tensor<T>::zeros({batch, out_ch_, h, w});
        const std::int64_t plane = h * w;
        const T* in = input.data();
        const T* wt = weight.value.data();
        const T* bs = bias.value.data();
        T* op = out.data();
#pragma omp parallel for collapse(2) schedule(static)
        for (std::int64_t b = 0; b < batch; ++b) {
            for (std::int64_t co = 0; co < out_ch_; ++co) {
                T* outp = op + (b * out_ch_ + co) * plane;
                const T bv = bs[co];
                for (std::int64_t i = 0; i < plane; ++i) outp[i] = bv;
                for (std::int64_t ci = 0; ci < in_ch_; ++ci) {
                    const T* inp = in + (b * in_ch_ + ci) * plane;
                    const T wv = wt[co * in_ch_ + ci];
#pragma omp simd
                    for (std::int64_t i = 0; i < plane; ++i) outp[i] += wv * inp[i];
                }
            }
        }
        return out;
    }

    void grad_bias_sum(const Tensor<T>& grad_out) {
        const std::int64_t batch = grad_out.extent(0);
        const std::int64_t plane = grad_out.extent(2) * grad_out.extent(3);
        const T* go = grad_out.data();
        T* gb = bias.grad.data();
#pragma omp parallel for schedule(static)
        for (std::int64_t co = 0; co < out_ch_; ++co) {
            double acc = 0.0;
            for (std::int64_t b = 0; b < batch; ++b) {
                const T* g = go + (b * out_ch_ + co) * plane;
                for (std::int64_t i = 0; i < plane; ++i) acc += static_cast<double>(g[i]);
            }
            gb[co] = static_cast<T>(acc);
        }
    }

    Tensor<T> backward3(const Tensor<T>& grad_out) {
        const std::int64_t batch = input_.extent(0), h = input_.extent(2), w = input_.extent(3);
        const std::int64_t plane = h * w, ph = h + 2, pw = w + 2;
        const T* in = input_.data();
        const T* go = grad_out.data();
        const T* wt = weight.value.data();

        // Shared padded copies of the inputs and the output gradients.
        std::vector<T> padded_in(static_cast<std::size_t>(batch * in_ch_ * ph * pw));
        std::vector<T> padded_go(static_cast<std::size_t>(batch * out_ch_ * ph * pw));
#pragma omp parallel for schedule(static)
        for (std::int64_t b = 0; b < batch; ++b) {
            pad_planes(in + b * in_ch_ * plane, in_ch_, h, w,
                       padded_in.data() + b * in_ch_ * ph * pw);
            pad_planes(go + b * out_ch_ * plane, out_ch_, h, w,
                       padded_go.data() + b * out_ch_ * ph * pw);
        }

        // grad wrt weights. Both operands live in padded planes, so each tap
        // is one flat offset dot and the pad entries of grad_out contribute
        // nothing. Per-batch partials keep the planes cache-resident; the
        // serial reduction over b keeps the sum order fixed for any thread
        // count.
        {
            const std::int64_t i0 = pw + 1;
            const std::int64_t i1 = h * pw + w + 1;
            const std::int64_t pairs = out_ch_ * in_ch_;
            std::vector<T> partial(static_cast<std::size_t>(batch * pairs * 9));
#pragma omp parallel for schedule(static)
            for (std::int64_t b = 0; b < batch; ++b) {
                for (std::int64_t co = 0; co < out_ch_; ++co) {
                    const T* gp = padded_go.data() + (b * out_ch_ + co) * ph * pw;
                    for (std::int64_t ci = 0; ci < in_ch_; ++ci) {
                        const T* pi = padded_in.data() + (b * in_ch_ + ci) * ph * pw - pw - 1;
                        T a00{0}, a01{0}, a02{0}, a10{0}, a11{0}, a12{0}, a20{0}, a21{0}, a22{0};
#pragma omp simd reduction(+ : a00, a01, a02, a10, a11, a12, a20, a21, a22)
                        for (std::int64_t i = i0; i < i1; ++i) {
                            const T g = gp[i];
                            a00 += g * pi[i];
                            a01 += g * pi[i + 1];
                            a02 += g * pi[i + 2];
                            a10 += g * pi[i + pw];
                            a11 += g * pi[i + pw + 1];
                            a12 += g * pi[i + pw + 2];
                            a20 += g * pi[i + 2 * pw];
                            a21 += g * pi[i + 2 * pw + 1];
                            a22 += g * pi[i + 2 * pw + 2];
                        }
                        T* slot = partial.data() + ((b * pairs + co * in_ch_ + ci) * 9);
                        slot[0] = a00;
                        slot[1] = a01;
                        slot[2] = a02;
                        slot[3] = a10;
                        slot[4] = a11;
                        slot[5] = a12;
                        slot[6] = a20;
                        slot[7] = a21;
                        slot[8] = a22;
                    }
                }
            }
            T* gw = weight.grad.data();
            std::fill(gw, gw + pairs * 9, T{0});
            for (std::int64_t b = 0; b < batch; ++b) {
                const T* slot = partial.data() + b * pairs * 9;
                for (std::int64_t j = 0; j < pairs * 9; ++j) gw[j] += slot[j];
            }
        }

        // grad wrt input: same nine-tap pass over padded grad_out with the
        // kernel flipped.
        Tensor<T> grad_in = Tensor<T>::zeros_like(input_);
        T* gi = grad_in.data();
#pragma omp parallel for schedule(static)
        for (std::int64_t b = 0; b < batch; ++b) {
            std::vector<T> acc(static_cast<std::size_t>(w));
            for (std::int64_t ci = 0; ci < in_ch_; ++ci) {
                T* gip = gi + (b * in_ch_ + ci) * plane;
                for (std::int64_t y = 0; y < h; ++y) {
                    std::fill(acc.begin(), acc.end(), T{0});
                    T* ap = acc.data();
                    for (std::int64_t co = 0; co < out_ch_; ++co) {
                        const T* wz = wt + (co * in_ch_ + ci) * 9;
                        const T w00 = wz[8], w01 = wz[7], w02 = wz[6];
                        const T w10 = wz[5], w11 = wz[4], w12 = wz[3];
                        const T w20 = wz[2], w21 = wz[1], w22 = wz[0];
                        const T* g0 = padded_go.data() + ((b * out_ch_ + co) * ph + y) * pw;
                        const T* g1 = g0 + pw;
                        const T* g2 = g1 + pw;
#pragma omp simd
                        for (std::int64_t x = 0; x < w; ++x) {
                            ap[x] += w00 * g0[x] + w01 * g0[x + 1] + w02 * g0[x + 2] +
                                     w10 * g1[x] + w11 * g1[x + 1] + w12 * g1[x + 2] +
                                     w20 * g2[x] + w21 * g2[x + 1] + w22 * g2[x + 2];
                        }
                    }
                    std::copy_n(acc.data(), w, gip + y * w);
                }
            }
        }
        return grad_in;
    }

    Tensor<T> backward1(const Tensor<T>& grad_out) {
        const std::int64_t batch = input_.extent(0), h = input_.extent(2), w = input_.extent(3);
        const std::int64_t plane = h * w;
        const T* in = input_.data();
        const T* go = grad_out.data();
        const T* wt = weight.value.data();

        {
            T* gw = weight.grad.data();
#pragma omp parallel for collapse(2) schedule(static)
            for (std::int64_t co = 0; co < out_ch_; ++co) {
                for (std::int64_t ci = 0; ci < in_ch_; ++ci) {
                    T acc{0};
                    for (std::int64_t b = 0; b < batch; ++b) {
                        const T* gop = go + (b * out_ch_ + co) * plane;
                        const T* inp = in + (b * in_ch_ + ci) * plane;
#pragma omp simd reduction(+ : acc)
                        for (std::int64_t i = 0; i < plane; ++i) acc += gop[i] * inp[i];
                    }
                    gw[co * in_ch_ + ci] = acc;
                }
            }
        }

        Tensor<T> grad_in = Tensor<T>::zeros_like(input_);
        T* gi = grad_in.data();
#pragma omp parallel for collapse(2) schedule(static)
        for (std::int64_t b = 0; b < batch; ++b) {
            for (std::int64_t ci = 0; ci < in_ch_; ++ci) {
                T* gip = gi + (b * in_ch_ + ci) * plane;
                for (std::int64_t co = 0; co < out_ch_; ++co) {
                    const T* gop = go + (b * out_ch_ + co) * plane;
                    const T wv = wt[co * in_ch_ + ci];
#pragma omp simd
                    for (std::int64_t i = 0; i < plane; ++i) gip[i] += wv * gop[i];
                }
            }
        }
        return grad_in;
    }

    std::int64_t in_ch_, out_ch_, k_;
    Tensor<T> input_;
};

// ---------------------------------------------------------------------------
// MaxPool 2x2, non-overlapping, stride 2; odd trailing row/column discarded.
// Ties go to the first position in row-major scan of the block.
// ---------------------------------------------------------------------------
template <typename T>
class MaxPool2x2 {
public:
    Tensor<T> forward(const Tensor<T>& input) {
        if (input.rank() != 4) throw std::invalid_argument("maxpool input must be rank 4");
        const std::int64_t h = input.extent(2), w = input.extent(3);
        if (h < 2 || w < 2) throw std::invalid_argument("maxpool needs h,w >= 2");
        const std::int64_t batch = input.extent(0), ch = input.extent(1);
        const std::int64_t oh = h / 2, ow = w / 2;
        in_shape_ = input.shape();
        Tensor<T> out = Tensor<T>::zeros({batch, ch, oh, ow});
        argmax_.assign(out.numel(), 0);
        const T* in = input.data();
        T* op = out.data();
        const std::int64_t plane = h * w, oplane = oh * ow;
#pragma omp parallel for schedule(static)
        for (std::int64_t bc = 0; bc < batch * ch; ++bc) {
            const T* inp = in + bc * plane;
            T* outp = op + bc * oplane;
            std::size_t* am = argmax_.data() + bc * oplane;
            for (std::int64_t y = 0; y < oh; ++y) {
                for (std::int64_t x = 0; x < ow; ++x) {
                    const std::int64_t base = (2 * y) * w + 2 * x;
                    std::int64_t best = base;
                    T bv = inp[base];
                    const std::int64_t cand[3] = {base + 1, base + w, base + w + 1};
                    for (std::int64_t c : cand) {
                        if (inp[c] > bv) {
                            bv = inp[c];
                            best = c;
                        }
                    }
                    outp[y * ow + x] = bv;
                    am[y * ow + x] = static_cast<std::size_t>(bc * plane + best);
                }
            }
        }
        return out;
    }

    Tensor<T> backward(const Tensor<T>& grad_out) {
        if (argmax_.empty()) throw std::logic_error("maxpool backward before forward");
        if (grad_out.numel() != argmax_.size()) {
            throw std::invalid_argument("maxpool grad/mask shape mismatch");
        }
        Tensor<T> grad_in = Tensor<T>::zeros(in_shape_);
        T* gi = grad_in.data();
        const T* go = grad_out.data();
        const std::int64_t planes = in_shape_[0] * in_shape_[1];
        const std::int64_t oplane = static_cast<std::int64_t>(argmax_.size()) / planes;
        // winners of plane p lie inside plane p, so planes scatter independently
#pragma omp parallel for schedule(static)
        for (std::int64_t p = 0; p < planes; ++p) {
            for (std::int64_t i = p * oplane; i < (p + 1) * oplane; ++i) {
                gi[argmax_[static_cast<std::size_t>(i)]] += go[i];
            }
        }
        return grad_in;
    }

    const std::vector<std::size_t>& argmax() const { return argmax_; }

private:
    Shape in_shape_;
    std::vector<std::size_t> argmax_;  // flat input index of each block winner
};

// ---------------------------------------------------------------------------
// Batch normalization. Rank-4 inputs normalize per channel over (batch,h,w);
// rank-2 inputs normalize per feature over the batch. Inference depends only
// on the running statistics.
// ---------------------------------------------------------------------------
template <typename T>
class BatchNorm {
public:
    explicit BatchNorm(int features, double eps = 1e-5, double momentum = 0.9)
        : features_(features), eps_(eps), momentum_(momentum) {
        if (features < 1) throw std::invalid_argument("batchnorm features must be >= 1");
        if (momentum <= 0.0 || momentum >= 1.0) throw std::invalid_argument("batchnorm momentum must be in (0,1)");
        gamma.init(Tensor<T>::full({features_}, T{1}), "gamma");
        beta.init(Tensor<T>::zeros({features_}), "beta");
        running_mean = Tensor<T>::zeros({features_});
        running_var = Tensor<T>::full({features_}, T{1});
    }

    int features() const { return static_cast<int>(features_); }
    std::int64_t non_trainable_count() const { return 2 * features_; }

    Tensor<T> forward(Tensor<T> input, Mode mode) {
        const auto [n, spatial] = check_input(input);
        if (mode == Mode::train && n < 2) {
            throw std::invalid_argument("batchnorm train mode needs batch size >= 2");
        }
        Tensor<T> out = Tensor<T>::zeros_like(input);
        T* op = out.data();
        const T* gm = gamma.value.data();
        const T* bt = beta.value.data();

        if (mode == Mode::infer) {
            const T* in = input.data();
#pragma omp parallel for schedule(static)
            for (std::int64_t f = 0; f < features_; ++f) {
                const double inv = 1.0 / std::sqrt(static_cast<double>(running_var[static_cast<std::size_t>(f)]) + eps_);
                const double scale = static_cast<double>(gm[f]) * inv;
                const double shift = static_cast<double>(bt[f]) -
                                     scale * static_cast<double>(running_mean[static_cast<std::size_t>(f)]);
                for_feature(input, f, [&](std::size_t idx) {
                    op[idx] = static_cast<T>(scale * static_cast<double>(in[idx]) + shift);
                });
            }
            return out;
        }

        input_ = std::move(input);
        const T* in = input_.data();
        const double count = static_cast<double>(n * spatial);
        mean_.assign(static_cast<std::size_t>(features_), 0.0);
        var_.assign(static_cast<std::size_t>(features_), 0.0);
        xhat_ = Tensor<T>::zeros_like(input_);
        T* xh = xhat_.data();
#pragma omp parallel for schedule(static)
        for (std::int64_t f = 0; f < features_; ++f) {
            double sum = 0.0, sumsq = 0.0;
            for_feature(input_, f, [&](std::size_t idx) {
                const double v = static_cast<double>(in[idx]);
                sum += v;
                sumsq += v * v;
            });
            const double mean = sum / count;
            double var = sumsq / count - mean * mean;
            if (var < 0.0) var = 0.0;  // guard fp cancellation
            mean_[static_cast<std::size_t>(f)] = mean;
            var_[static_cast<std::size_t>(f)] = var;
            const double inv = 1.0 / std::sqrt(var + eps_);
            const double g = static_cast<double>(gm[f]), b = static_cast<double>(bt[f]);
            for_feature(input_, f, [&](std::size_t idx) {
                const double x = (static_cast<double>(in[idx]) - mean) * inv;
                xh[idx] = static_cast<T>(x);
                op[idx] = static_cast<T>(g * x + b);
            });
            running_mean[static_cast<std::size_t>(f)] =
                static_cast<T>(momentum_ * static_cast<double>(running_mean[static_cast<std::size_t>(f)]) +
                               (1.0 - momentum_) * mean);
            running_var[static_cast<std::size_t>(f)] =
                static_cast<T>(momentum_ * static_cast<double>(running_var[static_cast<std::size_t>(f)]) +
                               (1.0 - momentum_) * var);
        }
        return out;
    }

    Tensor<T> backward(const Tensor<T>& grad_out) {
        if (input_.empty()) throw std::logic_error("batchnorm backward before train-mode forward");
        if (grad_out.shape() != input_.shape()) {
            throw std::invalid_argument("batchnorm grad_out shape mismatch");
        }
        const auto [n, spatial] = check_input(input_);
        const double count = static_cast<double>(n * spatial);
        Tensor<T> grad_in = Tensor<T>::zeros_like(input_);
        const T* go = grad_out.data();
        const T* xh = xhat_.data();
        T* gi = grad_in.data();
        T* gg = gamma.grad.data();
        T* gb = beta.grad.data();
        const T* gm = gamma.value.data();
#pragma omp parallel for schedule(static)
        for (std::int64_t f = 0; f < features_; ++f) {
            double sum_g = 0.0, sum_gx = 0.0;
            for_feature(input_, f, [&](std::size_t idx) {
                const double g = static_cast<double>(go[idx]);
                sum_g += g;
                sum_gx += g * static_cast<double>(xh[idx]);
            });
            gb[f] = static_cast<T>(sum_g);
            gg[f] = static_cast<T>(sum_gx);
            const double inv = 1.0 / std::sqrt(var_[static_cast<std::size_t>(f)] + eps_);
            const double scale = static_cast<double>(gm[f]) * inv;
            for_feature(input_, f, [&](std::size_t idx) {
                const double g = static_cast<double>(go[idx]);
                const double x = static_cast<double>(xh[idx]);
                gi[idx] = static_cast<T>(scale * (g - sum_g / count - x * sum_gx / count));
            });
        }
        return grad_in;
    }

    Param<T> gamma;
    Param<T> beta;
    Tensor<T> running_mean;  // non-trainable
    Tensor<T> running_var;   // non-trainable, >= 0 elementwise

    std::vector<Param<T>*> params() { return {&gamma, &beta}; }

private:
    // Iterates all indices belonging to feature f. Rank-4: channel axis 1;
    // rank-2: feature axis 1.
    template <typename Fn>
    void for_feature(const Tensor<T>& ref, std::int64_t f, Fn&& fn) const {
        if (ref.rank() == 4) {
            const std::int64_t batch = ref.extent(0), ch = ref.extent(1);
            const std::int64_t plane = ref.extent(2) * ref.extent(3);
            for (std::int64_t b = 0; b < batch; ++b) {
                const std::size_t base = static_cast<std::size_t>((b * ch + f) * plane);
                for (std::int64_t i = 0; i < plane; ++i) fn(base + static_cast<std::size_t>(i));
            }
        } else {
            const std::int64_t batch = ref.extent(0), feats = ref.extent(1);
            for (std::int64_t b = 0; b < batch; ++b) {
                fn(static_cast<std::size_t>(b * feats + f));
            }
        }
    }

    std::pair<std::int64_t, std::int64_t> check_input(const Tensor<T>& input) const {
        if (input.rank() == 4) {
            if (input.extent(1) != features_) throw std::invalid_argument("batchnorm channel mismatch");
            return {input.extent(0), input.extent(2) * input.extent(3)};
        }
        if (input.rank() == 2) {
            if (input.extent(1) != features_) throw std::invalid_argument("batchnorm feature mismatch");
            return {input.extent(0), 1};
        }
        throw std::invalid_argument("batchnorm input must be rank 2 or rank 4");
    }

    std::int64_t features_;
    double eps_, momentum_;
    Tensor<T> input_, xhat_;
    std::vector<double> mean_, var_;
};

// ---------------------------------------------------------------------------
// Inverted dropout: train mode zeroes each element with probability rate and
// scales survivors by 1/(1-rate); inference is the identity. The mask can be
// frozen so finite-difference checks see a fixed linear map.
// ---------------------------------------------------------------------------
template <typename T>
class Dropout {
public:
    Dropout(double rate, std::uint64_t seed) : rate_(rate), seed_(seed) {
        if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout rate must be in [0,1)");
    }

    double rate() const { return rate_; }
    void freeze_mask(bool frozen) { frozen_ = frozen; }

    Tensor<T> forward(Tensor<T> input, Mode mode) {
        if (mode == Mode::infer || rate_ == 0.0) {
            identity_ = true;
            return input;
        }
        identity_ = false;
        if (!frozen_ || mask_.shape() != input.shape()) {
            mask_ = Tensor<T>::zeros_like(input);
            const T scale = static_cast<T>(1.0 / (1.0 - rate_));
            T* m = mask_.data();
            const std::int64_t n = static_cast<std::int64_t>(mask_.numel());
            const std::uint64_t base = draws_;
            // index-keyed stream: identical draws regardless of threading
#pragma omp parallel for schedule(static)
            for (std::int64_t i = 0; i < n; ++i) {
                const std::uint64_t bits =
                    splitmix64(seed_ ^ (base + static_cast<std::uint64_t>(i)));
                const double u = static_cast<double>(bits >> 11) * 0x1.0p-53;
                m[i] = u < rate_ ? T{0} : scale;
            }
            draws_ += static_cast<std::uint64_t>(n);
        }
        Tensor<T> out = Tensor<T>::zeros_like(input);
        const T* in = input.data();
        const T* m = mask_.data();
        T* op = out.data();
        const std::int64_t n = static_cast<std::int64_t>(out.numel());
#pragma omp parallel for simd schedule(static)
        for (std::int64_t i = 0; i < n; ++i) op[i] = in[i] * m[i];
        return out;
    }

    Tensor<T> backward(const Tensor<T>& grad_out) {
        if (identity_) return grad_out;
        if (grad_out.shape() != mask_.shape()) throw std::invalid_argument("dropout grad shape mismatch");
        Tensor<T> out = Tensor<T>::zeros_like(grad_out);
        const T* g = grad_out.data();
        const T* m = mask_.data();
        T* op = out.data();
        const std::int64_t n = static_cast<std::int64_t>(out.numel());
#pragma omp parallel for simd schedule(static)
        for (std::int64_t i = 0; i < n; ++i) op[i] = g[i] * m[i];
        return out;
    }

    const Tensor<T>& mask() const { return mask_; }

private:
    double rate_;
    std::uint64_t seed_;
    std::uint64_t draws_ = 0;
    Tensor<T> mask_;
    bool frozen_ = false;
    bool identity_ = true;
};

// ---------------------------------------------------------------------------
// Dense (affine) layer: out = in * W + b with W [f_in, f_out].
// ---------------------------------------------------------------------------
template <typename T>
class Dense {
public:
    Dense(int in_features, int out_features, SeededRng& rng, bool l2_on_weights = true)
        : in_f_(in_features), out_f_(out_features) {
        if (in_features < 1 || out_features < 1) throw std::invalid_argument("dense features must be >= 1");
        weight.init(he_init<T>(rng, {in_f_, out_f_}), "w", l2_on_weights);
        bias.init(Tensor<T>::zeros({out_f_}), "b");
    }

    int in_features() const { return static_cast<int>(in_f_); }
    int out_features() const { return static_cast<int>(out_f_); }

    Tensor<T> forward(Tensor<T> input) {
        if (input.rank() != 2 || input.extent(1) != in_f_) {
            throw std::invalid_argument("dense input feature mismatch: " +
                                        shape_to_string(input.shape()) + " expects f_in " +
                                        std::to_string(in_f_));
        }
        input_ = std::move(input);
        const std::int64_t batch = input_.extent(0);
        Tensor<T> out = Tensor<T>::zeros({batch, out_f_});
        const T* in = input_.data();
        const T* wt = weight.value.data();
        const T* bs = bias.value.data();
        T* op = out.data();
        for (std::int64_t b = 0; b < batch; ++b) {
            T* orow = op + b * out_f_;
            for (std::int64_t j = 0; j < out_f_; ++j) orow[j] = bs[j];
            const T* irow = in + b * in_f_;
            for (std::int64_t i = 0; i < in_f_; ++i) {
                const T xv = irow[i];
                const T* wrow = wt + i * out_f_;
                for (std::int64_t j = 0; j < out_f_; ++j) orow[j] += xv * wrow[j];
            }
        }
        return out;
    }

    Tensor<T> backward(const Tensor<T>& grad_out) {
        if (input_.empty()) throw std::logic_error("dense backward before forward");
        const std::int64_t batch = input_.extent(0);
        if (grad_out.shape() != Shape{batch, out_f_}) {
            throw std::invalid_argument("dense grad_out shape mismatch");
        }
        const T* in = input_.data();
        const T* go = grad_out.data();
        const T* wt = weight.value.data();

        weight.grad.fill(T{0});
        T* gw = weight.grad.data();
        for (std::int64_t b = 0; b < batch; ++b) {
            const T* irow = in + b * in_f_;
            const T* grow = go + b * out_f_;
            for (std::int64_t i = 0; i < in_f_; ++i) {
                const T xv = irow[i];
                T* gwrow = gw + i * out_f_;
                for (std::int64_t j = 0; j < out_f_; ++j) gwrow[j] += xv * grow[j];
            }
        }

        T* gb = bias.grad.data();
        for (std::int64_t j = 0; j < out_f_; ++j) {
            double acc = 0.0;
            for (std::int64_t b = 0; b < batch; ++b) acc += static_cast<double>(go[b * out_f_ + j]);
            gb[j] = static_cast<T>(acc);
        }

        Tensor<T> grad_in = Tensor<T>::zeros_like(input_);
        T* gi = grad_in.data();
        for (std::int64_t b = 0; b < batch; ++b) {
            const T* grow = go + b * out_f_;
            T* girow = gi + b * in_f_;
            for (std::int64_t i = 0; i < in_f_; ++i) {
                const T* wrow = wt + i * out_f_;
                T acc{0};
                for (std::int64_t j = 0; j < out_f_; ++j) acc += wrow[j] * grow[j];
                girow[i] = acc;
            }
        }
        return grad_in;
    }

    Param<T> weight;
    Param<T> bias;

    std::vector<Param<T>*> params() { return {&weight, &bias}; }

private:
    std::int64_t in_f_, out_f_;
    Tensor<T> input_;
};

// ---------------------------------------------------------------------------
// ReLU. Gradient is 0 at exactly 0.
// ---------------------------------------------------------------------------
template <typename T>
class ReLU {
public:
    Tensor<T> forward(Tensor<T> input) {
        input_ = std::move(input);
        Tensor<T> out = Tensor<T>::zeros_like(input_);
        const T* in = input_.data();
        T* op = out.data();
        const std::int64_t n = static_cast<std::int64_t>(out.numel());
#pragma omp parallel for simd schedule(static)
        for (std::int64_t i = 0; i < n; ++i) op[i] = in[i] > T{0} ? in[i] : T{0};
        return out;
    }

    Tensor<T> backward(const Tensor<T>& grad_out) {
        if (input_.empty()) throw std::logic_error("relu backward before forward");
        if (grad_out.shape() != input_.shape()) throw std::invalid_argument("relu grad shape mismatch");
        Tensor<T> out = Tensor<T>::zeros_like(grad_out);
        const T* g = grad_out.data();
        const T* in = input_.data();
        T* op = out.data();
        const std::int64_t n = static_cast<std::int64_t>(out.numel());
#pragma omp parallel for simd schedule(static)
        for (std::int64_t i = 0; i < n; ++i) op[i] = in[i] > T{0} ? g[i] : T{0};
        return out;
    }

private:
    Tensor<T> input_;
};

// ---------------------------------------------------------------------------
// Softmax and categorical cross-entropy (max-subtracted, internals in double).
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
    if (logits.rank() != 2) throw std::invalid_argument("softmax expects rank-2 logits");
    const std::int64_t batch = logits.extent(0), n = logits.extent(1);
    Tensor<T> out = Tensor<T>::zeros_like(logits);
    const T* in = logits.data();
    T* op = out.data();
    for (std::int64_t b = 0; b < batch; ++b) {
        const T* row = in + b * n;
        double mx = static_cast<double>(row[0]);
        for (std::int64_t j = 1; j < n; ++j) mx = std::max(mx, static_cast<double>(row[j]));
        double sum = 0.0;
        for (std::int64_t j = 0; j < n; ++j) sum += std::exp(static_cast<double>(row[j]) - mx);
        T* orow = op + b * n;
        for (std::int64_t j = 0; j < n; ++j) {
            orow[j] = static_cast<T>(std::exp(static_cast<double>(row[j]) - mx) / sum);
        }
    }
    return out;
}

template <typename T>
struct LossResult {
    double loss = 0.0;          // mean categorical cross-entropy over the batch
    Tensor<T> grad_logits;      // (softmax - label) / batch
};

template <typename T>
void check_one_hot(const Tensor<T>& labels) {
    if (labels.rank() != 2) throw std::invalid_argument("labels must be rank 2");
    const std::int64_t batch = labels.extent(0), n = labels.extent(1);
    const T* p = labels.data();
    for (std::int64_t b = 0; b < batch; ++b) {
        int ones = 0;
        for (std::int64_t j = 0; j < n; ++j) {
            const T v = p[b * n + j];
            if (v == T{1}) {
                ++ones;
            } else if (v != T{0}) {
                throw std::invalid_argument("labels must be one-hot (0/1 entries)");
            }
        }
        if (ones != 1) throw std::invalid_argument("labels must have exactly one 1 per row");
    }
}

template <typename T>
LossResult<T> softmax_crossentropy(const Tensor<T>& logits, const Tensor<T>& labels) {
    if (logits.shape() != labels.shape()) {
        throw std::invalid_argument("logits/labels shape mismatch");
    }
    check_one_hot(labels);
    const std::int64_t batch = logits.extent(0), n = logits.extent(1);
    LossResult<T> result;
    result.grad_logits = Tensor<T>::zeros_like(logits);
    const T* in = logits.data();
    const T* lb = labels.data();
    T* gr = result.grad_logits.data();
    double total = 0.0;
    for (std::int64_t b = 0; b < batch; ++b) {
        const T* row = in + b * n;
        double mx = static_cast<double>(row[0]);
        for (std::int64_t j = 1; j < n; ++j) mx = std::max(mx, static_cast<double>(row[j]));
        double sum = 0.0;
        for (std::int64_t j = 0; j < n; ++j) sum += std::exp(static_cast<double>(row[j]) - mx);
        const double log_sum = std::log(sum);
        for (std::int64_t j = 0; j < n; ++j) {
            const double logp = static_cast<double>(row[j]) - mx - log_sum;
            const double p = std::exp(logp);
            const double y = static_cast<double>(lb[b * n + j]);
            if (y == 1.0) total -= logp;
            gr[b * n + j] = static_cast<T>((p - y) / static_cast<double>(batch));
        }
    }
    result.loss = total / static_cast<double>(batch);
    return result;
}

}  // namespace xmid
