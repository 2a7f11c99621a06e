// Dense row-major tensor with shaped storage, elementwise math and reductions.
// Element type is float for training and double for gradient checking;
// reductions always accumulate in double.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace xmid {

using Shape = std::vector<std::int64_t>;

inline std::string shape_to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

inline std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::int64_t e : shape) {
        if (e < 1) {
            throw std::invalid_argument("tensor extent must be >= 1, got " +
                                        shape_to_string(shape));
        }
        n *= static_cast<std::size_t>(e);
    }
    return n;
}

template <typename T>
class Tensor {
public:
    Tensor() = default;

    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (shape_numel(shape_) != data_.size()) {
            throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                        " does not match shape " + shape_to_string(shape_));
        }
    }

    static Tensor full(const Shape& shape, T value) {
        if (!std::isfinite(static_cast<double>(value))) {
            throw std::invalid_argument("tensor fill value must be finite");
        }
        return Tensor(shape, std::vector<T>(shape_numel(shape), value));
    }

    static Tensor zeros(const Shape& shape) { return full(shape, T{0}); }

    static Tensor zeros_like(const Tensor& other) { return zeros(other.shape()); }

    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    std::int64_t extent(int axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& values() { return data_; }
    const std::vector<T>& values() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    // Row-major accessors for the common ranks.
    T& at(std::int64_t i, std::int64_t j) {
        return data_[static_cast<std::size_t>(i * shape_[1] + j)];
    }
    const T& at(std::int64_t i, std::int64_t j) const {
        return data_[static_cast<std::size_t>(i * shape_[1] + j)];
    }
    T& at(std::int64_t i, std::int64_t j, std::int64_t k, std::int64_t l) {
        return data_[static_cast<std::size_t>(((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l)];
    }
    const T& at(std::int64_t i, std::int64_t j, std::int64_t k, std::int64_t l) const {
        return data_[static_cast<std::size_t>(((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l)];
    }

    void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

    // Same storage, new shape; element count must match.
    Tensor reshaped(const Shape& shape) const {
        if (shape_numel(shape) != data_.size()) {
            throw std::invalid_argument("reshape " + shape_to_string(shape_) + " -> " +
                                        shape_to_string(shape) + " changes element count");
        }
        return Tensor(shape, data_);
    }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.size());
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
        return Tensor<U>(shape_, std::move(out));
    }

    bool all_finite() const {
        for (const T& v : data_) {
            if (!std::isfinite(static_cast<double>(v))) return false;
        }
        return true;
    }

private:
    Shape shape_;
    std::vector<T> data_;
};

namespace detail {
template <typename T>
inline void require_finite(const Tensor<T>& t, const char* op) {
    if (!t.all_finite()) {
        throw std::runtime_error(std::string(op) + " produced a non-finite value");
    }
}
}  // namespace detail

enum class Elementwise { add, sub, mul };

template <typename T>
Tensor<T> elementwise(Elementwise op, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument("elementwise shape mismatch: " + shape_to_string(a.shape()) +
                                    " vs " + shape_to_string(b.shape()));
    }
    Tensor<T> out = Tensor<T>::zeros_like(a);
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    const std::size_t n = a.numel();
    switch (op) {
        case Elementwise::add:
            for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
            break;
        case Elementwise::sub:
            for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
            break;
        case Elementwise::mul:
            for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
            break;
    }
    detail::require_finite(out, "elementwise");
    return out;
}

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) {
    return elementwise(Elementwise::add, a, b);
}
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) {
    return elementwise(Elementwise::sub, a, b);
}
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) {
    return elementwise(Elementwise::mul, a, b);
}

enum class Reduce { sum, mean, max, min };

// Reductions accumulate in double in increasing row-major index order (axis
// reductions walk the reduced axis in increasing index per output element).
// A full reduction returns a shape-[1] tensor.
template <typename T>
Tensor<T> reduce(Reduce op, const Tensor<T>& t, std::optional<int> axis = std::nullopt) {
    if (t.empty()) throw std::invalid_argument("reduce of empty tensor");
    const T* p = t.data();

    auto combine_init = [&](Reduce r) -> double {
        switch (r) {
            case Reduce::sum:
            case Reduce::mean: return 0.0;
            case Reduce::max: return -std::numeric_limits<double>::infinity();
            case Reduce::min: return std::numeric_limits<double>::infinity();
        }
        return 0.0;
    };
    auto combine = [&](Reduce r, double acc, double v) -> double {
        switch (r) {
            case Reduce::sum:
            case Reduce::mean: return acc + v;
            case Reduce::max: return acc > v ? acc : v;
            case Reduce::min: return acc < v ? acc : v;
        }
        return acc;
    };

    if (!axis.has_value()) {
        double acc = combine_init(op);
        for (std::size_t i = 0; i < t.numel(); ++i) acc = combine(op, acc, static_cast<double>(p[i]));
        if (op == Reduce::mean) acc /= static_cast<double>(t.numel());
        Tensor<T> out = Tensor<T>::full({1}, T{0});
        out[0] = static_cast<T>(acc);
        detail::require_finite(out, "reduce");
        return out;
    }

    const int ax = *axis;
    if (ax < 0 || ax >= t.rank()) {
        throw std::invalid_argument("reduce axis " + std::to_string(ax) + " out of range for rank " +
                                    std::to_string(t.rank()));
    }
    const Shape& shape = t.shape();
    std::size_t outer = 1, inner = 1;
    for (int i = 0; i < ax; ++i) outer *= static_cast<std::size_t>(shape[static_cast<std::size_t>(i)]);
    for (int i = ax + 1; i < t.rank(); ++i) inner *= static_cast<std::size_t>(shape[static_cast<std::size_t>(i)]);
    const std::size_t along = static_cast<std::size_t>(shape[static_cast<std::size_t>(ax)]);

    Shape out_shape;
    for (int i = 0; i < t.rank(); ++i) {
        if (i != ax) out_shape.push_back(shape[static_cast<std::size_t>(i)]);
    }
    if (out_shape.empty()) out_shape.push_back(1);

    Tensor<T> out = Tensor<T>::zeros(out_shape);
    T* po = out.data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            double acc = combine_init(op);
            for (std::size_t a = 0; a < along; ++a) {
                acc = combine(op, acc, static_cast<double>(p[(o * along + a) * inner + in]));
            }
            if (op == Reduce::mean) acc /= static_cast<double>(along);
            po[o * inner + in] = static_cast<T>(acc);
        }
    }
    detail::require_finite(out, "reduce");
    return out;
}

template <typename T>
T reduce_scalar(Reduce op, const Tensor<T>& t) {
    return reduce(op, t)[0];
}

}  // namespace xmid
