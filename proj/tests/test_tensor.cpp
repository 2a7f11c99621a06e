#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "xmid/rng.hpp"
#include "xmid/tensor.hpp"

using namespace xmid;

namespace {

// Independent scalar-loop oracles with the same accumulation order as the
// library contract (double accumulator, increasing row-major index).
template <typename T>
std::vector<T> oracle_elementwise(Elementwise op, const std::vector<T>& a, const std::vector<T>& b) {
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        switch (op) {
            case Elementwise::add: out[i] = a[i] + b[i]; break;
            case Elementwise::sub: out[i] = a[i] - b[i]; break;
            case Elementwise::mul: out[i] = a[i] * b[i]; break;
        }
    }
    return out;
}

double oracle_full_reduce(Reduce op, const std::vector<float>& v) {
    double acc;
    switch (op) {
        case Reduce::sum:
        case Reduce::mean: acc = 0.0; break;
        case Reduce::max: acc = -std::numeric_limits<double>::infinity(); break;
        case Reduce::min: acc = std::numeric_limits<double>::infinity(); break;
    }
    for (float x : v) {
        switch (op) {
            case Reduce::sum:
            case Reduce::mean: acc += x; break;
            case Reduce::max: acc = std::max(acc, static_cast<double>(x)); break;
            case Reduce::min: acc = std::min(acc, static_cast<double>(x)); break;
        }
    }
    if (op == Reduce::mean) acc /= static_cast<double>(v.size());
    return acc;
}

}  // namespace

TEST_CASE("tensor_full fills every element") {
    const auto t = Tensor<float>::full({2, 2}, 0.0f);
    for (std::size_t i = 0; i < t.numel(); ++i) CHECK(t[i] == 0.0f);

    const auto s = Tensor<float>::full({1}, 7.5f);
    CHECK(s.numel() == 1);
    CHECK(s[0] == 7.5f);

    const auto r = Tensor<float>::full({3, 1, 2}, -1.0f);
    CHECK(r.numel() == 6);
    for (std::size_t i = 0; i < r.numel(); ++i) CHECK(r[i] == -1.0f);
}

TEST_CASE("tensor_full rejects zero and negative extents") {
    CHECK_THROWS_AS(Tensor<float>::full({0}, 1.0f), std::invalid_argument);
    CHECK_THROWS_AS(Tensor<float>::full({2, -1}, 1.0f), std::invalid_argument);
    CHECK_THROWS_AS(Tensor<float>::full({2}, std::numeric_limits<float>::infinity()),
                    std::invalid_argument);
}

TEST_CASE("tensor data length must match shape") {
    CHECK_THROWS_AS(Tensor<float>({2, 2}, {1.0f, 2.0f, 3.0f}), std::invalid_argument);
}

TEST_CASE("elementwise basics") {
    const Tensor<float> a({2}, {1.0f, 2.0f});
    const Tensor<float> b({2}, {3.0f, 4.0f});
    const auto sum = elementwise(Elementwise::add, a, b);
    CHECK(sum[0] == 4.0f);
    CHECK(sum[1] == 6.0f);

    const auto self = elementwise(Elementwise::sub, a, a);
    CHECK(self[0] == 0.0f);
    CHECK(self[1] == 0.0f);

    const Tensor<float> c({3}, {1.0f, 2.0f, 3.0f});
    CHECK_THROWS_AS(elementwise(Elementwise::add, a, c), std::invalid_argument);
}

TEST_CASE("elementwise matches the scalar-loop oracle exactly") {
    SeededRng rng(11);
    const auto a = rng_normal<float>(rng, {4, 4}, 0.0f, 2.0f);
    const auto b = rng_normal<float>(rng, {4, 4}, 1.0f, 3.0f);
    for (auto op : {Elementwise::add, Elementwise::sub, Elementwise::mul}) {
        const auto got = elementwise(op, a, b);
        const auto want = oracle_elementwise(op, a.values(), b.values());
        for (std::size_t i = 0; i < want.size(); ++i) CHECK(got[i] == want[i]);
    }
}

TEST_CASE("elementwise rejects non-finite results") {
    const Tensor<float> big({1}, {3e38f});
    CHECK_THROWS_AS(elementwise(Elementwise::add, big, big), std::runtime_error);
    CHECK_THROWS_AS(elementwise(Elementwise::mul, big, big), std::runtime_error);
}

TEST_CASE("reduce basics") {
    const Tensor<float> t({2, 2}, {5.0f, 7.0f, 9.0f, 6.0f});
    CHECK(reduce_scalar(Reduce::min, t) == 5.0f);

    const Tensor<float> v({4}, {1.0f, 2.0f, 3.0f, 4.0f});
    CHECK(reduce_scalar(Reduce::mean, v) == doctest::Approx(2.5).epsilon(0));

    const Tensor<float> m({2, 2}, {1.0f, 2.0f, 3.0f, 4.0f});
    const auto col_sum = reduce(Reduce::sum, m, 0);
    CHECK(col_sum.shape() == Shape{2});
    CHECK(col_sum[0] == 4.0f);
    CHECK(col_sum[1] == 6.0f);
}

TEST_CASE("reduce axis bounds and full-reduction shape") {
    const Tensor<float> m({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK_THROWS_AS(reduce(Reduce::sum, m, 2), std::invalid_argument);
    CHECK_THROWS_AS(reduce(Reduce::sum, m, -1), std::invalid_argument);
    CHECK(reduce(Reduce::max, m).shape() == Shape{1});
}

TEST_CASE("reduce matches the scalar-loop oracle exactly on larger tensors") {
    SeededRng rng(23);
    const auto t = rng_normal<float>(rng, {25, 40, 10}, 0.5f, 1.5f);  // 1e4 elements
    for (auto op : {Reduce::sum, Reduce::mean, Reduce::max, Reduce::min}) {
        CHECK(static_cast<double>(reduce_scalar(op, t)) ==
              doctest::Approx(static_cast<float>(oracle_full_reduce(op, t.values()))).epsilon(0));
    }

    // axis reduction against a fresh loop of the documented order
    const auto axis1 = reduce(Reduce::sum, t, 1);
    CHECK(axis1.shape() == Shape{25, 10});
    for (std::int64_t o = 0; o < 25; ++o) {
        for (std::int64_t i = 0; i < 10; ++i) {
            double acc = 0.0;
            for (std::int64_t a = 0; a < 40; ++a) {
                acc += t[static_cast<std::size_t>((o * 40 + a) * 10 + i)];
            }
            CHECK(axis1.at(o, i) == static_cast<float>(acc));
        }
    }
}

TEST_CASE("tensor_full round-trips through reduce(min)") {
    const auto t = Tensor<float>::full({7, 9}, 3.25f);
    CHECK(reduce_scalar(Reduce::min, t) == 3.25f);
    CHECK(reduce_scalar(Reduce::max, t) == 3.25f);
}

TEST_CASE("rng_normal determinism: equal seeds give bitwise-equal tensors") {
    SeededRng a(42), b(42);
    const auto ta = rng_normal<float>(a, {32, 17}, 0.0f, 1.0f);
    const auto tb = rng_normal<float>(b, {32, 17}, 0.0f, 1.0f);
    CHECK(ta.values() == tb.values());
}

TEST_CASE("rng_normal with stddev 0 fills the mean; negative stddev throws") {
    SeededRng rng(1);
    const auto t = rng_normal<float>(rng, {5, 5}, 2.5f, 0.0f);
    for (std::size_t i = 0; i < t.numel(); ++i) CHECK(t[i] == 2.5f);
    CHECK_THROWS_AS(rng_normal<float>(rng, {2}, 0.0f, -1.0f), std::invalid_argument);
}

TEST_CASE("rng_normal sample statistics match the law of large numbers") {
    SeededRng rng(7);
    const auto t = rng_normal<double>(rng, {100000}, 0.0, 1.0);
    double sum = 0.0;
    for (std::size_t i = 0; i < t.numel(); ++i) sum += t[i];
    const double mean = sum / static_cast<double>(t.numel());
    CHECK(std::abs(mean) < 0.02);
    double sq = 0.0;
    for (std::size_t i = 0; i < t.numel(); ++i) sq += (t[i] - mean) * (t[i] - mean);
    const double stddev = std::sqrt(sq / static_cast<double>(t.numel() - 1));
    CHECK(stddev == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("reshape preserves data and validates element count") {
    const Tensor<float> t({2, 3}, {1, 2, 3, 4, 5, 6});
    const auto r = t.reshaped({3, 2});
    CHECK(r.values() == t.values());
    CHECK_THROWS_AS(t.reshaped({4, 2}), std::invalid_argument);
}

TEST_CASE("derived rng streams differ from the base stream") {
    SeededRng base(99);
    SeededRng derived = base.derive({1});
    CHECK(base.seed() != derived.seed());
    SeededRng derived_again = SeededRng(99).derive({1});
    CHECK(derived.seed() == derived_again.seed());
}
