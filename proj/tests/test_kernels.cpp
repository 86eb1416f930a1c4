#include <catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include <omp.h>

#include "latenthop/kernels.hpp"

namespace kp = latenthop::kernels::parallel;
namespace kr = latenthop::kernels::reference;
using latenthop::kernels::AttentionShape;

namespace {

std::vector<float> randn(size_t n, unsigned seed, float scale = 1.0f) {
    std::mt19937 rng(seed);
    std::normal_distribution<float> d(0.0f, scale);
    std::vector<float> v(n);
    for (auto& x : v) x = d(rng);
    return v;
}

void require_close(const std::vector<float>& a, const std::vector<float>& b, double tol) {
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) REQUIRE(std::abs(a[i] - b[i]) <= tol * (1.0 + std::abs(b[i])));
}

}  // namespace

TEST_CASE("linear: parallel matches reference", "[kernels]") {
    for (auto [rows, in, out] : {std::tuple{1, 7, 5}, {3, 64, 33}, {17, 128, 512}, {40, 257, 129}}) {
        const auto x = randn(static_cast<size_t>(rows * in), 1);
        const auto w = randn(static_cast<size_t>(out * in), 2);
        const auto b = randn(static_cast<size_t>(out), 3);
        std::vector<float> y1(static_cast<size_t>(rows * out)), y2(y1.size()), y3(y1.size()), y4(y1.size());
        kp::linear(x, w, b, y1, rows, in, out);
        kr::linear(x, w, b, y2, rows, in, out);
        require_close(y1, y2, 1e-5);
        kp::linear(x, w, {}, y3, rows, in, out);
        kr::linear(x, w, {}, y4, rows, in, out);
        require_close(y3, y4, 1e-5);
    }
}

TEST_CASE("linear: result does not depend on thread count or row count", "[kernels]") {
    const int rows = 64, in = 256, out = 300;
    const auto x = randn(static_cast<size_t>(rows * in), 4);
    const auto w = randn(static_cast<size_t>(out * in), 5);
    std::vector<float> one(static_cast<size_t>(rows * out)), many(one.size());
    const int saved = omp_get_max_threads();
    omp_set_num_threads(1);
    kp::linear(x, w, {}, one, rows, in, out);
    omp_set_num_threads(std::max(4, saved));
    kp::linear(x, w, {}, many, rows, in, out);
    omp_set_num_threads(saved);
    REQUIRE(one == many);

    std::vector<float> row(static_cast<size_t>(out));
    kp::linear(std::span<const float>(x).subspan(static_cast<size_t>(5 * in), static_cast<size_t>(in)), w, {}, row, 1,
               in, out);
    REQUIRE(std::equal(row.begin(), row.end(), one.begin() + 5 * out));
}

TEST_CASE("norms and activations match reference", "[kernels]") {
    const int rows = 9, dim = 96;
    const auto x = randn(static_cast<size_t>(rows * dim), 6, 3.0f);
    const auto g = randn(static_cast<size_t>(dim), 7);
    const auto b = randn(static_cast<size_t>(dim), 8);
    std::vector<float> y1(x.size()), y2(x.size());
    kp::layer_norm(x, g, b, 1e-5f, y1, rows, dim);
    kr::layer_norm(x, g, b, 1e-5f, y2, rows, dim);
    require_close(y1, y2, 1e-5);
    kp::rms_norm(x, g, 1e-5f, y1, rows, dim);
    kr::rms_norm(x, g, 1e-5f, y2, rows, dim);
    require_close(y1, y2, 1e-5);

    auto a1 = x, a2 = x;
    kp::gelu_tanh(a1);
    kr::gelu_tanh(a2);
    require_close(a1, a2, 1e-6);
    auto s1 = x, s2 = x;
    kp::silu_mul(s1, x);
    kr::silu_mul(s2, x);
    require_close(s1, s2, 1e-6);
}

TEST_CASE("gelu and layer norm agree with closed forms", "[kernels]") {
    std::vector<float> v{-3.0f, -1.0f, 0.0f, 0.5f, 2.0f};
    auto expect = v;
    for (auto& z : expect) {
        const double t = std::tanh(std::sqrt(2.0 / M_PI) * (z + 0.044715 * z * z * z));
        z = static_cast<float>(0.5 * z * (1.0 + t));
    }
    kp::gelu_tanh(v);
    require_close(v, expect, 1e-6);

    const std::vector<float> x{1.0f, 2.0f, 3.0f, 4.0f}, g{1, 1, 1, 1}, b{0, 0, 0, 0};
    std::vector<float> y(4);
    kp::layer_norm(x, g, b, 0.0f, y, 1, 4);
    const double sd = std::sqrt(1.25);
    require_close(y, {static_cast<float>(-1.5 / sd), static_cast<float>(-0.5 / sd), static_cast<float>(0.5 / sd),
                      static_cast<float>(1.5 / sd)},
                  1e-6);
}

TEST_CASE("rope matches reference and preserves norms", "[kernels]") {
    const int rows = 5, heads = 3, hd = 8;
    auto x1 = randn(static_cast<size_t>(rows * heads * hd), 9);
    auto x2 = x1;
    const auto orig = x1;
    kp::rope(x1, rows, heads, hd, 11, 10000.0f);
    kr::rope(x2, rows, heads, hd, 11, 10000.0f);
    require_close(x1, x2, 1e-6);
    for (int r = 0; r < rows * heads; ++r) {
        double n0 = 0, n1 = 0;
        for (int i = 0; i < hd; ++i) {
            n0 += orig[static_cast<size_t>(r * hd + i)] * orig[static_cast<size_t>(r * hd + i)];
            n1 += x1[static_cast<size_t>(r * hd + i)] * x1[static_cast<size_t>(r * hd + i)];
        }
        REQUIRE(std::abs(n0 - n1) < 1e-4 * n0);
    }
    auto z = orig;
    kp::rope(z, rows, heads, hd, 0, 10000.0f);
    // Position 0 is the identity rotation.
    REQUIRE(std::equal(z.begin(), z.begin() + heads * hd, orig.begin()));
}

TEST_CASE("masked softmax against a renormalized oracle", "[kernels]") {
    std::mt19937 rng(10);
    for (int trial = 0; trial < 200; ++trial) {
        const size_t n = 1 + rng() % 40;
        const auto s = randn(n, 100 + trial, 4.0f);
        std::vector<uint8_t> blocked(n);
        for (auto& b : blocked) b = (rng() % 3 == 0);
        std::vector<float> out(n), ref(n);
        kp::masked_softmax(s, blocked, out);
        kr::masked_softmax(s, blocked, ref);
        double mx = -INFINITY, z = 0;
        for (size_t i = 0; i < n; ++i)
            if (!blocked[i]) mx = std::max(mx, static_cast<double>(s[i]));
        for (size_t i = 0; i < n; ++i)
            if (!blocked[i]) z += std::exp(s[i] - mx);
        for (size_t i = 0; i < n; ++i) {
            if (blocked[i]) {
                REQUIRE(out[i] == 0.0f);
                REQUIRE(ref[i] == 0.0f);
            } else {
                const double want = std::exp(s[i] - mx) / z;
                REQUIRE(std::abs(out[i] - want) <= 1e-6);
                REQUIRE(std::abs(ref[i] - want) <= 1e-6);
            }
        }
    }
}

TEST_CASE("masked softmax with every entry blocked yields zeros", "[kernels]") {
    const std::vector<float> s{1.0f, 2.0f, 3.0f};
    const std::vector<uint8_t> all{1, 1, 1};
    std::vector<float> out(3, 9.0f);
    kp::masked_softmax(s, all, out);
    REQUIRE(out == std::vector<float>{0, 0, 0});
    kr::masked_softmax(s, all, out);
    REQUIRE(out == std::vector<float>{0, 0, 0});
}

TEST_CASE("attention: parallel matches reference with cache offset and grouped heads", "[kernels]") {
    AttentionShape sh{4, 10, 6, 4, 2, 8};
    const auto q = randn(static_cast<size_t>(sh.n_new * sh.n_heads * sh.head_dim), 11);
    const auto k = randn(static_cast<size_t>(sh.n_total * sh.n_kv_heads * sh.head_dim), 12);
    const auto v = randn(static_cast<size_t>(sh.n_total * sh.n_kv_heads * sh.head_dim), 13);
    std::vector<uint8_t> blocked(static_cast<size_t>(sh.n_heads * sh.n_new * sh.n_total));
    blocked[static_cast<size_t>(1 * sh.n_new * sh.n_total + 2 * sh.n_total + 3)] = 1;
    std::vector<float> w1(blocked.size()), w2(blocked.size());
    std::vector<float> o1(q.size()), o2(q.size());
    kp::attention(q, k, v, sh, blocked, w1, o1);
    kr::attention(q, k, v, sh, blocked, w2, o2);
    require_close(o1, o2, 1e-5);
    require_close(w1, w2, 1e-6);
    REQUIRE(w1[static_cast<size_t>(1 * sh.n_new * sh.n_total + 2 * sh.n_total + 3)] == 0.0f);
    for (int h = 0; h < sh.n_heads; ++h) {
        for (int r = 0; r < sh.n_new; ++r) {
            const float* row = w1.data() + (h * sh.n_new + r) * sh.n_total;
            double sum = 0;
            for (int j = 0; j < sh.n_total; ++j) {
                if (j > sh.q_offset + r) REQUIRE(row[j] == 0.0f);
                sum += row[j];
            }
            REQUIRE(std::abs(sum - 1.0) < 1e-5);
        }
    }
}
