#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "uniark/tensor.hpp"

using namespace uniark;

namespace {

Tensor vec(std::vector<double> v, bool grad = false) {
    const std::size_t n = v.size();
    return Tensor::from_values({n}, std::move(v), grad);
}

}  // namespace

TEST_CASE("gelu fixed points and asymptote") {
    CHECK(gelu(vec({0.0})).value() == 0.0);
    CHECK(std::abs(gelu(vec({10.0})).value() - 10.0) < 1e-9);

    // Exact erf-based form against an independent normal-CDF evaluation.
    const double phi1 = 0.5 * (1.0 + std::erf(1.0 / std::sqrt(2.0)));
    CHECK(gelu(vec({1.0})).value() == Catch::Approx(1.0 * phi1).margin(1e-10));
    CHECK(gelu(vec({1.0})).value() == Catch::Approx(0.8413447460685429).margin(1e-10));
}

TEST_CASE("softmax basics") {
    auto s = softmax(vec({0.0, 0.0}));
    CHECK(s.at(0) == Catch::Approx(0.5).margin(1e-15));
    CHECK(s.at(1) == Catch::Approx(0.5).margin(1e-15));

    auto t = softmax(vec({std::log(1.0), std::log(2.0), std::log(3.0)}));
    CHECK(t.at(0) == Catch::Approx(1.0 / 6.0).margin(1e-12));
    CHECK(t.at(1) == Catch::Approx(2.0 / 6.0).margin(1e-12));
    CHECK(t.at(2) == Catch::Approx(3.0 / 6.0).margin(1e-12));
}

TEST_CASE("softmax shift invariance") {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> z(8);
        for (auto& v : z) v = rng.uniform(-4.0, 4.0);
        const double c = rng.uniform(-10.0, 10.0);
        std::vector<double> shifted = z;
        for (auto& v : shifted) v += c;
        auto a = softmax(vec(z));
        auto b = softmax(vec(shifted));
        for (std::size_t i = 0; i < z.size(); ++i) {
            CHECK(a.at(i) == Catch::Approx(b.at(i)).margin(1e-12));
        }
    }
}

TEST_CASE("softmax rows sum to one") {
    Rng rng(11);
    std::vector<double> z(6 * 40);
    for (auto& v : z) v = rng.uniform(-30.0, 30.0);
    auto s = softmax(Tensor::from_values({6, 40}, z));
    for (std::size_t r = 0; r < 6; ++r) {
        double total = 0.0;
        for (std::size_t c = 0; c < 40; ++c) total += s.at(r, c);
        CHECK(std::abs(total - 1.0) < 1e-12);
    }
}

TEST_CASE("softmax rejects NaN input") {
    CHECK_THROWS_AS(softmax(vec({0.0, std::nan("")})), std::invalid_argument);
    CHECK_THROWS_AS(log_softmax(vec({std::nan(""), 1.0})), std::invalid_argument);
}

TEST_CASE("entropy_bits closed forms") {
    std::vector<double> uniform8(8, 1.0 / 8.0);
    CHECK(entropy_bits(vec(uniform8)).value() == Catch::Approx(3.0).margin(1e-12));

    CHECK(entropy_bits(vec({0.0, 1.0, 0.0})).value() == 0.0);

    CHECK(entropy_bits(vec({0.5, 0.25, 0.25})).value() == Catch::Approx(1.5).margin(1e-12));

    // index_set restriction
    auto p = vec({0.5, 0.25, 0.25, 0.125});
    CHECK(entropy_bits(p, {0}).value() == Catch::Approx(0.5).margin(1e-12));

    CHECK_THROWS_AS(entropy_bits(vec({-0.1, 1.1})), std::invalid_argument);
}

TEST_CASE("backward over softmax sums to zero gradient") {
    Tensor x = vec({0.3, -0.7, 1.2, 0.05}, true);
    Tensor loss = sum(softmax(x));
    backward(loss);
    for (double g : x.grad()) CHECK(std::abs(g) < 1e-12);
}

TEST_CASE("entropy of softmax has zero gradient at uniform logits") {
    Tensor logits = vec({0.4, 0.4, 0.4, 0.4, 0.4}, true);
    Tensor h = entropy_bits(softmax(logits));
    backward(h);
    for (double g : logits.grad()) CHECK(std::abs(g) < 1e-12);
}

TEST_CASE("backward requires scalar loss") {
    Tensor x = vec({1.0, 2.0}, true);
    CHECK_THROWS_AS(backward(scale(x, 2.0)), std::invalid_argument);
}

TEST_CASE("gradients accumulate additively and zero explicitly") {
    Tensor x = vec({2.0}, true);
    Tensor l1 = scale(x, 3.0);
    backward(l1);
    CHECK(x.grad()[0] == Catch::Approx(3.0));
    Tensor l2 = scale(x, 4.0);
    backward(l2);
    CHECK(x.grad()[0] == Catch::Approx(7.0));  // 3 + 4
    x.zero_grad();
    Tensor l3 = scale(x, 5.0);
    backward(l3);
    CHECK(x.grad()[0] == Catch::Approx(5.0));
}

TEST_CASE("matmul chain gradient matches finite differences") {
    Rng rng(123);
    std::vector<double> av(3 * 4), bv(4 * 3);
    for (auto& v : av) v = rng.uniform(-1.0, 1.0);
    for (auto& v : bv) v = rng.uniform(-1.0, 1.0);
    Tensor a = Tensor::from_values({3, 4}, av, true);
    Tensor b = Tensor::from_values({4, 3}, bv, true);

    auto f = [&]() {
        Tensor c = matmul(a, b);
        Tensor d = gelu(c);
        Tensor flat = reshape(d, {9});
        return sum(mul(flat, flat));
    };
    auto report = finite_difference_check(f, {a, b}, 1e-5, 1e-4, 64);
    CAPTURE(report.max_relative_error);
    CHECK(report.pass);
    CHECK(report.coordinates_checked >= 24);  // all coordinates of a and b
}

TEST_CASE("finite differences on a linear function are exact") {
    Tensor w = vec({1.5, -2.0, 0.25}, false);
    Tensor x = vec({0.1, 0.2, 0.3}, true);
    auto f = [&]() { return sum(mul(w, x)); };
    auto report = finite_difference_check(f, {x}, 1e-5, 1e-6);
    CHECK(report.max_absolute_error < 1e-8);
}

TEST_CASE("finite differences on a constant function report zero gradients") {
    Tensor x = vec({0.5, -0.5}, true);
    Tensor c = vec({3.0});
    auto f = [&]() { return sum(c); };
    auto report = finite_difference_check(f, {x}, 1e-5, 1e-6);
    CHECK(report.max_absolute_error == 0.0);
    CHECK(report.max_relative_error == 0.0);
}

// Gradient-check obligation for each primitive.
TEST_CASE("primitive gradients") {
    Rng rng(42);
    auto rand_tensor = [&](std::vector<std::size_t> shape) {
        std::size_t n = 1;
        for (auto d : shape) n *= d;
        std::vector<double> v(n);
        for (auto& x : v) x = rng.uniform(-1.0, 1.0);
        return Tensor::from_values(shape, std::move(v), true);
    };

    SECTION("add / sub / mul / scale / add_row") {
        Tensor a = rand_tensor({3, 5});
        Tensor b = rand_tensor({3, 5});
        Tensor r = rand_tensor({5});
        auto f = [&]() {
            Tensor t = add_row(add(mul(a, b), scale(sub(a, b), 0.7)), r);
            Tensor flat = reshape(t, {15});
            return sum(mul(flat, flat));
        };
        CHECK(finite_difference_check(f, {a, b, r}, 1e-5, 1e-4).pass);
    }

    SECTION("matmul / matmul_nt / slice / concat") {
        Tensor a = rand_tensor({2, 6});
        Tensor b = rand_tensor({6, 4});
        Tensor c = rand_tensor({3, 4});
        auto f = [&]() {
            Tensor m = matmul(a, b);            // 2x4
            Tensor n = matmul_nt(m, c);         // 2x3
            Tensor s = slice_cols(n, 1, 2);     // 2x2
            Tensor cat = concat_cols({s, s});   // 2x4
            Tensor flat = reshape(cat, {8});
            return sum(mul(flat, flat));
        };
        CHECK(finite_difference_check(f, {a, b, c}, 1e-5, 1e-4).pass);
    }

    SECTION("layer_norm") {
        Tensor x = rand_tensor({4, 8});
        Tensor g = rand_tensor({8});
        Tensor b = rand_tensor({8});
        auto f = [&]() {
            Tensor y = layer_norm(x, g, b);
            Tensor flat = reshape(y, {32});
            return sum(mul(flat, flat));
        };
        CHECK(finite_difference_check(f, {x, g, b}, 1e-5, 1e-4).pass);
    }

    SECTION("embedding_lookup / gather_rows") {
        Tensor table = rand_tensor({7, 4});
        auto f = [&]() {
            Tensor e = embedding_lookup(table, {1, 3, 3, 6});
            Tensor g = gather_rows(e, {0, 2});
            Tensor flat = reshape(g, {8});
            return sum(mul(flat, flat));
        };
        CHECK(finite_difference_check(f, {table}, 1e-5, 1e-4).pass);
    }

    SECTION("log_softmax / negative_log_likelihood") {
        Tensor z = rand_tensor({9});
        auto f = [&]() { return negative_log_likelihood(log_softmax(z), 4); };
        CHECK(finite_difference_check(f, {z}, 1e-5, 1e-4).pass);
    }

    SECTION("softmax / entropy / gather / divide / log_floor / pick") {
        Tensor z = rand_tensor({10});
        auto f = [&]() {
            Tensor p = softmax(z);
            Tensor sub9 = gather(p, {0, 2, 4, 6});
            Tensor q = divide_by_scalar(sub9, sum(sub9));
            Tensor h = entropy_bits(q);
            Tensor lp = neg(log_floor(pick(p, 3), 1e-12));
            return add(h, lp);
        };
        CHECK(finite_difference_check(f, {z}, 1e-6, 1e-4).pass);
    }
}

TEST_CASE("composed expression passes the 64-coordinate check at 1e-3") {
    Rng rng(77);
    auto rand_tensor = [&](std::vector<std::size_t> shape) {
        std::size_t n = 1;
        for (auto d : shape) n *= d;
        std::vector<double> v(n);
        for (auto& x : v) x = rng.uniform(-0.8, 0.8);
        return Tensor::from_values(shape, std::move(v), true);
    };
    Tensor w1 = rand_tensor({6, 12});
    Tensor b1 = rand_tensor({12});
    Tensor w2 = rand_tensor({12, 9});
    Tensor g = rand_tensor({9});
    Tensor b = rand_tensor({9});
    Tensor x = rand_tensor({5, 6});

    auto f = [&]() {
        Tensor h = layer_norm(matmul(gelu(add_row(matmul(x, w1), b1)), w2), g, b);
        Tensor p = softmax(h);
        Tensor row = reshape(gather_rows(p, {2}), {9});
        Tensor h_bits = entropy_bits(row);
        Tensor nll = negative_log_likelihood(log_softmax(reshape(gather_rows(h, {1}), {9})), 3);
        return add(nll, scale(h_bits, -0.2));
    };
    auto report = finite_difference_check(f, {w1, b1, w2, g, b, x}, 1e-5, 1e-3, 64);
    CAPTURE(report.max_relative_error);
    CHECK(report.coordinates_checked >= 64);
    CHECK(report.pass);
}

TEST_CASE("same graph evaluates bit-identically") {
    auto build = []() {
        Tensor a = Tensor::from_values({4, 4}, std::vector<double>{
            0.1, 0.2, 0.3, 0.4, -0.5, 0.6, -0.7, 0.8,
            0.9, -1.0, 1.1, -1.2, 1.3, 1.4, -1.5, 1.6}, true);
        Tensor g = Tensor::from_values({4}, {1.0, 1.1, 0.9, 1.2});
        Tensor b = Tensor::from_values({4}, {0.0, 0.1, -0.1, 0.2});
        Tensor out = softmax(layer_norm(matmul(a, a), g, b));
        backward(sum(mul(reshape(out, {16}), reshape(out, {16}))));
        return std::pair{std::vector<double>(out.data().begin(), out.data().end()),
                         std::vector<double>(a.grad().begin(), a.grad().end())};
    };
    auto [v1, g1] = build();
    auto [v2, g2] = build();
    CHECK(v1 == v2);
    CHECK(g1 == g2);
}

TEST_CASE("graph trace is topologically ordered in construction order") {
    Tensor a = vec({1.0, 2.0}, true);
    Tensor b = vec({3.0, 4.0}, true);
    Tensor c = add(a, b);
    Tensor d = mul(c, a);
    Tensor e = sum(d);

    const auto ops = trace_graph(e);
    REQUIRE(ops.size() == 3);
    CHECK(ops[0].op == "add");
    CHECK(ops[1].op == "mul");
    CHECK(ops[2].op == "sum");
    for (const auto& op : ops) {
        for (auto in : op.inputs) CHECK(in < op.output);
    }
}
