#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "helpers.hpp"
#include "macnet/tensor.hpp"

using namespace macnet;
using testutil::bitwise_equal;
using testutil::max_grad_err;
using testutil::rand_tensor;

TEST_CASE("matmul: identity, hand arithmetic, triple-loop oracle") {
    Tensor i2({2, 2}, {1, 0, 0, 1});
    Tensor v({2, 1}, {5, 6});
    CHECK(bitwise_equal(matmul(i2, v), v));

    Tensor a({2, 2}, {1, 2, 3, 4});
    Tensor out = matmul(a, v);
    CHECK(out.to_vector() == std::vector<double>{17, 39});

    std::mt19937_64 rng(11);
    Tensor x = rand_tensor({7, 5}, rng);
    Tensor y = rand_tensor({5, 3}, rng);
    Tensor got = matmul(x, y);
    for (size_t r = 0; r < 7; ++r)
        for (size_t c = 0; c < 3; ++c) {
            double s = 0;
            for (size_t k = 0; k < 5; ++k) s += x.at(r, k) * y.at(k, c);
            CHECK(std::abs(got.at(r, c) - s) < 1e-12);
        }

    CHECK_THROWS_AS(matmul(x, Tensor({4, 3}, std::vector<double>(12, 0.0))), DimensionError);
}

TEST_CASE("elementwise: examples, identities, broadcasting") {
    Tensor a = Tensor::vec({1, 2, 3});
    Tensor b = Tensor::vec({4, 5, 6});
    CHECK(hadamard(a, b).to_vector() == std::vector<double>{4, 10, 18});
    CHECK(bitwise_equal(add(a, 0.0), a));
    CHECK(bitwise_equal(scale(a, 1.0), a));
    CHECK(sub(a, b).to_vector() == std::vector<double>{-3, -3, -3});
    CHECK(sub(1.0, Tensor::vec({0.25})).to_vector() == std::vector<double>{0.75});

    // scalar-shaped operand broadcasts against any shape
    Tensor s = Tensor::scalar(2.0);
    CHECK(hadamard(a, s).to_vector() == std::vector<double>{2, 4, 6});
    CHECK(hadamard(s, a).to_vector() == std::vector<double>{2, 4, 6});

    CHECK_THROWS_AS(add(a, Tensor::vec({1, 2})), DimensionError);
}

TEST_CASE("concat: examples and split round-trip") {
    CHECK(concat(Tensor::vec({1, 2}), Tensor::vec({3})).to_vector() ==
          std::vector<double>{1, 2, 3});

    std::mt19937_64 rng(5);
    Tensor x = rand_tensor({3, 7}, rng);
    Tensor back = concat(slice_cols(x, 0, 4), slice_cols(x, 4, 7));
    CHECK(bitwise_equal(back, x));

    CHECK_THROWS_AS(concat(rand_tensor({2, 3}, rng), rand_tensor({3, 3}, rng)), DimensionError);
}

TEST_CASE("softmax: analytic values") {
    CHECK(softmax(Tensor::vec({0, 0})).to_vector() == std::vector<double>{0.5, 0.5});
    CHECK(softmax(Tensor::vec({7.25})).to_vector() == std::vector<double>{1.0});
    auto v = softmax(Tensor::vec({std::log(2.0), 0.0})).to_vector();
    CHECK(std::abs(v[0] - 2.0 / 3.0) < 1e-12);
    CHECK(std::abs(v[1] - 1.0 / 3.0) < 1e-12);
    CHECK_THROWS_AS(softmax(Tensor::vec({})), DomainError);
}

TEST_CASE("softmax: distribution and shift invariance over random draws") {
    std::mt19937_64 rng(17);
    for (int rep = 0; rep < 200; ++rep) {
        size_t n = 1 + rng() % 12;
        Tensor x = rand_tensor({n}, rng, -30.0, 30.0);
        auto y = softmax(x).to_vector();
        double sum = 0;
        for (double e : y) {
            CHECK(e >= 0.0);
            sum += e;
        }
        CHECK(std::abs(sum - 1.0) <= 1e-9);

        auto shifted = softmax(add(x, 13.75)).to_vector();
        for (size_t j = 0; j < n; ++j) CHECK(std::abs(shifted[j] - y[j]) <= 1e-12);
    }
}

TEST_CASE("masked_softmax: exact-zero padding tail, prefix agreement") {
    Tensor x = Tensor::vec({0.3, -1.2, 2.0, 99.0, -99.0});
    auto y = masked_softmax(x, 3).to_vector();
    CHECK(y[3] == 0.0);
    CHECK(y[4] == 0.0);
    auto ref = softmax(Tensor::vec({0.3, -1.2, 2.0})).to_vector();
    for (size_t j = 0; j < 3; ++j) CHECK(y[j] == ref[j]);

    CHECK_THROWS_AS(masked_softmax(x, 0), DomainError);
    CHECK_THROWS_AS(masked_softmax(x, 6), ContractError);
}

TEST_CASE("nonlinear: analytic points") {
    CHECK(item(sigmoid(Tensor::scalar(0.0))) == 0.5);
    CHECK(item(elu(Tensor::scalar(3.0))) == 3.0);
    CHECK(std::abs(item(elu(Tensor::scalar(-1.0))) - std::expm1(-1.0)) < 1e-15);
    CHECK(item(tanh(Tensor::scalar(0.0))) == 0.0);
    CHECK(std::abs(item(sigmoid(Tensor::scalar(500.0))) - 1.0) < 1e-12);  // stable at extremes
    CHECK(item(sigmoid(Tensor::scalar(-500.0))) >= 0.0);
}

TEST_CASE("gather_rows: lookup and scatter-add gradient") {
    Tensor table({3, 2}, {1, 2, 3, 4, 5, 6});
    Tensor got = gather_rows(table, {2, 0});
    CHECK(got.to_vector() == std::vector<double>{5, 6, 1, 2});
    CHECK_THROWS_AS(gather_rows(table, {3}), VocabError);
    CHECK_THROWS_AS(gather_rows(table, {-1}), VocabError);

    Tape tape;
    Tensor t = tape.watch(table);
    Tensor loss = sum(gather_rows(t, {0, 2, 0}));
    tape.backward(loss);
    CHECK(tape.grad(t).to_vector() == std::vector<double>{2, 2, 0, 0, 1, 1});
}

TEST_CASE("slice, stack, broadcast, reshape, sum: shape examples") {
    Tensor x({3, 4}, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11});
    CHECK(slice_rows(x, 1, 3).to_vector() == std::vector<double>{4, 5, 6, 7, 8, 9, 10, 11});
    CHECK(slice_cols(x, 1, 2).to_vector() == std::vector<double>{1, 5, 9});
    CHECK(bitwise_equal(stack_rows({slice_rows(x, 0, 1), slice_rows(x, 1, 2), slice_rows(x, 2, 3)}),
                        x));
    CHECK(broadcast_rows(Tensor::row({1, 2}), 3).to_vector() ==
          std::vector<double>{1, 2, 1, 2, 1, 2});
    CHECK(reshape(x, {4, 3}).to_vector() == x.to_vector());
    CHECK_THROWS_AS(reshape(x, {5, 3}), DimensionError);
    CHECK(item(sum(x)) == 66.0);
}

TEST_CASE("stack_rows: gradient reaches only traced rows") {
    Tape tape;
    Tensor a = tape.watch(Tensor::row({1, 2}));
    Tensor b = Tensor::row({10, 20});  // constant row
    Tensor loss = sum(hadamard(stack_rows({a, b}), stack_rows({a, b})));
    tape.backward(loss);
    CHECK(tape.grad(a).to_vector() == std::vector<double>{2, 4});
}

TEST_CASE("cross_entropy_logits: analytic and gradient") {
    CHECK(std::abs(item(cross_entropy_logits(Tensor::row({0, 0}), 0)) - std::log(2.0)) < 1e-15);
    CHECK_THROWS_AS(cross_entropy_logits(Tensor::row({0, 0}), 2), ContractError);

    std::mt19937_64 rng(23);
    Tensor z = rand_tensor({1, 5}, rng, -3, 3);
    Tape tape;
    Tensor zt = tape.watch(z);
    tape.backward(cross_entropy_logits(zt, 3));
    auto g = tape.grad(zt).to_vector();
    auto sm = softmax(reshape(z, {5})).to_vector();
    for (size_t j = 0; j < 5; ++j)
        CHECK(std::abs(g[j] - (sm[j] - (j == 3 ? 1.0 : 0.0))) < 1e-12);
}

TEST_CASE("backward: analytic examples") {
    Tape tape;
    Tensor x = tape.watch(Tensor::vec({1, -2, 3}));
    tape.backward(sum(x));
    CHECK(tape.grad(x).to_vector() == std::vector<double>{1, 1, 1});

    Tape tape2;
    Tensor y = tape2.watch(Tensor::vec({1, -2, 3}));
    tape2.backward(sum(hadamard(y, y)));
    CHECK(tape2.grad(y).to_vector() == std::vector<double>{2, -4, 6});
}

TEST_CASE("per-operation gradient checks vs central differences") {
    std::mt19937_64 rng(31);
    Tensor proj = rand_tensor({4, 1}, rng);  // projection to a column

    auto check_unary = [&](const char* name, auto op, Tensor x) {
        auto loss = [&](Tape* tape) {
            Tensor xi = tape ? tape->watch(x) : x;
            Tensor y = op(xi);
            return sum(hadamard(y, y));
        };
        INFO(name);
        CHECK(max_grad_err(loss, {x}) < 1e-6);
    };
    check_unary("sigmoid", [](const Tensor& t) { return sigmoid(t); }, rand_tensor({2, 3}, rng));
    check_unary("tanh", [](const Tensor& t) { return tanh(t); }, rand_tensor({2, 3}, rng));
    // keep ELU probes away from the kink at 0 where FD straddles both branches
    check_unary("elu+", [](const Tensor& t) { return elu(t); }, rand_tensor({2, 3}, rng, 0.2, 1.5));
    check_unary("elu-", [](const Tensor& t) { return elu(t); },
                rand_tensor({2, 3}, rng, -1.5, -0.2));
    check_unary("softmax", [](const Tensor& t) { return softmax(reshape(t, {6})); },
                rand_tensor({2, 3}, rng));
    check_unary("masked", [](const Tensor& t) { return masked_softmax(reshape(t, {6}), 4); },
                rand_tensor({2, 3}, rng));
    check_unary("scale", [](const Tensor& t) { return scale(t, -2.5); }, rand_tensor({2, 3}, rng));
    check_unary("subs", [](const Tensor& t) { return sub(1.0, t); }, rand_tensor({2, 3}, rng));
    check_unary("reshape", [](const Tensor& t) { return reshape(t, {3, 2}); },
                rand_tensor({2, 3}, rng));
    check_unary("slice_r", [](const Tensor& t) { return slice_rows(t, 1, 3); },
                rand_tensor({4, 3}, rng));
    check_unary("slice_c", [](const Tensor& t) { return slice_cols(t, 1, 3); },
                rand_tensor({4, 4}, rng));
    check_unary("bcast", [](const Tensor& t) { return broadcast_rows(t, 5); },
                rand_tensor({1, 4}, rng));
    check_unary("gather", [](const Tensor& t) { return gather_rows(t, {1, 0, 1}); },
                rand_tensor({3, 4}, rng));

    SUBCASE("binary ops") {
        Tensor a = rand_tensor({3, 2}, rng);
        Tensor b = rand_tensor({2, 4}, rng);
        auto mm = [&](Tape* tape) {
            Tensor ai = tape ? tape->watch(a) : a;
            Tensor bi = tape ? tape->watch(b) : b;
            Tensor y = matmul(matmul(ai, bi), tape ? tape->watch(proj) : proj);
            return sum(hadamard(y, y));
        };
        CHECK(max_grad_err(mm, {a, b, proj}) < 1e-6);

        Tensor c = rand_tensor({2, 3}, rng);
        Tensor d = rand_tensor({2, 3}, rng);
        auto ew = [&](Tape* tape) {
            Tensor ci = tape ? tape->watch(c) : c;
            Tensor di = tape ? tape->watch(d) : d;
            return sum(hadamard(add(ci, di), sub(ci, di)));
        };
        CHECK(max_grad_err(ew, {c, d}) < 1e-6);

        auto cc = [&](Tape* tape) {
            Tensor ci = tape ? tape->watch(c) : c;
            Tensor di = tape ? tape->watch(d) : d;
            Tensor y = concat(ci, di);
            return sum(hadamard(y, y));
        };
        CHECK(max_grad_err(cc, {c, d}) < 1e-6);

        Tensor r1 = rand_tensor({1, 4}, rng);
        Tensor r2 = rand_tensor({1, 4}, rng);
        auto st = [&](Tape* tape) {
            Tensor u = tape ? tape->watch(r1) : r1;
            Tensor v = tape ? tape->watch(r2) : r2;
            Tensor y = stack_rows({u, v, u});
            return sum(hadamard(y, y));
        };
        CHECK(max_grad_err(st, {r1, r2}) < 1e-6);

        Tensor z = rand_tensor({1, 5}, rng, -2, 2);
        auto ce = [&](Tape* tape) {
            return cross_entropy_logits(tape ? tape->watch(z) : z, 2);
        };
        CHECK(max_grad_err(ce, {z}) < 1e-6);
    }
}

TEST_CASE("backward linearity") {
    std::mt19937_64 rng(41);
    Tensor x0 = rand_tensor({2, 3}, rng);

    auto grad_of = [&](auto make_loss) {
        Tape tape;
        Tensor x = tape.watch(x0);
        tape.backward(make_loss(x));
        return tape.grad(x).to_vector();
    };
    auto l1 = [](const Tensor& x) { return sum(hadamard(x, x)); };
    auto l2 = [](const Tensor& x) { return sum(sigmoid(x)); };
    auto g1 = grad_of(l1);
    auto g2 = grad_of(l2);
    auto g12 = grad_of([&](const Tensor& x) { return add(l1(x), l2(x)); });
    for (size_t j = 0; j < g1.size(); ++j) CHECK(std::abs(g12[j] - (g1[j] + g2[j])) <= 1e-12);
}

TEST_CASE("tape determinism: bitwise-identical values and gradients") {
    auto run = [] {
        std::mt19937_64 rng(77);
        Tensor a = rand_tensor({4, 3}, rng);
        Tensor b = rand_tensor({3, 2}, rng);
        Tape tape;
        Tensor at = tape.watch(a), bt = tape.watch(b);
        Tensor y = sigmoid(matmul(elu(at), bt));
        Tensor loss = sum(hadamard(y, y));
        tape.backward(loss);
        auto out = tape.grad(at).to_vector();
        auto g2 = tape.grad(bt).to_vector();
        out.insert(out.end(), g2.begin(), g2.end());
        out.push_back(item(loss));
        return out;
    };
    CHECK(run() == run());
}

TEST_CASE("error paths: tape misuse and non-finite detection") {
    Tape t1, t2;
    Tensor a = t1.watch(Tensor::vec({1, 2}));
    Tensor b = t2.watch(Tensor::vec({3, 4}));
    CHECK_THROWS_AS(add(a, b), ContractError);

    Tape t3;
    Tensor x = t3.watch(Tensor::vec({1, 2}));
    Tensor loss = sum(x);
    CHECK_THROWS_AS(t3.backward(x), ContractError);  // non-scalar
    t3.backward(loss);
    CHECK_THROWS_AS(t3.backward(loss), ContractError);  // second sweep

    Tape t4;
    CHECK_THROWS_AS(t4.backward(sum(Tensor::vec({1.0}))), ContractError);  // foreign loss

    CHECK_THROWS_AS(item(Tensor::vec({1, 2})), ContractError);
    CHECK(all_finite(Tensor::vec({1, 2, 3})));
    CHECK_FALSE(all_finite(Tensor::vec({1, std::nan(""), 3})));
    CHECK_FALSE(all_finite(Tensor::vec({1, std::numeric_limits<double>::infinity()})));
}
