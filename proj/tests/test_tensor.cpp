#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "nesr/adam.hpp"
#include "nesr/ops.hpp"
#include "nesr/tape.hpp"
#include "nesr/tensor.hpp"

using nesr::Act;
using nesr::Rng;
using nesr::Tape;
using nesr::TensorD;
using nesr::testing::fd_gradient;
using nesr::testing::max_rel_err;
using nesr::testing::op_grad_max_err;
using nesr::testing::rand_tensor;

TEST_CASE("matmul identity and hand-expanded product") {
    TensorD eye({2, 2}, {1, 0, 0, 1});
    TensorD v({2, 1}, {5, 6});
    TensorD r = nesr::matmul(eye, v);
    CHECK(r[0] == 5.0);
    CHECK(r[1] == 6.0);

    TensorD a({2, 2}, {1, 2, 3, 4});
    TensorD p = nesr::matmul(a, v);
    CHECK(p[0] == 17.0);
    CHECK(p[1] == 39.0);
}

TEST_CASE("matmul shape mismatch names both shapes") {
    TensorD a({2, 3}, {1, 2, 3, 4, 5, 6});
    TensorD b({2, 2}, {1, 2, 3, 4});
    bool threw = false;
    try {
        nesr::matmul(a, b);
    } catch (const nesr::DimensionError& e) {
        threw = true;
        const std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
        CHECK(msg.find("[2x2]") != std::string::npos);
    }
    CHECK(threw);
}

TEST_CASE("matmul gradient matches finite differences and hand value") {
    // d/da sum(a*b) at a=[[1,1]], b=[[2],[3]] is [[2,3]].
    TensorD a({1, 2}, {1, 1});
    TensorD b({2, 1}, {2, 3});

    Tape<double> tape;
    TensorD at = tape.leaf(a);
    TensorD loss = nesr::sum(nesr::matmul(at, b));
    tape.backward(loss);
    TensorD ga = tape.grad(at);
    CHECK(ga[0] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(ga[1] == doctest::Approx(3.0).epsilon(1e-12));

    TensorD fd = fd_gradient(
        [&](const TensorD& ax) {
            TensorD out = nesr::matmul(ax, b);
            return out[0];
        },
        a, 1e-6);
    CHECK(max_rel_err(ga, fd) < 1e-6);
}

TEST_CASE("batched matmul equals per-batch products") {
    Rng rng(11);
    TensorD a = rand_tensor({3, 2, 4}, rng);
    TensorD b = rand_tensor({3, 4, 5}, rng);
    TensorD c = nesr::matmul(a, b);
    REQUIRE(c.shape() == std::vector<std::size_t>{3, 2, 5});
    for (std::size_t i = 0; i < 3; ++i) {
        TensorD ai({2, 4}, std::vector<double>(a.data() + i * 8, a.data() + (i + 1) * 8));
        TensorD bi({4, 5}, std::vector<double>(b.data() + i * 20, b.data() + (i + 1) * 20));
        TensorD ci = nesr::matmul(ai, bi);
        for (std::size_t j = 0; j < ci.size(); ++j) {
            CHECK(c[i * 10 + j] == doctest::Approx(ci[j]).epsilon(1e-12));
        }
    }
}

TEST_CASE("convolve identity kernel passes input through") {
    Rng rng(3);
    TensorD in = rand_tensor({1, 4, 4}, rng);
    TensorD ker({1, 1, 1, 1}, {1.0});
    TensorD bias({1}, {0.0});
    TensorD out = nesr::convolve(in, ker, bias, 2, 0);
    for (std::size_t i = 0; i < in.size(); ++i) CHECK(out[i] == in[i]);

    TensorD in3 = rand_tensor({1, 2, 3, 3}, rng);
    TensorD ker3({1, 1, 1, 1, 1}, {1.0});
    TensorD out3 = nesr::convolve(in3, ker3, bias, 3, 0);
    for (std::size_t i = 0; i < in3.size(); ++i) CHECK(out3[i] == in3[i]);
}

TEST_CASE("rank-3 all-ones convolution counts overlapping taps") {
    TensorD in = TensorD::ones({1, 3, 3, 3});
    TensorD ker = TensorD::ones({1, 1, 3, 3, 3});
    TensorD bias({1}, {0.0});
    TensorD out = nesr::convolve(in, ker, bias, 3, 1);
    // center voxel sees the full 3x3x3 neighborhood, corners see 2x2x2
    CHECK(out[(1 * 3 + 1) * 3 + 1] == 27.0);
    CHECK(out[0] == 8.0);
    CHECK(out[26] == 8.0);
}

TEST_CASE("convolution kernel gradient equals sum of touched inputs") {
    Rng rng(5);
    TensorD in = rand_tensor({1, 4, 4}, rng);
    TensorD ker = rand_tensor({1, 1, 3, 3}, rng);
    TensorD bias({1}, {0.0});

    Tape<double> tape;
    TensorD kt = tape.leaf(ker);
    TensorD loss = nesr::sum(nesr::convolve(in, kt, bias, 2, 1));
    tape.backward(loss);
    TensorD gk = tape.grad(kt);

    TensorD fd = fd_gradient(
        [&](const TensorD& kx) {
            TensorD out = nesr::convolve(in, kx, bias, 2, 1);
            double s = 0;
            for (std::size_t i = 0; i < out.size(); ++i) s += out[i];
            return s;
        },
        ker, 1e-5);
    CHECK(max_rel_err(gk, fd) < 1e-6);

    // the center tap touches every input pixel once
    double total = 0;
    for (std::size_t i = 0; i < in.size(); ++i) total += in[i];
    CHECK(gk[4] == doctest::Approx(total).epsilon(1e-9));
}

TEST_CASE("convolve rejects even kernels and channel mismatches") {
    TensorD in = TensorD::ones({2, 4, 4});
    CHECK_THROWS_AS(nesr::convolve(in, TensorD::ones({1, 2, 2, 2}), TensorD::ones({1}), 2, 0),
                    nesr::ConfigError);
    CHECK_THROWS_AS(nesr::convolve(in, TensorD::ones({1, 3, 3, 3}), TensorD::ones({1}), 2, 1),
                    nesr::ConfigError);
    CHECK_THROWS_AS(nesr::convolve(in, TensorD::ones({1, 2, 3, 3}), TensorD::ones({1}), 2, 0),
                    nesr::ConfigError);
}

TEST_CASE("resize_linear midpoint, identity and third-weights") {
    TensorD p({1, 2}, {1, 3});
    TensorD r = nesr::resize_linear(p, 3);
    CHECK(r[0] == 1.0);
    CHECK(r[1] == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(r[2] == 3.0);

    Rng rng(7);
    TensorD q = rand_tensor({3, 5}, rng);
    TensorD same = nesr::resize_linear(q, 5);
    for (std::size_t i = 0; i < q.size(); ++i) CHECK(same[i] == q[i]);

    TensorD two({1, 2}, {2, 4});
    TensorD four = nesr::resize_linear(two, 4);
    CHECK(four[0] == 2.0);
    CHECK(four[1] == doctest::Approx(8.0 / 3.0).epsilon(1e-14));
    CHECK(four[2] == doctest::Approx(10.0 / 3.0).epsilon(1e-14));
    CHECK(four[3] == 4.0);
}

TEST_CASE("resize_linear preserves endpoints for any target length") {
    Rng rng(19);
    for (std::size_t lin : {2u, 3u, 5u}) {
        TensorD p = rand_tensor({2, lin}, rng);
        for (std::size_t lout : {2u, 3u, 4u, 7u, 61u}) {
            TensorD r = nesr::resize_linear(p, lout);
            CHECK(r[0] == p[0]);
            CHECK(r[lout - 1] == p[lin - 1]);
            CHECK(r[lout] == p[lin]);
            CHECK(r[2 * lout - 1] == p[2 * lin - 1]);
        }
    }
    CHECK_THROWS_AS(nesr::resize_linear(TensorD::ones({1, 3}), 0), nesr::DomainError);
}

TEST_CASE("softmax unit values and stability") {
    TensorD z({2}, {0, 0});
    TensorD s = nesr::softmax(z);
    CHECK(s[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(s[1] == doctest::Approx(0.5).epsilon(1e-12));

    TensorD l({2}, {0, std::log(3.0)});
    TensorD s2 = nesr::softmax(l);
    CHECK(s2[0] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(s2[1] == doctest::Approx(0.75).epsilon(1e-12));

    TensorD big({2}, {1000, 1000});
    TensorD s3 = nesr::softmax(big);
    CHECK(s3[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(s3[1] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("softmax rows sum to one and shift invariance") {
    Rng rng(23);
    TensorD x = rand_tensor({6, 5}, rng, -3, 3);
    TensorD y = nesr::softmax(x);
    for (std::size_t r = 0; r < 6; ++r) {
        double s = 0;
        for (std::size_t c = 0; c < 5; ++c) s += y[r * 5 + c];
        CHECK(std::abs(s - 1.0) < 1e-6);
    }
    TensorD shifted = x.clone();
    for (std::size_t c = 0; c < 5; ++c) shifted[2 * 5 + c] += 17.5;
    TensorD y2 = nesr::softmax(shifted);
    for (std::size_t c = 0; c < 5; ++c) {
        CHECK(y2[2 * 5 + c] == doctest::Approx(y[2 * 5 + c]).epsilon(1e-12));
    }
    CHECK_THROWS_AS(
        nesr::softmax(TensorD({2}, {std::numeric_limits<double>::infinity(), 0.0})),
        nesr::DomainError);
}

TEST_CASE("activation unit values") {
    TensorD x({3}, {-1, 0, 2});
    TensorD r = nesr::activate(x, Act::Relu);
    CHECK(r[0] == 0.0);
    CHECK(r[1] == 0.0);
    CHECK(r[2] == 2.0);

    TensorD l({1}, {-2});
    TensorD lr = nesr::activate(l, Act::LeakyRelu, 0.01);
    CHECK(lr[0] == doctest::Approx(-0.02).epsilon(1e-15));
}

TEST_CASE("leaky relu gradient at [-5, 5]") {
    TensorD x({2}, {-5, 5});
    Tape<double> tape;
    TensorD xt = tape.leaf(x);
    TensorD loss = nesr::sum(nesr::activate(xt, Act::LeakyRelu, 0.01));
    tape.backward(loss);
    TensorD g = tape.grad(xt);
    CHECK(g[0] == doctest::Approx(0.01).epsilon(1e-12));
    CHECK(g[1] == doctest::Approx(1.0).epsilon(1e-12));

    TensorD fd = fd_gradient(
        [](const TensorD& xx) {
            TensorD out = nesr::activate(xx, Act::LeakyRelu, 0.01);
            return out[0] + out[1];
        },
        x, 1e-5);
    CHECK(max_rel_err(g, fd) < 1e-6);
}

TEST_CASE("backward basics: square, softmax sum, fan-out") {
    {
        TensorD x({1}, {3.0});
        Tape<double> tape;
        TensorD xt = tape.leaf(x);
        TensorD y = nesr::mul(xt, xt);
        tape.backward(y);
        CHECK(tape.grad(xt)[0] == doctest::Approx(6.0).epsilon(1e-12));
    }
    {
        Rng rng(29);
        TensorD x = rand_tensor({4}, rng, -2, 2);
        Tape<double> tape;
        TensorD xt = tape.leaf(x);
        TensorD y = nesr::sum(nesr::softmax(xt));
        tape.backward(y);
        TensorD g = tape.grad(xt);
        for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(g[i]) < 1e-12);
    }
    {
        TensorD x({1}, {1.5});
        Tape<double> tape;
        TensorD xt = tape.leaf(x);
        TensorD y = nesr::add(xt, xt);
        tape.backward(y);
        CHECK(tape.grad(xt)[0] == doctest::Approx(2.0).epsilon(1e-12));
    }
}

TEST_CASE("backward rejects non-scalar roots; off-path leaves get zero") {
    TensorD x({2}, {1, 2});
    Tape<double> tape;
    TensorD xt = tape.leaf(x);
    TensorD y = nesr::scale(xt, 2.0);
    CHECK_THROWS_AS(tape.backward(y), nesr::UsageError);

    Tape<double> tape2;
    TensorD a = tape2.leaf(TensorD({1}, {1.0}));
    TensorD b = tape2.leaf(TensorD({1}, {2.0}));
    TensorD loss = nesr::mul(a, a);
    tape2.backward(loss);
    CHECK(tape2.grad(b)[0] == 0.0);
}

TEST_CASE("adam first step magnitude, zero gradient, zero-decay closed form") {
    using State = nesr::AdamState<double>;
    {
        TensorD p({1}, {0.0});
        State st;
        st.lr = 0.1;
        std::vector<TensorD*> params{&p};
        st.init(params);
        nesr::adam_step(params, {TensorD({1}, {2.0})}, st);
        CHECK(std::abs(-p[0] / 0.1 - 1.0) < 1e-6);
        CHECK(st.step_count == 1);
    }
    {
        TensorD p({3}, {1, -2, 3});
        State st;
        std::vector<TensorD*> params{&p};
        st.init(params);
        nesr::adam_step(params, {TensorD::zeros({3})}, st);
        CHECK(p[0] == 1.0);
        CHECK(p[1] == -2.0);
        CHECK(p[2] == 3.0);
    }
    {
        // beta1 = beta2 = 0 reduces to sign-SGD with magnitude lr
        TensorD p({2}, {0.0, 0.0});
        State st;
        st.beta1 = 0.0;
        st.beta2 = 0.0;
        st.lr = 0.05;
        std::vector<TensorD*> params{&p};
        st.init(params);
        TensorD g({2}, {3.0, -0.5});
        nesr::adam_step(params, {g}, st);
        nesr::adam_step(params, {g}, st);
        CHECK(p[0] == doctest::Approx(-2 * 0.05).epsilon(1e-6));
        CHECK(p[1] == doctest::Approx(2 * 0.05).epsilon(1e-6));
    }
    {
        TensorD p({2}, {0.0, 0.0});
        State st;
        std::vector<TensorD*> params{&p};
        st.init(params);
        CHECK_THROWS_AS(nesr::adam_step(params, {TensorD::zeros({3})}, st), nesr::ConfigError);
    }
}

TEST_CASE("finite-difference suite over every differentiable operation") {
    Rng rng(41);
    const double tol = 1e-6;

    auto r33 = [&] { return rand_tensor({3, 3}, rng); };

    CHECK(op_grad_max_err([](const auto& in) { return nesr::add(in[0], in[1]); },
                          {r33(), r33()}) < tol);
    CHECK(op_grad_max_err([](const auto& in) { return nesr::sub(in[0], in[1]); },
                          {r33(), r33()}) < tol);
    CHECK(op_grad_max_err([](const auto& in) { return nesr::mul(in[0], in[1]); },
                          {r33(), r33()}) < tol);
    CHECK(op_grad_max_err([](const auto& in) { return nesr::scale(in[0], -1.7); }, {r33()}) <
          tol);
    CHECK(op_grad_max_err([](const auto& in) { return nesr::matmul(in[0], in[1]); },
                          {rand_tensor({3, 4}, rng), rand_tensor({4, 2}, rng)}) < tol);
    CHECK(op_grad_max_err([](const auto& in) { return nesr::matmul(in[0], in[1]); },
                          {rand_tensor({2, 3, 4}, rng), rand_tensor({2, 4, 2}, rng)}) < tol);
    CHECK(op_grad_max_err([](const auto& in) { return nesr::matmul_tn(in[0], in[1]); },
                          {rand_tensor({4, 3}, rng), rand_tensor({4, 2}, rng)}) < tol);
    CHECK(op_grad_max_err([](const auto& in) { return nesr::bmm_nt(in[0], in[1]); },
                          {rand_tensor({2, 3, 4}, rng), rand_tensor({2, 5, 4}, rng)}) < tol);
    CHECK(op_grad_max_err(
              [](const auto& in) { return nesr::affine(in[0], in[1], in[2], Act::None, 0.0); },
              {rand_tensor({4, 3}, rng), rand_tensor({3, 2}, rng), rand_tensor({2}, rng)}) <
          tol);
    CHECK(op_grad_max_err(
              [](const auto& in) { return nesr::affine(in[0], in[1], in[2], Act::Relu, 0.0); },
              {rand_tensor({4, 3}, rng), rand_tensor({3, 2}, rng), rand_tensor({2}, rng)}) <
          tol);
    CHECK(op_grad_max_err(
              [](const auto& in) {
                  return nesr::affine(in[0], in[1], in[2], Act::LeakyRelu, 0.01);
              },
              {rand_tensor({4, 3}, rng), rand_tensor({3, 2}, rng), rand_tensor({2}, rng)}) <
          tol);
    CHECK(op_grad_max_err([](const auto& in) { return nesr::transpose(in[0]); },
                          {rand_tensor({3, 5}, rng)}) < tol);
    CHECK(op_grad_max_err([](const auto& in) { return nesr::reshape(in[0], {5, 3}); },
                          {rand_tensor({3, 5}, rng)}) < tol);
    CHECK(op_grad_max_err([](const auto& in) { return nesr::permute_102(in[0]); },
                          {rand_tensor({2, 3, 4}, rng)}) < tol);
    CHECK(op_grad_max_err([](const auto& in) { return nesr::concat_cols(in[0], in[1]); },
                          {rand_tensor({3, 2}, rng), rand_tensor({3, 4}, rng)}) < tol);
    CHECK(op_grad_max_err([](const auto& in) { return nesr::stack_pair(in[0], in[1]); },
                          {rand_tensor({2, 3}, rng), rand_tensor({2, 3}, rng)}) < tol);
    CHECK(op_grad_max_err([](const auto& in) { return nesr::repeat_leading(in[0], 4); },
                          {rand_tensor({2, 3}, rng)}) < tol);
    CHECK(op_grad_max_err(
              [](const auto& in) { return nesr::convolve(in[0], in[1], in[2], 2, 1); },
              {rand_tensor({2, 4, 4}, rng), rand_tensor({3, 2, 3, 3}, rng),
               rand_tensor({3}, rng)}) < tol);
    CHECK(op_grad_max_err(
              [](const auto& in) { return nesr::convolve(in[0], in[1], in[2], 3, 1); },
              {rand_tensor({2, 3, 4, 4}, rng), rand_tensor({2, 2, 3, 3, 3}, rng),
               rand_tensor({2}, rng)}) < tol);
    CHECK(op_grad_max_err([](const auto& in) { return nesr::resize_linear(in[0], 5); },
                          {rand_tensor({3, 3}, rng)}) < tol);
    CHECK(op_grad_max_err(
              [](const auto& in) { return nesr::profile_sample(in[0], {0.0, 0.4, 1.7, 2.0}); },
              {rand_tensor({3, 3}, rng)}) < tol);
    CHECK(op_grad_max_err(
              [](const auto& in) {
                  return nesr::spi_branch(in[0], {0.0, 0.7, 1.3, 2.0},
                                          nesr::SpiOrientation::Vertical);
              },
              {rand_tensor({3, 4, 4}, rng)}) < tol);
    CHECK(op_grad_max_err(
              [](const auto& in) {
                  return nesr::spi_branch(in[0], {0.0, 0.7, 1.3, 2.0},
                                          nesr::SpiOrientation::Horizontal);
              },
              {rand_tensor({3, 4, 4}, rng)}) < tol);
    CHECK(op_grad_max_err([](const auto& in) { return nesr::softmax(in[0]); },
                          {rand_tensor({4, 5}, rng, -2, 2)}) < tol);
    CHECK(op_grad_max_err([](const auto& in) { return nesr::activate(in[0], Act::Relu); },
                          {rand_tensor({4, 4}, rng)}) < tol);
    CHECK(op_grad_max_err(
              [](const auto& in) { return nesr::activate(in[0], Act::LeakyRelu, 0.01); },
              {rand_tensor({4, 4}, rng)}) < tol);
    CHECK(op_grad_max_err([](const auto& in) { return nesr::sum(in[0]); },
                          {rand_tensor({3, 4}, rng)}) < tol);
    CHECK(op_grad_max_err([](const auto& in) { return nesr::mean(in[0]); },
                          {rand_tensor({3, 4}, rng)}) < tol);
    {
        TensorD gt = rand_tensor({4, 4}, rng, 0.05, 1.0);
        CHECK(op_grad_max_err(
                  [gt](const auto& in) { return nesr::mrae(in[0], gt, 1e-3); },
                  {rand_tensor({4, 4}, rng, 0.0, 1.0)}) < tol);
    }
}

TEST_CASE("seeded computation replays bitwise identically") {
    auto run_once = [] {
        Rng rng(1234);
        TensorD x = rand_tensor({4, 6}, rng);
        TensorD w = rand_tensor({6, 3}, rng);
        TensorD b = rand_tensor({3}, rng);
        Tape<double> tape;
        TensorD wt = tape.leaf(w);
        TensorD y = nesr::affine(x, wt, b, Act::LeakyRelu, 0.01);
        TensorD loss = nesr::mean(nesr::softmax(y));
        tape.backward(loss);
        TensorD g = tape.grad(wt);
        std::vector<double> bits(y.data(), y.data() + y.size());
        bits.insert(bits.end(), g.data(), g.data() + g.size());
        return bits;
    };
    auto a = run_once();
    auto b = run_once();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("parallel workers do not change op results") {
    Rng rng(55);
    TensorD x = rand_tensor({37, 6}, rng);
    TensorD w = rand_tensor({6, 8}, rng);
    TensorD b = rand_tensor({8}, rng);
    nesr::set_worker_threads(1);
    TensorD y1 = nesr::affine(x, w, b, Act::Relu, 0.0);
    nesr::set_worker_threads(3);
    TensorD y3 = nesr::affine(x, w, b, Act::Relu, 0.0);
    nesr::set_worker_threads(1);
    for (std::size_t i = 0; i < y1.size(); ++i) {
        CHECK(y1[i] == doctest::Approx(y3[i]).epsilon(1e-12));
    }
}
