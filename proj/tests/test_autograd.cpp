#include <catch2/catch_amalgamated.hpp>

#include "ldlab/nn/autograd.hpp"
#include "ldlab/nn/modules.hpp"

using namespace ldlab;
using namespace ldlab::nn;
using Catch::Approx;

namespace {

using T64 = Tensor<double>;

// Central finite differences on selected elements of one leaf against the
// analytic gradient. Rebuilds the graph per probe via `make_loss`.
template <typename MakeLoss>
void gradcheck(Tensor<double>& theta, const MakeLoss& make_loss, Rng& rng, int probes, double tol = 1e-5) {
    // analytic pass
    Var<double> leaf_var = leaf(theta, true);
    Var<double> loss = make_loss(leaf_var);
    backward(loss);
    const Tensor<double> grad = leaf_var.node->grad;

    const double h = 1e-5;
    for (int k = 0; k < probes; ++k) {
        const auto i = static_cast<std::size_t>(rng.below(theta.v.size()));
        const double keep = theta.v[i];
        theta.v[i] = keep + h;
        const double fp = make_loss(leaf(theta, false)).val().v[0];
        theta.v[i] = keep - h;
        const double fm = make_loss(leaf(theta, false)).val().v[0];
        theta.v[i] = keep;
        const double fd = (fp - fm) / (2.0 * h);
        const double an = grad.v[i];
        const double denom = std::max({std::abs(fd), std::abs(an), 1e-8});
        INFO("element " << i << " fd=" << fd << " an=" << an);
        REQUIRE(std::abs(fd - an) / denom < tol);
    }
}

}  // namespace

TEST_CASE("conv2d forward matches a hand oracle", "[autograd]") {
    // delta kernel reproduces the input
    Rng rng(1);
    T64 x = randn<double>({1, 1, 4, 4}, rng);
    T64 w({1, 1, 3, 3});
    w.v[4] = 1.0;  // center tap
    T64 b({1});
    const auto y = conv2d(leaf(x), leaf(w), leaf(b), 1, 1);
    REQUIRE(y.val().dims == x.dims);
    for (std::size_t i = 0; i < x.v.size(); ++i) REQUIRE(y.val().v[i] == Approx(x.v[i]).epsilon(1e-14));

    // 2x2 all-ones kernel on a known grid, stride 1 pad 0... use 3x3 sum kernel pad 1
    T64 ones({1, 1, 3, 3}, 1.0);
    T64 xs({1, 1, 2, 2});
    xs.v = {1.0, 2.0, 3.0, 4.0};
    const auto s = conv2d(leaf(xs), leaf(ones), leaf(b), 1, 1);
    // each output = sum of in-bounds neighbors
    REQUIRE(s.val().v[0] == Approx(1 + 2 + 3 + 4).epsilon(1e-14));
    REQUIRE(s.val().v[3] == Approx(1 + 2 + 3 + 4).epsilon(1e-14));

    // stride 2 shape contract
    const auto d = conv2d(leaf(randn<double>({2, 3, 8, 8}, rng)), leaf(randn<double>({5, 3, 3, 3}, rng)),
                          leaf(T64({5})), 2, 1);
    REQUIRE(d.val().dims == std::vector<int>{2, 5, 4, 4});
}

TEST_CASE("conv2d gradients pass finite differences", "[autograd]") {
    Rng rng(7);
    T64 x = randn<double>({2, 3, 5, 5}, rng);
    T64 w = randn<double>({4, 3, 3, 3}, rng, 0.4);
    T64 b = randn<double>({4}, rng, 0.2);
    T64 target = randn<double>({2, 4, 5, 5}, rng);

    SECTION("w.r.t. input") {
        gradcheck(x, [&](Var<double> v) { return mse_loss(conv2d(v, leaf(w), leaf(b), 1, 1), target); }, rng, 12);
    }
    SECTION("w.r.t. weight") {
        gradcheck(w, [&](Var<double> v) { return mse_loss(conv2d(leaf(x), v, leaf(b), 1, 1), target); }, rng, 12);
    }
    SECTION("w.r.t. bias") {
        gradcheck(b, [&](Var<double> v) { return mse_loss(conv2d(leaf(x), leaf(w), v, 1, 1), target); }, rng, 4);
    }
    SECTION("strided") {
        T64 target2 = randn<double>({2, 4, 3, 3}, rng);
        gradcheck(w, [&](Var<double> v) { return mse_loss(conv2d(leaf(x), v, leaf(b), 2, 1), target2); }, rng, 12);
    }
}

TEST_CASE("linear forward and gradients", "[autograd]") {
    T64 x({2, 3});
    x.v = {1, 2, 3, 4, 5, 6};
    T64 w({2, 3});
    w.v = {1, 0, -1, 0.5, 0.5, 0.5};
    T64 b({2});
    b.v = {10, -10};
    const auto y = linear(leaf(x), leaf(w), leaf(b));
    REQUIRE(y.val().dims == std::vector<int>{2, 2});
    REQUIRE(y.val().v[0] == Approx(1 - 3 + 10));
    REQUIRE(y.val().v[1] == Approx(0.5 + 1 + 1.5 - 10));
    REQUIRE(y.val().v[2] == Approx(4 - 6 + 10));

    Rng rng(17);
    T64 xr = randn<double>({3, 4}, rng);
    T64 wr = randn<double>({5, 4}, rng, 0.5);
    T64 br = randn<double>({5}, rng, 0.1);
    T64 tgt = randn<double>({3, 5}, rng);
    gradcheck(xr, [&](Var<double> v) { return mse_loss(linear(v, leaf(wr), leaf(br)), tgt); }, rng, 10);
    gradcheck(wr, [&](Var<double> v) { return mse_loss(linear(leaf(xr), v, leaf(br)), tgt); }, rng, 10);
    gradcheck(br, [&](Var<double> v) { return mse_loss(linear(leaf(xr), leaf(wr), v), tgt); }, rng, 5);
}

TEST_CASE("silu values and gradient", "[autograd]") {
    T64 x({3});
    x.v = {0.0, 1.0, -2.0};
    const auto y = silu(leaf(x));
    REQUIRE(y.val().v[0] == 0.0);
    REQUIRE(y.val().v[1] == Approx(1.0 / (1.0 + std::exp(-1.0))).epsilon(1e-12));
    Rng rng(23);
    T64 xr = randn<double>({16}, rng);
    T64 tgt = randn<double>({16}, rng);
    gradcheck(xr, [&](Var<double> v) { return mse_loss(silu(v), tgt); }, rng, 10);
}

TEST_CASE("group_norm normalizes per group and backpropagates", "[autograd]") {
    Rng rng(29);
    T64 x = randn<double>({2, 6, 4, 4}, rng, 3.0);
    T64 gamma({6}, 1.0), beta({6});
    const auto y = group_norm(leaf(x), leaf(gamma), leaf(beta), 3);

    // each (sample, group) slab must come out zero-mean unit-variance
    for (int n = 0; n < 2; ++n)
        for (int g = 0; g < 3; ++g) {
            double s = 0.0, s2 = 0.0;
            for (int c = 2 * g; c < 2 * g + 2; ++c)
                for (int i = 0; i < 16; ++i) {
                    const double v = y.val().v[static_cast<std::size_t>(((n * 6 + c) * 16) + i)];
                    s += v;
                    s2 += v * v;
                }
            REQUIRE(s / 32.0 == Approx(0.0).margin(1e-10));
            REQUIRE(s2 / 32.0 == Approx(1.0).epsilon(1e-3));
        }

    T64 tgt = randn<double>({2, 6, 4, 4}, rng);
    T64 gr = randn<double>({6}, rng, 0.5);
    T64 br = randn<double>({6}, rng, 0.5);
    gradcheck(x, [&](Var<double> v) { return mse_loss(group_norm(v, leaf(gr), leaf(br), 3), tgt); }, rng, 14, 1e-4);
    gradcheck(gr, [&](Var<double> v) { return mse_loss(group_norm(leaf(x), v, leaf(br), 3), tgt); }, rng, 6, 1e-4);
    gradcheck(br, [&](Var<double> v) { return mse_loss(group_norm(leaf(x), leaf(gr), v, 3), tgt); }, rng, 6, 1e-4);
}

TEST_CASE("embedding gathers rows and scatters gradients", "[autograd]") {
    T64 table({4, 3});
    for (int i = 0; i < 12; ++i) table.v[static_cast<std::size_t>(i)] = i;
    auto tv = leaf(table, true);
    const auto out = embedding(tv, {2, 0, 2});
    REQUIRE(out.val().dims == std::vector<int>{3, 3});
    REQUIRE(out.val().v[0] == 6.0);
    REQUIRE(out.val().v[3] == 0.0);

    T64 tgt({3, 3});
    const auto loss = mse_loss(out, tgt);
    backward(loss);
    // row 2 used twice: its gradient is the sum of both pulls
    const auto& g = tv.node->grad;
    REQUIRE(g.v[6] == Approx(2.0 * (2.0 / 9.0) * 6.0).epsilon(1e-12));
    REQUIRE(g.v[3] == 0.0);  // row 1 untouched

    Rng rng(31);
    T64 tr = randn<double>({5, 4}, rng);
    T64 tg2 = randn<double>({3, 4}, rng);
    gradcheck(tr, [&](Var<double> v) { return mse_loss(embedding(v, {4, 1, 1}), tg2); }, rng, 8);
}

TEST_CASE("structural ops: upsample, concat, add, channel map, scale", "[autograd]") {
    Rng rng(37);
    T64 x = randn<double>({1, 2, 3, 3}, rng);

    const auto up = upsample_nearest2(leaf(x));
    REQUIRE(up.val().dims == std::vector<int>{1, 2, 6, 6});
    REQUIRE(up.val().v[0] == x.v[0]);
    REQUIRE(up.val().v[1] == x.v[0]);
    REQUIRE(up.val().v[6] == x.v[0]);

    T64 tgt_up = randn<double>({1, 2, 6, 6}, rng);
    gradcheck(x, [&](Var<double> v) { return mse_loss(upsample_nearest2(v), tgt_up); }, rng, 8);

    T64 a = randn<double>({2, 2, 3, 3}, rng), b = randn<double>({2, 3, 3, 3}, rng);
    const auto cat = concat_channels(leaf(a), leaf(b));
    REQUIRE(cat.val().dims == std::vector<int>{2, 5, 3, 3});
    T64 tgt_cat = randn<double>({2, 5, 3, 3}, rng);
    gradcheck(a, [&](Var<double> v) { return mse_loss(concat_channels(v, leaf(b)), tgt_cat); }, rng, 8);
    gradcheck(b, [&](Var<double> v) { return mse_loss(concat_channels(leaf(a), v), tgt_cat); }, rng, 8);

    T64 e = randn<double>({2, 2}, rng);
    T64 x2 = randn<double>({2, 2, 3, 3}, rng);
    T64 tgt2 = randn<double>({2, 2, 3, 3}, rng);
    gradcheck(x2, [&](Var<double> v) { return mse_loss(add_channel_map(v, leaf(e)), tgt2); }, rng, 8);
    gradcheck(e, [&](Var<double> v) { return mse_loss(add_channel_map(leaf(x2), v), tgt2); }, rng, 4);

    T64 other = randn<double>({2, 2, 3, 3}, rng);
    gradcheck(a, [&](Var<double> v) { return mse_loss(add(v, leaf(other)), T64({2, 2, 3, 3})); }, rng, 6);
    gradcheck(a, [&](Var<double> v) { return mse_loss(scale(v, -1.75), T64({2, 2, 3, 3})); }, rng, 6);
}

TEST_CASE("composite block gradcheck", "[autograd]") {
    // conv -> groupnorm -> silu -> +emb -> conv -> upsample -> concat skip -> conv -> mse
    Rng rng(41);
    const int C = 4;
    T64 x = randn<double>({1, 3, 6, 6}, rng);
    T64 w1 = randn<double>({C, 3, 3, 3}, rng, 0.4), b1({C});
    T64 ga({C}, 1.0), be({C});
    T64 emb = randn<double>({1, C}, rng, 0.3);
    T64 w2 = randn<double>({C, C, 3, 3}, rng, 0.3), b2({C});
    T64 w3 = randn<double>({2, 2 * C, 1, 1}, rng, 0.3), b3({2});
    T64 tgt = randn<double>({1, 2, 12, 12}, rng);

    auto build = [&](Var<double> w1v, Var<double> gav, Var<double> embv, Var<double> w2v, Var<double> w3v) {
        auto h = conv2d(leaf(x), w1v, leaf(b1), 1, 1);
        h = group_norm(h, gav, leaf(be), 2);
        h = silu(h);
        h = add_channel_map(h, embv);
        auto h2 = conv2d(h, w2v, leaf(b2), 1, 1);
        auto up = upsample_nearest2(concat_channels(h2, h));
        auto out = conv2d(up, w3v, leaf(b3), 1, 0);
        return mse_loss(out, tgt);
    };

    gradcheck(w1, [&](Var<double> v) { return build(v, leaf(ga), leaf(emb), leaf(w2), leaf(w3)); }, rng, 8, 1e-4);
    gradcheck(ga, [&](Var<double> v) { return build(leaf(w1), v, leaf(emb), leaf(w2), leaf(w3)); }, rng, 4, 1e-4);
    gradcheck(emb, [&](Var<double> v) { return build(leaf(w1), leaf(ga), v, leaf(w2), leaf(w3)); }, rng, 4, 1e-4);
    gradcheck(w2, [&](Var<double> v) { return build(leaf(w1), leaf(ga), leaf(emb), v, leaf(w3)); }, rng, 8, 1e-4);
    gradcheck(w3, [&](Var<double> v) { return build(leaf(w1), leaf(ga), leaf(emb), leaf(w2), v); }, rng, 8, 1e-4);
}

TEST_CASE("batched evaluation equals per-sample evaluation bitwise", "[autograd]") {
    Rng rng(43);
    using TF = Tensor<float>;
    TF x = randn<float>({3, 2, 6, 6}, rng);
    TF w = randn<float>({4, 2, 3, 3}, rng, 0.4);
    TF b = randn<float>({4}, rng, 0.1);
    TF ga({4}, 1.0f), be({4});

    NoGrad ng;
    auto full = silu(group_norm(conv2d(leaf(x), leaf(w), leaf(b), 1, 1), leaf(ga), leaf(be), 2));
    for (int n = 0; n < 3; ++n) {
        TF xi({1, 2, 6, 6});
        std::copy_n(x.data() + static_cast<std::size_t>(n) * 2 * 36, 2 * 36, xi.data());
        auto one = silu(group_norm(conv2d(leaf(xi), leaf(w), leaf(b), 1, 1), leaf(ga), leaf(be), 2));
        for (std::size_t i = 0; i < one.val().v.size(); ++i)
            REQUIRE(one.val().v[i] == full.val().v[static_cast<std::size_t>(n) * 4 * 36 + i]);
    }
}

TEST_CASE("no-grad mode builds no graph", "[autograd]") {
    Rng rng(47);
    T64 x = randn<double>({1, 2, 4, 4}, rng);
    T64 w = randn<double>({2, 2, 3, 3}, rng);
    auto xv = leaf(x, true);
    {
        NoGrad ng;
        auto y = conv2d(xv, leaf(w, true), leaf(T64({2}), true), 1, 1);
        REQUIRE_FALSE(y.node->requires_grad);
        REQUIRE(y.node->parents.empty());
    }
    auto y2 = conv2d(xv, leaf(w, true), leaf(T64({2}), true), 1, 1);
    REQUIRE(y2.node->requires_grad);
    REQUIRE(y2.node->parents.size() == 3);
}

TEST_CASE("timestep embedding basics", "[autograd]") {
    const auto e = timestep_embedding<double>({0, 5}, 8);
    REQUIRE(e.dims == std::vector<int>{2, 8});
    for (int j = 0; j < 4; ++j) {
        REQUIRE(e.v[static_cast<std::size_t>(j)] == 1.0);       // cos(0)
        REQUIRE(e.v[static_cast<std::size_t>(4 + j)] == 0.0);   // sin(0)
    }
    REQUIRE(e.v[8] == Approx(std::cos(5.0)).epsilon(1e-12));
    const auto e2 = timestep_embedding<double>({0, 5}, 8);
    REQUIRE(e.v == e2.v);
}

TEST_CASE("adam takes sane first steps and converges on a quadratic", "[autograd]") {
    ParamStore<double> params;
    T64 x0({1});
    x0.v = {10.0};
    auto xv = params.add("x", x0);
    Adam<double> opt;
    opt.lr = 0.5;
    opt.attach(params);

    T64 target({1});
    target.v = {3.0};

    // analytic first step: m-hat/v-hat reduce to sign(g) at t=1
    params.zero_grad();
    backward(mse_loss(xv, target));
    opt.step(params);
    REQUIRE(xv.val().v[0] == Approx(10.0 - 0.5).epsilon(1e-6));

    for (int i = 0; i < 400; ++i) {
        params.zero_grad();
        backward(mse_loss(params.get("x"), target));
        opt.step(params);
    }
    REQUIRE(xv.val().v[0] == Approx(3.0).margin(0.05));
}

TEST_CASE("parameter store bookkeeping", "[autograd]") {
    ParamStore<float> params;
    Rng rng(51);
    params.add("a", randn<float>({3, 3}, rng));
    params.add("b", randn<float>({2}, rng));
    REQUIRE(params.count_scalars() == 11);
    REQUIRE(params.has("a"));
    REQUIRE_FALSE(params.has("c"));
    REQUIRE_THROWS_AS(params.add("a", TensorF({1})), Error);
    REQUIRE_THROWS_AS(params.get("zz"), Error);

    // deterministic init from the same seed
    Rng r1(5), r2(5);
    const auto p1 = conv_init<float>(4, 3, 3, r1);
    const auto p2 = conv_init<float>(4, 3, 3, r2);
    REQUIRE(p1.v == p2.v);
}
