#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "jbsde/nets.hpp"
#include "support.hpp"

using namespace jbsde;
using namespace jbsde::nets;

namespace {

// straightforward loop evaluator, independent of the library's forward pass
double naive_forward(const FeedForwardNet& net, const Vec& x) {
    Vec a = x;
    const int L = net.layer_count();
    for (int l = 0; l < L; ++l) {
        const Mat& W = net.weight(l);
        Vec out(W.rows, 0.0);
        for (int i = 0; i < W.rows; ++i) {
            double s = net.bias(l)[i];
            for (int j = 0; j < W.cols; ++j) s += W(i, j) * a[j];
            out[i] = s;
        }
        if (l + 1 < L)
            for (double& v : out)
                v = net.activation() == Activation::Sigmoid ? 1.0 / (1.0 + std::exp(-v))
                                                            : std::tanh(v);
        a = out;
    }
    return a[0];
}

FeedForwardNet random_net(std::vector<int> dims, uint64_t seed,
                          Activation act = Activation::Sigmoid) {
    Rng rng(seed);
    FeedForwardNet net = init_net(std::move(dims), act, rng);
    // randomize biases too (init leaves them zero)
    for (int l = 0; l < net.layer_count(); ++l)
        for (double& b : net.bias(l)) b = rng.uniform(-0.5, 0.5);
    return net;
}

}  // namespace

TEST_CASE("forward") {
    SUBCASE("zero net is identically zero") {
        FeedForwardNet net({2, 5, 1}, Activation::Sigmoid);
        CHECK(net.forward(Vec{0.3, -1.0}) == 0.0);
        CHECK(net.forward(Vec{100.0, 3.0}) == 0.0);
    }
    SUBCASE("constant hidden activations") {
        // W1 = 0, b1 = 0: hidden layer sits at sigmoid(0) = 0.5
        FeedForwardNet net({1, 4, 1}, Activation::Sigmoid);
        for (int j = 0; j < 4; ++j) net.weight(1)(0, j) = 1.0 + j;
        net.bias(1)[0] = -0.7;
        const double expect = 0.5 * (1 + 2 + 3 + 4) - 0.7;
        CHECK(net.forward(Vec{2.0}) == doctest::Approx(expect).epsilon(1e-15));
    }
    SUBCASE("matches the naive evaluator") {
        for (uint64_t seed : {1u, 2u, 3u}) {
            FeedForwardNet net = random_net({3, 13, 13, 1}, seed);
            Rng rng(seed + 100);
            for (int k = 0; k < 10; ++k) {
                Vec x{rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
                CHECK(net.forward(x) == doctest::Approx(naive_forward(net, x)).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("grad_x against central differences") {
    SUBCASE("zero net") {
        FeedForwardNet net({3, 4, 1}, Activation::Sigmoid);
        const Vec g = net.grad_x(Vec{1.0, 2.0, 3.0});
        for (double v : g) CHECK(v == 0.0);
    }
    SUBCASE("random nets") {
        for (uint64_t seed = 0; seed < 10; ++seed) {
            const Activation act = seed % 2 ? Activation::Tanh : Activation::Sigmoid;
            FeedForwardNet net = random_net({2, 12, 12, 1}, 40 + seed, act);
            Rng rng(900 + seed);
            Vec x{rng.uniform(-2, 2), rng.uniform(-2, 2)};
            const Vec g = net.grad_x(x);
            const double h = 1e-5;
            for (int i = 0; i < 2; ++i) {
                Vec xp = x, xm = x;
                xp[i] += h;
                xm[i] -= h;
                const double fd = (net.forward(xp) - net.forward(xm)) / (2 * h);
                CHECK(g[i] == doctest::Approx(fd).epsilon(1e-5));
            }
        }
    }
}

TEST_CASE("parameter gradients: value and directional derivative") {
    for (uint64_t seed = 0; seed < 6; ++seed) {
        FeedForwardNet net = random_net({2, 9, 9, 1}, 70 + seed);
        const size_t R = net.num_params();
        Rng rng(300 + seed);
        const Vec x{rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5)};
        const Vec v{rng.uniform(-1, 1), rng.uniform(-1, 1)};

        NetTape tape;
        tape.bind(net);
        tape.forward(x);
        Vec grad_val(R, 0.0);
        tape.accumulate_param_grad_value(1.0, grad_val);
        tape.dir_deriv(v);
        Vec grad_dir(R, 0.0);
        tape.accumulate_param_grad_dir(1.0, grad_dir);

        // central differences in a handful of parameter directions
        std::vector<double> flat(R);
        net.to_flat(flat);
        const double h = 1e-5;
        for (int probe = 0; probe < 12; ++probe) {
            const size_t i = rng.next_u64() % R;
            FeedForwardNet pert = net;
            std::vector<double> f2 = flat;
            f2[i] += h;
            pert.from_flat(f2);
            const double up_val = pert.forward(x);
            const double up_dir = dot(pert.grad_x(x), v);
            f2[i] = flat[i] - h;
            pert.from_flat(f2);
            const double dn_val = pert.forward(x);
            const double dn_dir = dot(pert.grad_x(x), v);
            const double fd_val = (up_val - dn_val) / (2 * h);
            const double fd_dir = (up_dir - dn_dir) / (2 * h);
            CHECK(grad_val[i] == doctest::Approx(fd_val).epsilon(1e-5));
            const double scale = std::max(std::abs(fd_dir), 1e-4);
            CHECK(std::abs(grad_dir[i] - fd_dir) / scale < 1e-4);
        }
    }
}

TEST_CASE("growth constants") {
    SUBCASE("zero net") {
        FeedForwardNet net({2, 6, 1}, Activation::Sigmoid);
        const GrowthConstants gc = growth_constants(net);
        CHECK(gc.A == 0.0);
        CHECK(gc.B == 0.0);
        CHECK(gc.C == 0.0);
    }
    SUBCASE("constant output bias") {
        FeedForwardNet net({2, 6, 1}, Activation::Sigmoid);
        net.bias(1)[0] = 3.0;
        const GrowthConstants gc = growth_constants(net);
        CHECK(gc.A == doctest::Approx(9.0));
        CHECK(gc.C == 0.0);
    }
    SUBCASE("sampled bounds hold on a box") {
        for (uint64_t seed = 0; seed < 6; ++seed) {
            const Activation act = seed == 5 ? Activation::Tanh : Activation::Sigmoid;
            FeedForwardNet net = random_net({2, 12, 12, 1}, 500 + seed, act);
            const GrowthConstants gc = growth_constants(net);
            Rng rng(600 + seed);
            for (int k = 0; k < 10000; ++k) {
                const Vec x{rng.uniform(-10, 10), rng.uniform(-10, 10)};
                const double u = net.forward(x);
                CHECK(u * u <= gc.A + gc.B * dot(x, x) + 1e-12);
                const Vec g = net.grad_x(x);
                CHECK(dot(g, g) <= gc.C + 1e-12);
            }
        }
    }
    SUBCASE("forward is Lipschitz with constant sqrt(C)") {
        FeedForwardNet net = random_net({2, 10, 10, 1}, 777);
        const GrowthConstants gc = growth_constants(net);
        Rng rng(778);
        for (int k = 0; k < 2000; ++k) {
            const Vec x{rng.uniform(-5, 5), rng.uniform(-5, 5)};
            const Vec y{rng.uniform(-5, 5), rng.uniform(-5, 5)};
            const Vec diff{x[0] - y[0], x[1] - y[1]};
            CHECK(std::abs(net.forward(x) - net.forward(y)) <=
                  std::sqrt(gc.C) * norm2(diff) + 1e-12);
        }
    }
}

TEST_CASE("init") {
    SUBCASE("deterministic per seed") {
        Rng a(42), b(42);
        FeedForwardNet n1 = init_net({1, 16, 16, 1}, Activation::Sigmoid, a);
        FeedForwardNet n2 = init_net({1, 16, 16, 1}, Activation::Sigmoid, b);
        std::vector<double> f1(n1.num_params()), f2(n2.num_params());
        n1.to_flat(f1);
        n2.to_flat(f2);
        CHECK(f1 == f2);
    }
    SUBCASE("parameter counts") {
        FeedForwardNet net({1, 16, 16, 1}, Activation::Sigmoid);
        CHECK(net.num_params() == 16 * 2 + 16 * 17 + 1 * 17);  // 321
        CHECK(net.grouped_param_count() == 1 * 2 + 16 * 17 + 16 * 17 + 1 * 2);
    }
    SUBCASE("degenerate widths rejected") {
        CHECK_THROWS(FeedForwardNet({1, 0, 1}, Activation::Sigmoid));
        CHECK_THROWS(FeedForwardNet({1, 1}, Activation::Sigmoid));  // no hidden layer
    }
    SUBCASE("weights stay within the Xavier range, biases zero") {
        Rng rng(9);
        FeedForwardNet net = init_net({4, 7, 1}, Activation::Sigmoid, rng);
        const double r0 = std::sqrt(6.0 / (4 + 7));
        for (double w : net.weight(0).a) CHECK(std::abs(w) <= r0);
        for (double b : net.bias(0)) CHECK(b == 0.0);
    }
}

TEST_CASE("checkpoint round trip is bit exact") {
    NetFamily family = init_family(5, {2, 8, 8, 1}, Activation::Sigmoid, 1234);
    family.y0 = 0.1234567890123456789;
    const std::string path =
        (std::filesystem::temp_directory_path() / "jbsde_ckpt_test.bin").string();
    save_checkpoint(path, family, 999);
    uint64_t seed = 0;
    NetFamily loaded = load_checkpoint(path, &seed);
    CHECK(seed == 999);
    REQUIRE(loaded.nets.size() == family.nets.size());
    std::vector<double> a(family.total_params()), b(loaded.total_params());
    family.to_flat(a);
    loaded.to_flat(b);
    CHECK(a == b);  // bitwise
    std::filesystem::remove(path);
}
