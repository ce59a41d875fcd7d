#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <unistd.h>

#include "iclsynth/denoiser.hpp"
#include "testutil.hpp"

using namespace icls;

namespace {

DenoiserConfig tiny_config() {
    DenoiserConfig cfg;
    cfg.latent_dim = 4;
    cfg.model_dim = 8;
    cfg.layers = 1;
    cfg.heads = 2;
    return cfg;
}

}  // namespace

TEST_CASE("feature positional encoding") {
    const Tensor t = feature_pos_enc(5, 8);
    // Position 0 alternates sin 0 / cos 0.
    for (std::size_t k = 0; k < 8; ++k) {
        CHECK(t.at(0, k) == doctest::Approx(k % 2 == 0 ? 0.0 : 1.0).epsilon(1e-15));
    }
    // Base-frequency sin column differs between positions 0 and 1.
    CHECK(std::abs(t.at(1, 0) - t.at(0, 0)) > 0.5);  // sin(1) = 0.841

    const Tensor again = feature_pos_enc(5, 8);
    for (std::size_t i = 0; i < t.numel(); ++i) CHECK(t[i] == again[i]);

    CHECK_THROWS_AS(feature_pos_enc(4, 7), DataError);
}

TEST_CASE("2d context positional encoding") {
    const std::size_t m = 3, f = 2, dim = 8;
    const Tensor t = context_pos_enc_2d(m, f, dim);
    // Entry (0,0): both halves are the position-0 pattern.
    const Tensor half_enc = feature_pos_enc(3, dim / 2);
    for (std::size_t k = 0; k < dim / 2; ++k) {
        CHECK(t.at(0, 0, k) == doctest::Approx(half_enc.at(0, k)).epsilon(1e-15));
        CHECK(t.at(0, 0, dim / 2 + k) == doctest::Approx(half_enc.at(0, k)).epsilon(1e-15));
    }
    // Fixed feature, varying sample: only the sample half changes.
    for (std::size_t k = 0; k < dim / 2; ++k) {
        CHECK(t.at(0, 1, dim / 2 + k) == t.at(2, 1, dim / 2 + k));
    }
    double sample_half_diff = 0.0;
    for (std::size_t k = 0; k < dim / 2; ++k) {
        sample_half_diff += std::abs(t.at(0, 1, k) - t.at(2, 1, k));
    }
    CHECK(sample_half_diff > 0.1);

    const Tensor again = context_pos_enc_2d(m, f, dim);
    for (std::size_t i = 0; i < t.numel(); ++i) CHECK(t[i] == again[i]);
}

TEST_CASE("noise embedding depends only on c_noise") {
    const Tensor a = noise_sinusoidal_features(2.0, 16);
    const Tensor b = noise_sinusoidal_features(2.0, 16);
    for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);

    const Tensor c = noise_sinusoidal_features(4.0, 16);
    double diff = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) diff = std::max(diff, std::abs(a[i] - c[i]));
    CHECK(diff > 1e-4);

    CHECK_THROWS_AS(noise_sinusoidal_features(0.0, 16), DataError);
    CHECK_THROWS_AS(noise_sinusoidal_features(-1.0, 16), DataError);
}

TEST_CASE("build_mask pattern") {
    const AttentionMask m = build_mask(2, 1);
    // Stated rule: every row may attend exactly the context columns.
    for (std::size_t row = 0; row < 3; ++row) {
        CHECK(m.allowed(row, 0));
        CHECK(m.allowed(row, 1));
        CHECK_FALSE(m.allowed(row, 2));
    }
    CHECK(m.allowed_count() == 2 * 3);

    const AttentionMask full = build_mask(4, 0);
    CHECK(full.allowed_count() == 16);

    CHECK_THROWS_AS(build_mask(0, 3), DataError);

    // Count identity for random sizes.
    Rng rng(3);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t mc = 1 + rng.uniform_index(10);
        const std::size_t mq = rng.uniform_index(10);
        CHECK(build_mask(mc, mq).allowed_count() == mc * (mc + mq));
    }
}

TEST_CASE("forward shape contract and input validation") {
    const DenoiserConfig cfg{8, 16, 1, 2, 4};
    const DenoiserModel model = DenoiserModel::init(cfg, 1);
    ScheduleConfig scfg;
    Tensor zq = test::random_tensor({3, 4, 8}, 2);
    Tensor zc = test::random_tensor({5, 4, 8}, 3);
    const Tensor out = model.denoise(zq, 1.0, zc, scfg);
    REQUIRE(out.shape() == std::vector<std::size_t>{3, 4, 8});

    Tensor bad_f = test::random_tensor({5, 3, 8}, 4);
    CHECK_THROWS_AS(model.denoise(zq, 1.0, bad_f, scfg), ShapeError);
}

TEST_CASE("zero-weight network reduces to the skip path") {
    const DenoiserConfig cfg = tiny_config();
    DenoiserModel model = DenoiserModel::init(cfg, 1);
    for (Tensor& p : model.parameters()) p.fill(0.0);
    ScheduleConfig scfg;
    Tensor zq = test::random_tensor({2, 3, 4}, 5);
    Tensor zc = test::random_tensor({3, 3, 4}, 6);
    const double sigma = scfg.sigma_min;
    const Tensor out = model.denoise(zq, sigma, zc, scfg);
    const double c_skip = precondition(sigma, scfg).c_skip;
    CHECK(c_skip == doctest::Approx(0.25 / (0.25 + 4e-6)).epsilon(1e-9));
    for (std::size_t i = 0; i < out.numel(); ++i) {
        CHECK(out[i] == doctest::Approx(c_skip * zq[i]).epsilon(1e-12));
    }
}

TEST_CASE("query conditional independence") {
    const DenoiserConfig cfg{6, 16, 2, 4, 4};
    const DenoiserModel model = DenoiserModel::init(cfg, 7);
    ScheduleConfig scfg;
    const std::size_t mq = 4, f = 3;
    Tensor zq = test::random_tensor({mq, f, 6}, 8);
    Tensor zc = test::random_tensor({5, f, 6}, 9);
    const Tensor base = model.denoise(zq, 0.7, zc, scfg);

    // Perturb query row j; all other output rows must be untouched.
    for (std::size_t j = 0; j < mq; ++j) {
        Tensor perturbed = zq;
        for (std::size_t k = 0; k < f * 6; ++k) {
            perturbed[j * f * 6 + k] += 1e-3 * (k % 3 == 0 ? 1.0 : -0.5);
        }
        const Tensor out = model.denoise(perturbed, 0.7, zc, scfg);
        for (std::size_t i = 0; i < mq; ++i) {
            if (i == j) continue;
            for (std::size_t k = 0; k < f * 6; ++k) {
                CHECK(std::abs(out[i * f * 6 + k] - base[i * f * 6 + k]) <= 1e-12);
            }
        }
    }
}

TEST_CASE("query permutation equivariance") {
    const DenoiserConfig cfg{6, 16, 2, 4, 4};
    const DenoiserModel model = DenoiserModel::init(cfg, 7);
    ScheduleConfig scfg;
    const std::size_t mq = 5, f = 2, d = 6;
    Tensor zq = test::random_tensor({mq, f, d}, 10);
    Tensor zc = test::random_tensor({4, f, d}, 11);
    const Tensor base = model.denoise(zq, 1.3, zc, scfg);

    const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
    Tensor permuted({mq, f, d});
    for (std::size_t i = 0; i < mq; ++i) {
        std::copy(zq.data() + perm[i] * f * d, zq.data() + (perm[i] + 1) * f * d,
                  permuted.data() + i * f * d);
    }
    const Tensor out = model.denoise(permuted, 1.3, zc, scfg);
    for (std::size_t i = 0; i < mq; ++i) {
        for (std::size_t k = 0; k < f * d; ++k) {
            CHECK(std::abs(out[i * f * d + k] - base[perm[i] * f * d + k]) <= 1e-10);
        }
    }
}

TEST_CASE("context influences the queries at random init") {
    const DenoiserConfig cfg = tiny_config();
    const DenoiserModel model = DenoiserModel::init(cfg, 21);
    ScheduleConfig scfg;
    Tensor zq = test::random_tensor({2, 2, 4}, 22);
    Tensor zc = test::random_tensor({3, 2, 4}, 23);
    const Tensor base = model.denoise(zq, 0.9, zc, scfg);
    Tensor zc2 = zc;
    zc2[0] += 0.5;
    const Tensor out = model.denoise(zq, 0.9, zc2, scfg);
    double diff = 0.0;
    for (std::size_t i = 0; i < out.numel(); ++i) diff = std::max(diff, std::abs(out[i] - base[i]));
    CHECK(diff > 1e-9);
}

TEST_CASE("denoiser gradient suite on the tiny config") {
    const DenoiserConfig cfg = tiny_config();
    DenoiserModel model = DenoiserModel::init(cfg, 31);
    ScheduleConfig scfg;
    const Tensor zq = test::random_tensor({2, 2, 4}, 32, 0.7);
    const Tensor zc = test::random_tensor({3, 2, 4}, 33, 0.7);
    const Tensor target = test::random_tensor({2, 2, 4}, 34, 0.7);
    const double sigma = 0.8;

    auto loss_value = [&]() {
        Graph g;
        std::vector<Var> bound = model.bind(g);
        Var out = model.forward(g, bound, g.constant(zq), sigma, g.constant(zc), scfg);
        Var loss = g.scale(g.mean_sq_diff(out, g.constant(target)), loss_weight(sigma, scfg));
        return g.value(loss)[0];
    };

    Graph g;
    std::vector<Var> bound = model.bind(g);
    Var out = model.forward(g, bound, g.constant(zq), sigma, g.constant(zc), scfg);
    Var loss = g.scale(g.mean_sq_diff(out, g.constant(target)), loss_weight(sigma, scfg));
    g.backward(loss);

    for (std::size_t i = 0; i < model.parameters().size(); ++i) {
        const double err =
            test::max_grad_rel_err(model.parameters()[i], loss_value, g.grad(bound[i]), 1e-4);
        INFO("parameter ", model.parameter_names()[i]);
        CHECK(err < 1e-3);
    }
}

TEST_CASE("deterministic initialization and forward") {
    const DenoiserConfig cfg = tiny_config();
    const DenoiserModel a = DenoiserModel::init(cfg, 77);
    const DenoiserModel b = DenoiserModel::init(cfg, 77);
    REQUIRE(a.parameters().size() == b.parameters().size());
    for (std::size_t i = 0; i < a.parameters().size(); ++i) {
        for (std::size_t j = 0; j < a.parameters()[i].numel(); ++j) {
            CHECK(a.parameters()[i][j] == b.parameters()[i][j]);
        }
    }
    ScheduleConfig scfg;
    Tensor zq = test::random_tensor({2, 2, 4}, 1);
    Tensor zc = test::random_tensor({2, 2, 4}, 2);
    const Tensor oa = a.denoise(zq, 1.0, zc, scfg);
    const Tensor ob = b.denoise(zq, 1.0, zc, scfg);
    for (std::size_t i = 0; i < oa.numel(); ++i) CHECK(oa[i] == ob[i]);
}

TEST_CASE("checkpoint round trip is bitwise") {
    const auto dir = std::filesystem::temp_directory_path() /
                     ("icls_ckpt_" + std::to_string(::getpid()));
    std::filesystem::create_directories(dir);
    const std::string path = (dir / "model.ckpt").string();

    const DenoiserConfig cfg{8, 16, 2, 4, 2};
    const DenoiserModel model = DenoiserModel::init(cfg, 5);
    model.save_checkpoint(path, 1234);

    std::uint64_t step = 0;
    const DenoiserModel back = DenoiserModel::load_checkpoint(path, &step);
    CHECK(step == 1234);
    CHECK(back.config() == cfg);
    REQUIRE(back.parameters().size() == model.parameters().size());
    for (std::size_t i = 0; i < model.parameters().size(); ++i) {
        REQUIRE(back.parameters()[i].same_shape(model.parameters()[i]));
        for (std::size_t j = 0; j < model.parameters()[i].numel(); ++j) {
            CHECK(back.parameters()[i][j] == model.parameters()[i][j]);
        }
    }
    CHECK(std::filesystem::exists(path + ".json"));

    // Saving twice produces identical bytes.
    const std::string path2 = (dir / "model2.ckpt").string();
    model.save_checkpoint(path2, 1234);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    std::stringstream s1, s2;
    s1 << f1.rdbuf();
    s2 << f2.rdbuf();
    CHECK(s1.str() == s2.str());
    std::filesystem::remove_all(dir);
}
