#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>

#include "eegattn/nn.hpp"
#include "eegattn/training.hpp"

using namespace eegattn;

namespace {

ModelConfig toy_config() {
    ModelConfig c;
    c.n_channels = 4;
    c.n_samples = 64;
    c.temporal_kernel_len = 32;
    c.pool1 = 4;
    c.pool2 = 4;
    c.d_model = 16;
    c.n_heads = 2;
    c.n_encoder_layers = 1;
    c.ffn_dim = 32;
    c.n_classes = 5;
    c.dropout_conv = 0.0;
    c.dropout_encoder = 0.0;
    return c;
}

}  // namespace

TEST_CASE("config validation") {
    ModelConfig c;
    CHECK_NOTHROW(c.validate());
    c.n_heads = 3;  // 32 % 3 != 0
    CHECK_THROWS_AS(c.validate(), TensorError);
    c = ModelConfig{};
    c.temporal_kernel_len = 501;
    CHECK_THROWS_AS(c.validate(), TensorError);
    c = ModelConfig{};
    c.patch_size = 4;  // 15 % 4 != 0
    CHECK_THROWS_AS(c.validate(), TensorError);
}

TEST_CASE("conv feature extractor shapes: defaults 500 -> 15") {
    ModelConfig cfg;  // defaults: pools 4*8, 500 -> 125 -> 15
    Rng rng(1);
    ModelParams p = init_params(cfg, rng);
    Tensor x = Tensor::randn({2, 1, 10, 500}, rng);
    Tensor out = conv_feature_extractor(x, p, cfg, false, rng);
    CHECK(out.shape() == Shape{2, 16, 1, 15});
}

TEST_CASE("zero input through inference-mode conv stack stays zero") {
    ModelConfig cfg = toy_config();
    Rng rng(2);
    ModelParams p = init_params(cfg, rng);
    // biases are zero-initialized; BN starts at unit scale / zero shift
    Tensor x = Tensor::zeros({2, 1, 4, 64});
    Tensor out = conv_feature_extractor(x, p, cfg, false, rng);
    for (double v : out.data()) CHECK(v == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("single-tap temporal kernel reproduces the input series") {
    ModelConfig cfg = toy_config();
    cfg.temporal_filters = 1;
    cfg.temporal_kernel_len = 1;
    Rng rng(3);
    ModelParams p = init_params(cfg, rng);
    p.conv_t_w.data() = {1.0};  // delta kernel
    p.conv_t_b.data() = {0.0};
    Tensor x = Tensor::randn({1, 1, 4, 64}, rng);
    Tensor out = conv2d(x, p.conv_t_w, p.conv_t_b, 0, 0, 0, 0, 1);
    CHECK(out.shape() == Shape{1, 1, 4, 64});
    for (std::size_t i = 0; i < x.size(); ++i)
        CHECK(out.data()[i] == doctest::Approx(x.data()[i]).epsilon(1e-15));
}

TEST_CASE("tokenize: shape, zero features, patch-permutation locality") {
    ModelConfig cfg;  // defaults, patch 1, T'=15 -> 16 tokens with CLS
    Rng rng(4);
    ModelParams p = init_params(cfg, rng);
    Tensor feats = Tensor::randn({3, 16, 1, 15}, rng);
    Tensor tokens = tokenize(feats, p, cfg);
    CHECK(tokens.shape() == Shape{3, 16, 32});

    SUBCASE("zero features with zero bias/pos-emb give zero non-CLS tokens") {
        for (double& v : p.pos_emb.data()) v = 0.0;
        for (double& v : p.token_b.data()) v = 0.0;
        Tensor t = tokenize(Tensor::zeros({2, 16, 1, 15}), p, cfg);
        for (std::size_t b = 0; b < 2; ++b)
            for (std::size_t n = 1; n < 16; ++n)
                for (std::size_t d = 0; d < 32; ++d)
                    CHECK(t.data()[(b * 16 + n) * 32 + d] == 0.0);
    }

    SUBCASE("without positional embeddings, permuting patches permutes token rows") {
        cfg.use_positional_embeddings = false;
        // reverse the 15 time steps
        Tensor rev = Tensor::zeros({3, 16, 1, 15});
        for (std::size_t b = 0; b < 3; ++b)
            for (std::size_t f = 0; f < 16; ++f)
                for (std::size_t t = 0; t < 15; ++t)
                    rev.data()[(b * 16 + f) * 15 + t] =
                        feats.data()[(b * 16 + f) * 15 + (14 - t)];
        Tensor t1 = tokenize(feats, p, cfg);
        Tensor t2 = tokenize(rev, p, cfg);
        for (std::size_t b = 0; b < 3; ++b)
            for (std::size_t n = 1; n <= 15; ++n)
                for (std::size_t d = 0; d < 32; ++d)
                    CHECK(t1.data()[(b * 16 + n) * 32 + d] ==
                          doctest::Approx(t2.data()[(b * 16 + (16 - n)) * 32 + d])
                              .epsilon(1e-12));
    }

    SUBCASE("non-dividing patch size is rejected") {
        ModelConfig bad = cfg;
        bad.patch_size = 2;  // 15 % 2
        CHECK_THROWS_AS(bad.validate(), TensorError);
    }
}

TEST_CASE("attention: identity projections") {
    ModelConfig cfg = toy_config();
    cfg.d_model = 2;
    cfg.n_heads = 1;
    Rng rng(5);
    ModelParams p = init_params(cfg, rng);
    auto& lp = p.layers[0];
    lp.wq.data() = {1, 0, 0, 1};
    lp.wk.data() = {1, 0, 0, 1};
    lp.wv.data() = {1, 0, 0, 1};
    lp.wo.data() = {1, 0, 0, 1};

    SUBCASE("single token passes through unchanged") {
        Tensor x = Tensor::from_data({1, 1, 2}, {0.3, -0.7});
        auto [out, trace] = multi_head_attention(x, lp, cfg);
        CHECK(out.data()[0] == doctest::Approx(0.3));
        CHECK(out.data()[1] == doctest::Approx(-0.7));
        CHECK(trace.at(0, 0, 0, 0) == doctest::Approx(1.0));
    }

    SUBCASE("identical keys give uniform weights and mean-of-values output") {
        Tensor x = Tensor::from_data({1, 2, 2}, {1.0, 2.0, 1.0, 2.0});
        auto [out, trace] = multi_head_attention(x, lp, cfg);
        for (std::size_t q = 0; q < 2; ++q)
            for (std::size_t k = 0; k < 2; ++k)
                CHECK(trace.at(0, 0, q, k) == doctest::Approx(0.5));
        CHECK(out.data()[0] == doctest::Approx(1.0));
        CHECK(out.data()[1] == doctest::Approx(2.0));
    }

    SUBCASE("hand-evaluated softmax for [[0,0],[1,0]]") {
        Tensor x = Tensor::from_data({1, 2, 2}, {0, 0, 1, 0});
        auto [out, trace] = multi_head_attention(x, lp, cfg);
        // row 0: scores 0,0 -> [0.5, 0.5]
        CHECK(trace.at(0, 0, 0, 0) == doctest::Approx(0.5));
        CHECK(trace.at(0, 0, 0, 1) == doctest::Approx(0.5));
        // row 1: scores 0, 1/sqrt(2)
        const double s = 1.0 / std::sqrt(2.0);
        const double w1 = std::exp(s) / (1.0 + std::exp(s));
        CHECK(trace.at(0, 0, 1, 1) == doctest::Approx(w1).epsilon(1e-12));
    }
}

TEST_CASE("attention rows sum to 1 for random inputs, 50 seeds") {
    ModelConfig cfg = toy_config();
    for (std::uint64_t seed = 1; seed <= 50; ++seed) {
        Rng rng(seed);
        ModelParams p = init_params(cfg, rng);
        Tensor x = Tensor::randn({2, 5, cfg.d_model}, rng);
        auto [out, trace] = multi_head_attention(x, p.layers[0], cfg);
        for (std::size_t b = 0; b < 2; ++b)
            for (std::size_t h = 0; h < cfg.n_heads; ++h)
                for (std::size_t q = 0; q < 5; ++q) {
                    double sum = 0.0;
                    for (std::size_t k = 0; k < 5; ++k) {
                        const double w = trace.at(b, h, q, k);
                        CHECK(w >= 0.0);
                        CHECK(w <= 1.0);
                        sum += w;
                    }
                    CHECK(std::abs(sum - 1.0) < 1e-9);
                }
    }
}

TEST_CASE("encoder block: shape preservation, layer-norm statistics, determinism") {
    ModelConfig cfg = toy_config();
    Rng rng(6);
    ModelParams p = init_params(cfg, rng);
    Tensor x = Tensor::randn({3, 6, cfg.d_model}, rng);
    Rng r1(0);
    Tensor y = encoder_block(x, p.layers[0], cfg, false, r1);
    CHECK(y.shape() == x.shape());

    // final layer_norm: each token has ~zero mean, unit variance across d_model
    const std::size_t d = cfg.d_model;
    for (std::size_t row = 0; row < y.size() / d; ++row) {
        double mu = 0.0;
        for (std::size_t i = 0; i < d; ++i) mu += y.data()[row * d + i];
        mu /= double(d);
        double var = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            const double dd = y.data()[row * d + i] - mu;
            var += dd * dd;
        }
        var /= double(d);
        CHECK(std::abs(mu) < 1e-6);
        CHECK(std::abs(var - 1.0) < 1e-3);  // eps in the denominator
    }

    // inference mode is bit-deterministic even with nonzero dropout config
    ModelConfig cfg_do = cfg;
    cfg_do.dropout_encoder = 0.5;
    Rng r2(7), r3(99);
    Tensor a = encoder_block(x, p.layers[0], cfg_do, false, r2);
    Tensor b = encoder_block(x, p.layers[0], cfg_do, false, r3);
    CHECK(a.data() == b.data());
}

TEST_CASE("token-permutation equivariance without positional embeddings") {
    ModelConfig cfg = toy_config();
    Rng rng(8);
    ModelParams p = init_params(cfg, rng);
    const std::size_t S = 7, d = cfg.d_model;
    for (int trial = 0; trial < 10; ++trial) {
        Tensor x = Tensor::randn({1, S, d}, rng);
        std::vector<std::size_t> perm(S);
        std::iota(perm.begin(), perm.end(), 0);
        rng.shuffle(perm);
        Tensor px = Tensor::zeros({1, S, d});
        for (std::size_t s = 0; s < S; ++s)
            for (std::size_t i = 0; i < d; ++i)
                px.data()[perm[s] * d + i] = x.data()[s * d + i];
        Rng r1(0), r2(0);
        Tensor y = encoder_block(x, p.layers[0], cfg, false, r1);
        Tensor py = encoder_block(px, p.layers[0], cfg, false, r2);
        for (std::size_t s = 0; s < S; ++s)
            for (std::size_t i = 0; i < d; ++i)
                CHECK(py.data()[perm[s] * d + i] ==
                      doctest::Approx(y.data()[s * d + i]).epsilon(1e-9));
    }
}

TEST_CASE("model_forward: score shapes and patch-permutation invariance") {
    ModelConfig cfg;  // defaults, 13 classes
    Rng rng(9);
    ModelParams p = init_params(cfg, rng);
    Tensor x = Tensor::randn({4, 1, 10, 500}, rng);
    auto [scores, traces] = model_forward(x, p, cfg, false, rng);
    CHECK(scores.shape() == Shape{4, 13});
    CHECK(traces.layers.size() == cfg.n_encoder_layers);
}

TEST_CASE("patch permutation leaves scores unchanged without positional embeddings") {
    // permuting patches == permuting time-blocks of the conv feature map;
    // check at the tokenize/encoder level with the conv features fixed.
    ModelConfig cfg = toy_config();
    cfg.use_positional_embeddings = false;
    Rng rng(10);
    ModelParams p = init_params(cfg, rng);
    const std::size_t Tp = cfg.t_pooled(), F2 = cfg.pointwise_filters;
    Tensor feats = Tensor::randn({2, F2, 1, Tp}, rng);

    auto score_from = [&](const Tensor& f) {
        Tensor x = tokenize(f, p, cfg);
        Rng r(0);
        for (auto& lp : p.layers) x = encoder_block(x, lp, cfg, false, r);
        Tensor cls = reshape(slice(x, 1, 0, 1), {2, cfg.d_model});
        return add(matmul(cls, p.head_w), p.head_b);
    };
    Tensor base = score_from(feats);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<std::size_t> perm(Tp);
        std::iota(perm.begin(), perm.end(), 0);
        rng.shuffle(perm);
        Tensor pf = Tensor::zeros({2, F2, 1, Tp});
        for (std::size_t b = 0; b < 2; ++b)
            for (std::size_t f = 0; f < F2; ++f)
                for (std::size_t t = 0; t < Tp; ++t)
                    pf.data()[(b * F2 + f) * Tp + perm[t]] =
                        feats.data()[(b * F2 + f) * Tp + t];
        Tensor s = score_from(pf);
        for (std::size_t i = 0; i < s.size(); ++i)
            CHECK(s.data()[i] == doctest::Approx(base.data()[i]).epsilon(1e-9));
    }
}

TEST_CASE("parameter count golden for the default config") {
    ModelConfig cfg;
    Rng rng(0);
    ModelParams p = init_params(cfg, rng);
    CHECK(p.parameter_count() == 20157);
    // deterministic function of the config: a second build agrees
    Rng rng2(123);
    ModelParams q = init_params(cfg, rng2);
    CHECK(q.parameter_count() == 20157);
}

TEST_CASE("weights round-trip bit-exactly through the EATW container") {
    ModelConfig cfg = toy_config();
    Rng rng(12);
    ModelParams p = init_params(cfg, rng);
    p.norm_mean.data()[0] = 3.25;
    const std::string path = "test_weights_tmp.eatw";
    save_weights(path, cfg, p);
    auto [cfg2, p2] = load_weights(path);
    CHECK(cfg2.n_channels == cfg.n_channels);
    CHECK(cfg2.d_model == cfg.d_model);
    auto ta = p.all(), tb = p2.all();
    REQUIRE(ta.size() == tb.size());
    for (std::size_t i = 0; i < ta.size(); ++i)
        CHECK(ta[i]->data() == tb[i]->data());
    std::remove(path.c_str());
}

TEST_CASE("describe emits the parameter count") {
    const std::string d = describe(ModelConfig{});
    CHECK(d.find("20157") != std::string::npos);
    CHECK(d.find("[B,13]") != std::string::npos);
}
