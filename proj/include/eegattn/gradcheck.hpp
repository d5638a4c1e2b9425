#pragma once

#include <functional>
#include <string>
#include <vector>

#include "eegattn/nn.hpp"
#include "eegattn/tensor.hpp"
#include "eegattn/training.hpp"

namespace eegattn {

// Finite-difference suite over every registered op, the layer forwards, and
// the composed model + loss, on randomized small shapes. Returns one report
// per (op, seed-batch); all checks use central differences.
inline std::vector<GradCheckReport> run_gradcheck_suite(std::size_t n_seeds = 20,
                                                        double eps = 1e-5,
                                                        double tol = 1e-4) {
    std::vector<GradCheckReport> reports;
    auto check = [&](const std::string& name,
                     const std::function<Tensor(const Tensor&)>& f,
                     const Shape& shape, std::uint64_t seed) {
        Rng rng(seed);
        Tensor x = Tensor::randn(shape, rng);
        GradCheckReport r = finite_diff_check(name, f, x, eps, tol);
        // keep the worst case per op name
        for (auto& prev : reports)
            if (prev.op_name == name) {
                if (r.max_rel_error > prev.max_rel_error) prev = r;
                return;
            }
        reports.push_back(r);
    };

    for (std::uint64_t s = 1; s <= n_seeds; ++s) {
        Rng aux(s * 7919);
        const Tensor other = Tensor::randn({3, 4}, aux);
        const Tensor mat = Tensor::randn({4, 5}, aux);
        check("add", [&](const Tensor& x) { return sum(add(x, other)); }, {3, 4}, s);
        check("add_broadcast",
              [&](const Tensor& x) { return sum(square(add(x, other))); }, {1, 4}, s);
        check("sub", [&](const Tensor& x) { return sum(square(sub(x, other))); },
              {3, 4}, s);
        check("mul", [&](const Tensor& x) { return sum(mul(x, other)); }, {3, 4}, s);
        check("matmul", [&](const Tensor& x) { return sum(square(matmul(x, mat))); },
              {3, 4}, s);
        check("matmul_batched",
              [&](const Tensor& x) {
                  return sum(square(matmul(x, transpose_last(x))));
              },
              {2, 3, 4}, s);
        check("softmax", [&](const Tensor& x) { return sum(square(softmax(x, 1))); },
              {3, 5}, s);
        check("elu", [&](const Tensor& x) { return sum(square(elu(x))); }, {3, 4}, s);
        check("relu", [&](const Tensor& x) { return sum(square(relu(x))); }, {3, 4}, s);
        check("mean", [&](const Tensor& x) { return mean(square(x)); }, {3, 4}, s);
        check("reshape_permute",
              [&](const Tensor& x) {
                  return sum(square(permute(reshape(x, {2, 3, 2}), {1, 0, 2})));
              },
              {3, 4}, s);
        check("slice_concat",
              [&](const Tensor& x) {
                  Tensor a = slice(x, 1, 0, 2), b = slice(x, 1, 2, 2);
                  return sum(square(concat(1, {b, a})));
              },
              {3, 4}, s);
        check("avg_pool",
              [&](const Tensor& x) { return sum(square(avg_pool_w(x, 2))); },
              {2, 2, 1, 8}, s);
        {
            Rng r2(s * 31 + 1);
            Tensor w = Tensor::randn({3, 2, 2, 3}, r2);
            Tensor b = Tensor::randn({3}, r2);
            check("conv2d",
                  [&](const Tensor& x) {
                      return sum(square(conv2d(x, w, b, 0, 1, 1, 1, 1)));
                  },
                  {2, 2, 3, 6}, s);
            Tensor wd = Tensor::randn({4, 1, 1, 3}, r2);
            check("conv2d_depthwise",
                  [&](const Tensor& x) {
                      return sum(square(conv2d(x, wd, Tensor(), 0, 0, 1, 1, 4)));
                  },
                  {2, 4, 1, 6}, s);
        }
        {
            Rng r2(s * 31 + 2);
            Tensor gamma = Tensor::randn({3}, r2), beta = Tensor::randn({3}, r2);
            check("batch_norm",
                  [&](const Tensor& x) {
                      Tensor rm = Tensor::zeros({3}), rv = Tensor::ones({3});
                      return sum(square(
                          batch_norm2d(x, gamma, beta, rm, rv, true)));
                  },
                  {2, 3, 2, 4}, s);
            Tensor g4 = Tensor::randn({4}, r2), b4 = Tensor::randn({4}, r2);
            check("layer_norm",
                  [&](const Tensor& x) {
                      return sum(square(layer_norm(x, g4, b4)));
                  },
                  {3, 2, 4}, s);
        }
    }

    // Layer forwards and the composed model + loss on the toy config.
    ModelConfig toy;
    toy.n_channels = 4;
    toy.n_samples = 64;
    toy.temporal_kernel_len = 32;
    toy.pool1 = 4;
    toy.pool2 = 4;
    toy.d_model = 16;
    toy.n_heads = 2;
    toy.n_encoder_layers = 1;
    toy.ffn_dim = 32;
    toy.n_classes = 5;
    toy.dropout_conv = 0.0;
    toy.dropout_encoder = 0.0;
    for (std::uint64_t s = 1; s <= n_seeds; ++s) {
        Rng prng(s * 104729);
        ModelParams params = init_params(toy, prng);
        check("conv_feature_extractor",
              [&](const Tensor& x) {
                  Rng r(0);
                  return sum(square(conv_feature_extractor(x, params, toy, true, r)));
              },
              {2, 1, 4, 64}, s);
        check("tokenize",
              [&](const Tensor& x) {
                  return sum(square(tokenize(x, params, toy)));
              },
              {2, toy.pointwise_filters, 1, toy.t_pooled()}, s);
        check("multi_head_attention",
              [&](const Tensor& x) {
                  return sum(square(multi_head_attention(x, params.layers[0], toy).first));
              },
              {2, 5, toy.d_model}, s);
        check("encoder_block",
              [&](const Tensor& x) {
                  Rng r(0);
                  return sum(square(encoder_block(x, params.layers[0], toy, true, r)));
              },
              {2, 5, toy.d_model}, s);
        const std::vector<int> labels{1, 3};
        check("model_forward+squared_hinge",
              [&](const Tensor& x) {
                  Rng r(0);
                  auto [scores, traces] = model_forward(x, params, toy, true, r);
                  return squared_hinge_loss(scores, labels);
              },
              {2, 1, 4, 64}, s);
    }
    return reports;
}

}  // namespace eegattn
