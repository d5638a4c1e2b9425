#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "eegattn/binio.hpp"
#include "eegattn/tensor.hpp"

namespace eegattn {

// Hyperparameters of the conv + attention classifier.
struct ModelConfig {
    std::size_t n_channels = 10;   // C
    std::size_t n_samples = 500;   // T
    double sampling_rate = 250.0;  // fs
    std::size_t n_classes = 13;    // K
    std::size_t temporal_filters = 8;   // F1
    std::size_t depth_multiplier = 2;   // D
    std::size_t pointwise_filters = 16; // F2
    std::size_t temporal_kernel_len = 125;  // fs/2
    std::size_t sep_kernel_len = 16;
    std::size_t pool1 = 4;
    std::size_t pool2 = 8;
    std::size_t d_model = 32;
    std::size_t n_heads = 2;
    std::size_t n_encoder_layers = 2;
    std::size_t ffn_dim = 64;
    std::size_t patch_size = 1;
    double dropout_conv = 0.25;
    double dropout_encoder = 0.1;
    bool use_positional_embeddings = true;

    std::size_t spatial_filters() const { return temporal_filters * depth_multiplier; }
    std::size_t t_pooled() const { return n_samples / pool1 / pool2; }
    std::size_t n_tokens() const { return t_pooled() / patch_size; }
    std::size_t seq_len() const { return n_tokens() + 1; }  // + CLS
    std::size_t head_dim() const { return d_model / n_heads; }

    void validate() const {
        std::ostringstream err;
        if (n_classes < 2) err << "n_classes must be >= 2; ";
        if (n_heads == 0 || d_model % n_heads != 0)
            err << "d_model (" << d_model << ") must be divisible by n_heads ("
                << n_heads << "); ";
        if (temporal_kernel_len == 0 || temporal_kernel_len > n_samples)
            err << "temporal_kernel_len must be in [1, n_samples]; ";
        if (pool1 == 0 || pool2 == 0 || n_samples / pool1 == 0 || t_pooled() == 0)
            err << "pools do not leave a positive time length; ";
        if (patch_size == 0 || t_pooled() % patch_size != 0)
            err << "patch_size (" << patch_size
                << ") must divide post-pooling length (" << t_pooled() << "); ";
        if (n_channels == 0 || n_samples == 0) err << "empty input dims; ";
        const std::string s = err.str();
        if (!s.empty()) throw TensorError("ModelConfig: " + s);
    }
};

// Attention weights captured during a forward pass, one entry per encoder
// layer.
struct AttentionTrace {
    struct Layer {
        std::size_t n_heads = 0;
        std::size_t seq_len = 0;
        std::vector<double> weights;  // [batch, head, query, key]
        double at(std::size_t b, std::size_t h, std::size_t q, std::size_t k) const {
            return weights[((b * n_heads + h) * seq_len + q) * seq_len + k];
        }
        std::size_t n_batches() const {
            return weights.size() / (n_heads * seq_len * seq_len);
        }
    };
    std::vector<Layer> layers;
};

struct EncoderLayerParams {
    Tensor wq, wk, wv, wo;
    Tensor ln1_gamma, ln1_beta;
    Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
    Tensor ln2_gamma, ln2_beta;
};

struct ModelParams {
    // conv stack
    Tensor conv_t_w, conv_t_b;
    Tensor bn1_gamma, bn1_beta, bn1_rmean, bn1_rvar;
    Tensor conv_s_w, conv_s_b;
    Tensor bn2_gamma, bn2_beta, bn2_rmean, bn2_rvar;
    Tensor sep_dw_w, sep_dw_b, sep_pw_w, sep_pw_b;
    Tensor bn3_gamma, bn3_beta, bn3_rmean, bn3_rvar;
    // tokenization
    Tensor token_w, token_b;
    Tensor pos_emb;  // [seq_len, d_model]; present even when disabled
    Tensor cls;      // [1, 1, d_model]
    std::vector<EncoderLayerParams> layers;
    // classification head
    Tensor head_w, head_b;
    // per-channel z-score statistics fitted on the training fold (buffers)
    Tensor norm_mean, norm_std;

    // Trainable tensors, declared serialization order.
    std::vector<Tensor*> trainable() {
        std::vector<Tensor*> out{&conv_t_w, &conv_t_b, &bn1_gamma, &bn1_beta,
                                 &conv_s_w, &conv_s_b, &bn2_gamma, &bn2_beta,
                                 &sep_dw_w, &sep_dw_b, &sep_pw_w, &sep_pw_b,
                                 &bn3_gamma, &bn3_beta, &token_w, &token_b,
                                 &pos_emb, &cls};
        for (auto& l : layers)
            for (Tensor* t : {&l.wq, &l.wk, &l.wv, &l.wo, &l.ln1_gamma,
                              &l.ln1_beta, &l.ffn_w1, &l.ffn_b1, &l.ffn_w2,
                              &l.ffn_b2, &l.ln2_gamma, &l.ln2_beta})
                out.push_back(t);
        out.push_back(&head_w);
        out.push_back(&head_b);
        return out;
    }

    // Non-trainable buffers (batch-norm moments, normalization stats).
    std::vector<Tensor*> buffers() {
        return {&bn1_rmean, &bn1_rvar, &bn2_rmean, &bn2_rvar,
                &bn3_rmean, &bn3_rvar, &norm_mean, &norm_std};
    }

    std::vector<Tensor*> all() {
        auto out = trainable();
        for (Tensor* t : buffers()) out.push_back(t);
        return out;
    }

    std::size_t parameter_count() {
        std::size_t n = 0;
        for (Tensor* t : trainable()) n += t->size();
        return n;
    }

    void zero_grad() {
        for (Tensor* t : trainable()) t->zero_grad();
    }
};

inline ModelParams init_params(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    ModelParams p;
    const std::size_t F1 = cfg.temporal_filters, FD = cfg.spatial_filters(),
                      F2 = cfg.pointwise_filters, C = cfg.n_channels,
                      d = cfg.d_model;
    auto bias = [](std::size_t n) { return Tensor::zeros({n}, true); };
    auto bn = [&](std::size_t n, Tensor& g, Tensor& b, Tensor& rm, Tensor& rv) {
        g = Tensor::ones({n}, true);
        b = Tensor::zeros({n}, true);
        rm = Tensor::zeros({n});
        rv = Tensor::ones({n});
    };
    p.conv_t_w = Tensor::glorot({F1, 1, 1, cfg.temporal_kernel_len},
                                cfg.temporal_kernel_len, F1 * cfg.temporal_kernel_len, rng);
    p.conv_t_b = bias(F1);
    bn(F1, p.bn1_gamma, p.bn1_beta, p.bn1_rmean, p.bn1_rvar);
    p.conv_s_w = Tensor::glorot({FD, 1, C, 1}, C, cfg.depth_multiplier * C, rng);
    p.conv_s_b = bias(FD);
    bn(FD, p.bn2_gamma, p.bn2_beta, p.bn2_rmean, p.bn2_rvar);
    p.sep_dw_w = Tensor::glorot({FD, 1, 1, cfg.sep_kernel_len}, cfg.sep_kernel_len,
                                cfg.sep_kernel_len, rng);
    p.sep_dw_b = bias(FD);
    p.sep_pw_w = Tensor::glorot({F2, FD, 1, 1}, FD, F2, rng);
    p.sep_pw_b = bias(F2);
    bn(F2, p.bn3_gamma, p.bn3_beta, p.bn3_rmean, p.bn3_rvar);
    const std::size_t patch_dim = F2 * cfg.patch_size;
    p.token_w = Tensor::glorot({patch_dim, d}, patch_dim, d, rng);
    p.token_b = bias(d);
    p.pos_emb = Tensor::randn({cfg.seq_len(), d}, rng, 0.02, true);
    p.cls = Tensor::randn({1, 1, d}, rng, 0.02, true);
    for (std::size_t l = 0; l < cfg.n_encoder_layers; ++l) {
        EncoderLayerParams lp;
        lp.wq = Tensor::glorot({d, d}, d, d, rng);
        lp.wk = Tensor::glorot({d, d}, d, d, rng);
        lp.wv = Tensor::glorot({d, d}, d, d, rng);
        lp.wo = Tensor::glorot({d, d}, d, d, rng);
        lp.ln1_gamma = Tensor::ones({d}, true);
        lp.ln1_beta = Tensor::zeros({d}, true);
        lp.ffn_w1 = Tensor::glorot({d, cfg.ffn_dim}, d, cfg.ffn_dim, rng);
        lp.ffn_b1 = bias(cfg.ffn_dim);
        lp.ffn_w2 = Tensor::glorot({cfg.ffn_dim, d}, cfg.ffn_dim, d, rng);
        lp.ffn_b2 = bias(d);
        lp.ln2_gamma = Tensor::ones({d}, true);
        lp.ln2_beta = Tensor::zeros({d}, true);
        p.layers.push_back(std::move(lp));
    }
    p.head_w = Tensor::glorot({d, cfg.n_classes}, d, cfg.n_classes, rng);
    p.head_b = bias(cfg.n_classes);
    p.norm_mean = Tensor::zeros({C});
    p.norm_std = Tensor::ones({C});
    return p;
}

// ---------------------------------------------------------------------------
// Forward passes
// ---------------------------------------------------------------------------

// EEGNet-style feature extractor: [B,1,C,T] -> [B,F2,1,T'].
inline Tensor conv_feature_extractor(const Tensor& batch, ModelParams& p,
                                     const ModelConfig& cfg, bool training,
                                     Rng& rng) {
    if (batch.rank() != 4 || batch.shape()[1] != 1 ||
        batch.shape()[2] != cfg.n_channels || batch.shape()[3] != cfg.n_samples)
        throw TensorError("conv_feature_extractor: input " +
                          shape_str(batch.shape()) + " does not match config [B,1," +
                          std::to_string(cfg.n_channels) + "," +
                          std::to_string(cfg.n_samples) + "]");
    const std::size_t kt = cfg.temporal_kernel_len;
    const std::size_t padL = (kt - 1) / 2, padR = kt - 1 - padL;
    Tensor x = conv2d(batch, p.conv_t_w, p.conv_t_b, 0, 0, padL, padR, 1);
    x = batch_norm2d(x, p.bn1_gamma, p.bn1_beta, p.bn1_rmean, p.bn1_rvar, training);
    // depthwise spatial conv collapses the channel axis
    x = conv2d(x, p.conv_s_w, p.conv_s_b, 0, 0, 0, 0, cfg.temporal_filters);
    x = batch_norm2d(x, p.bn2_gamma, p.bn2_beta, p.bn2_rmean, p.bn2_rvar, training);
    x = elu(x);
    x = avg_pool_w(x, cfg.pool1);
    x = dropout(x, cfg.dropout_conv, rng, training);
    const std::size_t ks = cfg.sep_kernel_len;
    const std::size_t spadL = (ks - 1) / 2, spadR = ks - 1 - spadL;
    x = conv2d(x, p.sep_dw_w, p.sep_dw_b, 0, 0, spadL, spadR, cfg.spatial_filters());
    x = conv2d(x, p.sep_pw_w, p.sep_pw_b, 0, 0, 0, 0, 1);
    x = batch_norm2d(x, p.bn3_gamma, p.bn3_beta, p.bn3_rmean, p.bn3_rvar, training);
    x = elu(x);
    x = avg_pool_w(x, cfg.pool2);
    x = dropout(x, cfg.dropout_conv, rng, training);
    return x;
}

// [B,F2,1,T'] -> [B, N+1, d_model]: per-patch linear projection, positional
// embeddings, CLS token at index 0.
inline Tensor tokenize(const Tensor& features, ModelParams& p,
                       const ModelConfig& cfg) {
    const std::size_t B = features.shape()[0];
    const std::size_t F2 = cfg.pointwise_filters, Tp = cfg.t_pooled(),
                      N = cfg.n_tokens(), ps = cfg.patch_size;
    if (features.shape()[1] != F2 || features.shape()[3] != Tp)
        throw TensorError("tokenize: features " + shape_str(features.shape()) +
                          " do not match config");
    Tensor x = reshape(features, {B, F2, N, ps});
    x = permute(x, {0, 2, 1, 3});              // [B,N,F2,ps]
    x = reshape(x, {B, N, F2 * ps});
    x = add(matmul(x, p.token_w), p.token_b);  // [B,N,d]
    Tensor cls = add(p.cls, Tensor::zeros({B, 1, cfg.d_model}));  // broadcast to batch
    Tensor seq = concat(1, {cls, x});          // [B,N+1,d]
    if (cfg.use_positional_embeddings) seq = add(seq, p.pos_emb);
    return seq;
}

// Scaled dot-product multi-head self-attention; returns projected output and
// the attention weights for inspection.
inline std::pair<Tensor, AttentionTrace::Layer> multi_head_attention(
    const Tensor& x, const EncoderLayerParams& lp, const ModelConfig& cfg) {
    const std::size_t B = x.shape()[0], S = x.shape()[1], d = cfg.d_model,
                      h = cfg.n_heads, dk = cfg.head_dim();
    if (x.rank() != 3 || x.shape()[2] != d)
        throw TensorError("multi_head_attention: input " + shape_str(x.shape()) +
                          " does not match d_model " + std::to_string(d));
    auto split = [&](const Tensor& t) {
        return permute(reshape(t, {B, S, h, dk}), {0, 2, 1, 3});  // [B,h,S,dk]
    };
    Tensor q = split(matmul(x, lp.wq));
    Tensor k = split(matmul(x, lp.wk));
    Tensor v = split(matmul(x, lp.wv));
    Tensor scores = scale(matmul(q, transpose_last(k)), 1.0 / std::sqrt(double(dk)));
    Tensor attn = softmax(scores, 3);  // [B,h,S,S]
    Tensor out = matmul(attn, v);      // [B,h,S,dk]
    out = reshape(permute(out, {0, 2, 1, 3}), {B, S, d});
    out = matmul(out, lp.wo);
    AttentionTrace::Layer trace;
    trace.n_heads = h;
    trace.seq_len = S;
    trace.weights = attn.data();  // [B,h,S,S] flattened, batch-major
    return {out, trace};
}

// Post-norm encoder block: layer_norm after each residual add.
inline Tensor encoder_block(const Tensor& x, const EncoderLayerParams& lp,
                            const ModelConfig& cfg, bool training, Rng& rng,
                            AttentionTrace::Layer* trace_out = nullptr) {
    auto [attn, trace] = multi_head_attention(x, lp, cfg);
    if (trace_out) *trace_out = std::move(trace);
    Tensor y = layer_norm(add(x, dropout(attn, cfg.dropout_encoder, rng, training)),
                          lp.ln1_gamma, lp.ln1_beta);
    Tensor f = add(matmul(y, lp.ffn_w1), lp.ffn_b1);
    f = elu(f);
    f = add(matmul(f, lp.ffn_w2), lp.ffn_b2);
    return layer_norm(add(y, dropout(f, cfg.dropout_encoder, rng, training)),
                      lp.ln2_gamma, lp.ln2_beta);
}

// Full model: conv features -> tokens -> encoder stack -> CLS head.
inline std::pair<Tensor, AttentionTrace> model_forward(const Tensor& batch,
                                                       ModelParams& p,
                                                       const ModelConfig& cfg,
                                                       bool training, Rng& rng) {
    Tensor feats = conv_feature_extractor(batch, p, cfg, training, rng);
    Tensor x = tokenize(feats, p, cfg);
    AttentionTrace traces;
    traces.layers.resize(p.layers.size());
    for (std::size_t l = 0; l < p.layers.size(); ++l)
        x = encoder_block(x, p.layers[l], cfg, training, rng, &traces.layers[l]);
    const std::size_t B = batch.shape()[0];
    Tensor cls = reshape(slice(x, 1, 0, 1), {B, cfg.d_model});
    Tensor scores = add(matmul(cls, p.head_w), p.head_b);  // [B,K]
    return {scores, std::move(traces)};
}

// Human-readable model summary (layer shapes + parameter count).
inline std::string describe(const ModelConfig& cfg) {
    cfg.validate();
    Rng rng(0);
    ModelParams p = init_params(cfg, rng);
    std::ostringstream os;
    os << "input                [B,1," << cfg.n_channels << "," << cfg.n_samples << "]\n"
       << "temporal conv        [B," << cfg.temporal_filters << "," << cfg.n_channels
       << "," << cfg.n_samples << "]  kernel 1x" << cfg.temporal_kernel_len << "\n"
       << "depthwise spatial    [B," << cfg.spatial_filters() << ",1," << cfg.n_samples
       << "]  kernel " << cfg.n_channels << "x1\n"
       << "pool " << cfg.pool1 << " + separable  [B," << cfg.pointwise_filters
       << ",1," << cfg.n_samples / cfg.pool1 << "]\n"
       << "pool " << cfg.pool2 << "               [B," << cfg.pointwise_filters
       << ",1," << cfg.t_pooled() << "]\n"
       << "tokens (+CLS)        [B," << cfg.seq_len() << "," << cfg.d_model << "]\n"
       << "encoder x" << cfg.n_encoder_layers << "           [B," << cfg.seq_len()
       << "," << cfg.d_model << "]  heads " << cfg.n_heads << ", ffn "
       << cfg.ffn_dim << "\n"
       << "head                 [B," << cfg.n_classes << "]\n"
       << "trainable parameters " << p.parameter_count() << "\n";
    return os.str();
}

// ---------------------------------------------------------------------------
// Weights file ("EATW")
// ---------------------------------------------------------------------------

inline constexpr char kWeightsMagic[4] = {'E', 'A', 'T', 'W'};
inline constexpr std::uint16_t kWeightsVersion = 1;

inline void write_config(std::ostream& os, const ModelConfig& c) {
    using binio::write_le;
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.n_channels));
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.n_samples));
    write_le<double>(os, c.sampling_rate);
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.n_classes));
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.temporal_filters));
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.depth_multiplier));
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.pointwise_filters));
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.temporal_kernel_len));
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.sep_kernel_len));
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.pool1));
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.pool2));
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.d_model));
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.n_heads));
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.n_encoder_layers));
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.ffn_dim));
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.patch_size));
    write_le<double>(os, c.dropout_conv);
    write_le<double>(os, c.dropout_encoder);
    write_le<std::uint8_t>(os, c.use_positional_embeddings ? 1 : 0);
}

inline ModelConfig read_config(std::istream& is) {
    using binio::read_le;
    ModelConfig c;
    c.n_channels = read_le<std::uint32_t>(is, "n_channels");
    c.n_samples = read_le<std::uint32_t>(is, "n_samples");
    c.sampling_rate = read_le<double>(is, "sampling_rate");
    c.n_classes = read_le<std::uint32_t>(is, "n_classes");
    c.temporal_filters = read_le<std::uint32_t>(is, "temporal_filters");
    c.depth_multiplier = read_le<std::uint32_t>(is, "depth_multiplier");
    c.pointwise_filters = read_le<std::uint32_t>(is, "pointwise_filters");
    c.temporal_kernel_len = read_le<std::uint32_t>(is, "temporal_kernel_len");
    c.sep_kernel_len = read_le<std::uint32_t>(is, "sep_kernel_len");
    c.pool1 = read_le<std::uint32_t>(is, "pool1");
    c.pool2 = read_le<std::uint32_t>(is, "pool2");
    c.d_model = read_le<std::uint32_t>(is, "d_model");
    c.n_heads = read_le<std::uint32_t>(is, "n_heads");
    c.n_encoder_layers = read_le<std::uint32_t>(is, "n_encoder_layers");
    c.ffn_dim = read_le<std::uint32_t>(is, "ffn_dim");
    c.patch_size = read_le<std::uint32_t>(is, "patch_size");
    c.dropout_conv = read_le<double>(is, "dropout_conv");
    c.dropout_encoder = read_le<double>(is, "dropout_encoder");
    c.use_positional_embeddings = read_le<std::uint8_t>(is, "use_positional_embeddings") != 0;
    return c;
}

inline void save_weights(const std::string& path, const ModelConfig& cfg,
                         ModelParams& params) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw binio::FormatError("cannot open for writing: " + path);
    binio::write_magic(os, kWeightsMagic);
    binio::write_le<std::uint16_t>(os, kWeightsVersion);
    write_config(os, cfg);
    auto tensors = params.all();
    binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(tensors.size()));
    for (Tensor* t : tensors) {
        binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(t->rank()));
        for (std::size_t d : t->shape())
            binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
        for (double v : t->data()) binio::write_le<double>(os, v);
    }
    if (!os) throw binio::FormatError("write failed: " + path);
}

inline std::pair<ModelConfig, ModelParams> load_weights(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw binio::FormatError("cannot open: " + path);
    binio::expect_magic(is, kWeightsMagic);
    const auto version = binio::read_le<std::uint16_t>(is, "version");
    if (version != kWeightsVersion)
        throw binio::FormatError("unsupported weights version " +
                                 std::to_string(version));
    ModelConfig cfg = read_config(is);
    cfg.validate();
    Rng rng(0);
    ModelParams params = init_params(cfg, rng);
    auto tensors = params.all();
    const auto count = binio::read_le<std::uint32_t>(is, "tensor count");
    if (count != tensors.size())
        throw binio::FormatError("weights file declares " + std::to_string(count) +
                                 " tensors, model expects " +
                                 std::to_string(tensors.size()));
    for (Tensor* t : tensors) {
        const auto nd = binio::read_le<std::uint32_t>(is, "tensor rank");
        Shape s(nd);
        for (auto& d : s)
            d = binio::read_le<std::uint32_t>(is, "tensor dim");
        if (s != t->shape())
            throw binio::FormatError("tensor shape " + shape_str(s) +
                                     " in file does not match expected " +
                                     shape_str(t->shape()));
        for (double& v : t->data()) v = binio::read_le<double>(is, "tensor data");
    }
    return {cfg, std::move(params)};
}

}  // namespace eegattn
