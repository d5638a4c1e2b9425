#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "eegattn/dataio.hpp"
#include "eegattn/nn.hpp"
#include "eegattn/tensor.hpp"

namespace eegattn {

class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

struct TrainConfig {
    std::size_t epochs = 50;  // desk-scale default; full runs use 1000
    std::size_t batch_size = 16;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 0.0;
    std::size_t folds = 5;
    std::uint64_t seed = 0;

    void validate() const {
        if (epochs == 0 || batch_size == 0 || folds == 0)
            throw NumericError("TrainConfig: epochs, batch_size, folds must be positive");
    }
};

struct FoldReport {
    std::size_t fold_index = 0;
    std::vector<double> train_loss_history;
    double test_accuracy = 0.0;
    std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
};

struct CvSummary {
    std::vector<FoldReport> folds;
    double mean_accuracy = 0.0;
    double std_accuracy = 0.0;
};

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

// One-vs-rest squared hinge: targets +1 for the labeled class, -1 elsewhere;
// loss = mean over batch and classes of max(0, 1 - t*s)^2.
inline Tensor squared_hinge_loss(const Tensor& scores,
                                 const std::vector<int>& labels) {
    if (scores.rank() != 2 || scores.shape()[0] != labels.size())
        throw TensorError("squared_hinge_loss: scores " + shape_str(scores.shape()) +
                          " vs " + std::to_string(labels.size()) + " labels");
    const std::size_t B = scores.shape()[0], K = scores.shape()[1];
    Tensor targets = Tensor::filled({B, K}, -1.0);
    for (std::size_t b = 0; b < B; ++b) {
        if (labels[b] < 0 || static_cast<std::size_t>(labels[b]) >= K)
            throw TensorError("squared_hinge_loss: label " +
                              std::to_string(labels[b]) + " outside [0, " +
                              std::to_string(K) + ")");
        targets.data()[b * K + static_cast<std::size_t>(labels[b])] = 1.0;
    }
    Tensor margin = add_scalar(neg(mul(scores, targets)), 1.0);  // 1 - t*s
    return mean(square(relu(margin)));
}

// ---------------------------------------------------------------------------
// Stratified k-fold
// ---------------------------------------------------------------------------

// Per-class shuffled partition; classes deal their +1 remainders to rotating
// folds so test-fold sizes differ by at most one overall.
inline std::vector<std::pair<std::vector<std::size_t>, std::vector<std::size_t>>>
stratified_kfold(const std::vector<int>& labels, std::size_t k, std::uint64_t seed) {
    if (k < 2) throw NumericError("stratified_kfold: k must be >= 2");
    int max_label = -1;
    for (int l : labels) max_label = std::max(max_label, l);
    std::vector<std::vector<std::size_t>> by_class(max_label + 1);
    for (std::size_t i = 0; i < labels.size(); ++i)
        by_class[labels[i]].push_back(i);
    for (std::size_t c = 0; c < by_class.size(); ++c)
        if (by_class[c].size() < k)
            throw NumericError("stratified_kfold: class " + std::to_string(c) +
                               " has " + std::to_string(by_class[c].size()) +
                               " members, fewer than k=" + std::to_string(k));
    Rng rng(seed);
    std::vector<std::vector<std::size_t>> test_folds(k);
    std::size_t rotation = 0;
    for (auto& members : by_class) {
        rng.shuffle(members);
        const std::size_t q = members.size() / k, rem = members.size() % k;
        std::size_t pos = 0;
        for (std::size_t f = 0; f < k; ++f) {
            const std::size_t fold = (rotation + f) % k;
            const std::size_t take = q + (f < rem ? 1 : 0);
            for (std::size_t j = 0; j < take; ++j)
                test_folds[fold].push_back(members[pos++]);
        }
        rotation = (rotation + rem) % k;
    }
    std::vector<std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> out(k);
    for (std::size_t f = 0; f < k; ++f) {
        std::sort(test_folds[f].begin(), test_folds[f].end());
        out[f].second = test_folds[f];
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (!std::binary_search(test_folds[f].begin(), test_folds[f].end(), i))
                out[f].first.push_back(i);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

class Adam {
public:
    Adam(std::vector<Tensor*> params, const TrainConfig& cfg)
        : params_(std::move(params)), cfg_(cfg) {
        for (Tensor* p : params_) {
            m_.emplace_back(p->size(), 0.0);
            v_.emplace_back(p->size(), 0.0);
        }
    }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            Tensor* p = params_[i];
            if (!p->has_grad()) continue;
            const auto& g = p->grad();
            auto& d = p->data();
            for (std::size_t j = 0; j < d.size(); ++j) {
                double gj = g[j] + cfg_.weight_decay * d[j];
                m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * gj;
                v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * gj * gj;
                const double mhat = m_[i][j] / bc1;
                const double vhat = v_[i][j] / bc2;
                d[j] -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.adam_eps);
            }
        }
    }

private:
    std::vector<Tensor*> params_;
    TrainConfig cfg_;
    std::vector<std::vector<double>> m_, v_;
    std::size_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Training / evaluation
// ---------------------------------------------------------------------------

namespace train_detail {

// Packs the selected trials into a [B,1,C,T] input batch, applying the
// per-channel z-score stored in params.
inline Tensor make_batch(const TrialSet& data, const std::vector<std::size_t>& idx,
                         const ModelParams& p) {
    const std::size_t C = data.n_channels, T = data.n_samples;
    Tensor x = Tensor::zeros({idx.size(), 1, C, T});
    for (std::size_t b = 0; b < idx.size(); ++b)
        for (std::size_t c = 0; c < C; ++c) {
            const double mu = p.norm_mean.data()[c];
            const double inv_sd = 1.0 / p.norm_std.data()[c];
            for (std::size_t s = 0; s < T; ++s)
                x.data()[(b * C + c) * T + s] =
                    (data.at(idx[b], c, s) - mu) * inv_sd;
        }
    return x;
}

}  // namespace train_detail

// Fits per-channel normalization on the training portion, then runs seeded
// mini-batch epochs with Adam. Returns the per-epoch mean training loss.
inline std::vector<double> train_one_fold(const ModelConfig& mcfg,
                                          ModelParams& params,
                                          const TrialSet& train,
                                          const TrainConfig& cfg) {
    mcfg.validate();
    cfg.validate();
    train.validate();
    if (train.n_channels != mcfg.n_channels || train.n_samples != mcfg.n_samples)
        throw TensorError("train_one_fold: data dims do not match model config");
    // normalization statistics from the training portion only
    const std::size_t C = train.n_channels, T = train.n_samples;
    for (std::size_t c = 0; c < C; ++c) {
        double s = 0.0;
        for (std::size_t t = 0; t < train.n_trials; ++t)
            for (std::size_t i = 0; i < T; ++i) s += train.at(t, c, i);
        const double mu = s / double(train.n_trials * T);
        double v = 0.0;
        for (std::size_t t = 0; t < train.n_trials; ++t)
            for (std::size_t i = 0; i < T; ++i) {
                const double d = train.at(t, c, i) - mu;
                v += d * d;
            }
        const double sd = std::sqrt(v / double(train.n_trials * T));
        params.norm_mean.data()[c] = mu;
        params.norm_std.data()[c] = sd > 0.0 ? sd : 1.0;
    }

    Adam opt(params.trainable(), cfg);
    Rng rng(cfg.seed * 0x9e3779b97f4a7c15ULL + 1);
    std::vector<std::size_t> order(train.n_trials);
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> history;
    history.reserve(cfg.epochs);
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        std::size_t n_batches = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            std::vector<std::size_t> idx(order.begin() + start, order.begin() + end);
            Tensor x = train_detail::make_batch(train, idx, params);
            std::vector<int> labels;
            for (std::size_t i : idx) labels.push_back(train.labels[i]);
            auto [scores, traces] = model_forward(x, params, mcfg, true, rng);
            Tensor loss = squared_hinge_loss(scores, labels);
            const double lv = loss.item();
            if (!std::isfinite(lv)) {
                std::ostringstream os;
                os << "non-finite loss " << lv << " at epoch " << epoch
                   << ", batch " << n_batches;
                throw NumericError(os.str());
            }
            params.zero_grad();
            backward(loss);
            opt.step();
            epoch_loss += lv;
            ++n_batches;
        }
        history.push_back(epoch_loss / double(n_batches));
    }
    return history;
}

// Argmax prediction (ties resolve to the lowest class index), accuracy and
// K x K confusion over the given set.
inline FoldReport evaluate(ModelParams& params, const ModelConfig& mcfg,
                           const TrialSet& test) {
    test.validate();
    if (test.n_channels != mcfg.n_channels || test.n_samples != mcfg.n_samples)
        throw TensorError("evaluate: data dims do not match model config");
    const std::size_t K = mcfg.n_classes;
    FoldReport rep;
    rep.confusion.assign(K, std::vector<std::size_t>(K, 0));
    Rng rng(0);  // inference mode; never consulted
    std::size_t correct = 0;
    const std::size_t batch = 32;
    for (std::size_t start = 0; start < test.n_trials; start += batch) {
        const std::size_t end = std::min(test.n_trials, start + batch);
        std::vector<std::size_t> idx(end - start);
        std::iota(idx.begin(), idx.end(), start);
        Tensor x = train_detail::make_batch(test, idx, params);
        auto [scores, traces] = model_forward(x, params, mcfg, false, rng);
        for (std::size_t b = 0; b < idx.size(); ++b) {
            std::size_t pred = 0;
            double best = scores.data()[b * K];
            for (std::size_t k = 1; k < K; ++k)
                if (scores.data()[b * K + k] > best) {
                    best = scores.data()[b * K + k];
                    pred = k;
                }
            const auto truth = static_cast<std::size_t>(test.labels[idx[b]]);
            rep.confusion[truth][pred]++;
            if (pred == truth) ++correct;
        }
    }
    rep.test_accuracy =
        test.n_trials ? double(correct) / double(test.n_trials) : 0.0;
    return rep;
}

inline TrialSet subset_trials(const TrialSet& in, const std::vector<std::size_t>& idx) {
    TrialSet out;
    out.sampling_rate = in.sampling_rate;
    out.channel_names = in.channel_names;
    out.n_classes = in.n_classes;
    out.n_channels = in.n_channels;
    out.n_samples = in.n_samples;
    out.n_trials = idx.size();
    out.data.reserve(idx.size() * in.n_channels * in.n_samples);
    for (std::size_t i : idx) {
        out.labels.push_back(in.labels[i]);
        const auto* src = &in.data[i * in.n_channels * in.n_samples];
        out.data.insert(out.data.end(), src, src + in.n_channels * in.n_samples);
    }
    return out;
}

// Independent model per fold; folds may run on separate threads (each fold's
// RNG stream depends only on (seed, fold), so the result is identical either
// way).
inline CvSummary cross_validate(const TrialSet& dataset, const ModelConfig& mcfg,
                                const TrainConfig& cfg, std::size_t n_threads = 1) {
    dataset.validate();
    cfg.validate();
    auto folds = stratified_kfold(dataset.labels, cfg.folds, cfg.seed);
    CvSummary summary;
    summary.folds.resize(folds.size());
    std::exception_ptr first_error;
    std::mutex err_mutex;
    auto run_fold = [&](std::size_t f) {
        try {
            TrialSet train = subset_trials(dataset, folds[f].first);
            TrialSet test = subset_trials(dataset, folds[f].second);
            Rng init_rng(cfg.seed * 0x2545f4914f6cdd1dULL + f + 1);
            ModelParams params = init_params(mcfg, init_rng);
            TrainConfig fold_cfg = cfg;
            fold_cfg.seed = cfg.seed * 31 + f;
            auto history = train_one_fold(mcfg, params, train, fold_cfg);
            FoldReport rep = evaluate(params, mcfg, test);
            rep.fold_index = f;
            rep.train_loss_history = std::move(history);
            summary.folds[f] = std::move(rep);
        } catch (...) {
            std::lock_guard<std::mutex> lock(err_mutex);
            if (!first_error) first_error = std::current_exception();
        }
    };
    if (n_threads <= 1) {
        for (std::size_t f = 0; f < folds.size(); ++f) run_fold(f);
    } else {
        std::vector<std::thread> pool;
        std::atomic<std::size_t> next{0};
        for (std::size_t t = 0; t < std::min(n_threads, folds.size()); ++t)
            pool.emplace_back([&] {
                for (std::size_t f = next.fetch_add(1); f < folds.size();
                     f = next.fetch_add(1))
                    run_fold(f);
            });
        for (auto& th : pool) th.join();
    }
    if (first_error) std::rethrow_exception(first_error);
    double mean = 0.0;
    for (const auto& r : summary.folds) mean += r.test_accuracy;
    mean /= double(summary.folds.size());
    double var = 0.0;
    for (const auto& r : summary.folds) {
        const double d = r.test_accuracy - mean;
        var += d * d;
    }
    summary.mean_accuracy = mean;
    summary.std_accuracy = std::sqrt(var / double(summary.folds.size()));
    return summary;
}

}  // namespace eegattn
