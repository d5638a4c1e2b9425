#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <set>

#include "eegattn/training.hpp"

using namespace eegattn;

namespace {

ModelConfig toy_config() {
    ModelConfig cfg;
    cfg.n_channels = 4;
    cfg.n_samples = 64;
    cfg.n_classes = 3;
    cfg.temporal_filters = 4;
    cfg.depth_multiplier = 2;
    cfg.pointwise_filters = 8;
    cfg.temporal_kernel_len = 16;
    cfg.sep_kernel_len = 8;
    cfg.pool1 = 4;
    cfg.pool2 = 4;
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.n_encoder_layers = 1;
    cfg.ffn_dim = 32;
    cfg.dropout_conv = 0.0;
    cfg.dropout_encoder = 0.0;
    return cfg;
}

TrialSet toy_data(std::size_t trials_per_class, std::uint64_t seed,
                  double snr_db = 20.0) {
    SynthSpec spec;
    spec.n_classes = 3;
    spec.trials_per_class = trials_per_class;
    spec.n_channels = 4;
    spec.n_samples = 64;
    spec.snr_db = snr_db;
    spec.seed = seed;
    return generate_synthetic(spec);
}

}  // namespace

TEST_CASE("squared hinge hand values") {
    // all-zero scores: every margin is 1, loss = mean(1) = 1
    Tensor z = Tensor::zeros({2, 13});
    CHECK(squared_hinge_loss(z, {0, 5}).item() == doctest::Approx(1.0));

    // B=1, K=2, scores [0.5, 0.5], label 0:
    // true-class margin (1-0.5)^2 = 0.25, other (1+0.5)^2 = 2.25, mean 1.25
    Tensor s = Tensor::from_data({1, 2}, {0.5, 0.5});
    CHECK(squared_hinge_loss(s, {0}).item() == doctest::Approx(1.25));

    // fully satisfied margins give exactly zero
    Tensor sat = Tensor::from_data({2, 2}, {2.0, -3.0, -1.5, 4.0});
    CHECK(squared_hinge_loss(sat, {0, 1}).item() == doctest::Approx(0.0));

    SUBCASE("label outside [0, K) is rejected") {
        CHECK_THROWS_AS(squared_hinge_loss(s, {2}), TensorError);
        CHECK_THROWS_AS(squared_hinge_loss(s, {-1}), TensorError);
    }
    SUBCASE("batch/label count mismatch is rejected") {
        CHECK_THROWS_AS(squared_hinge_loss(s, {0, 1}), TensorError);
    }
    SUBCASE("loss is differentiable and nonnegative") {
        Rng rng(3);
        Tensor x = Tensor::randn({4, 3}, rng);
        x.set_requires_grad(true);
        Tensor loss = squared_hinge_loss(x, {0, 1, 2, 0});
        CHECK(loss.item() >= 0.0);
        backward(loss);
        CHECK(x.has_grad());
    }
}

TEST_CASE("stratified k-fold on 13x23 labels") {
    std::vector<int> labels;
    for (int k = 0; k < 13; ++k)
        for (int r = 0; r < 23; ++r) labels.push_back(k);
    auto folds = stratified_kfold(labels, 5, 42);
    REQUIRE(folds.size() == 5);

    std::multiset<std::size_t> sizes;
    for (const auto& [train, test] : folds) {
        sizes.insert(test.size());
        CHECK(train.size() + test.size() == labels.size());
        // disjoint and exhaustive
        std::set<std::size_t> all(train.begin(), train.end());
        for (std::size_t i : test) CHECK(all.insert(i).second);
        CHECK(all.size() == labels.size());
        // per-class test counts in {4, 5} since 23 = 4*5 + 3
        std::vector<int> per_class(13, 0);
        for (std::size_t i : test) per_class[labels[i]]++;
        for (int c : per_class) {
            CHECK(c >= 4);
            CHECK(c <= 5);
        }
    }
    CHECK(sizes == std::multiset<std::size_t>{59, 60, 60, 60, 60});

    SUBCASE("each index lands in exactly one test fold") {
        std::vector<int> seen(labels.size(), 0);
        for (const auto& [train, test] : folds)
            for (std::size_t i : test) seen[i]++;
        for (int s : seen) CHECK(s == 1);
    }
    SUBCASE("same seed reproduces the partition, different seed changes it") {
        auto again = stratified_kfold(labels, 5, 42);
        CHECK(again == folds);
        auto other = stratified_kfold(labels, 5, 43);
        CHECK(other != folds);
    }
    SUBCASE("k < 2 and undersized classes are rejected") {
        CHECK_THROWS_AS(stratified_kfold(labels, 1, 0), NumericError);
        std::vector<int> tiny = {0, 0, 0, 1};  // class 1 has 1 < k members
        CHECK_THROWS_AS(stratified_kfold(tiny, 2, 0), NumericError);
    }
}

TEST_CASE("zero learning rate leaves parameters untouched and loss flat") {
    ModelConfig mcfg = toy_config();
    TrialSet data = toy_data(4, 11);
    Rng rng(5);
    ModelParams params = init_params(mcfg, rng);
    std::vector<std::vector<double>> before;
    for (Tensor* p : params.trainable()) before.push_back(p->data());

    TrainConfig tcfg;
    tcfg.epochs = 3;
    tcfg.batch_size = data.n_trials;  // full batch: loss is shuffle-invariant
    tcfg.learning_rate = 0.0;
    tcfg.seed = 1;
    auto history = train_one_fold(mcfg, params, data, tcfg);
    REQUIRE(history.size() == 3);
    auto trainable = params.trainable();
    for (std::size_t i = 0; i < trainable.size(); ++i)
        CHECK(trainable[i]->data() == before[i]);
    // dropout off, params frozen, one batch covering all trials: the mean
    // loss can differ only by summation order
    CHECK(history[1] == doctest::Approx(history[0]).epsilon(1e-9));
    CHECK(history[2] == doctest::Approx(history[0]).epsilon(1e-9));
}

TEST_CASE("training is deterministic in the seed") {
    ModelConfig mcfg = toy_config();
    TrialSet data = toy_data(4, 17);
    TrainConfig tcfg;
    tcfg.epochs = 2;
    tcfg.batch_size = 4;
    tcfg.seed = 9;

    Rng r1(2), r2(2);
    ModelParams p1 = init_params(mcfg, r1);
    ModelParams p2 = init_params(mcfg, r2);
    auto h1 = train_one_fold(mcfg, p1, data, tcfg);
    auto h2 = train_one_fold(mcfg, p2, data, tcfg);
    CHECK(h1 == h2);
    auto t1 = p1.trainable(), t2 = p2.trainable();
    for (std::size_t i = 0; i < t1.size(); ++i)
        CHECK(t1[i]->data() == t2[i]->data());

    SUBCASE("a different training seed gives a different trajectory") {
        Rng r3(2);
        ModelParams p3 = init_params(mcfg, r3);
        TrainConfig other = tcfg;
        other.seed = 10;
        auto h3 = train_one_fold(mcfg, p3, data, other);
        CHECK(h3 != h1);
    }
}

TEST_CASE("training reduces the loss on separable toy data") {
    ModelConfig mcfg = toy_config();
    TrialSet data = toy_data(6, 23);
    Rng rng(1);
    ModelParams params = init_params(mcfg, rng);
    TrainConfig tcfg;
    tcfg.epochs = 30;
    tcfg.batch_size = 6;
    tcfg.learning_rate = 2e-3;
    tcfg.seed = 3;
    auto history = train_one_fold(mcfg, params, data, tcfg);
    CHECK(history.back() < 0.5 * history.front());
    // train accuracy should beat chance comfortably after fitting
    FoldReport rep = evaluate(params, mcfg, data);
    CHECK(rep.test_accuracy > 0.6);
}

TEST_CASE("evaluate: accuracy and confusion bookkeeping") {
    ModelConfig mcfg = toy_config();
    TrialSet data = toy_data(3, 29);
    Rng rng(8);
    ModelParams params = init_params(mcfg, rng);
    params.norm_std = Tensor::ones({mcfg.n_channels});
    params.norm_mean = Tensor::zeros({mcfg.n_channels});
    FoldReport rep = evaluate(params, mcfg, data);
    REQUIRE(rep.confusion.size() == 3);
    std::size_t total = 0, diag = 0;
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
            total += rep.confusion[i][j];
            if (i == j) diag += rep.confusion[i][j];
        }
    CHECK(total == data.n_trials);
    CHECK(rep.test_accuracy == doctest::Approx(double(diag) / double(total)));
    // row sums equal per-class trial counts
    for (std::size_t i = 0; i < 3; ++i) {
        std::size_t row = 0;
        for (std::size_t j = 0; j < 3; ++j) row += rep.confusion[i][j];
        CHECK(row == 3);
    }
}

TEST_CASE("subset_trials picks the right rows") {
    TrialSet data = toy_data(2, 1);
    TrialSet sub = subset_trials(data, {5, 0});
    CHECK(sub.n_trials == 2);
    CHECK(sub.labels[0] == data.labels[5]);
    CHECK(sub.labels[1] == data.labels[0]);
    for (std::size_t c = 0; c < data.n_channels; ++c)
        for (std::size_t s = 0; s < data.n_samples; ++s) {
            CHECK(sub.at(0, c, s) == data.at(5, c, s));
            CHECK(sub.at(1, c, s) == data.at(0, c, s));
        }
}

TEST_CASE("cross_validate: sequential and parallel runs agree exactly") {
    ModelConfig mcfg = toy_config();
    TrialSet data = toy_data(6, 41);
    TrainConfig tcfg;
    tcfg.epochs = 2;
    tcfg.batch_size = 6;
    tcfg.folds = 3;
    tcfg.seed = 12;
    CvSummary seq = cross_validate(data, mcfg, tcfg, 1);
    CvSummary par = cross_validate(data, mcfg, tcfg, 3);
    REQUIRE(seq.folds.size() == 3);
    CHECK(seq.mean_accuracy == par.mean_accuracy);
    CHECK(seq.std_accuracy == par.std_accuracy);
    for (std::size_t f = 0; f < 3; ++f) {
        CHECK(seq.folds[f].test_accuracy == par.folds[f].test_accuracy);
        CHECK(seq.folds[f].train_loss_history == par.folds[f].train_loss_history);
        CHECK(seq.folds[f].confusion == par.folds[f].confusion);
    }
    // summary stats recompute from the folds
    double mean = 0.0;
    for (const auto& r : seq.folds) mean += r.test_accuracy;
    CHECK(seq.mean_accuracy == doctest::Approx(mean / 3.0));
}

TEST_CASE("dimension mismatches are rejected up front") {
    ModelConfig mcfg = toy_config();
    TrialSet data = toy_data(4, 2);
    data.n_samples = 63;  // corrupt
    data.data.resize(data.n_trials * data.n_channels * 63);
    Rng rng(0);
    ModelParams params = init_params(mcfg, rng);
    TrainConfig tcfg;
    tcfg.epochs = 1;
    CHECK_THROWS_AS(train_one_fold(mcfg, params, data, tcfg), TensorError);
    CHECK_THROWS_AS(evaluate(params, mcfg, data), TensorError);
}
