#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "eegattn/gradcheck.hpp"
#include "eegattn/tensor.hpp"

using namespace eegattn;

TEST_CASE("matmul identity and hand-computed products") {
    Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    Tensor m = Tensor::from_data({2, 2}, {3, 4, 5, 6});
    Tensor r = matmul(eye, m);
    CHECK(r.data() == std::vector<double>{3, 4, 5, 6});

    // [[1,2]] x [[3],[4]] = [[11]]
    Tensor a = Tensor::from_data({1, 2}, {1, 2});
    Tensor b = Tensor::from_data({2, 1}, {3, 4});
    CHECK(matmul(a, b).item() == doctest::Approx(11.0));
}

TEST_CASE("add with zeros is identity; shape mismatch names both shapes") {
    Rng rng(1);
    Tensor x = Tensor::randn({3, 4}, rng);
    Tensor y = add(x, Tensor::zeros({3, 4}));
    for (std::size_t i = 0; i < x.size(); ++i)
        CHECK(y.data()[i] == x.data()[i]);

    try {
        add(Tensor::zeros({3, 4}), Tensor::zeros({2, 5}));
        FAIL("expected shape mismatch");
    } catch (const TensorError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[3,4]") != std::string::npos);
        CHECK(msg.find("[2,5]") != std::string::npos);
    }
}

TEST_CASE("softmax basics") {
    Tensor u = softmax(Tensor::from_data({3}, {0, 0, 0}), 0);
    for (double v : u.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

    // closed form e^0/(e^0+3) with ln 3
    Tensor s = softmax(Tensor::from_data({2}, {0.0, std::log(3.0)}), 0);
    CHECK(s.data()[0] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(s.data()[1] == doctest::Approx(0.75).epsilon(1e-12));

    SUBCASE("shift invariance and row sums") {
        Rng rng(5);
        for (int seed = 0; seed < 20; ++seed) {
            Tensor x = Tensor::randn({4, 6}, rng, 3.0);
            Tensor shifted = add_scalar(x, 17.5);
            Tensor a = softmax(x, 1), b = softmax(shifted, 1);
            for (std::size_t i = 0; i < a.size(); ++i) {
                CHECK(a.data()[i] == doctest::Approx(b.data()[i]).epsilon(1e-12));
                CHECK(a.data()[i] >= 0.0);
                CHECK(a.data()[i] <= 1.0);
            }
            for (std::size_t r = 0; r < 4; ++r) {
                double sum = 0.0;
                for (std::size_t c = 0; c < 6; ++c) sum += a.data()[r * 6 + c];
                CHECK(std::abs(sum - 1.0) < 1e-12);
            }
        }
    }

    CHECK_THROWS_AS(softmax(Tensor::zeros({2, 2}), 2), TensorError);
}

TEST_CASE("backward: analytic derivatives") {
    Tensor x = Tensor::from_data({3}, {1, -2, 3}, true);
    Tensor loss = sum(square(x));
    backward(loss);
    CHECK(x.grad() == std::vector<double>{2, -4, 6});

    Tensor y = Tensor::from_data({4}, {5, 6, 7, 8}, true);
    backward(sum(y));
    CHECK(y.grad() == std::vector<double>{1, 1, 1, 1});

    CHECK_THROWS_AS(backward(Tensor::zeros({2})), TensorError);
}

TEST_CASE("backward of sum(matmul) matches finite differences") {
    Rng rng(11);
    Tensor w = Tensor::randn({4, 3}, rng);
    auto rep = finite_diff_check(
        "sum_matmul", [&](const Tensor& x) { return sum(matmul(x, w)); },
        Tensor::randn({2, 4}, rng), 1e-5, 1e-6);
    CHECK(rep.passed);
}

TEST_CASE("gradient accumulation doubles exactly on repeated backward") {
    Tensor x = Tensor::from_data({3}, {1.5, -0.5, 2.0}, true);
    Tensor loss = sum(square(x));
    backward(loss);
    const std::vector<double> once = x.grad();
    backward(loss);
    for (std::size_t i = 0; i < once.size(); ++i)
        CHECK(x.grad()[i] == 2.0 * once[i]);
    // intermediate loss grad doubles too
    CHECK(loss.grad()[0] == 2.0);
}

TEST_CASE("finite_diff_check contract") {
    Rng rng(3);
    auto rep = finite_diff_check(
        "sumsq", [](const Tensor& x) { return sum(square(x)); },
        Tensor::randn({5}, rng), 1e-5, 1e-8);
    CHECK(rep.passed);
    CHECK(rep.max_rel_error < 1e-8);

    // softmax rows sum to the constant 1, so the gradient is ~0
    Tensor sx = Tensor::randn({4}, rng);
    sx.set_requires_grad(true);
    Tensor l = sum(softmax(sx, 0));
    backward(l);
    for (double g : sx.grad()) CHECK(std::abs(g) < 1e-12);
    auto rep2 = finite_diff_check(
        "sum_softmax", [](const Tensor& x) { return sum(softmax(x, 0)); },
        Tensor::randn({4}, rng), 1e-5, 1e-6);
    CHECK(rep2.passed);

    CHECK_THROWS_AS(
        finite_diff_check("not_scalar", [](const Tensor& x) { return x; },
                          Tensor::zeros({3})),
        TensorError);
    CHECK_THROWS_AS(
        finite_diff_check("bad_eps", [](const Tensor& x) { return sum(x); },
                          Tensor::zeros({3}), 0.0),
        TensorError);
}

TEST_CASE("matmul associativity on random small matrices") {
    Rng rng(21);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor a = Tensor::randn({3, 4}, rng);
        Tensor b = Tensor::randn({4, 5}, rng);
        Tensor c = Tensor::randn({5, 2}, rng);
        Tensor left = matmul(matmul(a, b), c);
        Tensor right = matmul(a, matmul(b, c));
        for (std::size_t i = 0; i < left.size(); ++i)
            CHECK(left.data()[i] == doctest::Approx(right.data()[i]).epsilon(1e-9));
    }
}

TEST_CASE("every registered op passes the randomized finite-difference suite") {
    const auto reports = run_gradcheck_suite(20);
    CHECK(reports.size() >= 15);
    for (const auto& r : reports) {
        INFO(r.op_name, " max_rel_error=", r.max_rel_error);
        CHECK(r.passed);
    }
}

TEST_CASE("broadcasting over size-1 axes") {
    Tensor a = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor row = Tensor::from_data({1, 3}, {10, 20, 30});
    Tensor r = add(a, row);
    CHECK(r.data() == std::vector<double>{11, 22, 33, 14, 25, 36});

    // gradient reduces over the broadcast axis
    row.set_requires_grad(true);
    backward(sum(add(a, row)));
    CHECK(row.grad() == std::vector<double>{2, 2, 2});
}
