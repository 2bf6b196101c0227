#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "fedsel/recmodel.hpp"

using namespace fedsel;

namespace {

HyperParams tiny_hyper() {
    HyperParams h;
    h.d = 8;
    h.factors = 2;
    h.d_text = 6;
    h.d_visual = 5;
    h.h_text = 7;
    h.h_visual = 7;
    h.h_attn = 5;
    h.k_neg = 2;
    h.dropout = 0.0;  // gradcheck needs a deterministic forward pass
    h.lambda_dcor = 0.05;
    return h;
}

std::vector<BatchSample> random_batch(int n, int num_users, int num_items, int k_neg,
                                      RngStream& rng) {
    std::vector<BatchSample> batch;
    for (int i = 0; i < n; ++i) {
        BatchSample s;
        s.user = int(rng.uniform_int(uint64_t(num_users)));
        s.pos_item = int(rng.uniform_int(uint64_t(num_items)));
        for (int k = 0; k < k_neg; ++k) {
            int neg;
            do {
                neg = int(rng.uniform_int(uint64_t(num_items)));
            } while (neg == s.pos_item);
            s.neg_items.push_back(neg);
        }
        batch.push_back(s);
    }
    return batch;
}

// reference dCor: direct doubly-centered distance matrices
double dcor_oracle(const std::vector<std::vector<double>>& x,
                   const std::vector<std::vector<double>>& y) {
    const size_t n = x.size();
    auto dist = [](const std::vector<double>& a, const std::vector<double>& b) {
        double s = 0.0;
        for (size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
        return std::sqrt(s);
    };
    auto center = [&](const std::vector<std::vector<double>>& v) {
        std::vector<std::vector<double>> m(n, std::vector<double>(n));
        for (size_t i = 0; i < n; ++i)
            for (size_t j = 0; j < n; ++j) m[i][j] = dist(v[i], v[j]);
        std::vector<double> row(n, 0.0), col(n, 0.0);
        double all = 0.0;
        for (size_t i = 0; i < n; ++i)
            for (size_t j = 0; j < n; ++j) {
                row[i] += m[i][j] / double(n);
                col[j] += m[i][j] / double(n);
                all += m[i][j] / double(n * n);
            }
        for (size_t i = 0; i < n; ++i)
            for (size_t j = 0; j < n; ++j) m[i][j] += all - row[i] - col[j];
        return m;
    };
    auto A = center(x), B = center(y);
    double v2 = 0.0, vx = 0.0, vy = 0.0;
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < n; ++j) {
            v2 += A[i][j] * B[i][j];
            vx += A[i][j] * A[i][j];
            vy += B[i][j] * B[i][j];
        }
    v2 /= double(n * n);
    vx /= double(n * n);
    vy /= double(n * n);
    if (vx <= 0.0 || vy <= 0.0) return 0.0;
    return std::sqrt(v2 / std::sqrt(vx * vy));
}

}  // namespace

TEST_CASE("hyperparameter validation") {
    HyperParams h;
    CHECK_NOTHROW(h.validate());
    h.factors = 5;  // does not divide 32
    CHECK_THROWS_AS(h.validate(), std::invalid_argument);
    h = HyperParams{};
    h.d = 0;
    CHECK_THROWS_AS(h.validate(), std::invalid_argument);
}

TEST_CASE("gelu values") {
    CHECK(gelu(0.0) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(gelu(1.0) == doctest::Approx(0.841345).epsilon(1e-5));
    CHECK(std::abs(gelu(-10.0)) < 1e-9);
}

TEST_CASE("leaky relu and subgradient at zero") {
    CHECK(lrelu(-1.0) == doctest::Approx(-0.2).epsilon(1e-12));
    CHECK(lrelu(2.0) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(lrelu_grad(0.0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("zero-weight projection yields the zero vector") {
    Mat w1(2, 3), b1(2, 1), w2(4, 2), b2(4, 1);
    RngStream rng(1);
    auto out = project_modality({1.0, 2.0, 3.0}, w1, b1, w2, b2, 0.0, rng, false);
    for (double v : out) CHECK(v == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("one-dimensional projection arithmetic") {
    Mat w1(1, 1), b1(1, 1), w2(1, 1), b2(1, 1);
    RngStream rng(1);
    w1(0, 0) = 2.0;
    w2(0, 0) = 1.0;
    auto out = project_modality({1.0}, w1, b1, w2, b2, 0.0, rng, false);
    CHECK(out[0] == doctest::Approx(2.0).epsilon(1e-12));
    w1(0, 0) = 1.0;
    out = project_modality({-1.0}, w1, b1, w2, b2, 0.0, rng, false);
    CHECK(out[0] == doctest::Approx(-0.04).epsilon(1e-12));
}

TEST_CASE("dropout is inverted and off at evaluation") {
    Mat w1(4, 1), b1(4, 1), w2(1, 4), b2(1, 1);
    for (int i = 0; i < 4; ++i) {
        w1(i, 0) = 1.0;
        w2(0, i) = 1.0;
    }
    RngStream rng(1);
    auto eval_out = project_modality({1.0}, w1, b1, w2, b2, 0.5, rng, false);
    CHECK(eval_out[0] == doctest::Approx(4.0).epsilon(1e-12));
    // expected value under training dropout equals the eval output
    double sum = 0.0;
    const int reps = 20000;
    for (int r = 0; r < reps; ++r)
        sum += project_modality({1.0}, w1, b1, w2, b2, 0.5, rng, true)[0];
    CHECK(sum / reps == doctest::Approx(4.0).epsilon(0.05));
}

TEST_CASE("factorization splits contiguously and round-trips") {
    auto blocks = factorize({1.0, 2.0, 3.0, 4.0}, 2);
    REQUIRE(blocks.size() == 2);
    CHECK(blocks[0] == std::vector<double>{1.0, 2.0});
    CHECK(blocks[1] == std::vector<double>{3.0, 4.0});
    auto one = factorize({1.0, 2.0}, 1);
    CHECK(one[0] == std::vector<double>{1.0, 2.0});
    auto three = factorize({1, 2, 3, 4, 5, 6}, 3);
    std::vector<double> cat;
    for (const auto& b : three) cat.insert(cat.end(), b.begin(), b.end());
    CHECK(cat == std::vector<double>{1, 2, 3, 4, 5, 6});
}

TEST_CASE("zero attention parameters give uniform weights") {
    Mat a1(5, 8), b1(5, 1), a2(3, 5), b2(3, 1);
    auto w = attention_weights({1, 2, 3, 4, 5, 6, 7, 8}, a1, b1, a2, b2);
    REQUIRE(w.size() == 3);
    for (double v : w) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("bias-only attention softmax") {
    Mat a1(5, 8), b1(5, 1), a2(3, 5), b2(3, 1);
    b2(0, 0) = std::log(2.0);
    auto w = attention_weights({0, 0, 0, 0, 0, 0, 0, 0}, a1, b1, a2, b2);
    CHECK(w[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(w[1] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(w[2] == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("attention weights always normalize and reject non-finite input") {
    RngStream rng(3);
    Mat a1(5, 8), b1(5, 1), a2(3, 5), b2(3, 1);
    for (auto* m : {&a1, &b1, &a2, &b2})
        for (auto& v : m->a) v = rng.normal();
    for (int rep = 0; rep < 20; ++rep) {
        std::vector<double> h(8);
        for (auto& v : h) v = rng.normal() * 5.0;
        auto w = attention_weights(h, a1, b1, a2, b2);
        double sum = 0.0;
        for (double v : w) {
            CHECK(v > 0.0);
            sum += v;
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
    std::vector<double> bad(8, 0.0);
    bad[0] = std::nan("");
    CHECK_THROWS_AS(attention_weights(bad, a1, b1, a2, b2), std::invalid_argument);
}

TEST_CASE("factor score channels") {
    std::vector<double> zero(4, 0.0);
    CHECK(factor_score(zero, zero, zero, zero, {1, 1, 1}) ==
          doctest::Approx(0.0).epsilon(1e-12));
    std::vector<double> p{1, 0, 0, 0}, v{1, 0, 0, 0};
    CHECK(factor_score(p, v, zero, zero, {1, 0, 0}) ==
          doctest::Approx(gelu(1.0)).epsilon(1e-12));
    std::vector<double> t{-10, 0, 0, 0};
    CHECK(std::abs(factor_score(p, zero, t, zero, {0, 1, 0})) < 1e-9);
}

TEST_CASE("zero model predicts zero") {
    auto hy = tiny_hyper();
    auto features = synth_features(3, hy.d_text, hy.d_visual, 4);
    auto params = ModelParams::init(2, 4, hy, 1);
    params.for_each([](const char*, Mat& m) { std::fill(m.a.begin(), m.a.end(), 0.0); });
    CHECK(predict(0, 0, params, features, hy) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("doubling the factor count with identical blocks doubles the score") {
    auto hy = tiny_hyper();
    hy.factors = 1;
    auto features = synth_features(3, hy.d_text, hy.d_visual, 4);
    auto p1 = ModelParams::init(2, 4, hy, 7);
    // F=2 twin: duplicate the single factor's embedding block
    auto hy2 = hy;
    hy2.factors = 2;
    hy2.d = 16;
    auto p2 = ModelParams::init(2, 4, hy2, 7);
    p2.for_each([](const char*, Mat& m) { std::fill(m.a.begin(), m.a.end(), 0.0); });
    // copy user/item blocks twice; zero MLPs and attention keep channels symmetric
    for (int u = 0; u < 2; ++u)
        for (int j = 0; j < 8; ++j) {
            p2.user_emb(u, j) = p1.user_emb(u, j);
            p2.user_emb(u, 8 + j) = p1.user_emb(u, j);
        }
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 8; ++j) {
            p2.item_emb(i, j) = p1.item_emb(i, j);
            p2.item_emb(i, 8 + j) = p1.item_emb(i, j);
        }
    // zero every non-embedding tensor in both models
    auto zero_rest = [](ModelParams& p) {
        p.for_each([&p](const char* name, Mat& m) {
            if (std::string(name) != "user_emb" && std::string(name) != "item_emb")
                std::fill(m.a.begin(), m.a.end(), 0.0);
        });
    };
    zero_rest(p1);
    zero_rest(p2);
    auto features2 = synth_features(3, hy2.d_text, hy2.d_visual, 4);
    const double s1 = predict(0, 1, p1, features, hy);
    const double s2 = predict(0, 1, p2, features2, hy2);
    CHECK(s2 == doctest::Approx(2.0 * s1).epsilon(1e-9));
}

TEST_CASE("hinge ranking loss") {
    CHECK(ranking_loss(1.0, {0.0}, 1.0) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(ranking_loss(0.5, {0.5}, 1.0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(ranking_loss(2.0, {0.0, 1.5}, 1.0) == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("identical blocks are perfectly dependent") {
    RngStream rng(5);
    std::vector<std::vector<double>> x(16, std::vector<double>(3));
    for (auto& r : x)
        for (auto& v : r) v = rng.normal();
    CHECK(distance_correlation(x, x) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("constant blocks have zero dependence") {
    std::vector<std::vector<double>> x(8, std::vector<double>{1.0, 1.0});
    std::vector<std::vector<double>> y(8, std::vector<double>(2));
    RngStream rng(6);
    for (auto& r : y)
        for (auto& v : r) v = rng.normal();
    CHECK(distance_correlation(x, y) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("independent samples have small dependence") {
    double sum = 0.0;
    for (uint64_t seed = 1; seed <= 10; ++seed) {
        RngStream rng(seed);
        std::vector<std::vector<double>> x(512, std::vector<double>(3)),
            y(512, std::vector<double>(3));
        for (auto& r : x)
            for (auto& v : r) v = rng.normal();
        for (auto& r : y)
            for (auto& v : r) v = rng.normal();
        sum += distance_correlation(x, y);
    }
    CHECK(sum / 10.0 < 0.15);
}

TEST_CASE("dependence measure is symmetric and bounded") {
    RngStream rng(7);
    for (int rep = 0; rep < 20; ++rep) {
        std::vector<std::vector<double>> x(10, std::vector<double>(2)),
            y(10, std::vector<double>(3));
        for (auto& r : x)
            for (auto& v : r) v = rng.normal();
        for (auto& r : y)
            for (auto& v : r) v = rng.normal();
        const double a = distance_correlation(x, y);
        const double b = distance_correlation(y, x);
        CHECK(a == doctest::Approx(b).epsilon(1e-12));
        CHECK(a >= 0.0);
        CHECK(a <= 1.0 + 1e-12);
    }
}

TEST_CASE("dependence matches a direct reference implementation") {
    RngStream rng(8);
    for (int rep = 0; rep < 20; ++rep) {
        std::vector<std::vector<double>> x(12, std::vector<double>(2)),
            y(12, std::vector<double>(2));
        for (auto& r : x)
            for (auto& v : r) v = rng.normal();
        for (size_t i = 0; i < y.size(); ++i)
            for (size_t j = 0; j < 2; ++j) y[i][j] = 0.5 * x[i][j] + 0.5 * rng.normal();
        CHECK(distance_correlation(x, y) ==
              doctest::Approx(dcor_oracle(x, y)).epsilon(1e-10));
    }
}

TEST_CASE("zero model has unit hinge loss") {
    auto hy = tiny_hyper();
    hy.lambda_dcor = 0.0;
    auto features = synth_features(3, hy.d_text, hy.d_visual, 6);
    auto params = ModelParams::init(3, 6, hy, 1);
    params.for_each([](const char*, Mat& m) { std::fill(m.a.begin(), m.a.end(), 0.0); });
    RngStream rng(2);
    auto batch = random_batch(4, 3, 6, 2, rng);
    RngStream lrng(3);
    auto res = total_loss(batch, params, features, hy, lrng, false);
    CHECK(res.loss == doctest::Approx(1.0).epsilon(1e-12));
    for (double l : res.sample_losses) CHECK(l == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("analytic gradients match central finite differences") {
    auto hy = tiny_hyper();
    const int num_users = 5, num_items = 9;
    auto features = synth_features(11, hy.d_text, hy.d_visual, num_items);
    RngStream brng(21);
    double worst = 0.0;
    for (int inst = 0; inst < 5; ++inst) {
        auto params = ModelParams::init(num_users, num_items, hy, 100 + uint64_t(inst));
        // non-trivial magnitudes so hinges are partially active
        params.for_each([&](const char*, Mat& m) {
            for (auto& v : m.a) v += 0.3 * brng.normal();
        });
        auto batch = random_batch(16, num_users, num_items, 2, brng);
        RngStream lrng(1);
        auto res = total_loss(batch, params, features, hy, lrng, false);
        const double eps = 1e-4;
        // probe a spread of coordinates in every tensor
        params.for_each([&](const char* name, Mat& m) {
            Mat* gm = nullptr;
            res.grads.for_each([&](const char* gname, Mat& g) {
                if (std::string(gname) == name) gm = &g;
            });
            REQUIRE(gm != nullptr);
            const size_t stride = std::max<size_t>(1, m.a.size() / 7);
            for (size_t i = 0; i < m.a.size(); i += stride) {
                const double orig = m.a[i];
                m.a[i] = orig + eps;
                RngStream r1(1);
                const double lp = total_loss(batch, params, features, hy, r1, false).loss;
                m.a[i] = orig - eps;
                RngStream r2(1);
                const double lm = total_loss(batch, params, features, hy, r2, false).loss;
                m.a[i] = orig;
                const double fd = (lp - lm) / (2.0 * eps);
                const double an = gm->a[i];
                const double rel = std::abs(fd - an) /
                                   std::max({std::abs(fd), std::abs(an), 1e-6});
                worst = std::max(worst, rel);
            }
        });
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("saturated hinges give zero loss") {
    auto hy = tiny_hyper();
    hy.lambda_dcor = 0.0;
    // score gap far beyond the margin: hand-build via ranking_loss directly
    CHECK(ranking_loss(10.0, {0.0, 1.0}, 1.0) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("optimizer leaves parameters alone without gradient or decay") {
    auto hy = tiny_hyper();
    auto p = ModelParams::init(2, 3, hy, 1);
    auto before = p.flatten();
    auto g = ModelParams::zeros_like(p);
    auto st = AdamWState::zeros_like(p);
    adamw_step(p, g, st, 0.001, 0.0);
    CHECK(p.flatten() == before);
}

TEST_CASE("decoupled decay shrinks weights multiplicatively") {
    auto hy = tiny_hyper();
    auto p = ModelParams::init(2, 3, hy, 1);
    p.user_emb(0, 0) = 1.0;
    auto g = ModelParams::zeros_like(p);
    auto st = AdamWState::zeros_like(p);
    adamw_step(p, g, st, 0.1, 0.1);
    CHECK(p.user_emb(0, 0) == doctest::Approx(0.99).epsilon(1e-12));
}

TEST_CASE("first adaptive step moves by roughly the learning rate") {
    auto hy = tiny_hyper();
    auto p = ModelParams::init(2, 3, hy, 1);
    const double w0 = p.user_emb(0, 0);
    auto g = ModelParams::zeros_like(p);
    g.user_emb(0, 0) = 1.0;
    auto st = AdamWState::zeros_like(p);
    adamw_step(p, g, st, 0.001, 0.0);
    CHECK(p.user_emb(0, 0) == doctest::Approx(w0 - 0.001).epsilon(1e-6));
}

TEST_CASE("no local epochs produce a zero delta") {
    auto hy = tiny_hyper();
    hy.epochs_local = 0;
    auto features = synth_features(3, hy.d_text, hy.d_visual, 6);
    auto global = ModelParams::init(3, 6, hy, 1);
    std::vector<Interaction> data{{0, 1, 4, 0}, {1, 2, 3, 1}};
    RngStream rng(5);
    auto up = train_local(global, data, features, hy, rng, 6);
    CHECK(up.sample_count == 2);
    for (double v : up.delta.flatten()) CHECK(v == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("local training is seed-deterministic") {
    auto hy = tiny_hyper();
    hy.epochs_local = 1;
    hy.batch_size = 4;
    auto features = synth_features(3, hy.d_text, hy.d_visual, 10);
    auto global = ModelParams::init(4, 10, hy, 1);
    std::vector<Interaction> data;
    for (int i = 0; i < 12; ++i) data.push_back({i % 4, i % 10, 3, uint64_t(i)});
    RngStream r1(5), r2(5);
    auto a = train_local(global, data, features, hy, r1, 10);
    auto b = train_local(global, data, features, hy, r2, 10);
    CHECK(a.delta.flatten() == b.delta.flatten());
    CHECK(a.sample_losses == b.sample_losses);
}

TEST_CASE("training reduces the loss on a toy client") {
    auto hy = tiny_hyper();
    hy.epochs_local = 1;
    hy.lr = 0.01;
    hy.batch_size = 10;
    hy.lambda_dcor = 0.0;
    auto features = synth_features(3, hy.d_text, hy.d_visual, 30);
    double improved = 0.0;
    for (uint64_t seed = 1; seed <= 5; ++seed) {
        auto global = ModelParams::init(5, 30, hy, seed);
        std::vector<Interaction> data;
        RngStream drng(seed);
        for (int i = 0; i < 50; ++i)
            data.push_back({int(drng.uniform_int(5)), int(drng.uniform_int(30)), 3,
                            uint64_t(i)});
        auto eval_loss = [&](const ModelParams& p) {
            RngStream erng(99);
            std::vector<BatchSample> batch;
            for (const auto& it : data) {
                BatchSample s;
                s.user = it.user_id;
                s.pos_item = it.item_id;
                s.neg_items = {int(erng.uniform_int(30)), int(erng.uniform_int(30))};
                batch.push_back(s);
            }
            RngStream lrng(1);
            return total_loss(batch, p, features, hy, lrng, false).loss;
        };
        const double before = eval_loss(global);
        RngStream trng(seed);
        auto up = train_local(global, data, features, hy, trng, 30);
        auto after_params = global;
        after_params.add_scaled(up.delta, 1.0);
        improved += eval_loss(after_params) - before;
    }
    CHECK(improved / 5.0 <= 0.0);
}

TEST_CASE("empty client data is rejected") {
    auto hy = tiny_hyper();
    auto features = synth_features(3, hy.d_text, hy.d_visual, 6);
    auto global = ModelParams::init(3, 6, hy, 1);
    RngStream rng(5);
    CHECK_THROWS_AS(train_local(global, {}, features, hy, rng, 6), std::invalid_argument);
}

TEST_CASE("id-only scoring reduces to a warped factorized dot product") {
    auto hy = tiny_hyper();
    auto features = synth_features(3, hy.d_text, hy.d_visual, 6);
    auto params = ModelParams::init(3, 6, hy, 9);
    // force the attention onto the id channel: huge bias on channel 0
    params.a1 = Mat(params.a1.rows, params.a1.cols);
    params.b1 = Mat(params.b1.rows, params.b1.cols);
    params.a2 = Mat(params.a2.rows, params.a2.cols);
    params.b2 = Mat(params.b2.rows, params.b2.cols);
    params.b2(0, 0) = 60.0;  // softmax → (1,0,0)
    const double got = predict(1, 2, params, features, hy);
    // standalone reference: sum over factors of GELU(<p_f, v_f>)
    double want = 0.0;
    const int df = hy.d_f();
    for (int f = 0; f < hy.factors; ++f) {
        double dot = 0.0;
        for (int j = 0; j < df; ++j)
            dot += params.user_emb(1, f * df + j) * params.item_emb(2, f * df + j);
        want += gelu(dot);
    }
    CHECK(got == doctest::Approx(want).epsilon(1e-9));
}

TEST_CASE("checkpoint size covers every tensor") {
    auto hy = tiny_hyper();
    auto p = ModelParams::init(3, 6, hy, 1);
    auto bytes = serialize_checkpoint(p);
    CHECK(bytes.size() == checkpoint_size_bytes(p));
    CHECK(bytes.size() > p.num_params() * 4);  // payload plus manifest
}

TEST_CASE("fast scorer agrees with the reference path") {
    auto hy = tiny_hyper();
    auto features = synth_features(3, hy.d_text, hy.d_visual, 12);
    auto params = ModelParams::init(4, 12, hy, 17);
    RngStream rng(1);
    params.for_each([&](const char*, Mat& m) {
        for (auto& v : m.a) v += 0.2 * rng.normal();
    });
    Scorer scorer(params, features, hy);
    for (int u = 0; u < 4; ++u) {
        scorer.prepare_user(u);
        for (int i = 0; i < 12; ++i) {
            CHECK(scorer.score_prepared(i) ==
                  doctest::Approx(predict(u, i, params, features, hy)).epsilon(1e-10));
        }
    }
}
