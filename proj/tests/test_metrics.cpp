#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "fedsel/metrics.hpp"
#include "fedsel/rng.hpp"

using namespace fedsel;

namespace {

// brute-force pair-counting reference
double auc_oracle(const std::vector<double>& rel, const std::vector<double>& non) {
    double s = 0.0;
    for (double r : rel)
        for (double n : non) s += r > n ? 1.0 : (r == n ? 0.5 : 0.0);
    return s / (double(rel.size()) * double(non.size()));
}

double ndcg_oracle(const RankedUser& u, int k) {
    auto order = rank_items(u);
    double dcg = 0.0;
    for (int r = 0; r < std::min<int>(k, int(order.size())); ++r)
        if (u.relevant.count(order[r])) dcg += 1.0 / std::log2(double(r) + 2.0);
    double idcg = 0.0;
    const int ideal = std::min<int>(k, int(u.relevant.size()));
    for (int r = 0; r < ideal; ++r) idcg += 1.0 / std::log2(double(r) + 2.0);
    return idcg > 0.0 ? dcg / idcg : 0.0;
}

RankedUser random_user(RngStream& rng, int n_items, int n_rel) {
    RankedUser u;
    for (int i = 0; i < n_items; ++i) {
        u.items.push_back(i);
        // coarse grid forces score ties
        u.scores.push_back(double(rng.uniform_int(8)) / 4.0);
    }
    std::vector<int> perm(n_items);
    for (int i = 0; i < n_items; ++i) perm[i] = i;
    rng.shuffle(perm.data(), perm.size());
    for (int j = 0; j < n_rel; ++j) u.relevant.insert(perm[j]);
    return u;
}

}  // namespace

TEST_CASE("perfect separation scores 1") {
    CHECK(auc_single({0.9, 0.8}, {0.1, 0.2}) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("all-equal scores give 0.5") {
    CHECK(auc_single({0.5}, {0.5, 0.5}) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("mixed pair counting") {
    // pairs: (0.9 > 0.1) = 1, (0.9 < 0.95) = 0 → 0.5
    CHECK(auc_single({0.9}, {0.1, 0.95}) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("auc matches the pair-counting oracle on random instances") {
    RngStream rng(17);
    for (int rep = 0; rep < 200; ++rep) {
        const int nr = 1 + int(rng.uniform_int(20));
        const int nn = 1 + int(rng.uniform_int(80));
        std::vector<double> rel(nr), non(nn);
        for (auto& v : rel) v = double(rng.uniform_int(10)) / 5.0;
        for (auto& v : non) v = double(rng.uniform_int(10)) / 5.0;
        CHECK(auc_single(rel, non) == doctest::Approx(auc_oracle(rel, non)).epsilon(1e-12));
    }
}

TEST_CASE("macro auc skips degenerate users") {
    RankedUser good;
    good.items = {0, 1};
    good.scores = {1.0, 0.0};
    good.relevant = {0};
    RankedUser degenerate;  // no relevant candidates
    degenerate.items = {0, 1};
    degenerate.scores = {1.0, 0.0};
    CHECK(auc({good, degenerate}) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("single relevant item at rank 1 is ideal") {
    RankedUser u;
    u.items = {0, 1, 2};
    u.scores = {3.0, 2.0, 1.0};
    u.relevant = {0};
    CHECK(ndcg_at_k(u, 50) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("single relevant item at rank 2") {
    RankedUser u;
    u.items = {0, 1, 2};
    u.scores = {3.0, 2.0, 1.0};
    u.relevant = {1};
    CHECK(ndcg_at_k(u, 50) == doctest::Approx(1.0 / std::log2(3.0)).epsilon(1e-12));
}

TEST_CASE("relevant items outside the cutoff score zero") {
    RankedUser u;
    u.items = {0, 1, 2};
    u.scores = {3.0, 2.0, 1.0};
    u.relevant = {2};
    CHECK(ndcg_at_k(u, 2) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("ndcg matches an independent oracle on random instances") {
    RngStream rng(23);
    for (int rep = 0; rep < 200; ++rep) {
        auto u = random_user(rng, 2 + int(rng.uniform_int(60)), 1 + int(rng.uniform_int(5)));
        const int k = 1 + int(rng.uniform_int(20));
        CHECK(ndcg_at_k(u, k) == doctest::Approx(ndcg_oracle(u, k)).epsilon(1e-12));
        CHECK(ndcg_at_k(u, k) >= 0.0);
        CHECK(ndcg_at_k(u, k) <= 1.0);
    }
}

TEST_CASE("ranking breaks score ties by item id") {
    RankedUser u;
    u.items = {5, 2, 9};
    u.scores = {1.0, 1.0, 2.0};
    CHECK(rank_items(u) == std::vector<int>{9, 2, 5});
}

TEST_CASE("top-k counting metrics") {
    RankedUser u;
    for (int i = 0; i < 10; ++i) {
        u.items.push_back(i);
        u.scores.push_back(10.0 - i);
    }
    u.relevant = {0, 1, 7, 9};  // 2 of 4 in the top 5
    auto m = topk_metrics(u, 5);
    CHECK(m.recall == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(m.precision == doctest::Approx(2.0 / 5.0).epsilon(1e-12));
    CHECK(m.f1 == doctest::Approx(2.0 * 0.4 * 0.5 / 0.9).epsilon(1e-12));
}

TEST_CASE("all top slots relevant gives precision 1") {
    RankedUser u;
    for (int i = 0; i < 5; ++i) {
        u.items.push_back(i);
        u.scores.push_back(5.0 - i);
        u.relevant.insert(i);
    }
    CHECK(topk_metrics(u, 5).precision == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("users without relevant items are excluded from the macro average") {
    RankedUser with;
    with.items = {0, 1};
    with.scores = {2.0, 1.0};
    with.relevant = {0};
    RankedUser without;
    without.items = {0, 1};
    without.scores = {2.0, 1.0};
    auto m = topk_metrics({with, without}, 1);
    CHECK(m.recall == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("recall is non-decreasing in the cutoff") {
    RngStream rng(31);
    for (int rep = 0; rep < 50; ++rep) {
        auto u = random_user(rng, 40, 5);
        double prev = 0.0;
        for (int k = 1; k <= 40; k += 3) {
            const double r = topk_metrics(u, k).recall;
            CHECK(r >= prev - 1e-15);
            prev = r;
        }
    }
}

TEST_CASE("hit counts are integral") {
    RngStream rng(37);
    for (int rep = 0; rep < 50; ++rep) {
        auto u = random_user(rng, 30, 4);
        const int k = 1 + int(rng.uniform_int(15));
        auto m = topk_metrics(u, k);
        const double hits_p = m.precision * k;
        const double hits_r = m.recall * double(u.relevant.size());
        CHECK(hits_p == doctest::Approx(std::round(hits_p)).epsilon(1e-9));
        CHECK(hits_r == doctest::Approx(std::round(hits_r)).epsilon(1e-9));
    }
}

TEST_CASE("macro averages ignore user order") {
    RngStream rng(41);
    std::vector<RankedUser> users;
    for (int i = 0; i < 8; ++i) users.push_back(random_user(rng, 25, 3));
    auto rev = users;
    std::reverse(rev.begin(), rev.end());
    CHECK(auc(users) == doctest::Approx(auc(rev)).epsilon(1e-12));
    CHECK(ndcg_at_k(users, 10) == doctest::Approx(ndcg_at_k(rev, 10)).epsilon(1e-12));
}

TEST_CASE("first crossing of the target") {
    std::vector<EvalPoint> trace{{10.0, 0.5}, {20.0, 0.83}};
    auto t = time_to_target(trace, 0.82);
    REQUIRE(t.has_value());
    CHECK(*t == doctest::Approx(20.0).epsilon(1e-12));
}

TEST_CASE("zero target crosses at the first evaluation") {
    std::vector<EvalPoint> trace{{10.0, 0.5}, {20.0, 0.83}};
    auto t = time_to_target(trace, 0.0);
    REQUIRE(t.has_value());
    CHECK(*t == doctest::Approx(10.0).epsilon(1e-12));
}

TEST_CASE("unreached target yields no value") {
    std::vector<EvalPoint> trace{{10.0, 0.5}};
    CHECK(!time_to_target(trace, 0.9).has_value());
}
