#include "fedsel/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace fedsel {

double auc_single(const std::vector<double>& rel, const std::vector<double>& nonrel) {
    if (rel.empty() || nonrel.empty())
        throw std::invalid_argument("auc needs both relevant and non-relevant scores");
    // sort non-relevant once, count concordant pairs by binary search
    std::vector<double> neg = nonrel;
    std::sort(neg.begin(), neg.end());
    double concordant = 0.0;
    for (double s : rel) {
        auto lo = std::lower_bound(neg.begin(), neg.end(), s);
        auto hi = std::upper_bound(neg.begin(), neg.end(), s);
        concordant += double(lo - neg.begin());            // strictly below
        concordant += 0.5 * double(hi - lo);               // ties
    }
    return concordant / (double(rel.size()) * double(neg.size()));
}

double auc(const std::vector<RankedUser>& users) {
    double sum = 0.0;
    size_t n = 0;
    for (const auto& u : users) {
        std::vector<double> rel, nonrel;
        for (size_t i = 0; i < u.items.size(); ++i) {
            if (u.relevant.count(u.items[i])) rel.push_back(u.scores[i]);
            else nonrel.push_back(u.scores[i]);
        }
        if (rel.empty() || nonrel.empty()) continue;
        sum += auc_single(rel, nonrel);
        ++n;
    }
    return n ? sum / double(n) : 0.0;
}

std::vector<int> rank_items(const RankedUser& user) {
    std::vector<size_t> idx(user.items.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
        if (user.scores[a] != user.scores[b]) return user.scores[a] > user.scores[b];
        return user.items[a] < user.items[b];
    });
    std::vector<int> out(idx.size());
    for (size_t i = 0; i < idx.size(); ++i) out[i] = user.items[idx[i]];
    return out;
}

double ndcg_at_k(const RankedUser& user, int k) {
    if (user.relevant.empty()) return 0.0;
    auto ranked = rank_items(user);
    const int cutoff = std::min<int>(k, int(ranked.size()));
    double dcg = 0.0;
    for (int r = 0; r < cutoff; ++r)
        if (user.relevant.count(ranked[size_t(r)])) dcg += 1.0 / std::log2(double(r) + 2.0);
    const int ideal = std::min<int>(k, int(user.relevant.size()));
    double idcg = 0.0;
    for (int r = 0; r < ideal; ++r) idcg += 1.0 / std::log2(double(r) + 2.0);
    return idcg > 0.0 ? dcg / idcg : 0.0;
}

double ndcg_at_k(const std::vector<RankedUser>& users, int k) {
    double sum = 0.0;
    size_t n = 0;
    for (const auto& u : users) {
        if (u.relevant.empty()) continue;
        sum += ndcg_at_k(u, k);
        ++n;
    }
    return n ? sum / double(n) : 0.0;
}

TopKMetrics topk_metrics(const RankedUser& user, int k) {
    auto ranked = rank_items(user);
    const int cutoff = std::min<int>(k, int(ranked.size()));
    int hits = 0;
    for (int r = 0; r < cutoff; ++r)
        if (user.relevant.count(ranked[size_t(r)])) ++hits;
    TopKMetrics m;
    m.precision = k > 0 ? double(hits) / double(k) : 0.0;
    m.recall = user.relevant.empty() ? 0.0 : double(hits) / double(user.relevant.size());
    m.f1 = (m.precision + m.recall) > 0.0
               ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
               : 0.0;
    return m;
}

TopKMetrics topk_metrics(const std::vector<RankedUser>& users, int k) {
    TopKMetrics acc;
    size_t n = 0;
    for (const auto& u : users) {
        if (u.relevant.empty()) continue;  // excluded from the average
        auto m = topk_metrics(u, k);
        acc.precision += m.precision;
        acc.recall += m.recall;
        acc.f1 += m.f1;
        ++n;
    }
    if (n) {
        acc.precision /= double(n);
        acc.recall /= double(n);
        acc.f1 /= double(n);
    }
    return acc;
}

std::optional<double> time_to_target(const std::vector<EvalPoint>& trace, double target_auc) {
    for (const auto& p : trace)
        if (p.auc >= target_auc) return p.clock;
    return std::nullopt;
}

}  // namespace fedsel
