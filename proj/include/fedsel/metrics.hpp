#pragma once

#include <optional>
#include <unordered_set>
#include <vector>

namespace fedsel {

// Scores for one user's candidate list. `items` and `scores` are parallel;
// candidates must exclude the user's train positives.
struct RankedUser {
    std::vector<int> items;
    std::vector<double> scores;
    std::unordered_set<int> relevant;  // test positives
};

// Per-user pairwise AUC, ties counted half. Users without at least one
// relevant and one non-relevant candidate are skipped in the macro average.
double auc(const std::vector<RankedUser>& users);
double auc_single(const std::vector<double>& relevant_scores,
                  const std::vector<double>& nonrelevant_scores);

// Binary-gain NDCG at cutoff k, ties in ranking broken by item id.
double ndcg_at_k(const RankedUser& user, int k);
double ndcg_at_k(const std::vector<RankedUser>& users, int k);

struct TopKMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

TopKMetrics topk_metrics(const RankedUser& user, int k);
TopKMetrics topk_metrics(const std::vector<RankedUser>& users, int k);

// Simulated clock at the first evaluation reaching the target AUC.
struct EvalPoint {
    double clock = 0.0;
    double auc = 0.0;
};
std::optional<double> time_to_target(const std::vector<EvalPoint>& trace, double target_auc);

// Rank order of a candidate list: descending score, ties by ascending item id.
std::vector<int> rank_items(const RankedUser& user);

}  // namespace fedsel
