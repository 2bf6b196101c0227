#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedsel/rng.hpp"

namespace fedsel {

struct RewardRecord {
    long round;
    double reward;
};

struct ArmState {
    long pulls = 0;
    double mean = 0.0;
    std::vector<RewardRecord> history;
};

enum class PolicyKind { Ucb, UcbDiscounted, UcbWindow, Random, Cluster, GreedyOracle };

PolicyKind parse_policy_kind(const std::string& name);
std::string policy_kind_name(PolicyKind kind);

struct PolicyConfig {
    PolicyKind kind = PolicyKind::Ucb;
    double rho = 1.0;          // exploration coefficient
    double gamma_disc = 0.99;  // discounted variant
    long window = 50;          // sliding-window variant
    int k = 1;                 // selection budget

    void validate() const;
};

struct SelectionResult {
    std::vector<int> selected;      // ascending client ids
    std::vector<uint8_t> action;    // binary vector, size N
    std::vector<double> indices;    // per-client index values at decision time
};

// mu + rho * sqrt(ln t / (n + 1))
double ucb_index(const ArmState& arm, long t, double rho);

// Top-K by index; ties broken by fewer pulls, then lower client id.
SelectionResult select_top_k(const std::vector<ArmState>& arms, long t, double rho, int k);

// Running-mean update; appends to history.
void update_arm(ArmState& arm, double reward, long round);

enum class MeanMode { Discounted, Window };

// Discounted or windowed empirical mean over the arm's pull history.
double nonstationary_mean(const std::vector<RewardRecord>& history, MeanMode mode,
                          double gamma_disc, long window, long t);

// r_i = S_i - kappa * T_norm_i
double per_arm_reward(double score, double t_norm, double kappa);

// sum of selected scores minus kappa * max-latency / t_semi
double round_reward(const std::vector<double>& selected_scores, double max_latency,
                    double t_semi, double kappa);

SelectionResult random_select(int num_clients, int k, RngStream& rng);

// PCA to 2 components + seeded k-means over per-client update vectors,
// round-robin picks nearest to each centroid. Simplified clustering baseline.
SelectionResult cluster_select(const std::vector<std::vector<double>>& deltas, int k,
                               int k_clusters, RngStream& rng);

// Greedy marginal maximization of sum(S) - kappa * max(latency)/t_semi.
SelectionResult greedy_select(const std::vector<double>& scores,
                              const std::vector<double>& latencies, double kappa,
                              double t_semi, int k);

// Exhaustive size-K search; guarded to N <= 15.
SelectionResult brute_force_select(const std::vector<double>& scores,
                                   const std::vector<double>& latencies, double kappa,
                                   double t_semi, int k);

double selection_objective(const std::vector<int>& subset, const std::vector<double>& scores,
                           const std::vector<double>& latencies, double kappa, double t_semi);

// Softmax of index values; logged for analysis only.
std::vector<double> index_probabilities(const std::vector<double>& indices);

// Stateful per-run policy driver used by the orchestrator.
class SelectionPolicy {
public:
    SelectionPolicy(const PolicyConfig& config, int num_clients, uint64_t seed);

    struct Inputs {
        std::vector<double> scores;                    // latest S per client
        std::vector<double> latencies;                 // estimated per-client latency
        double t_semi = 1.0;
        double kappa = 0.5;
        std::vector<std::vector<double>> deltas;       // latest flat deltas (cluster)
    };

    SelectionResult select(long t, const Inputs& in);
    void record_reward(int client, double reward, long round);
    const std::vector<ArmState>& arms() const { return arms_; }

private:
    PolicyConfig config_;
    int num_clients_;
    std::vector<ArmState> arms_;
    RngStream rng_;
};

}  // namespace fedsel
