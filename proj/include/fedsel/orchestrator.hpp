#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedsel/dataset.hpp"
#include "fedsel/metrics.hpp"
#include "fedsel/partition.hpp"
#include "fedsel/recmodel.hpp"
#include "fedsel/selection.hpp"
#include "fedsel/sysmodel.hpp"
#include "fedsel/utility.hpp"

namespace fedsel {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RunConfig {
    // dataset
    std::string dataset_path;   // empty -> built-in synthetic log
    uint64_t synth_seed = 42;
    std::string feature_file;   // empty -> synthetic features
    uint64_t feature_seed = 7;
    double split_ratio = 0.8;
    uint64_t split_seed = 13;

    // partition
    std::string partition_strategy = "exponential";  // exponential | linear
    double ubi = 0.1172;
    int num_clients = 8;
    uint64_t partition_seed = 1;

    // system
    std::string fleet_file;
    double comm_multiplier = 2.0;
    double calibration = kDefaultCalibration;
    double t_semi = 0.0;  // 0 -> derived from the fleet

    // model
    HyperParams hyper;

    // utility
    UtilityWeights weights;
    std::string q_mode = "marginal";  // marginal | shared
    double val_fraction = 0.1;
    int val_users = 200;
    int val_negatives = 50;
    uint64_t val_seed = 99;

    // policy
    PolicyConfig policy;

    // run
    long rounds = 100;
    double target_auc = 0.82;
    int eval_every = 1;
    uint64_t seed = 1;
    bool stop_at_target = false;
    size_t max_samples_per_round = 0;  // per-client per-epoch cap; 0 = all
    int eval_k = 50;

    void validate() const;
    nlohmann::json to_json() const;
    static RunConfig from_json(const nlohmann::json& j);
    static RunConfig load(const std::string& path);
    std::string hash() const;
};

struct ClientRoundStats {
    bool selected = false;
    double score = 0.0;       // S
    double relevance = 0.0;   // U
    double reputation = 0.0;  // R
    double delta_q = 0.0;
    double data_quality_norm = 0.0;
    double t_train = 0.0;
    double t_comm = 0.0;
    double reward = 0.0;      // per-arm reward, selected only
    double index = 0.0;       // policy index at decision time
    double prob = 0.0;        // softmax of indices, analysis only
};

struct RoundRecord {
    long round = 0;
    std::vector<int> selected;
    std::vector<ClientRoundStats> clients;
    double t_round = 0.0;
    double t_norm = 0.0;
    double round_reward = 0.0;
    double clock = 0.0;
    double q_global = 0.0;
    bool evaluated = false;
    double auc = 0.0;
    double ndcg = 0.0;
    double recall = 0.0;
};

struct RunSummary {
    double final_auc = 0.0;
    double final_ndcg = 0.0;
    double final_recall = 0.0;
    std::optional<double> time_to_target;
    double total_simulated_time = 0.0;
    long rounds_executed = 0;
    double t_semi = 0.0;
    nlohmann::json config_echo;
};

struct RunResult {
    std::vector<RoundRecord> trace;
    RunSummary summary;
};

// global + sum_i (|B_i| / sum_j |B_j|) * delta_i
ModelParams fedavg_aggregate(const ModelParams& global,
                             const std::vector<LocalUpdate>& updates);

RunResult run_experiment(const RunConfig& config);

void write_trace_csv(std::ostream& out, const RunResult& result, int num_clients);
void write_trace_csv(const std::string& path, const RunResult& result, int num_clients);
nlohmann::json summary_json(const RunSummary& summary);
void write_summary_json(const std::string& path, const RunSummary& summary);

}  // namespace fedsel
