#pragma once

#include <cstdint>
#include <vector>

namespace fedsel {

struct UtilityWeights {
    double gamma = 0.5;   // reputation smoothing, in [0,1]
    double alpha = 1.0;   // relevance*reputation mix, > 0
    double beta = 1.0;    // data-quality mix, > 0
    double kappa = 0.5;   // latency penalty, > 0

    void validate() const;
};

struct ClientObservation {
    // [R_prev, delta, U, D_norm, T_train, T_comm]
    std::vector<double> raw;
    std::vector<double> standardized;
};

struct ClientLedgerEntry {
    double reputation = 0.0;   // R_t
    double last_delta = 0.0;   // incremental accuracy gain
    double relevance = 0.0;    // U_t
    double data_quality_raw = 0.0;
    double data_quality_norm = 0.0;
    std::vector<ClientObservation> observations;
};

struct ReputationLedger {
    std::vector<ClientLedgerEntry> clients;

    explicit ReputationLedger(int num_clients = 0) : clients(size_t(num_clients)) {}
};

// R_t = gamma * delta + (1 - gamma) * R_prev, delta = Q_i - Q_prev_global
struct ReputationUpdate {
    double reputation;
    double delta;
};
ReputationUpdate update_reputation(double r_prev, double q_i, double q_prev_global,
                                   double gamma);

// mean absolute deviation between flat parameter vectors
double update_deviation(const std::vector<double>& local, const std::vector<double>& global);

// exp(-delta) when the global model improved, else 1 - exp(-delta)
double update_relevance(double deviation, bool improved);

// |B| * sqrt(mean of squared losses); empty -> 0
double data_quality(const std::vector<double>& losses);
double data_quality(const std::vector<double>& losses, size_t sample_count);

// (v - min)/(max - min); degenerate pools map to 1.0
std::vector<double> minmax_normalize(const std::vector<double>& values);

// S = alpha * (U * R) + beta * D_norm
double aggregate_score(double relevance, double reputation, double data_quality_norm,
                       double alpha, double beta);

// Assembles raw 6-vectors for the whole pool and z-scores each dimension
// across it (population std; zero-variance dimensions map to 0).
std::vector<ClientObservation> build_observations(
    const ReputationLedger& ledger, const std::vector<double>& t_train,
    const std::vector<double>& t_comm);

// Single-client accessor; errors when the ledger does not know the client.
ClientObservation build_observation(const ReputationLedger& ledger, int client,
                                    const std::vector<double>& t_train,
                                    const std::vector<double>& t_comm);

}  // namespace fedsel
