#include "fedsel/utility.hpp"

#include <cmath>
#include <stdexcept>

namespace fedsel {

void UtilityWeights::validate() const {
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw std::invalid_argument("gamma must be in [0,1]");
    if (!(alpha > 0.0) || !(beta > 0.0)) throw std::invalid_argument("alpha, beta must be > 0");
    if (!(kappa > 0.0)) throw std::invalid_argument("kappa must be > 0");
}

ReputationUpdate update_reputation(double r_prev, double q_i, double q_prev_global,
                                   double gamma) {
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw std::invalid_argument("gamma must be in [0,1]");
    const double delta = q_i - q_prev_global;
    return {gamma * delta + (1.0 - gamma) * r_prev, delta};
}

double update_deviation(const std::vector<double>& local, const std::vector<double>& global) {
    if (local.size() != global.size() || local.empty())
        throw std::invalid_argument("parameter vector shape mismatch");
    double sum = 0.0;
    for (size_t i = 0; i < local.size(); ++i) sum += std::abs(local[i] - global[i]);
    return sum / double(local.size());
}

double update_relevance(double deviation, bool improved) {
    if (deviation < 0.0) throw std::invalid_argument("deviation must be >= 0");
    const double e = std::exp(-deviation);
    return improved ? e : 1.0 - e;
}

double data_quality(const std::vector<double>& losses) {
    return data_quality(losses, losses.size());
}

double data_quality(const std::vector<double>& losses, size_t sample_count) {
    if (losses.empty() || sample_count == 0) return 0.0;
    double sq = 0.0;
    for (double l : losses) sq += l * l;
    return double(sample_count) * std::sqrt(sq / double(losses.size()));
}

std::vector<double> minmax_normalize(const std::vector<double>& values) {
    if (values.empty()) return {};
    double lo = values[0], hi = values[0];
    for (double v : values) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    std::vector<double> out(values.size());
    if (hi - lo <= 0.0) {
        // uniform quality treated as fully valuable
        for (auto& v : out) v = 1.0;
        return out;
    }
    for (size_t i = 0; i < values.size(); ++i) out[i] = (values[i] - lo) / (hi - lo);
    return out;
}

double aggregate_score(double relevance, double reputation, double data_quality_norm,
                       double alpha, double beta) {
    return alpha * (relevance * reputation) + beta * data_quality_norm;
}

std::vector<ClientObservation> build_observations(const ReputationLedger& ledger,
                                                  const std::vector<double>& t_train,
                                                  const std::vector<double>& t_comm) {
    const size_t n = ledger.clients.size();
    if (t_train.size() != n || t_comm.size() != n)
        throw std::invalid_argument("latency vectors must cover the client pool");
    std::vector<ClientObservation> obs(n);
    for (size_t i = 0; i < n; ++i) {
        const auto& c = ledger.clients[i];
        obs[i].raw = {c.reputation, c.last_delta,        c.relevance,
                      c.data_quality_norm, t_train[i], t_comm[i]};
    }
    const size_t dims = 6;
    for (size_t d = 0; d < dims; ++d) {
        double mean = 0.0;
        for (const auto& o : obs) mean += o.raw[d];
        mean /= double(n);
        double var = 0.0;
        for (const auto& o : obs) var += (o.raw[d] - mean) * (o.raw[d] - mean);
        var /= double(n);
        const double sd = std::sqrt(var);
        for (auto& o : obs) {
            if (o.standardized.size() != dims) o.standardized.assign(dims, 0.0);
            o.standardized[d] = sd > 0.0 ? (o.raw[d] - mean) / sd : 0.0;
        }
    }
    return obs;
}

ClientObservation build_observation(const ReputationLedger& ledger, int client,
                                    const std::vector<double>& t_train,
                                    const std::vector<double>& t_comm) {
    if (client < 0 || size_t(client) >= ledger.clients.size())
        throw std::out_of_range("ledger does not know this client");
    return build_observations(ledger, t_train, t_comm)[size_t(client)];
}

}  // namespace fedsel
