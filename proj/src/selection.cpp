#include "fedsel/selection.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace fedsel {

PolicyKind parse_policy_kind(const std::string& name) {
    if (name == "ucb") return PolicyKind::Ucb;
    if (name == "ucb_discounted") return PolicyKind::UcbDiscounted;
    if (name == "ucb_window") return PolicyKind::UcbWindow;
    if (name == "random") return PolicyKind::Random;
    if (name == "cluster") return PolicyKind::Cluster;
    if (name == "greedy_oracle") return PolicyKind::GreedyOracle;
    throw std::invalid_argument("unknown policy: " + name);
}

std::string policy_kind_name(PolicyKind kind) {
    switch (kind) {
        case PolicyKind::Ucb: return "ucb";
        case PolicyKind::UcbDiscounted: return "ucb_discounted";
        case PolicyKind::UcbWindow: return "ucb_window";
        case PolicyKind::Random: return "random";
        case PolicyKind::Cluster: return "cluster";
        case PolicyKind::GreedyOracle: return "greedy_oracle";
    }
    return "?";
}

void PolicyConfig::validate() const {
    if (k < 1) throw std::invalid_argument("selection budget must be >= 1");
    if (rho < 0.0) throw std::invalid_argument("rho must be >= 0");
    if (!(gamma_disc > 0.0 && gamma_disc <= 1.0))
        throw std::invalid_argument("gamma_disc must be in (0,1]");
    if (window < 1) throw std::invalid_argument("window must be >= 1");
}

double ucb_index(const ArmState& arm, long t, double rho) {
    if (t < 1) throw std::invalid_argument("round must be >= 1");
    return arm.mean + rho * std::sqrt(std::log(double(t)) / double(arm.pulls + 1));
}

static SelectionResult top_k_from_indices(const std::vector<double>& indices,
                                          const std::vector<long>& pulls, int k) {
    const int n = int(indices.size());
    std::vector<int> ids(static_cast<size_t>(n));
    std::iota(ids.begin(), ids.end(), 0);
    std::sort(ids.begin(), ids.end(), [&](int a, int b) {
        if (indices[size_t(a)] != indices[size_t(b)])
            return indices[size_t(a)] > indices[size_t(b)];
        if (pulls[size_t(a)] != pulls[size_t(b)]) return pulls[size_t(a)] < pulls[size_t(b)];
        return a < b;
    });
    SelectionResult r;
    const int take = std::min(k, n);
    r.selected.assign(ids.begin(), ids.begin() + take);
    std::sort(r.selected.begin(), r.selected.end());
    r.action.assign(size_t(n), 0);
    for (int c : r.selected) r.action[size_t(c)] = 1;
    r.indices = indices;
    return r;
}

SelectionResult select_top_k(const std::vector<ArmState>& arms, long t, double rho, int k) {
    std::vector<double> idx(arms.size());
    std::vector<long> pulls(arms.size());
    for (size_t i = 0; i < arms.size(); ++i) {
        idx[i] = ucb_index(arms[i], t, rho);
        pulls[i] = arms[i].pulls;
    }
    return top_k_from_indices(idx, pulls, k);
}

void update_arm(ArmState& arm, double reward, long round) {
    if (!std::isfinite(reward)) throw std::invalid_argument("non-finite reward");
    arm.mean = (arm.mean * double(arm.pulls) + reward) / double(arm.pulls + 1);
    arm.pulls += 1;
    arm.history.push_back({round, reward});
}

double nonstationary_mean(const std::vector<RewardRecord>& history, MeanMode mode,
                          double gamma_disc, long window, long t) {
    if (history.empty()) return 0.0;
    if (mode == MeanMode::Discounted) {
        double num = 0.0, den = 0.0;
        for (const auto& h : history) {
            const double w = std::pow(gamma_disc, double(t - h.round));
            num += w * h.reward;
            den += w;
        }
        return den > 0.0 ? num / den : 0.0;
    }
    const size_t take = size_t(std::min<long>(window, long(history.size())));
    double sum = 0.0;
    for (size_t i = history.size() - take; i < history.size(); ++i) sum += history[i].reward;
    return sum / double(take);
}

double per_arm_reward(double score, double t_norm, double kappa) {
    return score - kappa * t_norm;
}

double round_reward(const std::vector<double>& selected_scores, double max_latency,
                    double t_semi, double kappa) {
    if (selected_scores.empty()) throw std::invalid_argument("empty selection");
    if (!(t_semi > 0.0)) throw std::invalid_argument("t_semi must be positive");
    double s = 0.0;
    for (double v : selected_scores) s += v;
    return s - kappa * max_latency / t_semi;
}

SelectionResult random_select(int num_clients, int k, RngStream& rng) {
    if (num_clients < 1) throw std::invalid_argument("need at least one client");
    std::vector<int> ids(static_cast<size_t>(num_clients));
    std::iota(ids.begin(), ids.end(), 0);
    const int take = std::min(k, num_clients);
    for (int i = 0; i < take; ++i) {
        const int j = i + int(rng.uniform_int(uint64_t(num_clients - i)));
        std::swap(ids[size_t(i)], ids[size_t(j)]);
    }
    SelectionResult r;
    r.selected.assign(ids.begin(), ids.begin() + take);
    std::sort(r.selected.begin(), r.selected.end());
    r.action.assign(size_t(num_clients), 0);
    for (int c : r.selected) r.action[size_t(c)] = 1;
    r.indices.assign(size_t(num_clients), 0.0);
    return r;
}

// --- PCA + k-means baseline ----------------------------------------------------

namespace {

// Top eigenpair of a small symmetric matrix via power iteration.
std::vector<double> power_iteration(const std::vector<double>& m, int n, double& eigval,
                                    RngStream& rng) {
    std::vector<double> v(static_cast<size_t>(n));
    for (auto& x : v) x = rng.normal();
    for (int iter = 0; iter < 200; ++iter) {
        std::vector<double> w(size_t(n), 0.0);
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < n; ++c) w[size_t(r)] += m[size_t(r) * size_t(n) + size_t(c)] * v[size_t(c)];
        double norm = 0.0;
        for (double x : w) norm += x * x;
        norm = std::sqrt(norm);
        if (norm < 1e-300) { eigval = 0.0; return std::vector<double>(size_t(n), 0.0); }
        for (auto& x : w) x /= norm;
        v = w;
    }
    // Rayleigh quotient
    std::vector<double> w(size_t(n), 0.0);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) w[size_t(r)] += m[size_t(r) * size_t(n) + size_t(c)] * v[size_t(c)];
    eigval = 0.0;
    for (int r = 0; r < n; ++r) eigval += v[size_t(r)] * w[size_t(r)];
    return v;
}

}  // namespace

SelectionResult cluster_select(const std::vector<std::vector<double>>& deltas, int k,
                               int k_clusters, RngStream& rng) {
    const int n = int(deltas.size());
    if (n < 1) throw std::invalid_argument("need at least one client");
    if (k_clusters < 1 || k_clusters > n)
        throw std::invalid_argument("k_clusters must be in [1, N]");
    size_t dim = 0;
    for (const auto& d : deltas) dim = std::max(dim, d.size());

    // centered data; missing deltas are zero vectors
    std::vector<std::vector<double>> x(size_t(n), std::vector<double>(dim, 0.0));
    for (int i = 0; i < n; ++i)
        std::copy(deltas[size_t(i)].begin(), deltas[size_t(i)].end(), x[size_t(i)].begin());
    std::vector<double> mean(dim, 0.0);
    for (const auto& r : x)
        for (size_t j = 0; j < dim; ++j) mean[j] += r[j] / double(n);
    for (auto& r : x)
        for (size_t j = 0; j < dim; ++j) r[j] -= mean[j];

    // PCA via the N x N Gram matrix (N is small)
    std::vector<double> gram(size_t(n) * size_t(n), 0.0);
    for (int a = 0; a < n; ++a)
        for (int b = a; b < n; ++b) {
            double s = 0.0;
            for (size_t j = 0; j < dim; ++j) s += x[size_t(a)][j] * x[size_t(b)][j];
            gram[size_t(a) * size_t(n) + size_t(b)] = s;
            gram[size_t(b) * size_t(n) + size_t(a)] = s;
        }
    std::vector<std::vector<double>> proj(size_t(n), std::vector<double>(2, 0.0));
    std::vector<double> g = gram;
    for (int comp = 0; comp < 2; ++comp) {
        double lam = 0.0;
        auto v = power_iteration(g, n, lam, rng);
        if (lam <= 1e-18) break;
        const double scale = std::sqrt(lam);
        for (int i = 0; i < n; ++i) proj[size_t(i)][size_t(comp)] = scale * v[size_t(i)];
        // deflate
        for (int a = 0; a < n; ++a)
            for (int b = 0; b < n; ++b)
                g[size_t(a) * size_t(n) + size_t(b)] -= lam * v[size_t(a)] * v[size_t(b)];
    }

    // seeded k-means, 20 iterations
    std::vector<int> init(static_cast<size_t>(n));
    std::iota(init.begin(), init.end(), 0);
    rng.shuffle(init.data(), init.size());
    std::vector<std::vector<double>> centroids(static_cast<size_t>(k_clusters));
    for (int c = 0; c < k_clusters; ++c) centroids[size_t(c)] = proj[size_t(init[size_t(c)])];
    std::vector<int> label(size_t(n), 0);
    for (int iter = 0; iter < 20; ++iter) {
        for (int i = 0; i < n; ++i) {
            double best = 1e300;
            int bc = 0;
            for (int c = 0; c < k_clusters; ++c) {
                const double dx = proj[size_t(i)][0] - centroids[size_t(c)][0];
                const double dy = proj[size_t(i)][1] - centroids[size_t(c)][1];
                const double d2 = dx * dx + dy * dy;
                if (d2 < best - 1e-15) { best = d2; bc = c; }
            }
            label[size_t(i)] = bc;
        }
        for (int c = 0; c < k_clusters; ++c) {
            double sx = 0.0, sy = 0.0;
            int cnt = 0;
            for (int i = 0; i < n; ++i)
                if (label[size_t(i)] == c) { sx += proj[size_t(i)][0]; sy += proj[size_t(i)][1]; ++cnt; }
            if (cnt) centroids[size_t(c)] = {sx / cnt, sy / cnt};
        }
    }

    // per cluster: members sorted by distance to centroid, ties by id
    std::vector<std::vector<int>> members(static_cast<size_t>(k_clusters));
    for (int i = 0; i < n; ++i) members[size_t(label[size_t(i)])].push_back(i);
    for (int c = 0; c < k_clusters; ++c) {
        std::sort(members[size_t(c)].begin(), members[size_t(c)].end(), [&](int a, int b) {
            auto d2 = [&](int i) {
                const double dx = proj[size_t(i)][0] - centroids[size_t(c)][0];
                const double dy = proj[size_t(i)][1] - centroids[size_t(c)][1];
                return dx * dx + dy * dy;
            };
            const double da = d2(a), db = d2(b);
            if (da != db) return da < db;
            return a < b;
        });
    }
    SelectionResult r;
    const int take = std::min(k, n);
    std::vector<size_t> cursor(size_t(k_clusters), 0);
    while (int(r.selected.size()) < take) {
        bool advanced = false;
        for (int c = 0; c < k_clusters && int(r.selected.size()) < take; ++c) {
            if (cursor[size_t(c)] < members[size_t(c)].size()) {
                r.selected.push_back(members[size_t(c)][cursor[size_t(c)]++]);
                advanced = true;
            }
        }
        if (!advanced) break;
    }
    std::sort(r.selected.begin(), r.selected.end());
    r.action.assign(size_t(n), 0);
    for (int c : r.selected) r.action[size_t(c)] = 1;
    r.indices.assign(size_t(n), 0.0);
    return r;
}

double selection_objective(const std::vector<int>& subset, const std::vector<double>& scores,
                           const std::vector<double>& latencies, double kappa, double t_semi) {
    if (subset.empty()) return 0.0;
    double s = 0.0, mx = 0.0;
    for (int c : subset) {
        s += scores[size_t(c)];
        mx = std::max(mx, latencies[size_t(c)]);
    }
    return s - kappa * mx / t_semi;
}

SelectionResult greedy_select(const std::vector<double>& scores,
                              const std::vector<double>& latencies, double kappa,
                              double t_semi, int k) {
    const int n = int(scores.size());
    if (latencies.size() != scores.size()) throw std::invalid_argument("size mismatch");
    if (!(t_semi > 0.0)) throw std::invalid_argument("t_semi must be positive");
    std::vector<int> chosen;
    std::vector<uint8_t> in(size_t(n), 0);
    const int take = std::min(k, n);
    double cur = 0.0;
    for (int step = 0; step < take; ++step) {
        int best = -1;
        double best_obj = -1e300;
        for (int c = 0; c < n; ++c) {
            if (in[size_t(c)]) continue;
            chosen.push_back(c);
            const double obj = selection_objective(chosen, scores, latencies, kappa, t_semi);
            chosen.pop_back();
            if (obj > best_obj + 1e-15) { best_obj = obj; best = c; }
        }
        chosen.push_back(best);
        in[size_t(best)] = 1;
        cur = best_obj;
    }
    (void)cur;
    SelectionResult r;
    r.selected = chosen;
    std::sort(r.selected.begin(), r.selected.end());
    r.action.assign(size_t(n), 0);
    for (int c : r.selected) r.action[size_t(c)] = 1;
    r.indices.resize(static_cast<size_t>(n));
    for (int c = 0; c < n; ++c)
        r.indices[size_t(c)] = scores[size_t(c)] - kappa * latencies[size_t(c)] / t_semi;
    return r;
}

SelectionResult brute_force_select(const std::vector<double>& scores,
                                   const std::vector<double>& latencies, double kappa,
                                   double t_semi, int k) {
    const int n = int(scores.size());
    if (n > 15) throw std::invalid_argument("brute force is guarded to N <= 15");
    if (latencies.size() != scores.size()) throw std::invalid_argument("size mismatch");
    if (!(t_semi > 0.0)) throw std::invalid_argument("t_semi must be positive");
    const int take = std::min(k, n);
    std::vector<int> best;
    double best_obj = -1e300;
    std::vector<int> subset;
    // lexicographic enumeration of size-`take` subsets
    std::vector<int> comb(static_cast<size_t>(take));
    std::iota(comb.begin(), comb.end(), 0);
    for (;;) {
        const double obj = selection_objective(comb, scores, latencies, kappa, t_semi);
        if (obj > best_obj + 1e-15) { best_obj = obj; best = comb; }
        int i = take - 1;
        while (i >= 0 && comb[size_t(i)] == n - take + i) --i;
        if (i < 0) break;
        comb[size_t(i)]++;
        for (int j = i + 1; j < take; ++j) comb[size_t(j)] = comb[size_t(j - 1)] + 1;
    }
    SelectionResult r;
    r.selected = best;
    r.action.assign(size_t(n), 0);
    for (int c : r.selected) r.action[size_t(c)] = 1;
    r.indices.resize(static_cast<size_t>(n));
    for (int c = 0; c < n; ++c)
        r.indices[size_t(c)] = scores[size_t(c)] - kappa * latencies[size_t(c)] / t_semi;
    return r;
}

std::vector<double> index_probabilities(const std::vector<double>& indices) {
    if (indices.empty()) return {};
    double mx = indices[0];
    for (double v : indices) mx = std::max(mx, v);
    std::vector<double> p(indices.size());
    double sum = 0.0;
    for (size_t i = 0; i < indices.size(); ++i) {
        p[i] = std::exp(indices[i] - mx);
        sum += p[i];
    }
    for (auto& v : p) v /= sum;
    return p;
}

SelectionPolicy::SelectionPolicy(const PolicyConfig& config, int num_clients, uint64_t seed)
    : config_(config), num_clients_(num_clients), arms_(size_t(num_clients)),
      rng_(RngStream::keyed(seed, 0x5e1ec7ULL)) {
    config_.validate();
    if (num_clients < 1) throw std::invalid_argument("need at least one client");
}

SelectionResult SelectionPolicy::select(long t, const Inputs& in) {
    switch (config_.kind) {
        case PolicyKind::Ucb:
            return select_top_k(arms_, t, config_.rho, config_.k);
        case PolicyKind::UcbDiscounted:
        case PolicyKind::UcbWindow: {
            std::vector<double> idx(arms_.size());
            std::vector<long> pulls(arms_.size());
            const MeanMode mode = config_.kind == PolicyKind::UcbDiscounted
                                      ? MeanMode::Discounted
                                      : MeanMode::Window;
            for (size_t i = 0; i < arms_.size(); ++i) {
                const double mu = nonstationary_mean(arms_[i].history, mode,
                                                     config_.gamma_disc, config_.window, t);
                idx[i] = mu + config_.rho *
                                  std::sqrt(std::log(double(t)) / double(arms_[i].pulls + 1));
                pulls[i] = arms_[i].pulls;
            }
            return top_k_from_indices(idx, pulls, config_.k);
        }
        case PolicyKind::Random:
            return random_select(num_clients_, config_.k, rng_);
        case PolicyKind::Cluster:
            return cluster_select(in.deltas, config_.k,
                                  std::min(config_.k, num_clients_), rng_);
        case PolicyKind::GreedyOracle:
            return greedy_select(in.scores, in.latencies, in.kappa, in.t_semi, config_.k);
    }
    throw std::logic_error("unreachable");
}

void SelectionPolicy::record_reward(int client, double reward, long round) {
    update_arm(arms_[size_t(client)], reward, round);
}

}  // namespace fedsel
