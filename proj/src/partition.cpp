#include "fedsel/partition.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace fedsel {

void PortionVector::validate() const {
    if (portions.size() < 2) throw std::invalid_argument("need at least 2 portions");
    double sum = 0.0, lo = portions[0], hi = portions[0];
    for (double p : portions) {
        if (!(p > 0.0)) throw std::invalid_argument("portions must be positive");
        sum += p;
        lo = std::min(lo, p);
        hi = std::max(hi, p);
    }
    if (std::abs(sum - 1.0) > 1e-12) throw std::invalid_argument("portions must sum to 1");
    (void)lo; (void)hi;
}

static void check_args(int num_clients, double ubi) {
    if (num_clients < 2) throw std::invalid_argument("num_clients must be >= 2");
    if (!(ubi > 0.0 && ubi <= 1.0)) throw std::invalid_argument("ubi must be in (0,1]");
}

PortionVector exponential_portions(int num_clients, double ubi) {
    check_args(num_clients, ubi);
    const double r = std::pow(ubi, 1.0 / double(num_clients - 1));
    PortionVector pv;
    pv.portions.resize(static_cast<size_t>(num_clients));
    double w = 1.0, sum = 0.0;
    for (int i = 0; i < num_clients; ++i) {
        pv.portions[size_t(i)] = w;
        sum += w;
        w *= r;
    }
    for (auto& p : pv.portions) p /= sum;
    return pv;
}

PortionVector linear_portions(int num_clients, double ubi) {
    check_args(num_clients, ubi);
    PortionVector pv;
    pv.portions.resize(static_cast<size_t>(num_clients));
    double sum = 0.0;
    for (int i = 0; i < num_clients; ++i) {
        double w = 1.0 - double(i) * (1.0 - ubi) / double(num_clients - 1);
        pv.portions[size_t(i)] = w;
        sum += w;
    }
    for (auto& p : pv.portions) p /= sum;
    return pv;
}

PartitionAssignment assign_users(const InteractionLog& log, const PortionVector& portions,
                                 uint64_t seed) {
    portions.validate();
    const int n_clients = int(portions.portions.size());
    if (log.num_users < n_clients)
        throw std::invalid_argument("fewer users than clients");

    std::vector<size_t> user_size(size_t(log.num_users), 0);
    for (const auto& it : log.interactions) user_size[size_t(it.user_id)]++;
    const double total = double(log.interactions.size());
    std::vector<double> target(static_cast<size_t>(n_clients));
    for (int c = 0; c < n_clients; ++c) target[size_t(c)] = portions.portions[size_t(c)] * total;

    std::vector<int> order(size_t(log.num_users));
    std::iota(order.begin(), order.end(), 0);
    RngStream rng = RngStream::keyed(seed, 0xa551671ULL);
    rng.shuffle(order.data(), order.size());

    std::vector<int> owner(size_t(log.num_users), -1);
    std::vector<double> count(size_t(n_clients), 0.0);
    std::vector<int> nusers(size_t(n_clients), 0);
    for (int u : order) {
        int best = 0;
        double best_def = -1e300;
        for (int c = 0; c < n_clients; ++c) {
            double def = (target[size_t(c)] - count[size_t(c)]) / target[size_t(c)];
            if (def > best_def + 1e-15) { best_def = def; best = c; }
        }
        owner[size_t(u)] = best;
        count[size_t(best)] += double(user_size[size_t(u)]);
        nusers[size_t(best)]++;
    }

    // Local move pass: shrink the squared relative count error. Whole-user
    // granularity means greedy alone can miss tight UBI targets.
    auto err = [&](int c, double cnt) {
        double e = (cnt - target[size_t(c)]) / target[size_t(c)];
        return e * e;
    };
    for (int iter = 0; iter < 4000; ++iter) {
        int best_u = -1, best_dst = -1;
        double best_gain = 1e-12;
        for (int u = 0; u < log.num_users; ++u) {
            const int src = owner[size_t(u)];
            if (nusers[size_t(src)] <= 1) continue;
            const double s = double(user_size[size_t(u)]);
            const double base = err(src, count[size_t(src)]);
            for (int dst = 0; dst < n_clients; ++dst) {
                if (dst == src) continue;
                double gain = base + err(dst, count[size_t(dst)]) -
                              err(src, count[size_t(src)] - s) -
                              err(dst, count[size_t(dst)] + s);
                if (gain > best_gain) { best_gain = gain; best_u = u; best_dst = dst; }
            }
        }
        if (best_u < 0) break;
        const int src = owner[size_t(best_u)];
        count[size_t(src)] -= double(user_size[size_t(best_u)]);
        count[size_t(best_dst)] += double(user_size[size_t(best_u)]);
        nusers[size_t(src)]--;
        nusers[size_t(best_dst)]++;
        owner[size_t(best_u)] = best_dst;
    }

    // Second pass: steer the realized min/max count ratio onto the ratio
    // encoded by the portions. The per-client pass keeps every client close
    // to target, but errors on the extreme clients compound in the ratio.
    double pmin = portions.portions[0], pmax = portions.portions[0];
    for (double p : portions.portions) { pmin = std::min(pmin, p); pmax = std::max(pmax, p); }
    const double target_ratio = pmin / pmax;
    auto ratio_of = [&]() {
        double lo = count[0], hi = count[0];
        for (int c = 1; c < n_clients; ++c) {
            lo = std::min(lo, count[size_t(c)]);
            hi = std::max(hi, count[size_t(c)]);
        }
        return lo / hi;
    };
    for (int iter = 0; iter < 2000; ++iter) {
        const double cur = ratio_of() - target_ratio;
        if (std::abs(cur) < 0.02 * target_ratio) break;
        int best_u = -1, best_dst = -1;
        double best_err = cur * cur;
        for (int u = 0; u < log.num_users; ++u) {
            const int src = owner[size_t(u)];
            if (nusers[size_t(src)] <= 1) continue;
            const double s = double(user_size[size_t(u)]);
            for (int dst = 0; dst < n_clients; ++dst) {
                if (dst == src) continue;
                count[size_t(src)] -= s;
                count[size_t(dst)] += s;
                const double e = ratio_of() - target_ratio;
                count[size_t(src)] += s;
                count[size_t(dst)] -= s;
                if (e * e < best_err - 1e-15) {
                    best_err = e * e;
                    best_u = u;
                    best_dst = dst;
                }
            }
        }
        if (best_u < 0) break;
        const int src = owner[size_t(best_u)];
        count[size_t(src)] -= double(user_size[size_t(best_u)]);
        count[size_t(best_dst)] += double(user_size[size_t(best_u)]);
        nusers[size_t(src)]--;
        nusers[size_t(best_dst)]++;
        owner[size_t(best_u)] = best_dst;
    }

    PartitionAssignment a;
    a.client_users.resize(static_cast<size_t>(n_clients));
    a.client_interactions.resize(static_cast<size_t>(n_clients));
    a.counts.assign(size_t(n_clients), 0);
    for (int u = 0; u < log.num_users; ++u) a.client_users[size_t(owner[size_t(u)])].push_back(u);
    for (const auto& it : log.interactions) {
        int c = owner[size_t(it.user_id)];
        a.client_interactions[size_t(c)].push_back(it);
        a.counts[size_t(c)]++;
    }
    return a;
}

double compute_ubi(const PartitionAssignment& assignment) {
    if (assignment.counts.empty()) throw std::invalid_argument("empty assignment");
    size_t lo = assignment.counts[0], hi = assignment.counts[0];
    for (size_t c : assignment.counts) {
        if (c == 0) throw std::invalid_argument("client with no interactions");
        lo = std::min(lo, c);
        hi = std::max(hi, c);
    }
    return double(lo) / double(hi);
}

}  // namespace fedsel
