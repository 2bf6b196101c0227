#include "fedsel/sysmodel.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace fedsel {

double ClientProfile::speed(double calibration) const {
    return double(cores) * (cpu_freq_mhz / 1000.0) * calibration;
}

std::vector<ClientProfile> default_fleet() {
    const double freq = 2245.78;
    std::vector<ClientProfile> fleet;
    fleet.push_back({8, freq, 16.0, 1600.0});
    fleet.push_back({8, freq, 16.0, 1600.0});
    fleet.push_back({8, freq, 16.0, 100.0});
    fleet.push_back({8, freq, 16.0, 100.0});
    fleet.push_back({2, freq, 4.0, 6.0});
    fleet.push_back({2, freq, 4.0, 6.0});
    fleet.push_back({2, freq, 4.0, 2.0});
    fleet.push_back({2, freq, 4.0, 2.0});
    return fleet;
}

std::vector<ClientProfile> load_fleet(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open fleet file " + path);
    nlohmann::json j;
    f >> j;
    if (!j.is_array() || j.empty()) throw std::runtime_error("fleet file must be a JSON array");
    std::vector<ClientProfile> fleet;
    for (const auto& e : j) {
        ClientProfile p;
        p.cores = e.at("cores").get<int>();
        p.cpu_freq_mhz = e.at("cpu_freq_mhz").get<double>();
        p.ram_gb = e.value("ram_gb", 0.0);
        p.bandwidth_mbps = e.at("bandwidth_mbps").get<double>();
        if (p.cores <= 0 || p.cpu_freq_mhz <= 0.0 || p.bandwidth_mbps <= 0.0)
            throw std::runtime_error("fleet profile fields must be positive");
        fleet.push_back(p);
    }
    return fleet;
}

double compute_time(double workload, const ClientProfile& profile, double calibration) {
    if (workload < 0.0) throw std::invalid_argument("workload must be >= 0");
    const double s = profile.speed(calibration);
    if (!(s > 0.0)) throw std::invalid_argument("client speed must be positive");
    return workload / s;
}

double comm_time(size_t payload_bytes, double bandwidth_mbps, double multiplier) {
    if (!(bandwidth_mbps > 0.0)) throw std::invalid_argument("bandwidth must be positive");
    if (multiplier < 0.0) throw std::invalid_argument("multiplier must be >= 0");
    return double(payload_bytes) * 8.0 * multiplier / (bandwidth_mbps * 1e6);
}

double round_time(const std::vector<LatencyEstimate>& selected) {
    if (selected.empty()) throw std::invalid_argument("empty selection");
    double mx = 0.0;
    for (const auto& l : selected) mx = std::max(mx, l.total());
    return mx;
}

double normalized_time(double t_round, double t_semi) {
    if (!(t_semi > 0.0)) throw std::invalid_argument("t_semi must be positive");
    return t_round / t_semi;
}

double default_t_semi(const std::vector<ClientProfile>& fleet,
                      const std::vector<double>& workloads, size_t payload_bytes,
                      double comm_multiplier, double calibration) {
    if (fleet.empty() || workloads.size() != fleet.size())
        throw std::invalid_argument("workloads must cover the fleet");
    std::vector<double> lat(fleet.size());
    for (size_t i = 0; i < fleet.size(); ++i)
        lat[i] = compute_time(workloads[i], fleet[i], calibration) +
                 comm_time(payload_bytes, fleet[i].bandwidth_mbps, comm_multiplier);
    std::sort(lat.begin(), lat.end());
    const size_t n = lat.size();
    const double median = n % 2 ? lat[n / 2] : 0.5 * (lat[n / 2 - 1] + lat[n / 2]);
    return 1.5 * median;
}

}  // namespace fedsel
