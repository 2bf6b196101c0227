#pragma once

#include <string>
#include <vector>

namespace fedsel {

inline constexpr double kDefaultCalibration = 200.0;  // samples per GHz-core-second

struct ClientProfile {
    int cores = 0;
    double cpu_freq_mhz = 0.0;
    double ram_gb = 0.0;  // informational
    double bandwidth_mbps = 0.0;

    double speed(double calibration = kDefaultCalibration) const;  // samples/second
};

struct LatencyEstimate {
    double t_train = 0.0;
    double t_comm = 0.0;

    double total() const { return t_train + t_comm; }
};

// The eight-client heterogeneous fleet: four high-resource and four
// low-resource nodes, all at 2245.78 MHz.
std::vector<ClientProfile> default_fleet();

// Fleet override from a JSON array of profile objects.
std::vector<ClientProfile> load_fleet(const std::string& path);

// workload (sample-epochs) / speed
double compute_time(double workload, const ClientProfile& profile,
                    double calibration = kDefaultCalibration);

// payload_bytes * 8 * multiplier / (bandwidth * 1e6); the multiplier folds
// the downlink into the same figure (default 2).
double comm_time(size_t payload_bytes, double bandwidth_mbps, double multiplier = 2.0);

// max over the selection of (t_train + t_comm)
double round_time(const std::vector<LatencyEstimate>& selected);

double normalized_time(double t_round, double t_semi);

// Default boundary: 1.5x the fleet-median per-client latency estimate for the
// given per-client workloads and payload.
double default_t_semi(const std::vector<ClientProfile>& fleet,
                      const std::vector<double>& workloads, size_t payload_bytes,
                      double comm_multiplier, double calibration = kDefaultCalibration);

}  // namespace fedsel
