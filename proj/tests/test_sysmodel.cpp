#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "fedsel/sysmodel.hpp"

using namespace fedsel;

TEST_CASE("default fleet matches the reference hardware table") {
    auto fleet = default_fleet();
    REQUIRE(fleet.size() == 8);
    CHECK(fleet[0].cores == 8);
    CHECK(fleet[0].ram_gb == 16.0);
    CHECK(fleet[0].bandwidth_mbps == 1600.0);
    CHECK(fleet[1].bandwidth_mbps == 1600.0);
    CHECK(fleet[2].bandwidth_mbps == 100.0);
    CHECK(fleet[3].bandwidth_mbps == 100.0);
    CHECK(fleet[4].cores == 2);
    CHECK(fleet[4].ram_gb == 4.0);
    CHECK(fleet[4].bandwidth_mbps == 6.0);
    CHECK(fleet[5].bandwidth_mbps == 6.0);
    CHECK(fleet[6].bandwidth_mbps == 2.0);
    CHECK(fleet[7].cores == 2);
    CHECK(fleet[7].ram_gb == 4.0);
    CHECK(fleet[7].bandwidth_mbps == 2.0);
    for (const auto& p : fleet) CHECK(p.cpu_freq_mhz == doctest::Approx(2245.78));
}

TEST_CASE("speed scales with cores and frequency") {
    ClientProfile p{8, 2000.0, 16.0, 100.0};
    CHECK(p.speed(200.0) == doctest::Approx(8 * 2.0 * 200.0).epsilon(1e-12));
}

TEST_CASE("compute time is workload over speed") {
    ClientProfile p{1, 1000.0, 1.0, 1.0};  // speed = 50 at calibration 50
    CHECK(compute_time(100.0, p, 50.0) == doctest::Approx(2.0).epsilon(1e-9));
    CHECK(compute_time(0.0, p, 50.0) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("zero speed is rejected") {
    ClientProfile p{0, 1000.0, 1.0, 1.0};
    CHECK_THROWS_AS(compute_time(1.0, p), std::invalid_argument);
}

TEST_CASE("communication time unit arithmetic") {
    CHECK(comm_time(1000000, 8.0, 1.0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(comm_time(0, 8.0, 1.0) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(comm_time(1000000, 2.0, 2.0) == doctest::Approx(8.0).epsilon(1e-12));
}

TEST_CASE("comm time scales inversely with bandwidth and linearly with payload") {
    const double base = comm_time(5000, 10.0, 2.0);
    CHECK(comm_time(10000, 10.0, 2.0) == doctest::Approx(2.0 * base).epsilon(1e-12));
    CHECK(comm_time(5000, 20.0, 2.0) == doctest::Approx(0.5 * base).epsilon(1e-12));
}

TEST_CASE("round time is the straggler bound") {
    CHECK(round_time({{2.0, 1.0}}) == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(round_time({{2.0, 1.0}, {1.0, 5.0}}) == doctest::Approx(6.0).epsilon(1e-12));
    CHECK_THROWS_AS(round_time({}), std::invalid_argument);
}

TEST_CASE("round time is monotone in the selection") {
    std::vector<LatencyEstimate> sel{{1.0, 1.0}, {2.0, 0.5}};
    const double before = round_time(sel);
    sel.push_back({0.1, 0.1});
    CHECK(round_time(sel) >= before);
    sel.push_back({9.0, 9.0});
    CHECK(round_time(sel) == doctest::Approx(18.0).epsilon(1e-12));
}

TEST_CASE("normalized time") {
    CHECK(normalized_time(6.0, 6.0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(normalized_time(3.0, 6.0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK_THROWS_AS(normalized_time(1.0, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(normalized_time(1.0, -2.0), std::invalid_argument);
}

TEST_CASE("default boundary is 1.5x the median fleet latency") {
    std::vector<ClientProfile> fleet{{1, 1000.0, 1.0, 8.0}, {2, 1000.0, 1.0, 8.0}};
    std::vector<double> workloads{200.0, 400.0};
    // speeds 200 and 400 → t_train = 1.0 each; t_comm = 1.0 each at 1e6 bytes, x1
    const double t = default_t_semi(fleet, workloads, 1000000, 1.0, 200.0);
    CHECK(t == doctest::Approx(1.5 * 2.0).epsilon(1e-9));
}

TEST_CASE("fleet file round-trip") {
    const std::string path = "/tmp/fedsel_fleet_test.json";
    {
        std::ofstream f(path);
        f << R"([{"cores":4,"cpu_freq_mhz":2000.0,"ram_gb":8.0,"bandwidth_mbps":50.0}])";
    }
    auto fleet = load_fleet(path);
    REQUIRE(fleet.size() == 1);
    CHECK(fleet[0].cores == 4);
    CHECK(fleet[0].bandwidth_mbps == 50.0);
    std::remove(path.c_str());
    CHECK_THROWS_AS(load_fleet(path), std::runtime_error);
}
