#pragma once

#include <cstdint>
#include <vector>

#include "fedsel/dataset.hpp"

namespace fedsel {

struct PortionVector {
    std::vector<double> portions;  // positive, sum to 1, min/max == target ubi

    void validate() const;
};

struct PartitionAssignment {
    std::vector<std::vector<int>> client_users;
    std::vector<std::vector<Interaction>> client_interactions;
    std::vector<size_t> counts;  // |D_i|
};

// p_i proportional to r^(i-1) with r = ubi^(1/(N-1)).
PortionVector exponential_portions(int num_clients, double ubi);

// raw weights linearly spaced from 1 down to ubi.
PortionVector linear_portions(int num_clients, double ubi);

// Whole users are shuffled by seed, greedily assigned to the client with the
// largest relative deficit, then a local move pass nudges realized counts
// toward the portion targets. Every client receives at least one user.
PartitionAssignment assign_users(const InteractionLog& log, const PortionVector& portions,
                                 uint64_t seed);

// min |D_i| / max |D_i|
double compute_ubi(const PartitionAssignment& assignment);

}  // namespace fedsel
