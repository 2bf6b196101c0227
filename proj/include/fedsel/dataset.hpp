#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "fedsel/rng.hpp"

namespace fedsel {

struct Interaction {
    int user_id;         // dense index in [0, M)
    int item_id;         // dense index in [0, N)
    int rating;          // 1..5
    uint64_t timestamp;  // seconds
};

// Full interaction log with dense ids and per-user positive adjacency.
struct InteractionLog {
    std::vector<Interaction> interactions;
    int num_users = 0;
    int num_items = 0;
    std::vector<std::vector<int>> user_items;  // positives per user, in file order
    std::vector<int> orig_user_ids;            // dense -> original id
    std::vector<int> orig_item_ids;

    void rebuild_adjacency();
};

struct ModalityBundle {
    int num_items = 0;
    int d_text = 0;
    int d_visual = 0;
    std::vector<std::vector<double>> text_features;    // one vector per item
    std::vector<std::vector<double>> visual_features;
    std::string source;  // "synthetic" | "file"
};

struct DatasetSplit {
    std::vector<std::vector<Interaction>> train;  // per user
    std::vector<std::vector<Interaction>> test;
    double ratio = 0.0;
    uint64_t seed = 0;

    size_t train_count() const;
    size_t test_count() const;
};

// Parses tab-separated `user item rating timestamp` records and remaps ids
// to dense 0-based indices (order of first appearance).
InteractionLog load_movielens(const std::string& path);

// Parses the same format from an in-memory string (shared by tests).
InteractionLog parse_movielens(const std::string& content);

// Standard-normal per-item feature vectors, keyed by (seed, item, modality).
// Pure function of its arguments.
ModalityBundle synth_features(uint64_t seed, int d_text, int d_visual, int num_items);

// Binary feature file: header (N, d_T, d_V) as three LE u64, then per item
// d_T + d_V LE float32 values.
ModalityBundle load_feature_file(const std::string& path);
void save_feature_file(const std::string& path, const ModalityBundle& bundle);

// Per-user temporal split: ceil(ratio * count) earliest interactions go to
// train; the seed only breaks timestamp ties.
DatasetSplit split_per_user(const InteractionLog& log, double ratio, uint64_t seed);

// K items outside the user's positive set, without replacement within one
// call when possible. `positives` must be the user's train-positive set.
std::vector<int> sample_negatives(const std::unordered_set<int>& positives,
                                  int num_items, int k, RngStream& rng);

// Deterministic stand-in for the MovieLens-100K file: same shape (943 users,
// 1682 items, 100k interactions) with a planted low-rank preference
// structure, so ranking models have signal to learn.
InteractionLog generate_synthetic_log(uint64_t seed, int num_users = 943,
                                      int num_items = 1682,
                                      int num_interactions = 100000);

// Writes a log back out in u.data format.
void save_movielens(const std::string& path, const InteractionLog& log);

}  // namespace fedsel
