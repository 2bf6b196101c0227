#include "fedsel/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>

namespace fedsel {

void InteractionLog::rebuild_adjacency() {
    user_items.assign(num_users, {});
    for (const auto& it : interactions) user_items[it.user_id].push_back(it.item_id);
}

size_t DatasetSplit::train_count() const {
    size_t n = 0;
    for (const auto& v : train) n += v.size();
    return n;
}

size_t DatasetSplit::test_count() const {
    size_t n = 0;
    for (const auto& v : test) n += v.size();
    return n;
}

static bool parse_int_field(const std::string& s, long long& out) {
    if (s.empty()) return false;
    char* end = nullptr;
    errno = 0;
    out = std::strtoll(s.c_str(), &end, 10);
    return errno == 0 && end == s.c_str() + s.size();
}

InteractionLog parse_movielens(const std::string& content) {
    InteractionLog log;
    std::unordered_map<int, int> user_map, item_map;
    std::istringstream in(content);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string f[4];
        for (int i = 0; i < 4; ++i) {
            if (!std::getline(ls, f[i], '\t'))
                throw std::runtime_error("parse error at line " + std::to_string(line_no) +
                                         ": expected 4 tab-separated fields");
        }
        std::string extra;
        if (std::getline(ls, extra, '\t'))
            throw std::runtime_error("parse error at line " + std::to_string(line_no) +
                                     ": expected 4 tab-separated fields");
        long long u, i, r, t;
        if (!parse_int_field(f[0], u) || !parse_int_field(f[1], i) ||
            !parse_int_field(f[2], r) || !parse_int_field(f[3], t))
            throw std::runtime_error("parse error at line " + std::to_string(line_no) +
                                     ": non-integer field");
        if (r < 1 || r > 5)
            throw std::runtime_error("parse error at line " + std::to_string(line_no) +
                                     ": rating out of [1,5]");
        auto [uit, unew] = user_map.try_emplace(int(u), log.num_users);
        if (unew) { log.num_users++; log.orig_user_ids.push_back(int(u)); }
        auto [iit, inew] = item_map.try_emplace(int(i), log.num_items);
        if (inew) { log.num_items++; log.orig_item_ids.push_back(int(i)); }
        log.interactions.push_back({uit->second, iit->second, int(r), uint64_t(t)});
    }
    if (log.interactions.empty()) throw std::runtime_error("empty interaction file");
    log.rebuild_adjacency();
    return log;
}

InteractionLog load_movielens(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_movielens(ss.str());
}

void save_movielens(const std::string& path, const InteractionLog& log) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    for (const auto& it : log.interactions) {
        int u = it.user_id < int(log.orig_user_ids.size()) ? log.orig_user_ids[it.user_id]
                                                           : it.user_id + 1;
        int i = it.item_id < int(log.orig_item_ids.size()) ? log.orig_item_ids[it.item_id]
                                                           : it.item_id + 1;
        f << u << '\t' << i << '\t' << it.rating << '\t' << it.timestamp << '\n';
    }
}

ModalityBundle synth_features(uint64_t seed, int d_text, int d_visual, int num_items) {
    if (d_text < 1 || d_visual < 1) throw std::invalid_argument("feature dims must be >= 1");
    if (num_items < 1) throw std::invalid_argument("num_items must be >= 1");
    ModalityBundle b;
    b.num_items = num_items;
    b.d_text = d_text;
    b.d_visual = d_visual;
    b.source = "synthetic";
    b.text_features.resize(num_items);
    b.visual_features.resize(num_items);
    for (int i = 0; i < num_items; ++i) {
        auto rt = RngStream::keyed(seed, uint64_t(i), 0);
        auto rv = RngStream::keyed(seed, uint64_t(i), 1);
        b.text_features[i].resize(d_text);
        b.visual_features[i].resize(d_visual);
        for (int j = 0; j < d_text; ++j) b.text_features[i][j] = rt.normal();
        for (int j = 0; j < d_visual; ++j) b.visual_features[i][j] = rv.normal();
    }
    return b;
}

ModalityBundle load_feature_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    uint64_t hdr[3];
    f.read(reinterpret_cast<char*>(hdr), sizeof(hdr));
    if (!f) throw std::runtime_error("truncated feature file header: " + path);
    ModalityBundle b;
    b.num_items = int(hdr[0]);
    b.d_text = int(hdr[1]);
    b.d_visual = int(hdr[2]);
    b.source = "file";
    b.text_features.resize(b.num_items);
    b.visual_features.resize(b.num_items);
    std::vector<float> row(size_t(b.d_text) + size_t(b.d_visual));
    for (int i = 0; i < b.num_items; ++i) {
        f.read(reinterpret_cast<char*>(row.data()), std::streamsize(row.size() * sizeof(float)));
        if (!f) throw std::runtime_error("truncated feature file: " + path);
        b.text_features[i].assign(row.begin(), row.begin() + b.d_text);
        b.visual_features[i].assign(row.begin() + b.d_text, row.end());
        for (double v : b.text_features[i])
            if (!std::isfinite(v)) throw std::runtime_error("non-finite feature in " + path);
        for (double v : b.visual_features[i])
            if (!std::isfinite(v)) throw std::runtime_error("non-finite feature in " + path);
    }
    return b;
}

void save_feature_file(const std::string& path, const ModalityBundle& b) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    uint64_t hdr[3] = {uint64_t(b.num_items), uint64_t(b.d_text), uint64_t(b.d_visual)};
    f.write(reinterpret_cast<const char*>(hdr), sizeof(hdr));
    for (int i = 0; i < b.num_items; ++i) {
        std::vector<float> row;
        row.reserve(size_t(b.d_text) + size_t(b.d_visual));
        for (double v : b.text_features[i]) row.push_back(float(v));
        for (double v : b.visual_features[i]) row.push_back(float(v));
        f.write(reinterpret_cast<const char*>(row.data()),
                std::streamsize(row.size() * sizeof(float)));
    }
}

DatasetSplit split_per_user(const InteractionLog& log, double ratio, uint64_t seed) {
    if (!(ratio > 0.0 && ratio < 1.0)) throw std::invalid_argument("split ratio must be in (0,1)");
    DatasetSplit s;
    s.ratio = ratio;
    s.seed = seed;
    s.train.resize(log.num_users);
    s.test.resize(log.num_users);
    std::vector<std::vector<Interaction>> per_user(log.num_users);
    for (const auto& it : log.interactions) per_user[it.user_id].push_back(it);
    for (int u = 0; u < log.num_users; ++u) {
        auto& v = per_user[u];
        std::sort(v.begin(), v.end(), [&](const Interaction& a, const Interaction& b) {
            if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
            return hash_combine(hash_combine(seed, uint64_t(u)), uint64_t(a.item_id)) <
                   hash_combine(hash_combine(seed, uint64_t(u)), uint64_t(b.item_id));
        });
        size_t n_train = size_t(std::ceil(ratio * double(v.size())));
        if (v.size() < 2) n_train = v.size();
        n_train = std::min(n_train, v.size());
        s.train[u].assign(v.begin(), v.begin() + std::ptrdiff_t(n_train));
        s.test[u].assign(v.begin() + std::ptrdiff_t(n_train), v.end());
    }
    return s;
}

std::vector<int> sample_negatives(const std::unordered_set<int>& positives, int num_items,
                                  int k, RngStream& rng) {
    if (int(positives.size()) >= num_items)
        throw std::runtime_error("user has rated all items; no negatives available");
    std::vector<int> out;
    out.reserve(static_cast<size_t>(k));
    std::unordered_set<int> taken;
    const int available = num_items - int(positives.size());
    for (int j = 0; j < k; ++j) {
        // without replacement within this call while distinct items remain
        const bool exhausted = int(taken.size()) >= available;
        for (;;) {
            int cand = int(rng.uniform_int(uint64_t(num_items)));
            if (positives.count(cand)) continue;
            if (!exhausted && taken.count(cand)) continue;
            taken.insert(cand);
            out.push_back(cand);
            break;
        }
    }
    return out;
}

InteractionLog generate_synthetic_log(uint64_t seed, int num_users, int num_items,
                                      int num_interactions) {
    const int kLatent = 8;
    RngStream rng = RngStream::keyed(seed, 0x5eedda7aULL);
    std::vector<std::vector<double>> uvec(num_users, std::vector<double>(kLatent));
    std::vector<std::vector<double>> ivec(num_items, std::vector<double>(kLatent));
    for (auto& v : uvec)
        for (auto& x : v) x = rng.normal();
    for (auto& v : ivec)
        for (auto& x : v) x = rng.normal() / std::sqrt(double(kLatent));

    // Per-user interaction counts: heavy-tailed, floored, scaled to the total.
    std::vector<double> w(num_users);
    for (auto& x : w) x = std::pow(rng.uniform(), 2.5);
    double wsum = std::accumulate(w.begin(), w.end(), 0.0);
    std::vector<int> counts(num_users);
    if (num_interactions < num_users)
        throw std::invalid_argument("too few interactions for the user count");
    const int base = std::min(20, num_interactions / num_users);
    int budget = num_interactions - base * num_users;
    int assigned = 0;
    for (int u = 0; u < num_users; ++u) {
        counts[u] = base + int(std::floor(w[u] / wsum * double(budget)));
        counts[u] = std::min(counts[u], num_items);
        assigned += counts[u];
    }
    // distribute rounding residue
    int residue = num_interactions - assigned;
    for (int u = 0; residue > 0; u = (u + 1) % num_users) {
        if (counts[u] < num_items) { counts[u]++; residue--; }
    }

    InteractionLog log;
    log.num_users = num_users;
    log.num_items = num_items;
    log.interactions.reserve(static_cast<size_t>(num_interactions));
    std::vector<std::pair<double, int>> scored(static_cast<size_t>(num_items));
    std::vector<int> item_seen(size_t(num_items), 0);
    for (int u = 0; u < num_users; ++u) {
        for (int i = 0; i < num_items; ++i) {
            double s = 0.0;
            for (int l = 0; l < kLatent; ++l) s += uvec[u][l] * ivec[i][l];
            // Gumbel noise: preferences are noisy but learnable
            double g = -std::log(-std::log(std::max(rng.uniform(), 1e-12)));
            scored[size_t(i)] = {s + 0.3 * g, i};
        }
        std::partial_sort(scored.begin(), scored.begin() + counts[u], scored.end(),
                          [](const auto& a, const auto& b) { return a.first > b.first; });
        std::vector<int> items(size_t(counts[u]));
        for (int j = 0; j < counts[u]; ++j) items[size_t(j)] = scored[size_t(j)].second;
        rng.shuffle(items.data(), items.size());
        for (int j = 0; j < counts[u]; ++j) {
            int item = items[size_t(j)];
            int rating = 1 + int(rng.uniform_int(5));
            log.interactions.push_back({u, item, rating, uint64_t(874000000 + j)});
            item_seen[size_t(item)]++;
        }
    }
    // every item must appear at least once: retarget surplus interactions
    std::vector<int> missing;
    for (int i = 0; i < num_items; ++i)
        if (!item_seen[size_t(i)]) missing.push_back(i);
    size_t mi = 0;
    for (auto& it : log.interactions) {
        if (mi >= missing.size()) break;
        if (item_seen[size_t(it.item_id)] > 1) {
            item_seen[size_t(it.item_id)]--;
            it.item_id = missing[mi++];
            item_seen[size_t(it.item_id)]++;
        }
    }
    log.orig_user_ids.resize(static_cast<size_t>(num_users));
    log.orig_item_ids.resize(static_cast<size_t>(num_items));
    for (int u = 0; u < num_users; ++u) log.orig_user_ids[size_t(u)] = u + 1;
    for (int i = 0; i < num_items; ++i) log.orig_item_ids[size_t(i)] = i + 1;
    log.rebuild_adjacency();
    return log;
}

}  // namespace fedsel
