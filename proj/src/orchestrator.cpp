#include "fedsel/orchestrator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace fedsel {

// --- config ----------------------------------------------------------------------

void RunConfig::validate() const {
    try {
        hyper.validate();
        policy.validate();
        weights.validate();
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
    if (partition_strategy != "exponential" && partition_strategy != "linear")
        throw ConfigError("partition strategy must be exponential or linear");
    if (!(ubi > 0.0 && ubi <= 1.0)) throw ConfigError("ubi must be in (0,1]");
    if (num_clients < 2) throw ConfigError("need at least 2 clients");
    if (!(split_ratio > 0.0 && split_ratio < 1.0)) throw ConfigError("split ratio in (0,1)");
    if (q_mode != "marginal" && q_mode != "shared")
        throw ConfigError("q_mode must be marginal or shared");
    if (!(val_fraction >= 0.0 && val_fraction < 1.0))
        throw ConfigError("val_fraction must be in [0,1)");
    if (val_users < 1 || val_negatives < 1) throw ConfigError("validation pool sizes >= 1");
    if (rounds < 0) throw ConfigError("rounds must be >= 0");
    if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
    if (eval_k < 1) throw ConfigError("eval_k must be >= 1");
    if (comm_multiplier < 0.0) throw ConfigError("comm_multiplier must be >= 0");
    if (!(calibration > 0.0)) throw ConfigError("calibration must be > 0");
    if (t_semi < 0.0) throw ConfigError("t_semi must be >= 0");
}

nlohmann::json RunConfig::to_json() const {
    nlohmann::json j;
    j["dataset"] = {{"path", dataset_path},       {"synth_seed", synth_seed},
                    {"feature_file", feature_file}, {"feature_seed", feature_seed},
                    {"split_ratio", split_ratio},   {"split_seed", split_seed}};
    j["partition"] = {{"strategy", partition_strategy},
                      {"ubi", ubi},
                      {"num_clients", num_clients},
                      {"seed", partition_seed}};
    j["system"] = {{"fleet_file", fleet_file},
                   {"comm_multiplier", comm_multiplier},
                   {"calibration", calibration},
                   {"t_semi", t_semi}};
    j["hyper"] = {{"d", hyper.d},
                  {"factors", hyper.factors},
                  {"d_text", hyper.d_text},
                  {"d_visual", hyper.d_visual},
                  {"h_text", hyper.h_text},
                  {"h_visual", hyper.h_visual},
                  {"h_attn", hyper.h_attn},
                  {"k_neg", hyper.k_neg},
                  {"margin", hyper.margin},
                  {"lambda_dcor", hyper.lambda_dcor},
                  {"weight_decay", hyper.weight_decay},
                  {"lr", hyper.lr},
                  {"dropout", hyper.dropout},
                  {"epochs_local", hyper.epochs_local},
                  {"batch_size", hyper.batch_size}};
    j["utility"] = {{"gamma", weights.gamma},       {"alpha", weights.alpha},
                    {"beta", weights.beta},         {"kappa", weights.kappa},
                    {"q_mode", q_mode},             {"val_fraction", val_fraction},
                    {"val_users", val_users},       {"val_negatives", val_negatives},
                    {"val_seed", val_seed}};
    j["policy"] = {{"kind", policy_kind_name(policy.kind)},
                   {"rho", policy.rho},
                   {"gamma_disc", policy.gamma_disc},
                   {"window", policy.window},
                   {"k", policy.k}};
    j["run"] = {{"rounds", rounds},
                {"target_auc", target_auc},
                {"eval_every", eval_every},
                {"seed", seed},
                {"stop_at_target", stop_at_target},
                {"max_samples_per_round", max_samples_per_round},
                {"eval_k", eval_k}};
    return j;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
    RunConfig c;
    try {
        if (j.contains("dataset")) {
            const auto& d = j.at("dataset");
            c.dataset_path = d.value("path", c.dataset_path);
            c.synth_seed = d.value("synth_seed", c.synth_seed);
            c.feature_file = d.value("feature_file", c.feature_file);
            c.feature_seed = d.value("feature_seed", c.feature_seed);
            c.split_ratio = d.value("split_ratio", c.split_ratio);
            c.split_seed = d.value("split_seed", c.split_seed);
        }
        if (j.contains("partition")) {
            const auto& p = j.at("partition");
            c.partition_strategy = p.value("strategy", c.partition_strategy);
            c.ubi = p.value("ubi", c.ubi);
            c.num_clients = p.value("num_clients", c.num_clients);
            c.partition_seed = p.value("seed", c.partition_seed);
        }
        if (j.contains("system")) {
            const auto& s = j.at("system");
            c.fleet_file = s.value("fleet_file", c.fleet_file);
            c.comm_multiplier = s.value("comm_multiplier", c.comm_multiplier);
            c.calibration = s.value("calibration", c.calibration);
            c.t_semi = s.value("t_semi", c.t_semi);
        }
        if (j.contains("hyper")) {
            const auto& h = j.at("hyper");
            c.hyper.d = h.value("d", c.hyper.d);
            c.hyper.factors = h.value("factors", c.hyper.factors);
            c.hyper.d_text = h.value("d_text", c.hyper.d_text);
            c.hyper.d_visual = h.value("d_visual", c.hyper.d_visual);
            c.hyper.h_text = h.value("h_text", c.hyper.h_text);
            c.hyper.h_visual = h.value("h_visual", c.hyper.h_visual);
            c.hyper.h_attn = h.value("h_attn", c.hyper.h_attn);
            c.hyper.k_neg = h.value("k_neg", c.hyper.k_neg);
            c.hyper.margin = h.value("margin", c.hyper.margin);
            c.hyper.lambda_dcor = h.value("lambda_dcor", c.hyper.lambda_dcor);
            c.hyper.weight_decay = h.value("weight_decay", c.hyper.weight_decay);
            c.hyper.lr = h.value("lr", c.hyper.lr);
            c.hyper.dropout = h.value("dropout", c.hyper.dropout);
            c.hyper.epochs_local = h.value("epochs_local", c.hyper.epochs_local);
            c.hyper.batch_size = h.value("batch_size", c.hyper.batch_size);
        }
        if (j.contains("utility")) {
            const auto& u = j.at("utility");
            c.weights.gamma = u.value("gamma", c.weights.gamma);
            c.weights.alpha = u.value("alpha", c.weights.alpha);
            c.weights.beta = u.value("beta", c.weights.beta);
            c.weights.kappa = u.value("kappa", c.weights.kappa);
            c.q_mode = u.value("q_mode", c.q_mode);
            c.val_fraction = u.value("val_fraction", c.val_fraction);
            c.val_users = u.value("val_users", c.val_users);
            c.val_negatives = u.value("val_negatives", c.val_negatives);
            c.val_seed = u.value("val_seed", c.val_seed);
        }
        if (j.contains("policy")) {
            const auto& p = j.at("policy");
            c.policy.kind = parse_policy_kind(p.value("kind", std::string("ucb")));
            c.policy.rho = p.value("rho", c.policy.rho);
            c.policy.gamma_disc = p.value("gamma_disc", c.policy.gamma_disc);
            c.policy.window = p.value("window", c.policy.window);
            c.policy.k = p.value("k", c.policy.k);
        }
        if (j.contains("run")) {
            const auto& r = j.at("run");
            c.rounds = r.value("rounds", c.rounds);
            c.target_auc = r.value("target_auc", c.target_auc);
            c.eval_every = r.value("eval_every", c.eval_every);
            c.seed = r.value("seed", c.seed);
            c.stop_at_target = r.value("stop_at_target", c.stop_at_target);
            c.max_samples_per_round = r.value("max_samples_per_round", c.max_samples_per_round);
            c.eval_k = r.value("eval_k", c.eval_k);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    c.validate();
    return c;
}

RunConfig RunConfig::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    return from_json(j);
}

std::string RunConfig::hash() const {
    const std::string s = to_json().dump();
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", (unsigned long long)h);
    return buf;
}

// --- aggregation -----------------------------------------------------------------

ModelParams fedavg_aggregate(const ModelParams& global,
                             const std::vector<LocalUpdate>& updates) {
    if (updates.empty()) throw std::invalid_argument("no updates to aggregate");
    double total = 0.0;
    for (const auto& u : updates) total += double(u.sample_count);
    if (total <= 0.0) throw std::invalid_argument("aggregate weight is zero");
    ModelParams out = global;
    for (const auto& u : updates) {
        if (!global.same_shape(u.delta)) throw std::invalid_argument("delta shape mismatch");
        out.add_scaled(u.delta, double(u.sample_count) / total);
    }
    return out;
}

// --- experiment ------------------------------------------------------------------

namespace {

struct ValPool {
    std::vector<int> users;
    std::vector<std::vector<int>> pos_items;  // per pooled user
    std::vector<std::vector<int>> negatives;  // fixed, per pooled user
};

double val_auc(const ModelParams& params, const ModalityBundle& features,
               const HyperParams& hyper, const ValPool& pool) {
    Scorer scorer(params, features, hyper);
    double sum = 0.0;
    size_t n = 0;
    std::vector<double> rel, nonrel;
    for (size_t i = 0; i < pool.users.size(); ++i) {
        scorer.prepare_user(pool.users[i]);
        rel.clear();
        nonrel.clear();
        for (int it : pool.pos_items[i]) rel.push_back(scorer.score_prepared(it));
        for (int it : pool.negatives[i]) nonrel.push_back(scorer.score_prepared(it));
        if (rel.empty() || nonrel.empty()) continue;
        sum += auc_single(rel, nonrel);
        ++n;
    }
    return n ? sum / double(n) : 0.0;
}

struct TestEval {
    double auc = 0.0;
    double ndcg = 0.0;
    double recall = 0.0;
};

TestEval evaluate_test(const ModelParams& params, const ModalityBundle& features,
                       const HyperParams& hyper, const DatasetSplit& split, int num_items,
                       int k) {
    Scorer scorer(params, features, hyper);
    std::vector<RankedUser> users;
    std::vector<uint8_t> is_train(size_t(num_items), 0);
    for (int u = 0; u < int(split.train.size()); ++u) {
        if (split.test[size_t(u)].empty()) continue;
        for (const auto& it : split.train[size_t(u)]) is_train[size_t(it.item_id)] = 1;
        RankedUser ru;
        ru.items.reserve(static_cast<size_t>(num_items));
        ru.scores.reserve(static_cast<size_t>(num_items));
        scorer.prepare_user(u);
        for (int i = 0; i < num_items; ++i) {
            if (is_train[size_t(i)]) continue;
            ru.items.push_back(i);
            ru.scores.push_back(scorer.score_prepared(i));
        }
        for (const auto& it : split.test[size_t(u)]) ru.relevant.insert(it.item_id);
        users.push_back(std::move(ru));
        for (const auto& it : split.train[size_t(u)]) is_train[size_t(it.item_id)] = 0;
    }
    TestEval e;
    e.auc = auc(users);
    e.ndcg = ndcg_at_k(users, k);
    e.recall = topk_metrics(users, k).recall;
    return e;
}

}  // namespace

RunResult run_experiment(const RunConfig& cfg) {
    cfg.validate();

    // data
    InteractionLog log = cfg.dataset_path.empty() ? generate_synthetic_log(cfg.synth_seed)
                                                  : load_movielens(cfg.dataset_path);
    ModalityBundle features =
        cfg.feature_file.empty()
            ? synth_features(cfg.feature_seed, cfg.hyper.d_text, cfg.hyper.d_visual,
                             log.num_items)
            : load_feature_file(cfg.feature_file);
    if (features.num_items < log.num_items)
        throw ConfigError("feature bundle covers fewer items than the log");
    if (features.d_text != cfg.hyper.d_text || features.d_visual != cfg.hyper.d_visual)
        throw ConfigError("feature dims disagree with hyperparameters");

    DatasetSplit split = split_per_user(log, cfg.split_ratio, cfg.split_seed);

    // server validation slice: seeded per-user carve-out from train
    std::vector<std::vector<Interaction>> client_train(split.train.size());
    ValPool pool;
    {
        RngStream vrng = RngStream::keyed(cfg.val_seed, 0x7a11da7eULL);
        std::vector<std::vector<int>> val_items(split.train.size());
        for (size_t u = 0; u < split.train.size(); ++u) {
            auto& tr = split.train[u];
            const size_t n_val = size_t(std::floor(cfg.val_fraction * double(tr.size())));
            std::vector<size_t> idx(tr.size());
            std::iota(idx.begin(), idx.end(), 0);
            vrng.shuffle(idx.data(), idx.size());
            std::vector<uint8_t> in_val(tr.size(), 0);
            for (size_t i = 0; i < n_val; ++i) in_val[idx[i]] = 1;
            for (size_t i = 0; i < tr.size(); ++i) {
                if (in_val[i]) val_items[u].push_back(tr[i].item_id);
                else client_train[u].push_back(tr[i]);
            }
            if (client_train[u].empty() && !tr.empty()) {
                // never starve a client of a user's data entirely
                client_train[u].push_back(tr[0]);
                if (!val_items[u].empty() && val_items[u][0] == tr[0].item_id)
                    val_items[u].erase(val_items[u].begin());
            }
        }
        std::vector<int> candidates;
        for (size_t u = 0; u < val_items.size(); ++u)
            if (!val_items[u].empty()) candidates.push_back(int(u));
        vrng.shuffle(candidates.data(), candidates.size());
        const size_t take = std::min(size_t(cfg.val_users), candidates.size());
        pool.users.assign(candidates.begin(), candidates.begin() + long(take));
        std::sort(pool.users.begin(), pool.users.end());
        pool.pos_items.resize(pool.users.size());
        pool.negatives.resize(pool.users.size());
        for (size_t i = 0; i < pool.users.size(); ++i) {
            const int u = pool.users[i];
            pool.pos_items[i] = val_items[size_t(u)];
            std::unordered_set<int> banned;
            for (const auto& it : split.train[size_t(u)]) banned.insert(it.item_id);
            auto nrng = RngStream::keyed(cfg.val_seed, 0xbadd, uint64_t(u));
            pool.negatives[i] =
                sample_negatives(banned, log.num_items, cfg.val_negatives, nrng);
        }
    }

    // partition the client-side training data across the fleet
    InteractionLog train_log;
    train_log.num_users = log.num_users;
    train_log.num_items = log.num_items;
    for (const auto& v : client_train)
        train_log.interactions.insert(train_log.interactions.end(), v.begin(), v.end());
    train_log.rebuild_adjacency();
    PortionVector portions = cfg.partition_strategy == "exponential"
                                 ? exponential_portions(cfg.num_clients, cfg.ubi)
                                 : linear_portions(cfg.num_clients, cfg.ubi);
    PartitionAssignment assignment = assign_users(train_log, portions, cfg.partition_seed);

    // fleet + timing
    std::vector<ClientProfile> fleet;
    if (cfg.fleet_file.empty()) {
        // cycle the reference fleet when a different client count is asked for
        auto base = default_fleet();
        fleet.reserve(size_t(cfg.num_clients));
        for (int c = 0; c < cfg.num_clients; ++c)
            fleet.push_back(base[size_t(c) % base.size()]);
    } else {
        fleet = load_fleet(cfg.fleet_file);
        if (int(fleet.size()) != cfg.num_clients)
            throw ConfigError("fleet size disagrees with num_clients");
    }

    ModelParams global =
        ModelParams::init(log.num_users, log.num_items, cfg.hyper, cfg.seed);
    const size_t payload = checkpoint_size_bytes(global);

    std::vector<double> workloads(size_t(cfg.num_clients)), t_train_all(size_t(cfg.num_clients)),
        t_comm_all(size_t(cfg.num_clients));
    for (int c = 0; c < cfg.num_clients; ++c) {
        double per_epoch = double(assignment.counts[size_t(c)]);
        if (cfg.max_samples_per_round > 0)
            per_epoch = std::min(per_epoch, double(cfg.max_samples_per_round));
        workloads[size_t(c)] = per_epoch * double(cfg.hyper.epochs_local);
        t_train_all[size_t(c)] =
            compute_time(workloads[size_t(c)], fleet[size_t(c)], cfg.calibration);
        t_comm_all[size_t(c)] =
            comm_time(payload, fleet[size_t(c)].bandwidth_mbps, cfg.comm_multiplier);
    }
    const double t_semi =
        cfg.t_semi > 0.0
            ? cfg.t_semi
            : default_t_semi(fleet, workloads, payload, cfg.comm_multiplier, cfg.calibration);

    SelectionPolicy policy(cfg.policy, cfg.num_clients, cfg.seed);
    ReputationLedger ledger(cfg.num_clients);
    std::vector<double> d_raw(size_t(cfg.num_clients), 0.0);
    std::vector<std::vector<double>> last_deltas(size_t(cfg.num_clients));

    RunResult result;
    double clock = 0.0;
    double q_prev = val_auc(global, features, cfg.hyper, pool);
    double best_auc = -1.0;
    int stale_evals = 0;
    bool stop = false;

    for (long t = 1; t <= cfg.rounds && !stop; ++t) {
        SelectionPolicy::Inputs in;
        in.latencies.resize(size_t(cfg.num_clients));
        in.scores.resize(size_t(cfg.num_clients));
        for (int c = 0; c < cfg.num_clients; ++c) {
            in.latencies[size_t(c)] = t_train_all[size_t(c)] + t_comm_all[size_t(c)];
            const auto& e = ledger.clients[size_t(c)];
            in.scores[size_t(c)] = aggregate_score(e.relevance, e.reputation,
                                                   e.data_quality_norm, cfg.weights.alpha,
                                                   cfg.weights.beta);
        }
        in.t_semi = t_semi;
        in.kappa = cfg.weights.kappa;
        in.deltas = last_deltas;

        SelectionResult sel = policy.select(t, in);
        auto probs = index_probabilities(sel.indices);

        // local training, deterministic per (round, client)
        std::vector<LocalUpdate> updates;
        updates.reserve(sel.selected.size());
        for (int c : sel.selected) {
            if (assignment.client_interactions[size_t(c)].empty())
                throw std::runtime_error("round " + std::to_string(t) + ": client " +
                                         std::to_string(c) + " has no data");
            auto crng = RngStream::keyed(cfg.seed, uint64_t(t), uint64_t(c));
            updates.push_back(train_local(global, assignment.client_interactions[size_t(c)],
                                          features, cfg.hyper, crng, log.num_items,
                                          cfg.max_samples_per_round));
        }

        ModelParams new_global = fedavg_aggregate(global, updates);
        const double q_global = val_auc(new_global, features, cfg.hyper, pool);
        const bool improved = q_global > q_prev;
        const std::vector<double> flat_new = new_global.flatten();

        // per-client accounting
        RoundRecord rec;
        rec.round = t;
        rec.selected = sel.selected;
        rec.clients.resize(size_t(cfg.num_clients));
        std::vector<LatencyEstimate> sel_lat;
        std::vector<double> sel_scores;
        for (size_t si = 0; si < sel.selected.size(); ++si) {
            const int c = sel.selected[si];
            const auto& up = updates[si];
            auto& entry = ledger.clients[size_t(c)];

            ModelParams local = global;
            local.add_scaled(up.delta, 1.0);
            const double q_i = cfg.q_mode == "marginal"
                                   ? val_auc(local, features, cfg.hyper, pool)
                                   : q_global;
            auto rep = update_reputation(entry.reputation, q_i, q_prev, cfg.weights.gamma);
            entry.reputation = rep.reputation;
            entry.last_delta = rep.delta;

            const std::vector<double> flat_local = local.flatten();
            const double dev = update_deviation(flat_local, flat_new);
            entry.relevance = update_relevance(dev, improved);

            d_raw[size_t(c)] = data_quality(up.sample_losses, up.sample_count);
            last_deltas[size_t(c)] = up.delta.flatten();
        }
        auto d_norm = minmax_normalize(d_raw);
        for (int c = 0; c < cfg.num_clients; ++c) {
            ledger.clients[size_t(c)].data_quality_norm = d_norm[size_t(c)];
            ledger.clients[size_t(c)].data_quality_raw = d_raw[size_t(c)];
        }

        for (size_t si = 0; si < sel.selected.size(); ++si) {
            const int c = sel.selected[si];
            const auto& entry = ledger.clients[size_t(c)];
            const double s = aggregate_score(entry.relevance, entry.reputation,
                                             entry.data_quality_norm, cfg.weights.alpha,
                                             cfg.weights.beta);
            const double lat = t_train_all[size_t(c)] + t_comm_all[size_t(c)];
            const double reward =
                per_arm_reward(s, normalized_time(lat, t_semi), cfg.weights.kappa);
            policy.record_reward(c, reward, t);
            sel_lat.push_back({t_train_all[size_t(c)], t_comm_all[size_t(c)]});
            sel_scores.push_back(s);
            rec.clients[size_t(c)].reward = reward;
            rec.clients[size_t(c)].score = s;
        }

        for (int c = 0; c < cfg.num_clients; ++c) {
            auto& st = rec.clients[size_t(c)];
            const auto& entry = ledger.clients[size_t(c)];
            st.selected = sel.action[size_t(c)] != 0;
            st.relevance = entry.relevance;
            st.reputation = entry.reputation;
            st.delta_q = entry.last_delta;
            st.data_quality_norm = entry.data_quality_norm;
            st.t_train = t_train_all[size_t(c)];
            st.t_comm = t_comm_all[size_t(c)];
            st.index = sel.indices[size_t(c)];
            st.prob = probs[size_t(c)];
            if (!st.selected)
                st.score = aggregate_score(entry.relevance, entry.reputation,
                                           entry.data_quality_norm, cfg.weights.alpha,
                                           cfg.weights.beta);
        }

        // observation vectors for the ledger history
        auto obs = build_observations(ledger, t_train_all, t_comm_all);
        for (int c = 0; c < cfg.num_clients; ++c)
            ledger.clients[size_t(c)].observations.push_back(obs[size_t(c)]);

        rec.t_round = round_time(sel_lat);
        rec.t_norm = normalized_time(rec.t_round, t_semi);
        rec.round_reward = round_reward(sel_scores, rec.t_round, t_semi, cfg.weights.kappa);
        clock += rec.t_round;
        rec.clock = clock;
        rec.q_global = q_global;

        global = std::move(new_global);
        q_prev = q_global;

        if (t % cfg.eval_every == 0 || t == cfg.rounds) {
            const TestEval ev = evaluate_test(global, features, cfg.hyper, split,
                                              log.num_items, cfg.eval_k);
            rec.evaluated = true;
            rec.auc = ev.auc;
            rec.ndcg = ev.ndcg;
            rec.recall = ev.recall;
            if (ev.auc > best_auc + 1e-4) {
                best_auc = ev.auc;
                stale_evals = 0;
            } else if (++stale_evals >= 20) {
                stop = true;  // converged
            }
            if (cfg.stop_at_target && ev.auc >= cfg.target_auc) stop = true;
        }
        result.trace.push_back(std::move(rec));
    }

    const TestEval fin =
        evaluate_test(global, features, cfg.hyper, split, log.num_items, cfg.eval_k);
    result.summary.final_auc = fin.auc;
    result.summary.final_ndcg = fin.ndcg;
    result.summary.final_recall = fin.recall;
    result.summary.total_simulated_time = clock;
    result.summary.rounds_executed = long(result.trace.size());
    result.summary.t_semi = t_semi;
    result.summary.config_echo = cfg.to_json();
    std::vector<EvalPoint> evals;
    for (const auto& r : result.trace)
        if (r.evaluated) evals.push_back({r.clock, r.auc});
    result.summary.time_to_target = time_to_target(evals, cfg.target_auc);
    return result;
}

// --- output ------------------------------------------------------------------------

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

std::string fmt6(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

}  // namespace

void write_trace_csv(std::ostream& out, const RunResult& result, int num_clients) {
    out << "round,clock,t_round,t_norm,round_reward,q_global,evaluated,auc,ndcg50,recall50";
    for (int c = 0; c < num_clients; ++c) {
        const std::string s = std::to_string(c);
        out << ",sel_" << s << ",S_" << s << ",U_" << s << ",R_" << s << ",dq_" << s
            << ",Dn_" << s << ",ttrain_" << s << ",tcomm_" << s << ",reward_" << s
            << ",index_" << s << ",prob_" << s;
    }
    out << "\n";
    for (const auto& r : result.trace) {
        out << r.round << ',' << fmt(r.clock) << ',' << fmt(r.t_round) << ',' << fmt(r.t_norm)
            << ',' << fmt(r.round_reward) << ',' << fmt6(r.q_global) << ','
            << (r.evaluated ? 1 : 0) << ',';
        if (r.evaluated)
            out << fmt6(r.auc) << ',' << fmt6(r.ndcg) << ',' << fmt6(r.recall);
        else
            out << ",,";
        for (int c = 0; c < num_clients; ++c) {
            const auto& st = r.clients[size_t(c)];
            out << ',' << (st.selected ? 1 : 0) << ',' << fmt(st.score) << ','
                << fmt(st.relevance) << ',' << fmt(st.reputation) << ',' << fmt(st.delta_q)
                << ',' << fmt(st.data_quality_norm) << ',' << fmt(st.t_train) << ','
                << fmt(st.t_comm) << ',';
            if (st.selected) out << fmt(st.reward);
            out << ',' << fmt(st.index) << ',' << fmt(st.prob);
        }
        out << "\n";
    }
}

void write_trace_csv(const std::string& path, const RunResult& result, int num_clients) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    write_trace_csv(f, result, num_clients);
}

nlohmann::json summary_json(const RunSummary& s) {
    nlohmann::json j;
    j["final_auc"] = fmt6(s.final_auc);
    j["final_ndcg50"] = fmt6(s.final_ndcg);
    j["final_recall50"] = fmt6(s.final_recall);
    if (s.time_to_target) j["time_to_target"] = *s.time_to_target;
    else j["time_to_target"] = nullptr;
    j["total_simulated_time"] = s.total_simulated_time;
    j["rounds_executed"] = s.rounds_executed;
    j["t_semi"] = s.t_semi;
    j["config"] = s.config_echo;
    return j;
}

void write_summary_json(const std::string& path, const RunSummary& s) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << summary_json(s).dump(2) << "\n";
}

}  // namespace fedsel
