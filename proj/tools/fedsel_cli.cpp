#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedsel/orchestrator.hpp"

namespace fs = std::filesystem;
using namespace fedsel;

namespace {

struct Overrides {
    std::string config_path;
    std::string out_dir;
    std::string policy;
    std::string strategy;
    double ubi = -1.0;
    long rounds = -1;
    long seed = -1;
    double rho = -1.0;
    int k = -1;
    double kappa = -1.0;
    int eval_every = -1;
    double target_auc = -1.0;
    int stop_at_target = -1;
};

RunConfig build_config(const Overrides& o) {
    RunConfig cfg = o.config_path.empty() ? RunConfig{} : RunConfig::load(o.config_path);
    if (!o.policy.empty()) cfg.policy.kind = parse_policy_kind(o.policy);
    if (!o.strategy.empty()) cfg.partition_strategy = o.strategy;
    if (o.ubi > 0.0) cfg.ubi = o.ubi;
    if (o.rounds >= 0) cfg.rounds = o.rounds;
    if (o.seed >= 0) cfg.seed = uint64_t(o.seed);
    if (o.rho >= 0.0) cfg.policy.rho = o.rho;
    if (o.k > 0) cfg.policy.k = o.k;
    if (o.kappa >= 0.0) cfg.weights.kappa = o.kappa;
    if (o.eval_every > 0) cfg.eval_every = o.eval_every;
    if (o.target_auc > 0.0) cfg.target_auc = o.target_auc;
    if (o.stop_at_target >= 0) cfg.stop_at_target = o.stop_at_target != 0;
    cfg.validate();
    return cfg;
}

int cmd_run(const Overrides& o) {
    RunConfig cfg = build_config(o);
    const char* root = std::getenv("FEDSEL_OUT_ROOT");
    const fs::path base = root ? fs::path(root) : fs::path("out");
    const fs::path out = o.out_dir.empty() ? base / cfg.hash() : fs::path(o.out_dir);
    fs::create_directories(out);

    RunResult result = run_experiment(cfg);

    write_trace_csv((out / "trace.csv").string(), result, cfg.num_clients);
    write_summary_json((out / "summary.json").string(), result.summary);
    {
        std::ofstream f(out / "config-echo.json", std::ios::binary);
        f << cfg.to_json().dump(2) << "\n";
    }
    std::cout << "out=" << out.string() << " rounds=" << result.summary.rounds_executed
              << " auc=" << result.summary.final_auc
              << " time=" << result.summary.total_simulated_time;
    if (result.summary.time_to_target)
        std::cout << " time_to_target=" << *result.summary.time_to_target;
    std::cout << "\n";
    return 0;
}

int cmd_partition_report(const Overrides& o, int num_seeds, const std::string& out_path) {
    RunConfig cfg = build_config(o);
    InteractionLog log = cfg.dataset_path.empty() ? generate_synthetic_log(cfg.synth_seed)
                                                  : load_movielens(cfg.dataset_path);
    PortionVector portions = cfg.partition_strategy == "exponential"
                                 ? exponential_portions(cfg.num_clients, cfg.ubi)
                                 : linear_portions(cfg.num_clients, cfg.ubi);
    std::ostringstream csv;
    csv << "seed,client_id,num_users,num_interactions,realized_ubi\n";
    for (int s = 0; s < num_seeds; ++s) {
        const uint64_t seed = cfg.partition_seed + uint64_t(s);
        auto a = assign_users(log, portions, seed);
        const double realized = compute_ubi(a);
        for (int c = 0; c < cfg.num_clients; ++c)
            csv << seed << ',' << c << ',' << a.client_users[size_t(c)].size() << ','
                << a.counts[size_t(c)] << ',' << realized << "\n";
    }
    if (out_path.empty()) {
        std::cout << csv.str();
    } else {
        std::ofstream f(out_path, std::ios::binary);
        if (!f) throw std::runtime_error("cannot write " + out_path);
        f << csv.str();
        std::cout << "wrote " << out_path << "\n";
    }
    return 0;
}

int cmd_compare(const Overrides& o, const std::vector<std::string>& policies, int num_seeds,
                const std::string& out_path) {
    std::ostringstream csv;
    csv << "distribution,ubi,policy,seed,total_time,time_to_target,auc,ndcg50,recall50\n";
    struct Agg {
        double total_time = 0.0, ttt = 0.0, auc = 0.0, ndcg = 0.0, recall = 0.0;
        int n = 0, reached = 0;
    };
    std::map<std::string, Agg> aggs;
    for (const auto& pol : policies) {
        parse_policy_kind(pol);  // fail fast on typos
        for (int s = 0; s < num_seeds; ++s) {
            Overrides oo = o;
            oo.policy = pol;
            RunConfig cfg = build_config(oo);
            cfg.seed += uint64_t(s);
            RunResult r = run_experiment(cfg);
            const auto& sm = r.summary;
            csv << cfg.partition_strategy << ',' << cfg.ubi << ',' << pol << ',' << cfg.seed
                << ',' << sm.total_simulated_time << ','
                << (sm.time_to_target ? std::to_string(*sm.time_to_target) : std::string())
                << ',' << sm.final_auc << ',' << sm.final_ndcg << ',' << sm.final_recall
                << "\n";
            auto& a = aggs[cfg.partition_strategy + "," + std::to_string(cfg.ubi) + "," + pol];
            a.total_time += sm.total_simulated_time;
            a.auc += sm.final_auc;
            a.ndcg += sm.final_ndcg;
            a.recall += sm.final_recall;
            if (sm.time_to_target) {
                a.ttt += *sm.time_to_target;
                a.reached++;
            }
            a.n++;
        }
    }
    for (const auto& [key, a] : aggs)
        csv << key << ",mean," << a.total_time / a.n << ','
            << (a.reached ? std::to_string(a.ttt / a.reached) : std::string()) << ','
            << a.auc / a.n << ',' << a.ndcg / a.n << ',' << a.recall / a.n << "\n";
    if (out_path.empty()) {
        std::cout << csv.str();
    } else {
        std::ofstream f(out_path, std::ios::binary);
        if (!f) throw std::runtime_error("cannot write " + out_path);
        f << csv.str();
        std::cout << "wrote " << out_path << "\n";
    }
    return 0;
}

struct Curve {
    std::vector<double> xs, ys;
};

Curve read_curve(const std::string& trace_path) {
    std::ifstream f(trace_path);
    if (!f) throw std::runtime_error("cannot open " + trace_path);
    std::string line;
    std::getline(f, line);
    std::stringstream hs(line);
    std::string col;
    int clock_idx = -1, auc_idx = -1, eval_idx = -1, i = 0;
    while (std::getline(hs, col, ',')) {
        if (col == "clock") clock_idx = i;
        if (col == "auc") auc_idx = i;
        if (col == "evaluated") eval_idx = i;
        ++i;
    }
    if (clock_idx < 0 || auc_idx < 0 || eval_idx < 0)
        throw std::runtime_error("trace file missing clock/auc columns: " + trace_path);
    Curve c;
    while (std::getline(f, line)) {
        std::stringstream ls(line);
        std::vector<std::string> cells;
        while (std::getline(ls, col, ',')) cells.push_back(col);
        if (int(cells.size()) <= auc_idx || cells[size_t(eval_idx)] != "1" ||
            cells[size_t(auc_idx)].empty())
            continue;
        c.xs.push_back(std::stod(cells[size_t(clock_idx)]));
        c.ys.push_back(std::stod(cells[size_t(auc_idx)]));
    }
    if (c.xs.empty()) throw std::runtime_error("no evaluation points in " + trace_path);
    return c;
}

int cmd_plot(const std::vector<std::string>& trace_paths, const std::string& out_path) {
    static const char* kColors[] = {"steelblue", "crimson", "seagreen", "darkorange",
                                    "purple",    "gray",    "teal",     "brown"};
    std::vector<Curve> curves;
    for (const auto& p : trace_paths) curves.push_back(read_curve(p));
    double xmax = 0.0, ymin = 1e300, ymax = -1e300;
    for (const auto& c : curves) {
        xmax = std::max(xmax, *std::max_element(c.xs.begin(), c.xs.end()));
        ymin = std::min(ymin, *std::min_element(c.ys.begin(), c.ys.end()));
        ymax = std::max(ymax, *std::max_element(c.ys.begin(), c.ys.end()));
    }
    const double w = 640, h = 400, m = 50;
    const double yspan = std::max(1e-9, ymax - ymin);
    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + out_path);
    out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='" << h
        << "'>\n<rect width='100%' height='100%' fill='white'/>\n";
    for (size_t ci = 0; ci < curves.size(); ++ci) {
        out << "<polyline fill='none' stroke='" << kColors[ci % 8]
            << "' stroke-width='2' points='";
        for (size_t j = 0; j < curves[ci].xs.size(); ++j) {
            const double px = m + (w - 2 * m) * (xmax > 0 ? curves[ci].xs[j] / xmax : 0.0);
            const double py = h - m - (h - 2 * m) * (curves[ci].ys[j] - ymin) / yspan;
            out << px << "," << py << " ";
        }
        out << "'/>\n<text x='" << w - m + 4 << "' y='" << 20 + 14 * double(ci)
            << "' font-size='11' fill='" << kColors[ci % 8] << "'>" << ci << "</text>\n";
    }
    out << "<text x='" << w / 2 << "' y='" << h - 10
        << "' text-anchor='middle' font-size='12'>simulated time (s)</text>\n"
        << "<text x='15' y='" << h / 2 << "' font-size='12' transform='rotate(-90 15 "
        << h / 2 << ")'>AUC</text>\n</svg>\n";
    std::cout << "wrote " << out_path << " (" << curves.size() << " curves)\n";
    return 0;
}

int cmd_synth_data(const std::string& out_data, const std::string& out_features,
                   uint64_t seed, int d_text, int d_visual) {
    InteractionLog log = generate_synthetic_log(seed);
    if (!out_data.empty()) {
        save_movielens(out_data, log);
        std::cout << "wrote " << out_data << " (" << log.interactions.size()
                  << " interactions)\n";
    }
    if (!out_features.empty()) {
        ModalityBundle b = synth_features(seed + 1, d_text, d_visual, log.num_items);
        save_feature_file(out_features, b);
        std::cout << "wrote " << out_features << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"federated participant-selection simulator"};
    app.require_subcommand(1);

    Overrides o;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("-c,--config", o.config_path, "JSON config file");
        sub->add_option("--policy", o.policy,
                        "ucb|ucb_discounted|ucb_window|random|cluster|greedy_oracle");
        sub->add_option("--strategy", o.strategy, "exponential|linear");
        sub->add_option("--ubi", o.ubi, "target data-balance ratio");
        sub->add_option("--rounds", o.rounds, "federated rounds");
        sub->add_option("--seed", o.seed, "run seed");
        sub->add_option("--rho", o.rho, "exploration coefficient");
        sub->add_option("-k", o.k, "clients per round");
        sub->add_option("--kappa", o.kappa, "latency penalty");
        sub->add_option("--eval-every", o.eval_every, "evaluation cadence");
        sub->add_option("--target-auc", o.target_auc, "target test AUC");
        sub->add_option("--stop-at-target", o.stop_at_target, "stop once target is reached");
    };

    auto* run = app.add_subcommand("run", "execute one federated run");
    add_common(run);
    run->add_option("-o,--out", o.out_dir, "output directory (default out/<config-hash>)");

    int part_seeds = 10;
    std::string part_out;
    auto* part = app.add_subcommand("partition-report", "per-client data-balance CSV");
    add_common(part);
    part->add_option("--seeds", part_seeds, "number of partition seeds");
    part->add_option("-o,--out", part_out, "output CSV path (default stdout)");

    std::vector<std::string> cmp_policies{"ucb", "random"};
    int cmp_seeds = 3;
    std::string cmp_out;
    auto* cmp = app.add_subcommand("compare", "policy comparison table CSV");
    add_common(cmp);
    cmp->add_option("--policies", cmp_policies, "policies to compare");
    cmp->add_option("--seeds", cmp_seeds, "seeds per policy");
    cmp->add_option("-o,--out", cmp_out, "output CSV path (default stdout)");

    std::vector<std::string> trace_paths;
    std::string plot_out = "auc.svg";
    auto* plot = app.add_subcommand("plot", "SVG learning curves from trace files");
    plot->add_option("traces", trace_paths, "trace.csv paths")->required();
    plot->add_option("-o,--out", plot_out, "output SVG path");

    std::string synth_data_out, synth_feat_out;
    long synth_seed = 42;
    int synth_dt = 64, synth_dv = 64;
    auto* synth = app.add_subcommand("synth-data", "write synthetic dataset files");
    synth->add_option("--data", synth_data_out, "interaction file path");
    synth->add_option("--features", synth_feat_out, "feature file path");
    synth->add_option("--seed", synth_seed, "generator seed");
    synth->add_option("--d-text", synth_dt, "text feature dim");
    synth->add_option("--d-visual", synth_dv, "visual feature dim");

    CLI11_PARSE(app, argc, argv);

    try {
        if (app.got_subcommand(run)) return cmd_run(o);
        if (app.got_subcommand(part)) return cmd_partition_report(o, part_seeds, part_out);
        if (app.got_subcommand(cmp)) return cmd_compare(o, cmp_policies, cmp_seeds, cmp_out);
        if (app.got_subcommand(plot)) return cmd_plot(trace_paths, plot_out);
        if (app.got_subcommand(synth))
            return cmd_synth_data(synth_data_out, synth_feat_out, uint64_t(synth_seed),
                                  synth_dt, synth_dv);
    } catch (const ConfigError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 3;
    } catch (const std::invalid_argument& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
