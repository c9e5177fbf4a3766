// Benchmark and training CLI for the adaptive priority queue.
//
//   bench run          run a (possibly phase-varying) workload, emit CSV
//   bench gen-training measure both modes over a feature grid, emit samples
//   bench train        fit a decision tree from a samples CSV
//   bench predict      classify a single feature vector with a tree file
//   bench plot         turn a run CSV into a gnuplot-ready data file

#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "smartpq/workload.hpp"

namespace {

using namespace smartpq;

std::string read_file(const std::string& path) {
    std::ifstream f(path);
    if (!f)
        throw std::runtime_error("cannot open " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

// Desk-scale transform: 1 s phases, threads capped at hardware parallelism.
void desk_scale(std::vector<WorkloadPhase>& phases) {
    int hw = static_cast<int>(std::thread::hardware_concurrency());
    if (hw < 1)
        hw = 1;
    for (auto& p : phases) {
        p.duration_s = std::min(p.duration_s, 1.0);
        p.n_threads = std::min(p.n_threads, hw);
    }
}

int cmd_run(const std::string& impl_s, const std::string& phases_path, RunConfig cfg,
            const std::string& csv_path, const std::string& tree_path, bool full_scale) {
    auto impl = parse_impl(impl_s);
    if (!impl) {
        std::cerr << "unknown --impl '" << impl_s << "'\n";
        return 1;
    }
    auto phases = load_phase_file(phases_path);
    if (!full_scale)
        desk_scale(phases);
    if (!tree_path.empty())
        cfg.tree = std::make_shared<DecisionTree>(DecisionTree::deserialize(read_file(tree_path)));

    RunResult r = run_workload(*impl, phases, cfg);

    std::ofstream file;
    std::ostream* out = &std::cout;
    if (!csv_path.empty()) {
        file.open(csv_path);
        if (!file)
            throw std::runtime_error("cannot open " + csv_path);
        out = &file;
    }
    *out << "time_s,thr_ops,mode\n";
    for (size_t i = 0; i < r.samples.size(); ++i)
        *out << r.sample_times[i] << ',' << r.samples[i] << ',' << r.sample_modes[i] << '\n';

    std::cerr << "impl=" << impl_name(*impl) << " phases=" << phases.size()
              << " total_ops=" << r.total_ops << " final_size=" << r.final_size
              << " transitions=" << r.transitions.size() << '\n';
    for (size_t i = 0; i < r.phase_means.size(); ++i)
        std::cerr << "phase " << i << " mean " << r.phase_means[i] << " ops/s\n";
    return 0;
}

int cmd_gen_training(const std::string& grid_s, const std::string& grid_file,
                     const std::string& out_path, TrainingConfig tc) {
    GridSpec grid = grid_file.empty() ? parse_grid(grid_s) : load_grid_file(grid_file);
    std::ofstream file;
    std::ostream* out = &std::cout;
    if (!out_path.empty()) {
        file.open(out_path);
        if (!file)
            throw std::runtime_error("cannot open " + out_path);
        out = &file;
    }
    size_t n = gen_training(grid, *out, tc, [](size_t done, size_t total) {
        std::cerr << "\r" << done << "/" << total << std::flush;
    });
    std::cerr << "\nwrote " << n << " samples\n";
    return 0;
}

int cmd_train(const std::string& in_path, const std::string& out_path, TrainConfig tc,
              double holdout) {
    std::ifstream in(in_path);
    if (!in)
        throw std::runtime_error("cannot open " + in_path);
    auto samples = load_samples_csv(in);
    if (samples.empty())
        throw std::runtime_error("no samples in " + in_path);

    // Deterministic holdout: every k-th sample is held out.
    std::vector<LabeledSample> train_set, hold_set;
    int k = holdout > 0 ? std::max(2, static_cast<int>(1.0 / holdout)) : 0;
    for (size_t i = 0; i < samples.size(); ++i) {
        if (k > 0 && i % static_cast<size_t>(k) == static_cast<size_t>(k) - 1)
            hold_set.push_back(samples[i]);
        else
            train_set.push_back(samples[i]);
    }
    if (train_set.empty())
        train_set = samples;

    DecisionTree tree = train(train_set, tc);
    if (!out_path.empty()) {
        std::ofstream f(out_path);
        if (!f)
            throw std::runtime_error("cannot open " + out_path);
        f << tree.serialize();
    }
    std::cout << "nodes=" << tree.node_count() << " depth=" << tree.depth() << '\n';
    if (!hold_set.empty()) {
        int correct = 0;
        std::array<int, 3> counts{};
        for (const auto& s : hold_set) {
            if (tree.predict(s.features) == s.label)
                ++correct;
            ++counts[static_cast<size_t>(s.label)];
        }
        int majority = std::max({counts[0], counts[1], counts[2]});
        std::cout << "holdout_accuracy=" << static_cast<double>(correct) / hold_set.size()
                  << " majority_baseline=" << static_cast<double>(majority) / hold_set.size()
                  << " holdout_n=" << hold_set.size() << '\n';
    }
    return 0;
}

int cmd_predict(const std::string& tree_path, const std::string& features_s) {
    DecisionTree tree = DecisionTree::deserialize(read_file(tree_path));
    std::vector<double> vals;
    std::stringstream ss(features_s);
    std::string tok;
    while (std::getline(ss, tok, ','))
        vals.push_back(std::stod(tok));
    if (vals.size() != 4)
        throw std::runtime_error("--features needs n_threads,size,key_range,insert_pct");
    FeatureVector f{vals[0], vals[1], vals[2], vals[3]};
    std::cout << "class=" << tree.predict(f) << '\n';
    return 0;
}

// Converts a run CSV into a whitespace-separated data file for gnuplot.
int cmd_plot(const std::string& in_path, const std::string& out_path) {
    std::ifstream in(in_path);
    if (!in)
        throw std::runtime_error("cannot open " + in_path);
    std::ofstream file;
    std::ostream* out = &std::cout;
    if (!out_path.empty()) {
        file.open(out_path);
        if (!file)
            throw std::runtime_error("cannot open " + out_path);
        out = &file;
    }
    *out << "# time_s  thr_ops  mode\n# plot 'file' using 1:2 with lines\n";
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (header) {
            header = false;
            if (line.rfind("time_s", 0) == 0)
                continue;
        }
        for (char& c : line)
            if (c == ',')
                c = ' ';
        *out << line << '\n';
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"adaptive priority queue benchmark harness"};
    app.require_subcommand(1);

    // run
    auto* run = app.add_subcommand("run", "run a workload and emit per-second CSV");
    std::string impl = "smartpq", phases_path, csv_path, tree_path;
    RunConfig rcfg;
    bool full_scale = false, no_pin = false, no_spray = false, no_audit = false;
    run->add_option("--impl", impl, "oblivious|nuddle|smartpq|ffwd");
    run->add_option("--phases", phases_path, "phase file")->required();
    run->add_option("--servers", rcfg.servers, "server threads (delegated impls)");
    run->add_option("--line-size", rcfg.line_size, "cache line size: 64 or 128");
    run->add_option("--pause-iters", rcfg.pause_iters, "relax hints between ops");
    run->add_option("--seed", rcfg.seed, "op-stream seed");
    run->add_option("--csv", csv_path, "CSV output path (default stdout)");
    run->add_option("--tree", tree_path, "decision tree file (smartpq)");
    run->add_option("--decision-interval", rcfg.decision_interval_s, "classifier tick seconds");
    run->add_flag("--full-scale", full_scale, "keep full phase durations and thread counts");
    run->add_flag("--no-pin", no_pin, "skip thread pinning");
    run->add_flag("--no-spray", no_spray, "exact deleteMin on the direct path");
    run->add_flag("--no-audit", no_audit, "skip the conservation audit");

    // gen-training
    auto* gen = app.add_subcommand("gen-training", "measure both modes over a grid");
    std::string grid_s, grid_file, gen_out;
    TrainingConfig tcfg;
    gen->add_option("--grid", grid_s, "grid spec, e.g. threads=2,4;size=1K;range=1M;insert=0.5");
    gen->add_option("--grid-file", grid_file, "grid spec file");
    gen->add_option("--out", gen_out, "samples CSV path (default stdout)");
    gen->add_option("--duration", tcfg.duration_s, "seconds per mode per point");
    gen->add_option("--servers", tcfg.servers, "server threads for the aware mode");
    gen->add_option("--seed", tcfg.seed, "op-stream seed");
    gen->add_option("--threshold", tcfg.threshold, "tie threshold in ops/s");
    gen->add_option("--pause-iters", tcfg.pause_iters, "relax hints between ops");

    // train
    auto* tr = app.add_subcommand("train", "fit a decision tree from samples");
    std::string train_in, train_out;
    TrainConfig train_cfg;
    double holdout = 0.25;
    tr->add_option("--in", train_in, "samples CSV")->required();
    tr->add_option("--out", train_out, "tree file path");
    tr->add_option("--max-depth", train_cfg.max_depth, "depth cap");
    tr->add_option("--min-leaf", train_cfg.min_leaf, "min samples per leaf");
    tr->add_option("--holdout", holdout, "holdout fraction (0 disables)");

    // predict
    auto* pr = app.add_subcommand("predict", "classify one feature vector");
    std::string pr_tree, pr_features;
    pr->add_option("--tree", pr_tree, "tree file")->required();
    pr->add_option("--features", pr_features, "n_threads,size,key_range,insert_pct")->required();

    // plot
    auto* pl = app.add_subcommand("plot", "emit a gnuplot-ready data file from a run CSV");
    std::string pl_in, pl_out;
    pl->add_option("--in", pl_in, "run CSV")->required();
    pl->add_option("--out", pl_out, "data file path (default stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*run) {
            rcfg.pin_threads = !no_pin;
            rcfg.use_spray = !no_spray;
            rcfg.run_audit = !no_audit;
            return cmd_run(impl, phases_path, rcfg, csv_path, tree_path, full_scale);
        }
        if (*gen)
            return cmd_gen_training(grid_s, grid_file, gen_out, tcfg);
        if (*tr)
            return cmd_train(train_in, train_out, train_cfg, holdout);
        if (*pr)
            return cmd_predict(pr_tree, pr_features);
        if (*pl)
            return cmd_plot(pl_in, pl_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
