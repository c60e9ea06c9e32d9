#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include <json.hpp>

#include "gridcascade/case_io.hpp"
#include "gridcascade/cascade.hpp"
#include "gridcascade/datapool.hpp"
#include "gridcascade/error.hpp"
#include "gridcascade/gnn.hpp"
#include "gridcascade/influence.hpp"
#include "gridcascade/metrics.hpp"
#include "gridcascade/plot.hpp"

using namespace gridcascade;

namespace {

// Configuration problems exit with 2; runtime failures with 1.
class ConfigError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

bool g_json_logs = false;

void log_line(const std::string& level, const std::string& msg) {
    if (g_json_logs) {
        nlohmann::ordered_json j;
        j["level"] = level;
        j["msg"] = msg;
        std::cerr << j.dump() << '\n';
    } else {
        std::cerr << level << ": " << msg << '\n';
    }
}

Grid load_grid_checked(const std::string& path, bool require_capacities) {
    if (path.empty()) throw ConfigError("--grid is required");
    if (!std::filesystem::exists(path)) throw ConfigError("grid file not found: " + path);
    Grid grid = load_grid(path);
    if (require_capacities && !grid.capacities_filled()) {
        throw Error("grid '" + grid.id +
                    "' has unset branch capacities; run `parse --fill-capacities` first");
    }
    return grid;
}

DataPool load_pool_checked(const std::string& path) {
    if (path.empty()) throw ConfigError("--pool is required");
    if (!std::filesystem::exists(path)) throw ConfigError("pool file not found: " + path);
    return load_pool(path);
}

std::vector<double> default_injections(const Grid& grid, double alpha) {
    std::vector<double> inj;
    inj.reserve(grid.buses.size());
    for (const Bus& b : grid.buses) inj.push_back(alpha * b.p_default);
    return inj;
}

int auto_workers(int requested) {
    if (requested > 0) return requested;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

struct BenchRow {
    std::string method;
    double seconds_per_1000 = 0.0;
};

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

void run_parse(const std::string& grid_path, const std::string& out, bool fill) {
    Grid grid = load_grid_checked(grid_path, false);
    if (fill) grid = default_capacities(grid, default_injections(grid, 1.0));
    if (out.empty()) {
        std::cout << grid_to_json(grid).dump(2) << '\n';
    } else {
        save_grid(grid, out);
        log_line("info", "wrote " + out);
    }
}

void run_simulate(const std::string& grid_path, const std::vector<int>& fail, double alpha) {
    const Grid grid = load_grid_checked(grid_path, true);
    ActiveSet s0 = ActiveSet::all_active(grid);
    for (int idx : fail) {
        if (idx < 0 || idx >= grid.num_branches()) {
            throw Error("--fail index " + std::to_string(idx) + " outside [0, " +
                        std::to_string(grid.num_branches()) + ")");
        }
        s0.set(idx, false);
    }
    const CascadeResult r = simulate_cascade(grid, s0, default_injections(grid, alpha));
    nlohmann::ordered_json j;
    j["f"] = r.failure_step;
    j["T"] = r.length;
    std::cout << j.dump() << '\n';
}

void run_gen_pool(const std::string& grid_path, const std::string& out, int samples,
                  std::uint64_t seed, double alpha_lo, double alpha_hi, int contingency,
                  int workers, bool compress) {
    if (out.empty()) throw ConfigError("--out is required");
    if (samples <= 0) throw ConfigError("--samples must be positive");
    const Grid grid = load_grid_checked(grid_path, true);
    PoolConfig config;
    config.contingency_size = contingency;
    config.alpha_lo = alpha_lo;
    config.alpha_hi = alpha_hi;
    config.workers = auto_workers(workers);
    const DataPool pool = generate_pool(grid, samples, seed, config);
    save_pool(pool, out, compress);
    log_line("info", "wrote " + std::to_string(pool.size()) + " samples to " + out);
}

void run_split(const std::string& pool_path, double fraction, std::uint64_t seed,
               const std::string& out_train, const std::string& out_test) {
    if (out_train.empty() || out_test.empty()) {
        throw ConfigError("--out-train and --out-test are required");
    }
    const DataPool pool = load_pool_checked(pool_path);
    if (pool.samples.empty()) throw ConfigError("empty pool: " + pool_path);
    const auto [train, test] = split_pool(pool, fraction, seed);
    save_pool(train, out_train);
    save_pool(test, out_test);
    log_line("info", "split " + std::to_string(pool.size()) + " samples into " +
                         std::to_string(train.size()) + "/" + std::to_string(test.size()));
}

void run_train_gnn(const std::string& grid_path, const std::string& pool_path,
                   const std::string& out, const std::string& loss_csv, int feature_dim,
                   int averaging_steps, int horizon, int epochs, int batch, double lr,
                   std::uint64_t seed, const std::string& adjacency,
                   const std::string& init_from, int attn_hidden) {
    if (out.empty()) throw ConfigError("--out is required");
    const Grid grid = load_grid_checked(grid_path, false);
    const DataPool pool = load_pool_checked(pool_path);
    if (pool.samples.empty()) throw ConfigError("empty pool: " + pool_path);
    if (!pool.grid_id.empty() && pool.grid_id != grid.id) {
        throw ConfigError("pool was generated for grid '" + pool.grid_id + "', not '" + grid.id +
                          "'");
    }

    GnnParams params;
    EdgeAdjacency adj;
    if (!init_from.empty()) {
        if (!std::filesystem::exists(init_from)) {
            throw ConfigError("checkpoint not found: " + init_from);
        }
        params = load_gnn(init_from);
        check_grid_match(params, grid);
        adj = build_adjacency(grid, params.adjacency);
    } else {
        adj = build_adjacency(grid, adjacency_mode_from_string(adjacency));
        if (horizon <= 0) horizon = max_cascade_length(pool);
        Rng rng(seed);
        params = GnnParams::create(grid, adj, feature_dim, averaging_steps, horizon, rng,
                                   attn_hidden);
    }

    TrainConfig config;
    config.epochs = epochs;
    config.batch_size = batch;
    config.lr = lr;
    config.seed = seed;
    log_line("info", "training " + std::to_string(params.param_count()) + " parameters for " +
                         std::to_string(epochs) + " epochs on " + std::to_string(pool.size()) +
                         " samples");
    const TrainResult result = train_gnn(params, adj, grid, pool, config);
    if (result.skipped_steps > 0) {
        log_line("warn", std::to_string(result.skipped_steps) +
                             " steps skipped due to non-finite gradients");
    }
    save_gnn(params, out);

    const std::string curve_path = loss_csv.empty() ? out + ".loss.csv" : loss_csv;
    std::ofstream curve(curve_path);
    if (!curve) throw Error("cannot write " + curve_path);
    curve << "epoch,loss\n";
    for (std::size_t i = 0; i < result.loss_curve.size(); ++i) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.17g", result.loss_curve[i]);
        curve << i << ',' << buf << '\n';
    }
    log_line("info", "final epoch loss " + std::to_string(result.loss_curve.back()) +
                         "; checkpoint at " + out);
}

void run_train_influence(const std::string& grid_path, const std::string& pool_path,
                         const std::string& out, double ridge) {
    if (out.empty()) throw ConfigError("--out is required");
    const Grid grid = load_grid_checked(grid_path, false);
    const DataPool pool = load_pool_checked(pool_path);
    if (pool.samples.empty()) throw ConfigError("empty pool: " + pool_path);
    if (!pool.grid_id.empty() && pool.grid_id != grid.id) {
        throw ConfigError("pool was generated for grid '" + pool.grid_id + "', not '" + grid.id +
                          "'");
    }
    const InfluenceParams params = fit_influence(grid, pool, ridge);
    save_influence(params, out);
    log_line("info", "influence model for alpha " + std::to_string(params.alpha_tag) +
                         " written to " + out);
}

void run_eval(const std::string& grid_path, const std::string& pool_path,
              const std::string& train_pool_path, const std::string& gnn_path,
              const std::string& influence_path, bool oracle, const std::string& out_dir,
              int bins, double alpha_lo, double alpha_hi, bool force, int batch) {
    if (out_dir.empty()) throw ConfigError("--out is required");
    const int modes = (gnn_path.empty() ? 0 : 1) + (influence_path.empty() ? 0 : 1) + (oracle ? 1 : 0);
    if (modes != 1) throw ConfigError("choose exactly one of --model, --influence, --oracle");

    const Grid grid = load_grid_checked(grid_path, false);
    const DataPool pool = load_pool_checked(pool_path);
    if (pool.samples.empty()) throw ConfigError("empty pool: " + pool_path);
    if (!pool.grid_id.empty() && pool.grid_id != grid.id) {
        throw ConfigError("pool was generated for grid '" + pool.grid_id + "', not '" + grid.id +
                          "'");
    }
    DataPool freq_pool = pool;
    if (!train_pool_path.empty()) {
        freq_pool = load_pool_checked(train_pool_path);
    } else {
        log_line("warn", "no --train-pool given; branch frequencies come from the eval pool");
    }

    std::vector<CascadePrediction> preds;
    std::string model_id;
    if (oracle) {
        model_id = "oracle";
        for (const auto& s : pool.samples) preds.push_back({s.failure_step, s.length});
    } else if (!gnn_path.empty()) {
        if (!std::filesystem::exists(gnn_path)) throw ConfigError("checkpoint not found: " + gnn_path);
        const GnnParams params = load_gnn(gnn_path);
        check_grid_match(params, grid);
        const EdgeAdjacency adj = build_adjacency(grid, params.adjacency);
        preds = predict_gnn(params, adj, grid, pool, batch);
        model_id = "gnn";
    } else {
        if (!std::filesystem::exists(influence_path)) {
            throw ConfigError("influence params not found: " + influence_path);
        }
        const InfluenceParams params = load_influence(influence_path);
        if (params.grid_id != grid.id) {
            throw ConfigError("influence params were fitted on grid '" + params.grid_id +
                              "', not '" + grid.id + "'");
        }
        for (const auto& s : pool.samples) {
            if (s.alpha != params.alpha_tag && !force) {
                throw ConfigError(
                    "pool alpha " + std::to_string(s.alpha) + " differs from the fitted alpha " +
                    std::to_string(params.alpha_tag) + "; pass --force to evaluate anyway");
            }
        }
        preds = predict_influence_pool(params, pool);
        model_id = "influence";
    }

    const Binning binning{alpha_lo, alpha_hi, bins};
    const MetricsReport report = evaluate_predictions(preds, pool, freq_pool, model_id, binning);
    write_metrics_csv(report, out_dir);

    auto overall = [](const std::vector<std::optional<BinStat>>& stats) {
        double total = 0.0;
        long count = 0;
        for (const auto& s : stats) {
            if (s) {
                total += s->value * s->count;
                count += s->count;
            }
        }
        return count == 0 ? 0.0 : total / count;
    };
    nlohmann::ordered_json summary;
    summary["model"] = model_id;
    summary["samples"] = pool.size();
    summary["l_size"] = overall(report.size_error);
    summary["l_state"] = overall(report.state_error);
    summary["l_failure_step"] = overall(report.step_error);
    std::cout << summary.dump() << '\n';
    log_line("info", "metric CSVs written to " + out_dir);
}

void run_bench(const std::string& grid_path, const std::string& pool_path,
               const std::string& gnn_path, const std::string& influence_path, int samples,
               int batch) {
    const Grid grid = load_grid_checked(grid_path, true);
    DataPool pool = load_pool_checked(pool_path);
    if (pool.samples.empty()) throw ConfigError("empty pool: " + pool_path);
    if (gnn_path.empty() || influence_path.empty()) {
        throw ConfigError("--model and --influence are both required");
    }
    const GnnParams gnn = load_gnn(gnn_path);
    check_grid_match(gnn, grid);
    const EdgeAdjacency adj = build_adjacency(grid, gnn.adjacency);
    const InfluenceParams influence = load_influence(influence_path);
    if (influence.grid_id != grid.id) {
        throw ConfigError("influence params were fitted on grid '" + influence.grid_id + "'");
    }

    if (samples > 0 && samples < pool.size()) pool.samples.resize(samples);
    const double n = pool.size();

    auto t0 = std::chrono::steady_clock::now();
    {
        CascadeSimulator sim(grid);
        for (const auto& s : pool.samples) {
            ActiveSet s0;
            s0.mask = s.contingency;
            volatile int sink = sim.run(s0, s.injections).length;
            (void)sink;
        }
    }
    const double cfs = seconds_since(t0) / n * 1000.0;

    t0 = std::chrono::steady_clock::now();
    {
        for (const auto& s : pool.samples) {
            ActiveSet s0;
            s0.mask = s.contingency;
            volatile int sink = predict_influence(influence, s0).length;
            (void)sink;
        }
    }
    const double inf = seconds_since(t0) / n * 1000.0;

    t0 = std::chrono::steady_clock::now();
    {
        volatile std::size_t sink = predict_gnn(gnn, adj, grid, pool, batch).size();
        (void)sink;
    }
    const double gnn_time = seconds_since(t0) / n * 1000.0;

    const std::vector<BenchRow> rows = {
        {"cfs-oracle", cfs}, {"influence", inf}, {"gnn", gnn_time}};
    std::printf("%-12s %16s %12s\n", "method", "sec_per_1000", "speedup");
    for (const auto& row : rows) {
        std::printf("%-12s %16.6f %12.2f\n", row.method.c_str(), row.seconds_per_1000,
                    cfs / row.seconds_per_1000);
    }
}

void run_plot(const std::string& report_dir, const std::string& compare_dir,
              const std::string& label, const std::string& compare_label,
              const std::string& out_dir) {
    if (report_dir.empty()) throw ConfigError("--report is required");
    const std::string out = out_dir.empty() ? report_dir : out_dir;
    std::filesystem::create_directories(out);

    struct Spec {
        const char* csv;
        const char* svg;
        const char* title;
        const char* ylabel;
        bool branch;
    };
    const Spec specs[] = {
        {"l_size.csv", "l_size.svg", "Failure size error", "error rate", false},
        {"l_state.csv", "l_state.svg", "Final state error", "error rate", false},
        {"l_failure_step.csv", "l_failure_step.svg", "Failure step error", "generations", false},
        {"branch_state_error.csv", "branch_state_error.svg", "Branch final state error",
         "error rate", true},
        {"branch_step_error.csv", "branch_step_error.svg", "Branch failure step error",
         "generations", true},
    };
    const Binning freq_bins{-0.05, 1.05, 11};
    for (const auto& spec : specs) {
        const std::string csv = report_dir + "/" + spec.csv;
        if (!std::filesystem::exists(csv)) {
            throw ConfigError("missing metric file: " + csv);
        }
        std::vector<PlotSeries> series;
        if (spec.branch) {
            series.push_back({label, read_branch_csv_binned(csv, freq_bins)});
            if (!compare_dir.empty()) {
                series.push_back(
                    {compare_label, read_branch_csv_binned(compare_dir + "/" + spec.csv, freq_bins)});
            }
        } else {
            series.push_back({label, read_bin_csv(csv)});
            if (!compare_dir.empty()) {
                series.push_back({compare_label, read_bin_csv(compare_dir + "/" + spec.csv)});
            }
        }
        write_svg_plot(out + "/" + spec.svg, spec.title,
                       spec.branch ? "branch failure frequency" : "load scaling", spec.ylabel,
                       series);
    }
    log_line("info", "plots written to " + out);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"DC power-grid cascade simulation, datasets, and failure-step prediction"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string grid_path, out_path;
    std::uint64_t seed = 0;
    int workers = 0;
    app.add_option("--grid", grid_path, "grid file (.json native schema or MATPOWER .m)");
    app.add_option("--seed", seed, "RNG seed");
    app.add_option("--out", out_path, "output path");
    app.add_option("--workers", workers, "worker threads (0 = hardware)");
    app.add_flag("--json-logs", g_json_logs, "emit log lines as JSON");

    auto* parse_cmd = app.add_subcommand("parse", "parse and validate a grid, emit native JSON");
    bool fill = false;
    parse_cmd->add_flag("--fill-capacities", fill, "fill unset capacities from 2x base flows");

    auto* sim_cmd = app.add_subcommand("simulate", "run one cascade and print failure steps");
    std::vector<int> fail;
    double alpha = 1.0;
    sim_cmd->add_option("--fail", fail, "branch indices failed at t0");
    sim_cmd->add_option("--alpha", alpha, "load scaling factor");

    auto* gen_cmd = app.add_subcommand("gen-pool", "simulate a cascade dataset");
    int samples = 1000;
    double alpha_lo = 1.0, alpha_hi = 2.0;
    int contingency = 2;
    bool compress = false;
    gen_cmd->add_option("-M,--samples", samples, "number of samples");
    gen_cmd->add_option("--alpha-lo", alpha_lo, "lower load scaling bound");
    gen_cmd->add_option("--alpha-hi", alpha_hi, "upper load scaling bound");
    gen_cmd->add_option("-k,--contingency", contingency, "initially failed branch count");
    gen_cmd->add_flag("--compress", compress, "gzip the output");

    auto* split_cmd = app.add_subcommand("split", "split a pool into train and test");
    std::string pool_path, out_train, out_test;
    double fraction = 0.9;
    split_cmd->add_option("--pool", pool_path, "input pool");
    split_cmd->add_option("--fraction", fraction, "train fraction");
    split_cmd->add_option("--out-train", out_train, "train output");
    split_cmd->add_option("--out-test", out_test, "test output");

    auto* train_cmd = app.add_subcommand("train-gnn", "train the failure-step predictor");
    std::string train_pool_file, loss_csv, adjacency = "directed", init_from;
    int feature_dim = 32, averaging_steps = 10, horizon = 0, epochs = 50, batch = 64;
    int attn_hidden = 0;
    double lr = 1e-3;
    train_cmd->add_option("--pool", train_pool_file, "training pool");
    train_cmd->add_option("--init-from", init_from, "warm-start from an existing checkpoint");
    train_cmd->add_option("--attn-hidden", attn_hidden,
                          "attention hidden width (0 = default 2|E|)");
    train_cmd->add_option("--loss-csv", loss_csv, "loss curve output (default <out>.loss.csv)");
    train_cmd->add_option("-L,--feature-dim", feature_dim, "hidden feature width");
    train_cmd->add_option("-K,--averaging-steps", averaging_steps, "neighborhood averaging rounds");
    train_cmd->add_option("-T,--horizon", horizon, "class horizon (0 = max pool length)");
    train_cmd->add_option("--epochs", epochs, "training epochs");
    train_cmd->add_option("--batch", batch, "minibatch size");
    train_cmd->add_option("--lr", lr, "Adam learning rate");
    train_cmd->add_option("--adjacency", adjacency, "edge adjacency rule: directed|undirected")
        ->check(CLI::IsMember({"directed", "undirected"}));

    auto* train_inf_cmd = app.add_subcommand("train-influence", "fit the influence baseline");
    std::string inf_pool_file;
    double ridge = 1e-3;
    train_inf_cmd->add_option("--pool", inf_pool_file, "single-alpha training pool");
    train_inf_cmd->add_option("--ridge", ridge, "ridge coefficient");

    auto* eval_cmd = app.add_subcommand("eval", "evaluate predictions and write metric CSVs");
    std::string eval_pool, eval_train_pool, eval_gnn, eval_influence;
    bool oracle = false, force = false;
    int bins = 21, eval_batch = 256;
    double bins_lo = 1.0, bins_hi = 2.0;
    eval_cmd->add_option("--pool", eval_pool, "evaluation pool");
    eval_cmd->add_option("--train-pool", eval_train_pool, "pool for branch failure frequencies");
    eval_cmd->add_option("--model", eval_gnn, "gnn checkpoint");
    eval_cmd->add_option("--influence", eval_influence, "influence params");
    eval_cmd->add_flag("--oracle", oracle, "score the oracle against itself");
    eval_cmd->add_flag("--force", force, "evaluate influence despite an alpha mismatch");
    eval_cmd->add_option("--bins", bins, "alpha bins");
    eval_cmd->add_option("--bins-lo", bins_lo, "alpha binning lower edge");
    eval_cmd->add_option("--bins-hi", bins_hi, "alpha binning upper edge");
    eval_cmd->add_option("--batch", eval_batch, "gnn inference batch size");

    auto* bench_cmd = app.add_subcommand("bench", "time oracle, influence, and gnn prediction");
    std::string bench_pool, bench_gnn, bench_influence;
    int bench_samples = 1000, bench_batch = 512;
    bench_cmd->add_option("--pool", bench_pool, "pool with benchmark samples");
    bench_cmd->add_option("--model", bench_gnn, "gnn checkpoint");
    bench_cmd->add_option("--influence", bench_influence, "influence params");
    bench_cmd->add_option("--samples", bench_samples, "samples to time (0 = whole pool)");
    bench_cmd->add_option("--batch", bench_batch, "gnn inference batch size");

    auto* plot_cmd = app.add_subcommand("plot", "render metric CSVs as SVG line plots");
    std::string report_dir, compare_dir, label = "gnn", compare_label = "influence";
    plot_cmd->add_option("--report", report_dir, "metrics directory from eval");
    plot_cmd->add_option("--compare", compare_dir, "second metrics directory to overlay");
    plot_cmd->add_option("--label", label, "series label");
    plot_cmd->add_option("--compare-label", compare_label, "overlay series label");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (parse_cmd->parsed()) {
            run_parse(grid_path, out_path, fill);
        } else if (sim_cmd->parsed()) {
            run_simulate(grid_path, fail, alpha);
        } else if (gen_cmd->parsed()) {
            run_gen_pool(grid_path, out_path, samples, seed, alpha_lo, alpha_hi, contingency,
                         workers, compress);
        } else if (split_cmd->parsed()) {
            run_split(pool_path, fraction, seed, out_train, out_test);
        } else if (train_cmd->parsed()) {
            run_train_gnn(grid_path, train_pool_file, out_path, loss_csv, feature_dim,
                          averaging_steps, horizon, epochs, batch, lr, seed, adjacency,
                          init_from, attn_hidden);
        } else if (train_inf_cmd->parsed()) {
            run_train_influence(grid_path, inf_pool_file, out_path, ridge);
        } else if (eval_cmd->parsed()) {
            run_eval(grid_path, eval_pool, eval_train_pool, eval_gnn, eval_influence, oracle,
                     out_path, bins, bins_lo, bins_hi, force, eval_batch);
        } else if (bench_cmd->parsed()) {
            run_bench(grid_path, bench_pool, bench_gnn, bench_influence, bench_samples,
                      bench_batch);
        } else if (plot_cmd->parsed()) {
            run_plot(report_dir, compare_dir, label, compare_label, out_path);
        }
    } catch (const ConfigError& e) {
        log_line("error", e.what());
        return 2;
    } catch (const std::exception& e) {
        log_line("error", e.what());
        return 1;
    }
    return 0;
}
