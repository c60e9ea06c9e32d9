#include "gridcascade/datapool.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>
#include <zlib.h>

#include "gridcascade/error.hpp"

namespace gridcascade {

std::string to_string(SplitTag tag) {
    switch (tag) {
        case SplitTag::train: return "train";
        case SplitTag::test: return "test";
        default: return "all";
    }
}

SplitTag split_tag_from_string(const std::string& s) {
    if (s == "train") return SplitTag::train;
    if (s == "test") return SplitTag::test;
    if (s == "all") return SplitTag::all;
    throw IoError("unknown split tag '" + s + "'");
}

ActiveSet random_contingency(Rng& rng, const Grid& grid, int k) {
    if (k < 0 || k >= grid.num_branches()) {
        throw ValidationError("random_contingency: k = " + std::to_string(k) +
                              " must be in [0, |E|) with |E| = " +
                              std::to_string(grid.num_branches()));
    }
    ActiveSet s0 = ActiveSet::all_active(grid);
    for (int idx : rng.choose(grid.num_branches(), k)) s0.set(idx, false);
    return s0;
}

DataPool generate_pool(const Grid& grid, int num_samples, std::uint64_t seed,
                       const PoolConfig& config) {
    validate_grid(grid, /*require_capacities=*/true);
    if (num_samples < 0) throw ValidationError("generate_pool: negative sample count");

    DataPool pool;
    pool.grid_id = grid.id;
    pool.seed = seed;
    pool.split = SplitTag::all;
    pool.samples.resize(static_cast<std::size_t>(num_samples));

    const int workers = std::max(1, config.workers);
    std::atomic<int> next{0};
    std::atomic<bool> failed{false};
    std::string first_error;
    std::mutex error_mutex;

    auto worker = [&]() {
        CascadeSimulator sim(grid, config.slack_policy);
        std::vector<double> injections(grid.buses.size());
        while (true) {
            const int i = next.fetch_add(1);
            if (i >= num_samples || failed.load()) break;
            try {
                Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(i));
                const ActiveSet s0 = random_contingency(rng, grid, config.contingency_size);
                const double alpha = rng.uniform(config.alpha_lo, config.alpha_hi);
                for (std::size_t v = 0; v < injections.size(); ++v) {
                    injections[v] = alpha * grid.buses[v].p_default;
                }
                CascadeResult r = sim.run(s0, injections);
                CascadeSample& sample = pool.samples[static_cast<std::size_t>(i)];
                sample.contingency = s0.mask;
                sample.alpha = alpha;
                sample.injections = injections;
                sample.failure_step = std::move(r.failure_step);
                sample.length = r.length;
            } catch (const std::exception& e) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!failed.exchange(true)) {
                    first_error = "sample " + std::to_string(i) + ": " + e.what();
                }
                break;
            }
        }
    };

    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        for (int w = 0; w < workers; ++w) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
    }
    if (failed.load()) throw NumericsError("generate_pool: " + first_error);
    return pool;
}

std::pair<DataPool, DataPool> split_pool(const DataPool& pool, double train_fraction,
                                         std::uint64_t seed) {
    if (pool.samples.empty()) throw ValidationError("split_pool: empty pool");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw ValidationError("split_pool: train fraction must be in (0, 1)");
    }
    const int m = pool.size();
    const int train_size = static_cast<int>(std::floor(train_fraction * m));

    std::vector<int> order(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) order[static_cast<std::size_t>(i)] = i;
    Rng rng(seed);
    rng.shuffle(order);

    DataPool train{pool.grid_id, pool.seed, SplitTag::train, {}};
    DataPool test{pool.grid_id, pool.seed, SplitTag::test, {}};
    train.samples.reserve(static_cast<std::size_t>(train_size));
    test.samples.reserve(static_cast<std::size_t>(m - train_size));
    for (int i = 0; i < m; ++i) {
        const CascadeSample& s = pool.samples[static_cast<std::size_t>(order[i])];
        (i < train_size ? train : test).samples.push_back(s);
    }
    return {std::move(train), std::move(test)};
}

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

void write_text(const std::string& path, const std::string& text, bool compress) {
    if (compress) {
        gzFile gz = gzopen(path.c_str(), "wb");
        if (!gz) throw IoError("cannot open for writing: " + path);
        const int written = gzwrite(gz, text.data(), static_cast<unsigned>(text.size()));
        gzclose(gz);
        if (written != static_cast<int>(text.size())) throw IoError("short gzip write: " + path);
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << text;
}

std::string read_text(const std::string& path) {
    if (ends_with(path, ".gz")) {
        gzFile gz = gzopen(path.c_str(), "rb");
        if (!gz) throw IoError("cannot open: " + path);
        std::string text;
        char buf[1 << 16];
        int n;
        while ((n = gzread(gz, buf, sizeof buf)) > 0) text.append(buf, static_cast<std::size_t>(n));
        const bool bad = n < 0;
        gzclose(gz);
        if (bad) throw IoError("gzip read failed: " + path);
        return text;
    }
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

}  // namespace

void save_pool(const DataPool& pool, const std::string& path, bool compress) {
    std::string text;
    {
        nlohmann::ordered_json header;
        header["schema"] = "gridcascade.pool/1";
        header["grid_id"] = pool.grid_id;
        header["seed"] = pool.seed;
        header["split"] = to_string(pool.split);
        text += header.dump();
        text += '\n';
    }
    for (int i = 0; i < pool.size(); ++i) {
        const CascadeSample& s = pool.samples[static_cast<std::size_t>(i)];
        nlohmann::ordered_json line;
        line["i"] = i;
        line["alpha"] = s.alpha;
        line["s0"] = s.contingency;
        line["p"] = s.injections;
        line["f"] = s.failure_step;
        line["T"] = s.length;
        text += line.dump();
        text += '\n';
    }
    write_text(path, text, compress || ends_with(path, ".gz"));
}

DataPool load_pool(const std::string& path) {
    const std::string text = read_text(path);
    DataPool pool;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
        if (!have_header) {
            if (!j.contains("schema") || j["schema"] != "gridcascade.pool/1") {
                throw IoError(path + ":1: missing or unsupported pool schema");
            }
            pool.grid_id = j.value("grid_id", std::string{});
            pool.seed = j.value("seed", std::uint64_t{0});
            pool.split = split_tag_from_string(j.value("split", std::string{"all"}));
            have_header = true;
            continue;
        }
        for (const char* key : {"alpha", "s0", "p", "f", "T"}) {
            if (!j.contains(key)) {
                throw ParseError(path + ":" + std::to_string(line_no) + ": sample missing '" +
                                 key + "'");
            }
        }
        CascadeSample s;
        s.alpha = j["alpha"].get<double>();
        s.contingency = j["s0"].get<std::vector<std::uint8_t>>();
        s.injections = j["p"].get<std::vector<double>>();
        s.failure_step = j["f"].get<std::vector<int>>();
        s.length = j["T"].get<int>();
        pool.samples.push_back(std::move(s));
    }
    if (!have_header) {
        std::cerr << "warning: " << path << " is empty; returning an empty pool\n";
    }
    return pool;
}

}  // namespace gridcascade
