#include "gridcascade/case_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "gridcascade/cascade.hpp"
#include "gridcascade/error.hpp"
#include "gridcascade/powerflow.hpp"

namespace gridcascade {

namespace {

std::string strip_comment(const std::string& line) {
    const std::size_t pos = line.find('%');
    return pos == std::string::npos ? line : line.substr(0, pos);
}

bool is_blank(const std::string& s) {
    return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

std::vector<double> parse_row(const std::string& row, int line_no) {
    std::vector<double> values;
    const char* p = row.c_str();
    while (*p) {
        while (*p && (std::isspace(static_cast<unsigned char>(*p)) || *p == ',')) ++p;
        if (!*p) break;
        char* end = nullptr;
        const double v = std::strtod(p, &end);
        if (end == p) {
            throw ParseError("line " + std::to_string(line_no) + ": expected a number, got '" +
                             std::string(p).substr(0, 8) + "'");
        }
        values.push_back(v);
        p = end;
    }
    return values;
}

struct MatrixBlock {
    std::vector<std::vector<double>> rows;
    std::vector<int> row_lines;
};

}  // namespace

Grid parse_matpower_case(const std::string& text) {
    Grid grid;
    grid.id = "case";
    std::map<std::string, MatrixBlock> blocks;

    std::istringstream in(text);
    std::string raw;
    int line_no = 0;
    std::string open_block;  // matrix currently being read
    bool seen_base_mva = false;

    while (std::getline(in, raw)) {
        ++line_no;
        std::string line = strip_comment(raw);
        if (is_blank(line)) continue;

        if (!open_block.empty()) {
            const std::size_t close = line.find(']');
            std::string body = close == std::string::npos ? line : line.substr(0, close);
            std::stringstream rows(body);
            std::string row;
            while (std::getline(rows, row, ';')) {
                if (is_blank(row)) continue;
                blocks[open_block].rows.push_back(parse_row(row, line_no));
                blocks[open_block].row_lines.push_back(line_no);
            }
            if (close != std::string::npos) open_block.clear();
            continue;
        }

        std::size_t pos = line.find("function");
        if (pos != std::string::npos) {
            const std::size_t eq = line.find('=', pos);
            if (eq != std::string::npos) {
                std::string name = line.substr(eq + 1);
                name.erase(std::remove_if(name.begin(), name.end(),
                                          [](unsigned char c) { return std::isspace(c) || c == ';'; }),
                           name.end());
                if (!name.empty()) grid.id = name;
            }
            continue;
        }

        pos = line.find("mpc.");
        if (pos == std::string::npos) continue;
        std::size_t key_end = pos + 4;
        while (key_end < line.size() &&
               (std::isalnum(static_cast<unsigned char>(line[key_end])) || line[key_end] == '_')) {
            ++key_end;
        }
        const std::string key = line.substr(pos + 4, key_end - pos - 4);
        const std::size_t eq = line.find('=', key_end);
        if (eq == std::string::npos) continue;
        std::string rhs = line.substr(eq + 1);

        if (key == "baseMVA") {
            char* end = nullptr;
            const double v = std::strtod(rhs.c_str(), &end);
            if (end == rhs.c_str()) {
                throw ParseError("line " + std::to_string(line_no) + ": bad baseMVA value");
            }
            grid.base_mva = v;
            seen_base_mva = true;
            continue;
        }
        if (key != "bus" && key != "gen" && key != "branch") continue;  // gencost etc.

        const std::size_t open = rhs.find('[');
        if (open == std::string::npos) {
            throw ParseError("line " + std::to_string(line_no) + ": mpc." + key +
                             " is not a matrix block");
        }
        std::string body = rhs.substr(open + 1);
        const std::size_t close = body.find(']');
        if (close != std::string::npos) body = body.substr(0, close);
        std::stringstream rows(body);
        std::string row;
        while (std::getline(rows, row, ';')) {
            if (is_blank(row)) continue;
            blocks[key].rows.push_back(parse_row(row, line_no));
            blocks[key].row_lines.push_back(line_no);
        }
        if (close == std::string::npos) open_block = key;
    }

    if (!open_block.empty()) {
        throw ParseError("mpc." + open_block + " matrix is never closed with ']'");
    }
    for (const char* required : {"bus", "branch", "gen"}) {
        if (!blocks.count(required)) {
            throw ParseError(std::string("missing mpc.") + required + " block");
        }
    }
    if (!seen_base_mva) grid.base_mva = 100.0;

    std::unordered_map<int, double> gen_sum;
    std::unordered_set<int> gen_buses;
    const MatrixBlock& gen = blocks["gen"];
    for (std::size_t r = 0; r < gen.rows.size(); ++r) {
        if (gen.rows[r].size() < 2) {
            throw ParseError("line " + std::to_string(gen.row_lines[r]) +
                             ": gen row needs at least 2 columns (bus, Pg)");
        }
        const int bus = static_cast<int>(gen.rows[r][0]);
        gen_sum[bus] += gen.rows[r][1];
        gen_buses.insert(bus);
    }

    const MatrixBlock& bus = blocks["bus"];
    std::unordered_set<int> bus_ids;
    for (std::size_t r = 0; r < bus.rows.size(); ++r) {
        if (bus.rows[r].size() < 3) {
            throw ParseError("line " + std::to_string(bus.row_lines[r]) +
                             ": bus row needs at least 3 columns (id, type, Pd)");
        }
        Bus b;
        b.id = static_cast<int>(bus.rows[r][0]);
        const int type = static_cast<int>(bus.rows[r][1]);
        const double pd = bus.rows[r][2];
        const double pg = gen_sum.count(b.id) ? gen_sum[b.id] : 0.0;
        b.p_default = pg - pd;
        b.is_generator = gen_buses.count(b.id) > 0 || type == 2 || type == 3;
        if (!bus_ids.insert(b.id).second) {
            throw ParseError("line " + std::to_string(bus.row_lines[r]) + ": duplicate bus id " +
                             std::to_string(b.id));
        }
        grid.buses.push_back(b);
    }
    for (int gb : gen_buses) {
        if (!bus_ids.count(gb)) {
            throw ParseError("gen row references unknown bus " + std::to_string(gb));
        }
    }

    const MatrixBlock& branch = blocks["branch"];
    for (std::size_t r = 0; r < branch.rows.size(); ++r) {
        const std::vector<double>& row = branch.rows[r];
        if (row.size() < 6) {
            throw ParseError("line " + std::to_string(branch.row_lines[r]) +
                             ": branch row needs at least 6 columns (f, t, r, x, b, rateA)");
        }
        if (row.size() >= 11 && row[10] == 0.0) continue;  // out of service
        Branch br;
        br.index = grid.num_branches();
        br.from_bus = static_cast<int>(row[0]);
        br.to_bus = static_cast<int>(row[1]);
        br.reactance = row[3];
        br.capacity = row[5];
        if (!bus_ids.count(br.from_bus)) {
            throw ParseError("line " + std::to_string(branch.row_lines[r]) + ": unknown bus " +
                             std::to_string(br.from_bus));
        }
        if (!bus_ids.count(br.to_bus)) {
            throw ParseError("line " + std::to_string(branch.row_lines[r]) + ": unknown bus " +
                             std::to_string(br.to_bus));
        }
        if (!(br.reactance > 0.0)) {
            throw ParseError("line " + std::to_string(branch.row_lines[r]) +
                             ": non-positive reactance on branch " + std::to_string(br.index));
        }
        if (br.capacity < 0.0) {
            throw ParseError("line " + std::to_string(branch.row_lines[r]) +
                             ": negative rateA on branch " + std::to_string(br.index));
        }
        grid.branches.push_back(br);
    }

    validate_grid(grid);
    return grid;
}

nlohmann::ordered_json grid_to_json(const Grid& grid) {
    nlohmann::ordered_json j;
    j["schema"] = "gridcascade.grid/1";
    j["id"] = grid.id;
    j["base_mva"] = grid.base_mva;
    j["buses"] = nlohmann::ordered_json::array();
    for (const Bus& b : grid.buses) {
        j["buses"].push_back({{"id", b.id}, {"p_default", b.p_default}, {"is_gen", b.is_generator}});
    }
    j["branches"] = nlohmann::ordered_json::array();
    for (const Branch& br : grid.branches) {
        j["branches"].push_back(
            {{"from", br.from_bus}, {"to", br.to_bus}, {"x", br.reactance}, {"cap", br.capacity}});
    }
    return j;
}

Grid grid_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw IoError("grid json: top level is not an object");
    if (!j.contains("schema") || !j["schema"].is_string()) {
        throw IoError("grid json: missing 'schema'");
    }
    const std::string schema = j["schema"].get<std::string>();
    if (schema != "gridcascade.grid/1") {
        throw IoError("grid json: unsupported schema '" + schema + "'");
    }
    for (const char* key : {"id", "base_mva", "buses", "branches"}) {
        if (!j.contains(key)) throw IoError(std::string("grid json: missing '") + key + "'");
    }
    Grid grid;
    grid.id = j["id"].get<std::string>();
    grid.base_mva = j["base_mva"].get<double>();
    for (const auto& b : j["buses"]) {
        for (const char* key : {"id", "p_default", "is_gen"}) {
            if (!b.contains(key)) throw IoError(std::string("grid json: bus missing '") + key + "'");
        }
        grid.buses.push_back(
            {b["id"].get<int>(), b["p_default"].get<double>(), b["is_gen"].get<bool>()});
    }
    for (const auto& br : j["branches"]) {
        for (const char* key : {"from", "to", "x", "cap"}) {
            if (!br.contains(key)) {
                throw IoError(std::string("grid json: branch missing '") + key + "'");
            }
        }
        grid.branches.push_back({grid.num_branches(), br["from"].get<int>(), br["to"].get<int>(),
                                 br["x"].get<double>(), br["cap"].get<double>()});
    }
    validate_grid(grid);
    return grid;
}

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

Grid load_grid(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open grid file: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    if (ends_with(path, ".m") || ends_with(path, ".case")) {
        return parse_matpower_case(buf.str());
    }
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(buf.str());
    } catch (const nlohmann::json::parse_error& e) {
        throw IoError("grid file " + path + ": " + e.what());
    }
    return grid_from_json(j);
}

void save_grid(const Grid& grid, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write grid file: " + path);
    out << grid_to_json(grid).dump(2) << '\n';
}

Grid default_capacities(Grid grid, const std::vector<double>& base_injections, double floor_ratio) {
    validate_grid(grid);
    if (grid.capacities_filled()) return grid;
    if (static_cast<int>(base_injections.size()) != grid.num_buses()) {
        throw ValidationError("default_capacities: injection vector length does not match bus count");
    }

    // One rebalanced DC solve on the intact grid.
    std::vector<int> all_buses;
    all_buses.reserve(grid.buses.size());
    for (const Bus& b : grid.buses) all_buses.push_back(b.id);
    std::sort(all_buses.begin(), all_buses.end());
    const std::vector<double> balanced = rebalance_island(all_buses, base_injections, grid);

    int slack = all_buses.front();
    double best = -1.0;
    for (const Bus& b : grid.buses) {
        const double p = base_injections[grid.bus_position(b.id)];
        if (p > best || (p == best && b.id < slack)) {
            best = p;
            slack = b.id;
        }
    }
    const FlowSolution flows =
        solve_dc(grid, ActiveSet::all_active(grid), balanced, slack, all_buses);

    double max_flow = 0.0;
    for (double g : flows.flow) max_flow = std::max(max_flow, std::abs(g));
    const double zero_tol = 1e-9 * std::max(1.0, max_flow);

    std::vector<double> positive;
    for (Branch& br : grid.branches) {
        if (br.capacity > 0.0) {
            positive.push_back(br.capacity);
            continue;
        }
        const double g = std::abs(flows.flow[br.index]);
        if (g > zero_tol) {
            br.capacity = 2.0 * g;
            positive.push_back(br.capacity);
        }
    }
    if (positive.empty()) {
        throw NumericsError("default_capacities: every branch carries zero flow");
    }
    std::sort(positive.begin(), positive.end());
    const std::size_t n = positive.size();
    const double median =
        n % 2 == 1 ? positive[n / 2] : 0.5 * (positive[n / 2 - 1] + positive[n / 2]);
    const double floor_cap = floor_ratio * median;
    for (Branch& br : grid.branches) {
        if (br.capacity <= 0.0) br.capacity = floor_cap;
    }

    validate_grid(grid, /*require_capacities=*/true);
    return grid;
}

}  // namespace gridcascade
