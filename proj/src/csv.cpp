#include "dcmg/csv.hpp"

#include "dcmg/errors.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace dcmg {

namespace {

void add_series(std::vector<std::string>& cols, const char* stem, int n, const char* unit) {
    for (int i = 1; i <= n; ++i) cols.push_back(std::string(stem) + "_" + std::to_string(i) + "[" + unit + "]");
}

[[noreturn]] void io_fail(const std::filesystem::path& p) {
    throw std::runtime_error(p.string() + ": " + std::strerror(errno));
}

std::string quote(const std::string& s) {
    if (s.find_first_of(",\"") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

}  // namespace

std::vector<std::string> csv_columns(int n_gens, int n_lines, int n_buses) {
    std::vector<std::string> cols{"t[s]"};
    add_series(cols, "V_gen", n_gens, "V");
    add_series(cols, "I_G", n_gens, "A");
    add_series(cols, "I_E", n_lines, "A");
    add_series(cols, "V_N", n_buses, "V");
    add_series(cols, "lambda", n_gens, "$/A");
    add_series(cols, "x_c", n_gens, "$/A");
    add_series(cols, "u", n_gens, "V");
    add_series(cols, "margin", n_buses, "S");
    for (const char* c : {"wavg_V[V]", "lambda_spread[$/A]", "H[J]", "H_t[J]", "dH_t[W]"}) cols.push_back(c);
    return cols;
}

void emit_csv(const Trajectory& traj, const std::filesystem::path& csv_path,
              const std::filesystem::path& events_path) {
    if (traj.samples.empty()) throw std::invalid_argument("emit_csv: trajectory has no samples");
    std::FILE* f = std::fopen(csv_path.string().c_str(), "w");
    if (!f) io_fail(csv_path);
    const auto cols = csv_columns(traj.n_gens, traj.n_lines, traj.n_buses);
    for (std::size_t c = 0; c < cols.size(); ++c) std::fprintf(f, "%s%s", c ? "," : "", cols[c].c_str());
    std::fputc('\n', f);
    auto put = [f](double v) { std::fprintf(f, ",%.17g", v); };
    auto put_vec = [&](const Eigen::VectorXd& v) {
        for (Eigen::Index i = 0; i < v.size(); ++i) put(v[i]);
    };
    for (const auto& s : traj.samples) {
        std::fprintf(f, "%.17g", s.t);
        put_vec(s.v_gen);
        put_vec(s.i_gen);
        put_vec(s.i_line);
        put_vec(s.v_bus);
        put_vec(s.lambda);
        put_vec(s.x_c);
        put_vec(s.u);
        put_vec(s.margins);
        put(s.wavg);
        put(s.spread);
        put(s.h);
        put(s.h_t);
        put(s.dh_t);
        std::fputc('\n', f);
    }
    if (std::ferror(f)) {
        std::fclose(f);
        io_fail(csv_path);
    }
    if (std::fclose(f) != 0) io_fail(csv_path);

    std::ofstream ev(events_path);
    if (!ev) io_fail(events_path);
    ev << "t[s],kind,detail,status\n";
    char buf[32];
    for (const auto& e : traj.events) {
        std::snprintf(buf, sizeof buf, "%.17g", e.time);
        ev << buf << ',' << e.kind << ',' << quote(e.detail) << ',' << e.status << '\n';
    }
    if (!ev) io_fail(events_path);
}

CsvTable read_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) io_fail(path);
    CsvTable t;
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error(path.string() + ": empty file");
    std::stringstream hs(line);
    for (std::string cell; std::getline(hs, cell, ',');) t.header.push_back(cell);
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<double> row;
        row.reserve(t.header.size());
        const char* p = line.c_str();
        while (*p) {
            char* end = nullptr;
            row.push_back(std::strtod(p, &end));
            if (end == p) {
                throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": bad number");
            }
            p = end;
            if (*p == ',') ++p;
        }
        if (row.size() != t.header.size()) {
            throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected " +
                                     std::to_string(t.header.size()) + " columns");
        }
        t.rows.push_back(std::move(row));
    }
    return t;
}

std::vector<Sample> samples_from_csv(const CsvTable& table, int n_gens, int n_lines, int n_buses) {
    if (table.header != csv_columns(n_gens, n_lines, n_buses)) {
        throw std::runtime_error("CSV header does not match the network dimensions");
    }
    std::vector<Sample> out;
    out.reserve(table.rows.size());
    for (const auto& r : table.rows) {
        std::size_t c = 0;
        auto take = [&](int n) {
            Eigen::VectorXd v(n);
            for (int i = 0; i < n; ++i) v[i] = r[c++];
            return v;
        };
        Sample s;
        s.t = r[c++];
        s.v_gen = take(n_gens);
        s.i_gen = take(n_gens);
        s.i_line = take(n_lines);
        s.v_bus = take(n_buses);
        s.lambda = take(n_gens);
        s.x_c = take(n_gens);
        s.u = take(n_gens);
        s.margins = take(n_buses);
        s.wavg = r[c++];
        s.spread = r[c++];
        s.h = r[c++];
        s.h_t = r[c++];
        s.dh_t = r[c++];
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace dcmg
