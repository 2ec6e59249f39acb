#include "dcmg/scenario_io.hpp"

#include "dcmg/errors.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>

namespace dcmg {

namespace {

using nlohmann::json;

// Object reader that remembers which keys were consumed so leftovers can be
// reported as unknown fields.
class Obj {
public:
    Obj(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) fail("expected an object");
    }

    [[noreturn]] void fail(const std::string& msg) const {
        throw ScenarioError((path_.empty() ? std::string("<root>") : path_) + ": " + msg);
    }

    std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    bool has(const std::string& key) const { return j_.contains(key); }

    const json& raw(const std::string& key) {
        seen_.insert(key);
        if (!j_.contains(key)) throw ScenarioError(at(key) + ": missing required field");
        return j_.at(key);
    }

    double num(const std::string& key) {
        const json& v = raw(key);
        if (!v.is_number()) throw ScenarioError(at(key) + ": expected a number");
        return v.get<double>();
    }

    double num(const std::string& key, double fallback) { return has(key) ? num(key) : fallback; }

    int index(const std::string& key, int count) {
        const json& v = raw(key);
        if (!v.is_number_integer()) throw ScenarioError(at(key) + ": expected an integer");
        const int one_based = v.get<int>();
        if (one_based < 1 || one_based > count) {
            throw ScenarioError(at(key) + ": index " + std::to_string(one_based) +
                                " outside 1.." + std::to_string(count));
        }
        return one_based - 1;
    }

    bool flag(const std::string& key, bool fallback) {
        if (!has(key)) return fallback;
        const json& v = raw(key);
        if (!v.is_boolean()) throw ScenarioError(at(key) + ": expected true or false");
        return v.get<bool>();
    }

    std::string str(const std::string& key, const std::string& fallback) {
        if (!has(key)) return fallback;
        const json& v = raw(key);
        if (!v.is_string()) throw ScenarioError(at(key) + ": expected a string");
        return v.get<std::string>();
    }

    const json& array(const std::string& key) {
        const json& v = raw(key);
        if (!v.is_array()) throw ScenarioError(at(key) + ": expected an array");
        return v;
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it) {
            if (!seen_.count(it.key())) throw ScenarioError(at(it.key()) + ": unknown field");
        }
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

std::string elem(const std::string& base, std::size_t n) {
    return base + "[" + std::to_string(n) + "]";
}

double pu_or_si(Obj& o, const char* pu_key, const char* si_key, double base) {
    if (o.has(pu_key) && o.has(si_key)) {
        o.fail(std::string("give either ") + pu_key + " or " + si_key + ", not both");
    }
    if (o.has(pu_key)) return o.num(pu_key) * base;
    return o.num(si_key);
}

int count_lines_before(const std::string& text, std::size_t byte) {
    byte = std::min(byte, text.size());
    int line = 1;
    for (std::size_t n = 0; n < byte; ++n) {
        if (text[n] == '\n') ++line;
    }
    return line;
}

std::vector<int> parse_buses(Obj& o, const std::string& key, int n_buses) {
    std::vector<int> out;
    if (!o.has(key)) return out;
    const json& v = o.raw(key);
    if (v.is_string() && v.get<std::string>() == "all") return out;
    if (!v.is_array()) throw ScenarioError(o.at(key) + ": expected \"all\" or an array of bus numbers");
    for (std::size_t n = 0; n < v.size(); ++n) {
        if (!v[n].is_number_integer()) throw ScenarioError(elem(o.at(key), n) + ": expected an integer");
        const int k = v[n].get<int>();
        if (k < 1 || k > n_buses) {
            throw ScenarioError(elem(o.at(key), n) + ": bus " + std::to_string(k) + " does not exist");
        }
        out.push_back(k - 1);
    }
    return out;
}

void parse_network(Obj& root, ScenarioBundle& b) {
    b.spec.v_nom = root.num("v_nom");
    if (root.has("per_unit_base")) {
        Obj base(root.raw("per_unit_base"), "per_unit_base");
        b.base_resistance = base.num("resistance");
        b.base_inductance = base.num("inductance");
        base.finish();
    }

    const json& buses = root.array("buses");
    for (std::size_t n = 0; n < buses.size(); ++n) {
        Obj o(buses[n], elem("buses", n));
        BusSpec bus;
        bus.capacitance = o.num("capacitance");
        if (o.has("conductance") && o.has("load_resistance")) {
            o.fail("give either conductance or load_resistance, not both");
        }
        if (o.has("load_resistance")) {
            const double r = o.num("load_resistance");
            if (!(r > 0.0)) throw ScenarioError(o.at("load_resistance") + ": must be positive");
            bus.conductance = 1.0 / r;
        } else {
            bus.conductance = o.num("conductance", 0.0);
        }
        bus.current = o.num("current", 0.0);
        if (o.has("power") && o.has("power_ratio")) o.fail("give either power or power_ratio, not both");
        bus.power = o.has("power_ratio")
                        ? o.num("power_ratio") * bus.conductance * b.spec.v_nom * b.spec.v_nom
                        : o.num("power", 0.0);
        o.finish();
        b.spec.buses.push_back(bus);
    }
    const int nb = static_cast<int>(b.spec.buses.size());
    b.spec.graph.n_buses = nb;

    const json& lines = root.array("lines");
    for (std::size_t n = 0; n < lines.size(); ++n) {
        Obj o(lines[n], elem("lines", n));
        const int from = o.index("from", nb);
        const int to = o.index("to", nb);
        LineSpec line;
        line.resistance = pu_or_si(o, "r_pu", "resistance", b.base_resistance);
        line.inductance = pu_or_si(o, "l_pu", "inductance", b.base_inductance);
        o.finish();
        b.spec.graph.line_endpoints.emplace_back(from, to);
        b.spec.lines.push_back(line);
    }

    const json& gens = root.array("generators");
    for (std::size_t n = 0; n < gens.size(); ++n) {
        Obj o(gens[n], elem("generators", n));
        GeneratorSpec g;
        b.spec.graph.gen_bus.push_back(o.index("bus", nb));
        g.droop = o.num("droop");
        g.r_conn = pu_or_si(o, "r_pu", "r_conn", b.base_resistance);
        g.l_conn = pu_or_si(o, "l_pu", "l_conn", b.base_inductance);
        g.alpha = o.num("alpha");
        g.beta = o.num("beta");
        g.gamma = o.num("gamma", 0.0);
        g.rated_current = o.num("rated_current", 0.0);
        g.k_i = o.num("k_i");
        o.finish();
        b.spec.gens.push_back(g);
    }
}

void parse_controller(Obj& root, ScenarioBundle& b) {
    const int ng = b.spec.n_gens();
    Obj c(root.raw("controller"), "controller");
    b.cfg.k_p = c.num("k_p");
    b.cfg.enabled = c.flag("enabled", false);
    if (c.has("sample_period")) b.cfg.sample_period = c.num("sample_period");

    if (c.has("comm_links") && c.has("comm_weights")) {
        c.fail("give either comm_links or comm_weights, not both");
    }
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(ng, ng);
    if (c.has("comm_weights")) {
        const json& m = c.array("comm_weights");
        if (static_cast<int>(m.size()) != ng) {
            throw ScenarioError("controller.comm_weights: expected " + std::to_string(ng) + " rows");
        }
        for (int i = 0; i < ng; ++i) {
            const std::string row = elem("controller.comm_weights", i);
            if (!m[i].is_array() || static_cast<int>(m[i].size()) != ng) {
                throw ScenarioError(row + ": expected " + std::to_string(ng) + " numbers");
            }
            for (int j = 0; j < ng; ++j) {
                if (!m[i][j].is_number()) throw ScenarioError(elem(row, j) + ": expected a number");
                w(i, j) = m[i][j].get<double>();
            }
        }
    } else {
        const json& links = c.array("comm_links");
        for (std::size_t n = 0; n < links.size(); ++n) {
            Obj o(links[n], elem("controller.comm_links", n));
            const int a = o.index("a", ng);
            const int bb = o.index("b", ng);
            const double weight = o.num("weight", 1.0);
            o.finish();
            if (a == bb) o.fail("self-link");
            w(a, bb) = weight;
            w(bb, a) = weight;
        }
    }
    c.finish();
    try {
        b.cfg.comm = CommGraph(w);
    } catch (const Error& e) {
        throw ScenarioError(std::string("controller: ") + e.what());
    }
}

InitialCondition parse_condition(const std::string& s, const std::string& path) {
    if (s == "droop_equilibrium") return InitialCondition::DroopEquilibrium;
    if (s == "closed_loop_equilibrium") return InitialCondition::ClosedLoopEquilibrium;
    if (s == "no_load_nominal") return InitialCondition::NoLoadNominal;
    if (s == "zero") return InitialCondition::Zero;
    throw ScenarioError(path + ": unknown initial condition '" + s + "'");
}

void parse_initial(Obj& root, ScenarioBundle& b) {
    bool z = true, i = true, p = false;
    if (root.has("initial")) {
        Obj o(root.raw("initial"), "initial");
        b.scenario.initial = parse_condition(o.str("condition", "droop_equilibrium"), o.at("condition"));
        b.scenario.unplugged_tracks_bus = o.flag("unplugged_tracks_bus", true);
        if (o.has("loads")) {
            Obj l(o.raw("loads"), "initial.loads");
            z = l.flag("z", true);
            i = l.flag("i", true);
            p = l.flag("p", false);
            l.finish();
        }
        o.finish();
    }
    b.scenario.initial_loads = nominal_loads(b.spec, z, i, p);
}

void parse_events(Obj& root, ScenarioBundle& b) {
    if (!root.has("events")) return;
    const json& events = root.array("events");
    const int ng = b.spec.n_gens();
    for (std::size_t n = 0; n < events.size(); ++n) {
        Obj o(events[n], elem("events", n));
        ScenarioEvent ev;
        ev.time = o.num("time");
        const json& kind = o.raw("kind");
        if (!kind.is_string()) throw ScenarioError(o.at("kind") + ": expected a string");
        const auto k = parse_event_kind(kind.get<std::string>());
        if (!k) throw ScenarioError(o.at("kind") + ": unknown event kind '" + kind.get<std::string>() + "'");
        ev.kind = *k;
        switch (ev.kind) {
            case EventKind::SetCplMask:
                ev.buses = parse_buses(o, "buses", b.spec.n_buses());
                ev.on = o.flag("on", true);
                break;
            case EventKind::SetZipValues:
                ev.buses = parse_buses(o, "buses", b.spec.n_buses());
                if (o.has("conductance")) ev.conductance = o.num("conductance");
                if (o.has("current")) ev.current = o.num("current");
                if (o.has("power")) ev.power = o.num("power");
                break;
            case EventKind::UnplugGen:
            case EventKind::ReplugGen:
                ev.gen = o.index("gen", ng);
                break;
            case EventKind::SetCommLink:
                ev.node_a = o.index("a", ng);
                ev.node_b = o.index("b", ng);
                ev.on = o.flag("on", true);
                break;
            default:
                break;
        }
        o.finish();
        b.scenario.events.push_back(ev);
    }
}

IntegratorKind parse_method(const std::string& s, const std::string& path) {
    if (s == "rk4") return IntegratorKind::Rk4;
    if (s == "trapezoidal") return IntegratorKind::Trapezoidal;
    throw ScenarioError(path + ": unknown integrator '" + s + "' (rk4 or trapezoidal)");
}

void parse_integrator(Obj& root, ScenarioBundle& b) {
    auto& in = b.scenario.integrator;
    Obj o(root.raw("integrator"), "integrator");
    in.method = parse_method(o.str("method", "rk4"), o.at("method"));
    in.step = o.num("step", in.method == IntegratorKind::Rk4 ? 1e-5 : 1e-4);
    in.t_end = o.num("t_end");
    in.record_interval = o.num("record_interval", in.record_interval);
    in.h_min = o.num("h_min", in.h_min);
    in.newton_tolerance = o.num("newton_tolerance", in.newton_tolerance);
    in.sync_tol = o.num("sync_tol", in.sync_tol);
    in.tail_window = o.num("tail_window", in.tail_window);
    in.monitors = o.flag("monitors", true);
    o.finish();
}

void parse_output(Obj& root, ScenarioBundle& b) {
    if (!root.has("output")) return;
    Obj o(root.raw("output"), "output");
    b.output.trajectory = o.str("trajectory", b.output.trajectory);
    b.output.events = o.str("events", b.output.events);
    b.output.summary = o.str("summary", b.output.summary);
    o.finish();
}

}  // namespace

ScenarioBundle parse_scenario_text(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        std::string msg = e.what();
        if (auto pos = msg.find("parse error"); pos != std::string::npos) msg = msg.substr(pos);
        throw ScenarioError("line " + std::to_string(count_lines_before(text, e.byte)) + ": " + msg);
    }

    ScenarioBundle b;
    Obj root(doc, "");
    b.scenario.name = root.str("name", "scenario");
    parse_network(root, b);
    parse_controller(root, b);
    parse_initial(root, b);
    parse_events(root, b);
    parse_integrator(root, b);
    parse_output(root, b);
    root.finish();

    b.spec.validate();
    b.cfg.validate(b.spec.gens);
    b.scenario.validate(b.spec, b.cfg);
    return b;
}

ScenarioBundle parse_scenario(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ScenarioError("cannot open scenario file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    try {
        auto b = parse_scenario_text(ss.str());
        return b;
    } catch (const ScenarioError& e) {
        throw ScenarioError(path.string() + ": " + e.what());
    }
}

}  // namespace dcmg
