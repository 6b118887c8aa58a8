#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "bbmtube/errors.hpp"
#include "bbmtube/harness.hpp"
#include "json.hpp"
#include "util.hpp"

namespace bbmtube {

namespace {

const std::set<std::string> kKnownKeys = {
    "engine",       "path",          "r",           "L",
    "horizon",      "dt",            "replications", "seed",
    "threads",      "n_max",         "thinning",    "bridge",
    "checkpoint_interval",           "fit_window",  "survival_times",
    "compare_pde",  "probe_times",   "steps",       "p",
    "prediction_horizon",            "pde_ny",      "pde_dt",
    "pde_theta",    "pde_richardson", "output_dir", "csv_rows",
    "description",
};

const std::set<std::string> kMcOnlyKeys = {"replications", "n_max", "thinning", "bridge",
                                           "compare_pde", "checkpoint_interval"};

std::string canonical_number(double v) { return format_shortest(v); }

}  // namespace

std::string to_string(Engine engine) {
    switch (engine) {
        case Engine::Functionals: return "FUNCTIONALS";
        case Engine::PDE: return "PDE";
        case Engine::MC_P: return "MC_P";
        case Engine::MC_Q: return "MC_Q";
    }
    return "?";
}

Engine parse_engine(const std::string& text) {
    std::string up = trim(text);
    std::transform(up.begin(), up.end(), up.begin(), [](unsigned char c) { return std::toupper(c); });
    if (up == "FUNCTIONALS") return Engine::Functionals;
    if (up == "PDE") return Engine::PDE;
    if (up == "MC_P") return Engine::MC_P;
    if (up == "MC_Q") return Engine::MC_Q;
    throw ConfigError("unknown engine '" + text + "' (expected FUNCTIONALS, PDE, MC_P or MC_Q)");
}

bool Target::check(double measured) const {
    if (!std::isfinite(measured)) return false;
    switch (kind) {
        case Kind::Within: return std::abs(measured - value) <= tolerance;
        case Kind::Below: return measured < value;
        case Kind::Above: return measured > value;
    }
    return false;
}

std::string Target::describe() const {
    switch (kind) {
        case Kind::Within:
            return metric + " = " + canonical_number(value) + " +/- " + canonical_number(tolerance);
        case Kind::Below: return metric + " < " + canonical_number(value);
        case Kind::Above: return metric + " > " + canonical_number(value);
    }
    return metric;
}

Target parse_target(const std::string& metric, const std::string& spec) {
    Target t;
    t.metric = metric;
    const std::string s = trim(spec);
    if (s.empty()) throw ConfigError("empty target for '" + metric + "'");
    if (s[0] == '<' || s[0] == '>') {
        t.kind = s[0] == '<' ? Target::Kind::Below : Target::Kind::Above;
        t.value = parse_double(s.substr(1), "target." + metric);
        return t;
    }
    const auto pm = s.find("+/-");
    if (pm == std::string::npos) {
        throw ConfigError("target." + metric + " must read 'v +/- tol', '< v' or '> v'");
    }
    t.kind = Target::Kind::Within;
    t.value = parse_double(s.substr(0, pm), "target." + metric);
    t.tolerance = parse_double(s.substr(pm + 3), "target." + metric);
    if (!(t.tolerance >= 0.0)) throw ConfigError("target." + metric + " needs a tolerance >= 0");
    return t;
}

std::string ExperimentConfig::get(const std::string& key, const std::string& fallback) const {
    const auto it = entries.find(key);
    return it == entries.end() ? fallback : it->second;
}

double ExperimentConfig::get_double(const std::string& key, double fallback) const {
    const auto it = entries.find(key);
    return it == entries.end() ? fallback : parse_double(it->second, key);
}

std::vector<double> ExperimentConfig::get_list(const std::string& key) const {
    std::vector<double> out;
    const auto it = entries.find(key);
    if (it == entries.end()) return out;
    std::string text = it->second;
    std::replace(text.begin(), text.end(), ',', ' ');
    std::istringstream in(text);
    std::string token;
    while (in >> token) out.push_back(parse_double(token, key));
    return out;
}

bool ExperimentConfig::get_bool(const std::string& key, bool fallback) const {
    const auto it = entries.find(key);
    if (it == entries.end()) return fallback;
    const std::string v = trim(it->second);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("cannot parse '" + v + "' as a boolean for '" + key + "'");
}

void ExperimentConfig::finalize() {
    const std::string where = "experiment '" + name + "'";
    for (const auto& [key, value] : entries) {
        if (key.rfind("target.", 0) == 0) continue;
        if (!kKnownKeys.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
    }
    for (const char* required : {"engine", "path", "horizon"}) {
        if (!entries.count(required)) {
            throw ConfigError(where + ": missing required key '" + std::string(required) + "'");
        }
    }
    engine = parse_engine(get("engine"));
    path_key = trim(get("path"));
    horizon = get_double("horizon", 0.0);
    if (!(horizon > 0.0)) throw ConfigError(where + ": horizon must be > 0");
    if (entries.count("r")) r = get_double("r", 0.0);
    if (entries.count("L")) L = get_double("L", 0.0);
    if (entries.count("dt")) dt = get_double("dt", 0.0);
    const double seed_value = get_double("seed", 0.0);
    if (seed_value < 0 || seed_value != std::floor(seed_value)) {
        throw ConfigError(where + ": seed must be a non-negative integer");
    }
    seed = static_cast<std::uint64_t>(seed_value);
    threads = static_cast<unsigned>(std::max(0.0, get_double("threads", 0.0)));

    const bool mc = engine == Engine::MC_P || engine == Engine::MC_Q;
    if (mc) {
        for (const char* required : {"r", "L", "dt", "replications"}) {
            if (!entries.count(required)) {
                throw ConfigError(where + ": engine " + to_string(engine) + " needs '" +
                                  required + "'");
            }
        }
        const double reps = get_double("replications", 0.0);
        if (!(reps >= 1.0) || reps != std::floor(reps)) {
            throw ConfigError(where + ": replications must be a positive integer");
        }
        replications = static_cast<std::size_t>(reps);
    } else {
        for (const auto& key : kMcOnlyKeys) {
            if (entries.count(key)) {
                throw ConfigError(where + ": '" + key + "' only applies to MC engines");
            }
        }
        if (entries.count("dt")) throw ConfigError(where + ": 'dt' only applies to MC engines");
    }
    if (engine == Engine::PDE && (!r || !L)) {
        throw ConfigError(where + ": engine PDE needs 'r' and 'L'");
    }
    if (r && !(*r > 0.0)) throw ConfigError(where + ": r must be > 0");
    if (L && !(*L > 0.0)) throw ConfigError(where + ": L must be > 0");

    targets.clear();
    for (const auto& [key, value] : entries) {
        if (key.rfind("target.", 0) == 0) targets.push_back(parse_target(key.substr(7), value));
    }
}

std::string config_hash(const std::string& name, const std::map<std::string, std::string>& entries) {
    std::string canonical = "name=" + name + "\n";
    for (const auto& [key, value] : entries) canonical += key + "=" + value + "\n";
    return hex64(fnv1a64(canonical));
}

namespace {

void parse_into(const std::string& text, const std::filesystem::path& origin,
                std::vector<ExperimentConfig>& out, std::vector<std::filesystem::path>& stack);

void include_file(const std::filesystem::path& file, std::vector<ExperimentConfig>& out,
                  std::vector<std::filesystem::path>& stack) {
    std::error_code ec;
    const auto canonical = std::filesystem::weakly_canonical(file, ec);
    if (std::find(stack.begin(), stack.end(), canonical) != stack.end()) {
        throw ConfigError("include cycle through " + file.string());
    }
    std::ifstream in(file);
    if (!in) throw ConfigError("cannot open config file " + file.string());
    std::stringstream buf;
    buf << in.rdbuf();
    stack.push_back(canonical);
    parse_into(buf.str(), file, out, stack);
    stack.pop_back();
}

void parse_into(const std::string& text, const std::filesystem::path& origin,
                std::vector<ExperimentConfig>& out, std::vector<std::filesystem::path>& stack) {
    std::istringstream in(text);
    std::string raw;
    std::size_t line_no = 0;
    std::optional<std::size_t> current;  // index into out; includes may reallocate
    const std::size_t first = out.size();
    auto fail = [&](const std::string& what) {
        throw ConfigError(origin.string() + ":" + std::to_string(line_no) + ": " + what);
    };
    while (std::getline(in, raw)) {
        ++line_no;
        const auto hash = raw.find('#');
        const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') fail("unterminated section header");
            const auto words = split(trim(line.substr(1, line.size() - 2)), ' ');
            std::vector<std::string> parts;
            for (const auto& w : words) {
                if (!trim(w).empty()) parts.push_back(trim(w));
            }
            if (parts.size() != 2 || parts[0] != "experiment") {
                fail("section header must read [experiment NAME]");
            }
            for (const auto& e : out) {
                if (e.name == parts[1]) fail("duplicate experiment name '" + parts[1] + "'");
            }
            out.push_back({});
            current = out.size() - 1;
            out.back().name = parts[1];
            out.back().origin = origin;
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) fail("expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) fail("empty key");
        if (key == "include") {
            const std::filesystem::path target = origin.has_parent_path()
                                                     ? origin.parent_path() / value
                                                     : std::filesystem::path(value);
            include_file(target, out, stack);
            continue;
        }
        if (!current) fail("'" + key + "' outside an [experiment] section");
        auto& entries = out[*current].entries;
        if (entries.count(key)) fail("duplicate key '" + key + "'");
        entries[key] = value;
    }
    for (std::size_t i = first; i < out.size(); ++i) {
        if (out[i].origin == origin) out[i].finalize();
    }
}

}  // namespace

std::vector<ExperimentConfig> parse_config_text(const std::string& text,
                                                const std::filesystem::path& origin) {
    std::vector<ExperimentConfig> out;
    std::vector<std::filesystem::path> stack;
    parse_into(text, origin, out, stack);
    return out;
}

std::vector<ExperimentConfig> load_config_file(const std::filesystem::path& file) {
    if (!std::filesystem::exists(file)) throw ConfigError("config file not found: " + file.string());
    std::vector<ExperimentConfig> out;
    std::vector<std::filesystem::path> stack;
    include_file(file, out, stack);
    return out;
}

ExperimentConfig load_manifest(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw ConfigError("manifest not found: " + file.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("manifest " + file.string() + " is not valid JSON: " + e.what());
    }
    if (!j.contains("name") || !j.contains("config")) {
        throw ConfigError("manifest " + file.string() + " lacks 'name' or 'config'");
    }
    ExperimentConfig c;
    c.name = j["name"].get<std::string>();
    c.origin = file;
    for (const auto& [key, value] : j["config"].items()) c.entries[key] = value.get<std::string>();
    c.finalize();
    return c;
}

}  // namespace bbmtube
