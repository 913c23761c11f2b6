#include "voltpomdp/experiment.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace voltpomdp {

namespace {

using json = nlohmann::json;

constexpr std::array<std::string_view, 4> kAgentNames{"bql", "dqn", "bdqn", "bac"};
constexpr const char* kManifestFormat = "voltpomdp-manifest-1";

#ifndef VOLTPOMDP_VERSION
#define VOLTPOMDP_VERSION "unknown"
#endif

// Reads typed fields out of a JSON object, collecting problems instead of throwing.
class Reader {
public:
    Reader(const json& obj, std::string prefix, std::vector<std::string>& diags)
        : obj_(obj), prefix_(std::move(prefix)), diags_(diags) {
        if (!obj_.is_object()) diags_.push_back(prefix_ + " must be an object");
    }

    void number(const char* key, double& out) {
        if (const auto* v = take(key)) {
            if (v->is_number()) out = v->get<double>();
            else bad(key, "a number");
        }
    }
    void integer(const char* key, int& out) {
        if (const auto* v = take(key)) {
            if (v->is_number_integer()) out = v->get<int>();
            else bad(key, "an integer");
        }
    }
    void boolean(const char* key, bool& out) {
        if (const auto* v = take(key)) {
            if (v->is_boolean()) out = v->get<bool>();
            else bad(key, "true or false");
        }
    }
    template <typename Parse, typename T>
    void name(const char* key, T& out, Parse parse) {
        if (const auto* v = take(key)) {
            if (!v->is_string()) return bad(key, "a string");
            try {
                out = parse(v->get<std::string>());
            } catch (const Error& e) {
                diags_.push_back(prefix_ + "." + key + ": " + e.what());
            }
        }
    }
    void int_list(const char* key, std::vector<int>& out) {
        if (const auto* v = take(key)) {
            if (!v->is_array() || !std::all_of(v->begin(), v->end(), [](const json& x) { return x.is_number_integer(); })) {
                return bad(key, "an array of integers");
            }
            out = v->get<std::vector<int>>();
        }
    }

    // Reports keys that no reader asked for.
    void finish() {
        if (!obj_.is_object()) return;
        for (const auto& [key, _] : obj_.items()) {
            if (!seen_.count(key)) diags_.push_back(prefix_ + "." + key + " is not a recognized key");
        }
    }

private:
    const json* take(const char* key) {
        seen_.insert(key);
        if (!obj_.is_object() || !obj_.contains(key)) return nullptr;
        return &obj_.at(key);
    }
    void bad(const char* key, const char* what) { diags_.push_back(prefix_ + "." + key + " must be " + what); }

    const json& obj_;
    std::string prefix_;
    std::vector<std::string>& diags_;
    std::set<std::string> seen_;
};

BqlStateMode parse_state_mode(const std::string& s) {
    if (s == "observed") return BqlStateMode::observed;
    if (s == "belief_map") return BqlStateMode::belief_map;
    throw InvalidArgument("unknown state mode '" + s + "' (valid: observed, belief_map)");
}

AgentParams read_params(AgentKind agent, const json& obj, const std::string& prefix, std::vector<std::string>& diags) {
    Reader r(obj, prefix, diags);
    const std::size_t before = diags.size();
    AgentParams out;
    switch (agent) {
        case AgentKind::bql: {
            BqlConfig c;
            r.name("exploration", c.exploration, [](const std::string& s) { return parse_exploration(s); });
            r.name("prior", c.prior, [](const std::string& s) { return parse_prior_kind(s); });
            r.name("state_mode", c.state_mode, parse_state_mode);
            r.number("gamma", c.gamma);
            r.number("variance0", c.variance0);
            r.number("pseudo_count0", c.pseudo_count0);
            r.number("variance_min", c.variance_min);
            r.integer("episodes", c.episodes);
            r.boolean("record_wall_time", c.record_wall_time);
            if (!(c.gamma >= 0.0 && c.gamma <= 1.0)) diags.push_back(prefix + ".gamma must lie in [0, 1]");
            if (!(c.variance0 > 0.0)) diags.push_back(prefix + ".variance0 must be positive");
            if (!(c.pseudo_count0 > 0.0)) diags.push_back(prefix + ".pseudo_count0 must be positive");
            if (!(c.variance_min > 0.0)) diags.push_back(prefix + ".variance_min must be positive");
            if (c.episodes <= 0) diags.push_back(prefix + ".episodes must be positive");
            out = c;
            break;
        }
        case AgentKind::dqn:
        case AgentKind::bdqn: {
            DqnConfig c;
            c.algo = agent == AgentKind::dqn ? DqnAlgo::dqn : DqnAlgo::bdqn;
            r.int_list("hidden", c.hidden);
            r.number("gamma", c.gamma);
            r.number("lr", c.lr);
            r.number("tau", c.tau);
            r.integer("batch_size", c.batch_size);
            r.integer("buffer_capacity", c.buffer_capacity);
            r.integer("update_frequency", c.update_frequency);
            r.integer("updates_per_phase", c.updates_per_phase);
            r.integer("sample_length", c.sample_length);
            r.number("sigma_prop", c.mh.sigma_prop);
            r.number("sigma_ll", c.mh.sigma_ll);
            r.number("sigma_pl", c.mh.sigma_pl);
            r.boolean("linear_accept", c.mh.linear_accept);
            r.number("epsilon_start", c.epsilon_start);
            r.number("epsilon_end", c.epsilon_end);
            r.number("epsilon_decay_fraction", c.epsilon_decay_fraction);
            r.integer("episodes", c.episodes);
            r.number("goal", c.goal);
            r.boolean("stop_at_goal", c.stop_at_goal);
            r.boolean("record_wall_time", c.record_wall_time);
            if (diags.size() == before) {
                try {
                    c.validate();
                } catch (const Error& e) {
                    diags.push_back(prefix + ": " + e.what());
                }
            }
            out = c;
            break;
        }
        case AgentKind::bac: {
            BacConfig c;
            r.integer("n_updates", c.n_updates);
            r.integer("episodes_per_update", c.episodes_per_update);
            r.integer("eval_every", c.eval_every);
            r.integer("eval_episodes", c.eval_episodes);
            r.number("beta", c.beta);
            r.number("gamma", c.gamma);
            r.number("kernel_variance", c.kernel_variance);
            r.number("noise_var", c.noise_var);
            r.number("nu", c.nu);
            r.boolean("record_wall_time", c.record_wall_time);
            if (diags.size() == before) {
                try {
                    c.validate();
                } catch (const Error& e) {
                    diags.push_back(prefix + ": " + e.what());
                }
            }
            out = c;
            break;
        }
    }
    r.finish();
    return out;
}

json params_json(const AgentParams& params) {
    json j;
    if (const auto* b = std::get_if<BqlConfig>(&params)) {
        j["exploration"] = std::string(to_string(b->exploration));
        j["prior"] = std::string(to_string(b->prior));
        j["state_mode"] = b->state_mode == BqlStateMode::observed ? "observed" : "belief_map";
        j["gamma"] = b->gamma;
        j["variance0"] = b->variance0;
        j["pseudo_count0"] = b->pseudo_count0;
        j["variance_min"] = b->variance_min;
        j["episodes"] = b->episodes;
        j["record_wall_time"] = b->record_wall_time;
    } else if (const auto* d = std::get_if<DqnConfig>(&params)) {
        j["hidden"] = d->hidden;
        j["gamma"] = d->gamma;
        j["lr"] = d->lr;
        j["tau"] = d->tau;
        j["batch_size"] = d->batch_size;
        j["buffer_capacity"] = d->buffer_capacity;
        j["update_frequency"] = d->update_frequency;
        j["updates_per_phase"] = d->updates_per_phase;
        j["sample_length"] = d->sample_length;
        j["sigma_prop"] = d->mh.sigma_prop;
        j["sigma_ll"] = d->mh.sigma_ll;
        j["sigma_pl"] = d->mh.sigma_pl;
        j["linear_accept"] = d->mh.linear_accept;
        j["epsilon_start"] = d->epsilon_start;
        j["epsilon_end"] = d->epsilon_end;
        j["epsilon_decay_fraction"] = d->epsilon_decay_fraction;
        j["episodes"] = d->episodes;
        j["goal"] = d->goal;
        j["stop_at_goal"] = d->stop_at_goal;
        j["record_wall_time"] = d->record_wall_time;
    } else {
        const auto& c = std::get<BacConfig>(params);
        j["n_updates"] = c.n_updates;
        j["episodes_per_update"] = c.episodes_per_update;
        j["eval_every"] = c.eval_every;
        j["eval_episodes"] = c.eval_episodes;
        j["beta"] = c.beta;
        j["gamma"] = c.gamma;
        j["kernel_variance"] = c.kernel_variance;
        j["noise_var"] = c.noise_var;
        j["nu"] = c.nu;
        j["record_wall_time"] = c.record_wall_time;
    }
    return j;
}

std::optional<EnvConfig> read_env(json env, const std::string& prefix, const std::filesystem::path& base_dir,
                                  std::vector<std::string>& diags) {
    if (!env.is_object()) {
        diags.push_back(prefix + " must be an object");
        return std::nullopt;
    }
    try {
        auto cfg = parse_env_config(env.dump());
        cfg.validate();
        const auto path = resolve_case_path(cfg, base_dir);
        if (!std::filesystem::exists(path)) {
            diags.push_back(prefix + ".case_file '" + cfg.case_file + "' does not exist");
            return std::nullopt;
        }
        cfg.case_file = std::filesystem::absolute(path).lexically_normal().string();
        return cfg;
    } catch (const Error& e) {
        std::string msg = e.what();
        if (msg.rfind("env.", 0) == 0) msg = msg.substr(4);
        diags.push_back(prefix + ": " + msg);
        return std::nullopt;
    }
}

std::uint64_t fnv1a(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::uint64_t h = 0xcbf29ce484222325ull;
    char buf[4096];
    while (in.read(buf, sizeof buf) || in.gcount() > 0) {
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ull;
        }
    }
    return h;
}

std::string hex(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex;
    os.width(16);
    os.fill('0');
    os << v;
    return os.str();
}

}  // namespace

AgentKind parse_agent_kind(std::string_view name) {
    for (std::size_t i = 0; i < kAgentNames.size(); ++i) {
        if (name == kAgentNames[i]) return static_cast<AgentKind>(i);
    }
    throw InvalidArgument("unknown agent '" + std::string(name) + "' (valid agents: bql, dqn, bdqn, bac)");
}

std::string_view to_string(AgentKind kind) noexcept { return kAgentNames[static_cast<std::size_t>(kind)]; }

std::span<const std::string_view> agent_names() noexcept { return kAgentNames; }

ConfigError::ConfigError(std::vector<std::string> diagnostics)
    : InvalidArgument([&] {
          std::string msg = "invalid experiment config:";
          for (const auto& d : diagnostics) msg += "\n  " + d;
          return msg;
      }()),
      diagnostics_(std::move(diagnostics)) {}

AgentParams parse_agent_params(AgentKind agent, std::string_view json_text) {
    json doc;
    try {
        doc = json::parse(json_text.begin(), json_text.end());
    } catch (const json::parse_error& e) {
        throw ConfigError({std::string("params is not valid JSON: ") + e.what()});
    }
    std::vector<std::string> diags;
    auto params = read_params(agent, doc, "params", diags);
    if (!diags.empty()) throw ConfigError(std::move(diags));
    return params;
}

std::string params_to_json(const AgentParams& params) { return params_json(params).dump(2); }

ExperimentConfig parse_experiment(std::string_view json_text, const std::filesystem::path& base_dir) {
    json doc;
    try {
        doc = json::parse(json_text.begin(), json_text.end());
    } catch (const json::parse_error& e) {
        throw ConfigError({std::string("config is not valid JSON: ") + e.what()});
    }
    if (doc.is_object() && doc.value("format", "") == kManifestFormat) {
        if (!doc.contains("config")) throw ConfigError({"manifest has no config"});
        doc = doc["config"];
    }
    std::vector<std::string> diags;
    if (!doc.is_object()) throw ConfigError({"config must be a JSON object"});

    static const std::set<std::string> kKeys = {"name", "description", "agent", "env",
                                                "params", "seeds", "output_dir", "variants"};
    for (const auto& [key, _] : doc.items()) {
        if (!kKeys.count(key)) diags.push_back(key + " is not a recognized key");
    }

    ExperimentConfig cfg;
    if (doc.contains("name") && doc["name"].is_string()) cfg.name = doc["name"].get<std::string>();
    else diags.push_back("name is required and must be a string");
    if (doc.contains("description")) {
        if (doc["description"].is_string()) cfg.description = doc["description"].get<std::string>();
        else diags.push_back("description must be a string");
    }
    if (doc.contains("output_dir")) {
        if (doc["output_dir"].is_string()) cfg.output_dir = doc["output_dir"].get<std::string>();
        else diags.push_back("output_dir must be a string");
    }
    if (!doc.contains("seeds") || !doc["seeds"].is_array() || doc["seeds"].empty()) {
        diags.push_back("seeds must be a non-empty array of non-negative integers");
    } else {
        for (const auto& s : doc["seeds"]) {
            if (!s.is_number_unsigned()) {
                diags.push_back("seeds must be a non-empty array of non-negative integers");
                break;
            }
            cfg.seeds.push_back(s.get<std::uint64_t>());
        }
    }

    std::optional<AgentKind> base_agent;
    auto read_agent = [&](const json& obj, const std::string& prefix) -> std::optional<AgentKind> {
        if (!obj.contains("agent")) return std::nullopt;
        if (!obj["agent"].is_string()) {
            diags.push_back(prefix + "agent must be a string");
            return std::nullopt;
        }
        try {
            return parse_agent_kind(obj["agent"].get<std::string>());
        } catch (const Error& e) {
            diags.push_back(prefix + "agent: " + e.what());
            return std::nullopt;
        }
    };
    base_agent = read_agent(doc, "");
    const bool has_variants = doc.contains("variants");
    if (!doc.contains("agent") && !has_variants) diags.push_back("agent is required (valid agents: bql, dqn, bdqn, bac)");
    const bool every_variant_has_env =
        has_variants && doc["variants"].is_array() &&
        std::all_of(doc["variants"].begin(), doc["variants"].end(), [](const json& v) { return v.is_object() && v.contains("env"); });
    if (!doc.contains("env") && !every_variant_has_env) diags.push_back("env is required");
    const json base_env = doc.value("env", json::object());
    const json base_params = doc.value("params", json::object());
    if (!base_params.is_object()) diags.push_back("params must be an object");

    json variants = json::array();
    if (has_variants) {
        if (!doc["variants"].is_array() || doc["variants"].empty()) diags.push_back("variants must be a non-empty array");
        else variants = doc["variants"];
    } else {
        variants.push_back(json{{"name", "default"}});
    }

    std::set<std::string> names;
    for (std::size_t i = 0; i < variants.size(); ++i) {
        const auto& v = variants[i];
        const std::string prefix = "variants[" + std::to_string(i) + "]";
        if (!v.is_object()) {
            diags.push_back(prefix + " must be an object");
            continue;
        }
        for (const auto& [key, _] : v.items()) {
            if (key != "name" && key != "agent" && key != "env" && key != "params") {
                diags.push_back(prefix + "." + key + " is not a recognized key");
            }
        }
        Variant out;
        if (!v.contains("name") || !v["name"].is_string() || v["name"].get<std::string>().empty()) {
            diags.push_back(prefix + ".name is required");
            continue;
        }
        out.name = v["name"].get<std::string>();
        if (out.name.find_first_of("/\\") != std::string::npos || out.name == "." || out.name == "..") {
            diags.push_back(prefix + ".name must be usable as a directory name");
        }
        if (!names.insert(out.name).second) diags.push_back(prefix + ".name '" + out.name + "' is repeated");

        json env = base_env;
        if (v.contains("env")) env.merge_patch(v["env"]);
        const auto env_cfg = read_env(env, has_variants ? prefix + ".env" : "env", base_dir, diags);

        auto agent = read_agent(v, prefix + ".");
        if (!agent) agent = base_agent;
        if (!agent) {
            if (!v.contains("agent") && has_variants && !doc.contains("agent")) {
                diags.push_back(prefix + ".agent is required (valid agents: bql, dqn, bdqn, bac)");
            }
            continue;
        }
        out.agent = *agent;

        json params = base_params.is_object() ? base_params : json::object();
        if (v.contains("params")) params.merge_patch(v["params"]);
        out.params = read_params(out.agent, params, has_variants ? prefix + ".params" : "params", diags);
        if (env_cfg) out.env = *env_cfg;
        cfg.variants.push_back(std::move(out));
    }

    if (!diags.empty()) throw ConfigError(std::move(diags));
    return cfg;
}

ExperimentConfig load_experiment(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError({"cannot read config file " + path.string()});
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_experiment(buf.str(), path.parent_path());
}

std::string to_json(const ExperimentConfig& cfg) {
    json doc;
    doc["name"] = cfg.name;
    if (!cfg.description.empty()) doc["description"] = cfg.description;
    doc["seeds"] = cfg.seeds;
    if (!cfg.output_dir.empty()) doc["output_dir"] = cfg.output_dir;
    doc["variants"] = json::array();
    for (const auto& v : cfg.variants) {
        doc["variants"].push_back(json{{"name", v.name},
                                       {"agent", std::string(to_string(v.agent))},
                                       {"env", json::parse(to_json(v.env))},
                                       {"params", params_json(v.params)}});
    }
    return doc.dump(2);
}

MetricsTable run_variant(const Variant& variant, std::uint64_t seed) {
    auto env = VoltageControlEnv::from_config(variant.env);
    return std::visit(
        [&](const auto& p) -> MetricsTable {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, BqlConfig>) return train_bql(env, p, seed).table();
            else if constexpr (std::is_same_v<T, DqnConfig>) return train_dqn(env, p, seed).table();
            else return bac_train(env, p, seed).table();
        },
        variant.params);
}

MetricsTable merge_seed_tables(std::span<const MetricsTable> tables) {
    if (tables.empty()) throw InvalidArgument("no tables to merge");
    const auto& cols = tables.front().columns;
    if (cols.empty()) throw InvalidArgument("tables have no columns");
    for (const auto& t : tables) {
        if (t.columns != cols) throw ShapeError("seed tables do not share a schema");
    }

    std::map<double, std::vector<const std::vector<double>*>> by_index;
    for (const auto& t : tables) {
        for (const auto& row : t.rows) by_index[row.at(0)].push_back(&row);
    }

    MetricsTable out;
    out.columns = {cols[0], "n"};
    for (std::size_t c = 1; c < cols.size(); ++c) {
        out.columns.push_back(cols[c] + "_mean");
        out.columns.push_back(cols[c] + "_std");
    }
    for (const auto& [index, rows] : by_index) {
        std::vector<double> row{index, static_cast<double>(rows.size())};
        for (std::size_t c = 1; c < cols.size(); ++c) {
            double sum = 0.0;
            std::size_t n = 0;
            for (const auto* r : rows) {
                if (!std::isnan((*r)[c])) {
                    sum += (*r)[c];
                    ++n;
                }
            }
            const double mean = n > 0 ? sum / static_cast<double>(n) : kMissing;
            double ss = 0.0;
            for (const auto* r : rows) {
                if (!std::isnan((*r)[c])) ss += ((*r)[c] - mean) * ((*r)[c] - mean);
            }
            row.push_back(mean);
            row.push_back(n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : kMissing);
        }
        out.rows.push_back(std::move(row));
    }
    return out;
}

MetricsTable stack_seed_tables(std::span<const std::uint64_t> seeds, std::span<const MetricsTable> tables) {
    if (seeds.size() != tables.size()) throw ShapeError("one table per seed required");
    MetricsTable out;
    if (tables.empty()) return out;
    out.columns = {"seed"};
    out.columns.insert(out.columns.end(), tables.front().columns.begin(), tables.front().columns.end());
    for (std::size_t i = 0; i < tables.size(); ++i) {
        if (tables[i].columns != tables.front().columns) throw ShapeError("seed tables do not share a schema");
        for (const auto& r : tables[i].rows) {
            std::vector<double> row{static_cast<double>(seeds[i])};
            row.insert(row.end(), r.begin(), r.end());
            out.rows.push_back(std::move(row));
        }
    }
    return out;
}

unsigned worker_count(std::size_t jobs) {
    unsigned cap = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("VOLTPOMDP_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && v > 0) cap = static_cast<unsigned>(v);
    }
    return static_cast<unsigned>(std::max<std::size_t>(1, std::min<std::size_t>(cap, jobs)));
}

std::string library_version() { return VOLTPOMDP_VERSION; }

RunOutput run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir) {
    if (cfg.seeds.empty()) throw InvalidArgument("no seeds to run");
    if (cfg.variants.empty()) throw InvalidArgument("no variants to run");

    struct Job {
        std::size_t variant;
        std::size_t seed;
    };
    std::vector<Job> jobs;
    for (std::size_t v = 0; v < cfg.variants.size(); ++v) {
        for (std::size_t s = 0; s < cfg.seeds.size(); ++s) jobs.push_back({v, s});
    }
    std::vector<MetricsTable> tables(jobs.size());
    std::vector<std::exception_ptr> errors(jobs.size());
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t j = next++; j < jobs.size(); j = next++) {
            try {
                tables[j] = run_variant(cfg.variants[jobs[j].variant], cfg.seeds[jobs[j].seed]);
            } catch (...) {
                errors[j] = std::current_exception();
            }
        }
    };
    const unsigned n_workers = worker_count(jobs.size());
    if (n_workers == 1) {
        work();
    } else {
        std::vector<std::jthread> pool;
        for (unsigned w = 0; w < n_workers; ++w) pool.emplace_back(work);
    }
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }

    RunOutput out;
    std::filesystem::create_directories(out_dir);
    for (std::size_t v = 0; v < cfg.variants.size(); ++v) {
        const auto dir = out_dir / cfg.variants[v].name;
        std::filesystem::create_directories(dir);
        const std::span<const MetricsTable> mine(tables.data() + v * cfg.seeds.size(), cfg.seeds.size());
        for (std::size_t s = 0; s < cfg.seeds.size(); ++s) {
            const auto path = dir / ("seed_" + std::to_string(cfg.seeds[s]) + ".csv");
            mine[s].write_csv(path);
            out.files.push_back(path);
        }
        stack_seed_tables(cfg.seeds, mine).write_csv(dir / "runs.csv");
        out.files.push_back(dir / "runs.csv");
        merge_seed_tables(mine).write_csv(dir / "merged.csv");
        out.files.push_back(dir / "merged.csv");
    }

    json manifest;
    manifest["format"] = kManifestFormat;
    manifest["version"] = library_version();
    manifest["config"] = json::parse(to_json(cfg));
    json cases = json::object();
    for (const auto& v : cfg.variants) cases[v.env.case_file] = hex(fnv1a(v.env.case_file));
    manifest["case_files_fnv1a64"] = cases;
    manifest["artifacts"] = json::array();
    for (const auto& f : out.files) {
        manifest["artifacts"].push_back(
            json{{"path", std::filesystem::relative(f, out_dir).generic_string()}, {"fnv1a64", hex(fnv1a(f))}});
    }
    out.manifest = out_dir / "manifest.json";
    std::ofstream(out.manifest) << manifest.dump(2) << '\n';
    return out;
}

namespace {

struct Series {
    std::vector<double> index;
    std::vector<double> values;
};

std::map<std::uint64_t, Series> split_by_seed(const MetricsTable& t, const std::string& metric, const char* which) {
    if (!t.has_column(metric)) throw InvalidArgument(std::string(which) + " has no column '" + metric + "'");
    const bool seeded = t.has_column("seed");
    const std::size_t m = t.column_index(metric);
    const std::size_t s = seeded ? t.column_index("seed") : 0;
    const std::size_t idx = seeded ? 1 : 0;
    if (t.columns.size() <= idx) throw InvalidArgument(std::string(which) + " has no index column");
    std::map<std::uint64_t, Series> out;
    for (const auto& row : t.rows) {
        auto& series = out[seeded ? static_cast<std::uint64_t>(row[s]) : 0];
        series.index.push_back(row[idx]);
        series.values.push_back(row[m]);
    }
    return out;
}

int winner(double a, double b, bool lower_wins) {
    const bool na = std::isnan(a), nb = std::isnan(b);
    if (na && nb) return 0;
    if (na) return 1;
    if (nb) return -1;
    if (a == b) return 0;
    return (a < b) == lower_wins ? -1 : 1;
}

std::string verdict(int a_wins, int b_wins, const std::string& a, const std::string& b, const std::string& claim) {
    if (a_wins == b_wins) return "tie";
    return (a_wins > b_wins ? a : b) + " " + claim;
}

}  // namespace

MetricsTable CompareReport::table() const {
    MetricsTable t;
    t.columns = {"seed", "a_episodes_to_threshold", "b_episodes_to_threshold", "a_final_mean", "b_final_mean",
                 "reach_winner", "final_winner"};
    for (const auto& s : seeds) {
        t.rows.push_back({static_cast<double>(s.seed), s.a_reach, s.b_reach, s.a_final, s.b_final,
                          static_cast<double>(s.reach_winner), static_cast<double>(s.final_winner)});
    }
    return t;
}

CompareReport compare_runs(const MetricsTable& a, const MetricsTable& b, const CompareOptions& opts) {
    if (opts.final_window == 0) throw InvalidArgument("final window must be positive");
    const auto sa = split_by_seed(a, opts.metric, "a");
    const auto sb = split_by_seed(b, opts.metric, "b");
    CompareReport report;
    for (const auto& [seed, xa] : sa) {
        const auto it = sb.find(seed);
        if (it == sb.end()) continue;
        const auto& xb = it->second;
        SeedComparison c;
        c.seed = seed;
        auto reach = [&](const Series& x) {
            for (std::size_t i = 0; i < x.values.size(); ++i) {
                const double v = x.values[i];
                if (!std::isnan(v) && (opts.lower_is_better ? v <= opts.threshold : v >= opts.threshold)) {
                    return static_cast<double>(i + 1);
                }
            }
            return kMissing;
        };
        auto final_mean = [&](const Series& x) {
            const std::size_t n = std::min(opts.final_window, x.values.size());
            double sum = 0.0;
            std::size_t k = 0;
            for (std::size_t i = x.values.size() - n; i < x.values.size(); ++i) {
                if (!std::isnan(x.values[i])) {
                    sum += x.values[i];
                    ++k;
                }
            }
            return k > 0 ? sum / static_cast<double>(k) : kMissing;
        };
        c.a_reach = reach(xa);
        c.b_reach = reach(xb);
        c.a_final = final_mean(xa);
        c.b_final = final_mean(xb);
        c.reach_winner = winner(c.a_reach, c.b_reach, true);
        c.final_winner = winner(c.a_final, c.b_final, opts.lower_is_better);
        report.a_reach_wins += c.reach_winner < 0;
        report.b_reach_wins += c.reach_winner > 0;
        report.a_final_wins += c.final_winner < 0;
        report.b_final_wins += c.final_winner > 0;
        report.seeds.push_back(c);
    }
    if (report.seeds.empty()) throw InvalidArgument("the two files share no seeds");
    std::ostringstream thr;
    thr << format_number(opts.threshold);
    report.reach_verdict = verdict(report.a_reach_wins, report.b_reach_wins, opts.label_a, opts.label_b,
                                   "reaches " + opts.metric + (opts.lower_is_better ? " <= " : " >= ") + thr.str() +
                                       " in fewer episodes");
    report.final_verdict = verdict(report.a_final_wins, report.b_final_wins, opts.label_a, opts.label_b,
                                   std::string("has the ") + (opts.lower_is_better ? "lower" : "higher") +
                                       " final-window " + opts.metric);
    return report;
}

}  // namespace voltpomdp
