#include "rankguard/config.hpp"

#include "rankguard/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

namespace rankguard::config {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& what) { throw ConfigError("config: " + what); }

void require_keys(const json& obj, const std::string& where,
                  const std::set<std::string>& allowed) {
    if (!obj.is_object()) fail("'" + where + "' must be an object");
    for (const auto& [key, _] : obj.items()) {
        if (allowed.find(key) == allowed.end()) {
            fail("unknown key '" + key + "' in '" + where + "'");
        }
    }
}

double get_number(const json& obj, const std::string& where, const std::string& key,
                  double fallback) {
    if (!obj.contains(key)) return fallback;
    const auto& v = obj.at(key);
    if (!v.is_number()) fail("'" + where + "." + key + "' must be a number");
    return v.get<double>();
}

int get_int(const json& obj, const std::string& where, const std::string& key,
            int fallback) {
    if (!obj.contains(key)) return fallback;
    const auto& v = obj.at(key);
    if (!v.is_number_integer()) fail("'" + where + "." + key + "' must be an integer");
    return v.get<int>();
}

bool get_bool(const json& obj, const std::string& where, const std::string& key,
              bool fallback) {
    if (!obj.contains(key)) return fallback;
    const auto& v = obj.at(key);
    if (!v.is_boolean()) fail("'" + where + "." + key + "' must be a boolean");
    return v.get<bool>();
}

std::string get_string(const json& obj, const std::string& where, const std::string& key,
                       const std::string& fallback) {
    if (!obj.contains(key)) return fallback;
    const auto& v = obj.at(key);
    if (!v.is_string()) fail("'" + where + "." + key + "' must be a string");
    return v.get<std::string>();
}

void check_date(const std::string& where, const std::string& iso) {
    try {
        (void)dates::to_serial(iso);
    } catch (const DataError&) {
        fail("'" + where + "' is not a YYYY-MM-DD date: '" + iso + "'");
    }
}

RegimeScript parse_script(const json& j) {
    require_keys(j, "input.script",
                 {"start_date", "universe_size", "hetero_strength",
                  "couple_stress_efficacy", "emit_secondary", "segments"});
    const std::string start = get_string(j, "input.script", "start_date", "2016-02-01");
    check_date("input.script.start_date", start);
    const int universe = get_int(j, "input.script", "universe_size", 60);
    if (universe < 4) fail("'input.script.universe_size' must be >= 4");

    if (!j.contains("segments") || !j.at("segments").is_array() ||
        j.at("segments").empty()) {
        fail("'input.script.segments' must be a non-empty array");
    }
    std::vector<SegmentSpec> specs;
    for (const auto& seg : j.at("segments")) {
        require_keys(seg, "input.script.segments[]",
                     {"days", "target_ic", "noise_scale", "stress_level"});
        SegmentSpec spec;
        spec.n_days = get_int(seg, "segment", "days", 0);
        if (spec.n_days < 1) fail("'segments[].days' must be >= 1");
        spec.target_ic = get_number(seg, "segment", "target_ic", 0.0);
        spec.noise_scale = get_number(seg, "segment", "noise_scale", 1.0);
        spec.stress_level = get_number(seg, "segment", "stress_level", 0.5);
        specs.push_back(spec);
    }
    RegimeScript script = build_script(start, specs, universe, 0);
    script.hetero_strength = get_number(j, "input.script", "hetero_strength", 1.2);
    script.couple_stress_efficacy =
        get_bool(j, "input.script", "couple_stress_efficacy", false);
    script.emit_secondary = get_bool(j, "input.script", "emit_secondary", true);
    return script;
}

void validate(const RunConfig& cfg) {
    if (cfg.script.has_value() == cfg.csv_path.has_value()) {
        fail("'input' must hold exactly one of 'script' or 'csv'");
    }
    if (cfg.horizons.empty()) fail("'horizons' must be non-empty");
    for (int h : cfg.horizons) {
        if (std::find(kHorizons.begin(), kHorizons.end(), h) == kHorizons.end()) {
            fail("unsupported horizon " + std::to_string(h));
        }
    }
    if (std::set<int>(cfg.horizons.begin(), cfg.horizons.end()).size() !=
        cfg.horizons.size()) {
        fail("'horizons' contains duplicates");
    }
    if (std::find(kHorizons.begin(), kHorizons.end(), cfg.uq_horizon) == kHorizons.end()) {
        fail("unsupported uq_horizon " + std::to_string(cfg.uq_horizon));
    }
    if (cfg.folds.n_folds < 2) fail("'folds.n_folds' must be >= 2");
    if (cfg.folds.embargo_days < 0) fail("'folds.embargo_days' must be >= 0");
    if (cfg.folds.min_train_folds < 1) fail("'folds.min_train_folds' must be >= 1");
    check_date("dev_final_split", cfg.dev_final_split);

    if (cfg.gx.n_estimators < 1) fail("'gx.n_estimators' must be >= 1");
    if (cfg.gx.max_depth < 1) fail("'gx.max_depth' must be >= 1");
    if (cfg.gx.num_leaves < 2) fail("'gx.num_leaves' must be >= 2");
    if (cfg.gx.min_child_samples < 1) fail("'gx.min_child_samples' must be >= 1");
    if (!(cfg.gx.learning_rate > 0.0)) fail("'gx.learning_rate' must be > 0");
    if (!(cfg.gx.row_subsample > 0.0 && cfg.gx.row_subsample <= 1.0)) {
        fail("'gx.row_subsample' must lie in (0,1]");
    }
    if (!(cfg.gx.col_subsample > 0.0 && cfg.gx.col_subsample <= 1.0)) {
        fail("'gx.col_subsample' must lie in (0,1]");
    }

    if (cfg.aleatoric.window < 0) fail("'aleatoric.window' must be >= 0");
    if (!(cfg.aleatoric.quantile_level > 0.0 && cfg.aleatoric.quantile_level < 1.0)) {
        fail("'aleatoric.quantile_level' must lie in (0,1)");
    }

    if (!(cfg.gate.halflife > 0.0)) fail("'gate.halflife' must be > 0");
    if (cfg.gate.min_periods < 2) fail("'gate.min_periods' must be >= 2");
    if (cfg.gate.alpha < 0.0 || cfg.gate.beta < 0.0) {
        fail("'gate.alpha' and 'gate.beta' must be >= 0");
    }
    if (!(cfg.gate.theta > 0.0 && cfg.gate.theta < 1.0)) {
        fail("'gate.theta' must lie in (0,1)");
    }

    if (cfg.policies.empty()) fail("'policies' must be non-empty");
    if (std::set<policy::Variant>(cfg.policies.begin(), cfg.policies.end()).size() !=
        cfg.policies.size()) {
        fail("'policies' contains duplicates");
    }
    if (cfg.legs < 1) fail("'legs' must be >= 1");
    if (cfg.cost_bps < 0.0) fail("'cost_bps' must be >= 0");

    if (!(cfg.conformal.nominal > 0.0 && cfg.conformal.nominal < 1.0)) {
        fail("'conformal.nominal' must lie in (0,1)");
    }
    if (cfg.conformal.window < 10) fail("'conformal.window' must be >= 10");
    if (cfg.conformal.min_scores < 1) fail("'conformal.min_scores' must be >= 1");
    if (cfg.conformal.normalizers.empty()) fail("'conformal.normalizers' must be non-empty");
    if (std::set<conformal::Normalizer>(cfg.conformal.normalizers.begin(),
                                        cfg.conformal.normalizers.end())
            .size() != cfg.conformal.normalizers.size()) {
        fail("'conformal.normalizers' contains duplicates");
    }

    if (cfg.crisis) {
        check_date("crisis.begin", cfg.crisis->begin);
        check_date("crisis.end", cfg.crisis->end);
        if (cfg.crisis->end < cfg.crisis->begin) {
            fail("'crisis.end' precedes 'crisis.begin'");
        }
    }
    if (cfg.out_dir.empty()) fail("'out_dir' must be non-empty");
}

conformal::Normalizer normalizer_from_name(const std::string& name) {
    for (auto n : {conformal::Normalizer::kRaw, conformal::Normalizer::kVol,
                   conformal::Normalizer::kDeupOracle, conformal::Normalizer::kDeupPit}) {
        if (conformal::normalizer_name(n) == name) return n;
    }
    fail("unknown conformal normalizer '" + name + "'");
}

} // namespace

std::string_view aleatoric_mode_name(deup::AleatoricMode mode) {
    switch (mode) {
        case deup::AleatoricMode::kOracle: return "oracle";
        case deup::AleatoricMode::kPitRolling: return "pit_rolling";
        case deup::AleatoricMode::kExpanding: return "expanding";
        case deup::AleatoricMode::kTier0Iqr: return "tier0_iqr";
    }
    throw InvalidValue("aleatoric_mode_name: unknown mode");
}

deup::AleatoricMode aleatoric_mode_from_name(std::string_view name) {
    for (auto m : {deup::AleatoricMode::kOracle, deup::AleatoricMode::kPitRolling,
                   deup::AleatoricMode::kExpanding, deup::AleatoricMode::kTier0Iqr}) {
        if (aleatoric_mode_name(m) == name) return m;
    }
    fail("unknown aleatoric mode '" + std::string(name) + "'");
}

RunConfig default_run_config() {
    RunConfig cfg;
    cfg.script = default_script(cfg.seed);
    return cfg;
}

RunConfig parse_run_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        fail(std::string("not valid JSON: ") + e.what());
    }
    require_keys(j, "<root>",
                 {"input", "horizons", "uq_horizon", "folds", "dev_final_split", "gx",
                  "aleatoric", "gate", "policies", "legs", "cost_bps", "conformal",
                  "crisis", "out_dir", "seed"});

    RunConfig cfg;
    cfg.script.reset();

    if (!j.contains("input")) fail("missing required 'input' block");
    const auto& input = j.at("input");
    require_keys(input, "input", {"script", "csv"});
    if (input.contains("script") && input.contains("csv")) {
        fail("'input' must hold exactly one of 'script' or 'csv'");
    }
    if (input.contains("script")) {
        cfg.script = parse_script(input.at("script"));
    } else if (input.contains("csv")) {
        const std::string path = get_string(input, "input", "csv", "");
        if (path.empty()) fail("'input.csv' must be a non-empty path");
        cfg.csv_path = path;
    } else {
        fail("'input' must hold exactly one of 'script' or 'csv'");
    }

    if (j.contains("horizons")) {
        if (!j.at("horizons").is_array()) fail("'horizons' must be an array");
        cfg.horizons.clear();
        for (const auto& h : j.at("horizons")) {
            if (!h.is_number_integer()) fail("'horizons' entries must be integers");
            cfg.horizons.push_back(h.get<int>());
        }
    }
    cfg.uq_horizon = get_int(j, "<root>", "uq_horizon", cfg.uq_horizon);

    if (j.contains("folds")) {
        const auto& f = j.at("folds");
        require_keys(f, "folds", {"n_folds", "embargo_days", "min_train_folds"});
        cfg.folds.n_folds = get_int(f, "folds", "n_folds", cfg.folds.n_folds);
        cfg.folds.embargo_days = get_int(f, "folds", "embargo_days", cfg.folds.embargo_days);
        cfg.folds.min_train_folds =
            get_int(f, "folds", "min_train_folds", cfg.folds.min_train_folds);
    }
    cfg.dev_final_split = get_string(j, "<root>", "dev_final_split", cfg.dev_final_split);

    if (j.contains("gx")) {
        const auto& g = j.at("gx");
        require_keys(g, "gx",
                     {"n_estimators", "max_depth", "num_leaves", "min_child_samples",
                      "learning_rate", "row_subsample", "col_subsample"});
        cfg.gx.n_estimators = get_int(g, "gx", "n_estimators", cfg.gx.n_estimators);
        cfg.gx.max_depth = get_int(g, "gx", "max_depth", cfg.gx.max_depth);
        cfg.gx.num_leaves = get_int(g, "gx", "num_leaves", cfg.gx.num_leaves);
        cfg.gx.min_child_samples =
            get_int(g, "gx", "min_child_samples", cfg.gx.min_child_samples);
        cfg.gx.learning_rate = get_number(g, "gx", "learning_rate", cfg.gx.learning_rate);
        cfg.gx.row_subsample = get_number(g, "gx", "row_subsample", cfg.gx.row_subsample);
        cfg.gx.col_subsample = get_number(g, "gx", "col_subsample", cfg.gx.col_subsample);
    }

    if (j.contains("aleatoric")) {
        const auto& a = j.at("aleatoric");
        require_keys(a, "aleatoric", {"mode", "window", "quantile_level"});
        cfg.aleatoric.mode = aleatoric_mode_from_name(get_string(
            a, "aleatoric", "mode", std::string(aleatoric_mode_name(cfg.aleatoric.mode))));
        cfg.aleatoric.window = get_int(a, "aleatoric", "window", cfg.aleatoric.window);
        cfg.aleatoric.quantile_level =
            get_number(a, "aleatoric", "quantile_level", cfg.aleatoric.quantile_level);
    }

    if (j.contains("gate")) {
        const auto& g = j.at("gate");
        require_keys(g, "gate", {"halflife", "min_periods", "alpha", "beta", "theta"});
        cfg.gate.halflife = get_number(g, "gate", "halflife", cfg.gate.halflife);
        cfg.gate.min_periods = get_int(g, "gate", "min_periods", cfg.gate.min_periods);
        cfg.gate.alpha = get_number(g, "gate", "alpha", cfg.gate.alpha);
        cfg.gate.beta = get_number(g, "gate", "beta", cfg.gate.beta);
        cfg.gate.theta = get_number(g, "gate", "theta", cfg.gate.theta);
    }

    if (j.contains("policies")) {
        if (!j.at("policies").is_array()) fail("'policies' must be an array");
        cfg.policies.clear();
        for (const auto& p : j.at("policies")) {
            if (!p.is_string()) fail("'policies' entries must be strings");
            try {
                cfg.policies.push_back(policy::variant_from_name(p.get<std::string>()));
            } catch (const ConfigError&) {
                fail("unknown policy variant '" + p.get<std::string>() + "'");
            }
        }
    }
    cfg.legs = get_int(j, "<root>", "legs", cfg.legs);
    cfg.cost_bps = get_number(j, "<root>", "cost_bps", cfg.cost_bps);

    if (j.contains("conformal")) {
        const auto& c = j.at("conformal");
        require_keys(c, "conformal", {"nominal", "window", "min_scores", "normalizers"});
        cfg.conformal.nominal = get_number(c, "conformal", "nominal", cfg.conformal.nominal);
        cfg.conformal.window = get_int(c, "conformal", "window", cfg.conformal.window);
        cfg.conformal.min_scores =
            get_int(c, "conformal", "min_scores", cfg.conformal.min_scores);
        if (c.contains("normalizers")) {
            if (!c.at("normalizers").is_array()) fail("'conformal.normalizers' must be an array");
            cfg.conformal.normalizers.clear();
            for (const auto& n : c.at("normalizers")) {
                if (!n.is_string()) fail("'conformal.normalizers' entries must be strings");
                cfg.conformal.normalizers.push_back(
                    normalizer_from_name(n.get<std::string>()));
            }
        }
    }

    if (j.contains("crisis") && !j.at("crisis").is_null()) {
        const auto& c = j.at("crisis");
        require_keys(c, "crisis", {"begin", "end"});
        portfolio::CrisisWindow w;
        w.begin = get_string(c, "crisis", "begin", "");
        w.end = get_string(c, "crisis", "end", "");
        cfg.crisis = w;
    }

    cfg.out_dir = get_string(j, "<root>", "out_dir", cfg.out_dir);
    if (j.contains("seed")) {
        const auto& s = j.at("seed");
        if (!s.is_number_integer() || (s.is_number_integer() && s.get<long long>() < 0)) {
            fail("'seed' must be a non-negative integer");
        }
        cfg.seed = s.get<std::uint64_t>();
    }

    validate(cfg);
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail("cannot open config file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_run_config(buf.str());
}

void validate_run_config(const RunConfig& cfg) { validate(cfg); }

std::string canonical_json(const RunConfig& cfg) {
    validate(cfg);
    json j;
    json input;
    if (cfg.script) {
        json s;
        s["start_date"] = cfg.script->segments.front().start_date;
        s["universe_size"] = cfg.script->universe_size;
        s["hetero_strength"] = cfg.script->hetero_strength;
        s["couple_stress_efficacy"] = cfg.script->couple_stress_efficacy;
        s["emit_secondary"] = cfg.script->emit_secondary;
        json segs = json::array();
        for (const auto& seg : cfg.script->segments) {
            json e;
            e["days"] = static_cast<int>(
                dates::business_days(seg.start_date, seg.end_date).size());
            e["target_ic"] = seg.target_ic;
            e["noise_scale"] = seg.noise_scale;
            e["stress_level"] = seg.stress_level;
            segs.push_back(e);
        }
        s["segments"] = segs;
        input["script"] = s;
    } else {
        input["csv"] = *cfg.csv_path;
    }
    j["input"] = input;

    std::vector<int> horizons = cfg.horizons;
    std::sort(horizons.begin(), horizons.end());
    j["horizons"] = horizons;
    j["uq_horizon"] = cfg.uq_horizon;
    j["folds"] = {{"n_folds", cfg.folds.n_folds},
                  {"embargo_days", cfg.folds.embargo_days},
                  {"min_train_folds", cfg.folds.min_train_folds}};
    j["dev_final_split"] = cfg.dev_final_split;
    j["gx"] = {{"n_estimators", cfg.gx.n_estimators},
               {"max_depth", cfg.gx.max_depth},
               {"num_leaves", cfg.gx.num_leaves},
               {"min_child_samples", cfg.gx.min_child_samples},
               {"learning_rate", cfg.gx.learning_rate},
               {"row_subsample", cfg.gx.row_subsample},
               {"col_subsample", cfg.gx.col_subsample}};
    j["aleatoric"] = {{"mode", std::string(aleatoric_mode_name(cfg.aleatoric.mode))},
                      {"window", cfg.aleatoric.window},
                      {"quantile_level", cfg.aleatoric.quantile_level}};
    j["gate"] = {{"halflife", cfg.gate.halflife},
                 {"min_periods", cfg.gate.min_periods},
                 {"alpha", cfg.gate.alpha},
                 {"beta", cfg.gate.beta},
                 {"theta", cfg.gate.theta}};
    json policies = json::array();
    for (auto p : cfg.policies) policies.push_back(std::string(policy::variant_name(p)));
    j["policies"] = policies;
    j["legs"] = cfg.legs;
    j["cost_bps"] = cfg.cost_bps;
    json normalizers = json::array();
    for (auto n : cfg.conformal.normalizers) {
        normalizers.push_back(std::string(conformal::normalizer_name(n)));
    }
    j["conformal"] = {{"nominal", cfg.conformal.nominal},
                      {"window", cfg.conformal.window},
                      {"min_scores", cfg.conformal.min_scores},
                      {"normalizers", normalizers}};
    if (cfg.crisis) {
        j["crisis"] = {{"begin", cfg.crisis->begin}, {"end", cfg.crisis->end}};
    } else {
        j["crisis"] = nullptr;
    }
    j["seed"] = cfg.seed;
    // out_dir is a location, not a computation parameter: runs of the same
    // config into different directories must hash (and diff) identical.
    return j.dump(2);
}

std::string config_hash(const RunConfig& cfg) {
    const std::string text = canonical_json(cfg);
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17] = {};
    for (int i = 15; i >= 0; --i) {
        buf[i] = "0123456789abcdef"[h & 0xF];
        h >>= 4;
    }
    return std::string(buf, 16);
}

} // namespace rankguard::config
