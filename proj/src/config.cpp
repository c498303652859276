#include "voxdiff/config.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "voxdiff/errors.hpp"

namespace voxdiff {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& origin, const std::string& msg) {
    throw ConfigError(origin + ": " + msg);
}

// Rejects keys outside `allowed` so typos never silently fall back to
// defaults.
void check_keys(const json& obj, const std::set<std::string>& allowed,
                const std::string& origin, const std::string& section) {
    for (auto it = obj.begin(); it != obj.end(); ++it)
        if (!allowed.count(it.key()))
            fail(origin, "unknown key \"" + it.key() + "\" in " + section);
}

const json* field(const json& obj, const char* key) {
    auto it = obj.find(key);
    return it == obj.end() ? nullptr : &*it;
}

int get_int(const json& v, const std::string& origin, const std::string& what) {
    if (!v.is_number_integer())
        fail(origin, what + " must be an integer");
    return v.get<int>();
}

double get_double(const json& v, const std::string& origin, const std::string& what) {
    if (!v.is_number())
        fail(origin, what + " must be a number");
    double x = v.get<double>();
    if (!std::isfinite(x))
        fail(origin, what + " must be finite");
    return x;
}

bool get_bool(const json& v, const std::string& origin, const std::string& what) {
    if (!v.is_boolean())
        fail(origin, what + " must be a boolean");
    return v.get<bool>();
}

std::string get_string(const json& v, const std::string& origin, const std::string& what) {
    if (!v.is_string())
        fail(origin, what + " must be a string");
    return v.get<std::string>();
}

// Paths written in a config file are relative to the file, not to wherever
// the tool happens to run.
std::string resolve(const std::string& p, const std::string& origin) {
    if (p.empty())
        return p;
    std::filesystem::path path(p);
    if (path.is_absolute() || origin == "<builtin>")
        return p;
    return (std::filesystem::path(origin).parent_path() / path).string();
}

void parse_schedule(const json& obj, ScheduleConfig& s, const std::string& origin) {
    check_keys(obj, {"T", "betas"}, origin, "schedule");
    if (const json* v = field(obj, "T"))
        s.T = get_int(*v, origin, "schedule.T");
    if (const json* v = field(obj, "betas")) {
        if (v->is_string()) {
            if (v->get<std::string>() != "default")
                fail(origin, "schedule.betas must be \"default\" or an array of numbers");
            s.betas.clear();
        } else if (v->is_array()) {
            s.betas.clear();
            for (const json& b : *v)
                s.betas.push_back(get_double(b, origin, "schedule.betas entry"));
        } else {
            fail(origin, "schedule.betas must be \"default\" or an array of numbers");
        }
    }
}

Dims3 parse_dims(const json& v, const std::string& origin) {
    if (!v.is_array() || v.size() != 3)
        fail(origin, "each pyramid scale must be an [h, w, d] triple");
    return Dims3{get_int(v[0], origin, "scale h"), get_int(v[1], origin, "scale w"),
                 get_int(v[2], origin, "scale d")};
}

void parse_pyramid(const json& obj, PyramidConfig& p, const std::string& origin) {
    check_keys(obj,
               {"scales", "saf_mode", "start_from_scale", "deterministic", "keep_intermediate"},
               origin, "pyramid");
    if (const json* v = field(obj, "scales")) {
        if (!v->is_array() || v->empty())
            fail(origin, "pyramid.scales must be a non-empty array");
        p.spec.scales.clear();
        for (const json& s : *v)
            p.spec.scales.push_back(parse_dims(s, origin));
    }
    if (const json* v = field(obj, "saf_mode")) {
        try {
            p.saf_mode = saf_mode_from_string(get_string(*v, origin, "pyramid.saf_mode"));
        } catch (const ConfigError& e) {
            fail(origin, e.what());
        }
    }
    if (const json* v = field(obj, "start_from_scale"))
        p.start_from_scale = get_int(*v, origin, "pyramid.start_from_scale");
    if (const json* v = field(obj, "deterministic"))
        p.deterministic = get_bool(*v, origin, "pyramid.deterministic");
    if (const json* v = field(obj, "keep_intermediate"))
        p.keep_intermediate = get_bool(*v, origin, "pyramid.keep_intermediate");
}

void parse_layout(const json& obj, LayoutConfig& l, const std::string& origin) {
    check_keys(obj, {"rows", "cols", "overlap"}, origin, "layout");
    if (const json* v = field(obj, "rows"))
        l.rows = get_int(*v, origin, "layout.rows");
    if (const json* v = field(obj, "cols"))
        l.cols = get_int(*v, origin, "layout.cols");
    if (const json* v = field(obj, "overlap"))
        l.overlap = get_double(*v, origin, "layout.overlap");
}

void parse_train(const json& obj, TrainConfig& t, const std::string& origin) {
    check_keys(obj,
               {"learning_rate", "beta1", "beta2", "epsilon", "weight_decay", "epochs",
                "batch_size", "lambda", "augment", "diagnostics_dir"},
               origin, "train");
    if (const json* v = field(obj, "learning_rate"))
        t.learning_rate = get_double(*v, origin, "train.learning_rate");
    if (const json* v = field(obj, "beta1"))
        t.beta1 = get_double(*v, origin, "train.beta1");
    if (const json* v = field(obj, "beta2"))
        t.beta2 = get_double(*v, origin, "train.beta2");
    if (const json* v = field(obj, "epsilon"))
        t.epsilon = get_double(*v, origin, "train.epsilon");
    if (const json* v = field(obj, "weight_decay"))
        t.weight_decay = get_double(*v, origin, "train.weight_decay");
    if (const json* v = field(obj, "epochs"))
        t.epochs = get_int(*v, origin, "train.epochs");
    if (const json* v = field(obj, "batch_size"))
        t.batch_size = get_int(*v, origin, "train.batch_size");
    if (const json* v = field(obj, "lambda"))
        t.lambda_aux = get_double(*v, origin, "train.lambda");
    if (const json* v = field(obj, "augment")) {
        check_keys(*v, {"flip_x", "flip_y", "rotate_z"}, origin, "train.augment");
        if (const json* f = field(*v, "flip_x"))
            t.augment.flip_x = get_bool(*f, origin, "train.augment.flip_x");
        if (const json* f = field(*v, "flip_y"))
            t.augment.flip_y = get_bool(*f, origin, "train.augment.flip_y");
        if (const json* f = field(*v, "rotate_z"))
            t.augment.rotate_z = get_bool(*f, origin, "train.augment.rotate_z");
    }
    if (const json* v = field(obj, "diagnostics_dir"))
        t.diagnostics_dir = resolve(get_string(*v, origin, "train.diagnostics_dir"), origin);
}

void parse_eval(const json& obj, EvalConfig& e, const std::string& origin) {
    check_keys(obj, {"sample_count", "mmd_bandwidth", "ignore_index"}, origin, "eval");
    if (const json* v = field(obj, "sample_count"))
        e.sample_count = get_int(*v, origin, "eval.sample_count");
    if (const json* v = field(obj, "mmd_bandwidth"))
        e.mmd_bandwidth = get_double(*v, origin, "eval.mmd_bandwidth");
    if (const json* v = field(obj, "ignore_index"))
        e.ignore_index = get_int(*v, origin, "eval.ignore_index");
}

void parse_paths(const json& obj, PathsConfig& p, const std::string& origin) {
    check_keys(obj, {"models", "data", "out"}, origin, "paths");
    if (const json* v = field(obj, "models")) {
        if (!v->is_array())
            fail(origin, "paths.models must be an array of checkpoint paths");
        p.models.clear();
        for (const json& m : *v)
            p.models.push_back(resolve(get_string(m, origin, "paths.models entry"), origin));
    }
    if (const json* v = field(obj, "data"))
        p.data = resolve(get_string(*v, origin, "paths.data"), origin);
    if (const json* v = field(obj, "out"))
        p.out = resolve(get_string(*v, origin, "paths.out"), origin);
}

} // namespace

RunConfig parse_run_config(const std::string& json_text, const std::string& origin) {
    json root;
    try {
        root = json::parse(json_text);
    } catch (const json::exception& e) {
        fail(origin, std::string("invalid JSON: ") + e.what());
    }
    if (!root.is_object())
        fail(origin, "top level must be a JSON object");
    check_keys(root, {"seed", "schedule", "pyramid", "layout", "train", "eval", "paths"},
               origin, "the top level");

    RunConfig cfg;
    cfg.origin = origin;
    if (const json* v = field(root, "seed")) {
        if (!v->is_number_unsigned())
            fail(origin, "seed must be a non-negative integer");
        cfg.seed = v->get<uint64_t>();
    }
    if (const json* v = field(root, "schedule"))
        parse_schedule(*v, cfg.schedule, origin);
    if (const json* v = field(root, "pyramid"))
        parse_pyramid(*v, cfg.pyramid, origin);
    if (const json* v = field(root, "layout"))
        parse_layout(*v, cfg.layout, origin);
    if (const json* v = field(root, "train"))
        parse_train(*v, cfg.train, origin);
    if (const json* v = field(root, "eval"))
        parse_eval(*v, cfg.eval, origin);
    if (const json* v = field(root, "paths"))
        parse_paths(*v, cfg.paths, origin);

    validate_run_config(cfg);
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw MissingArtifactError(path + ": cannot open config file");
    std::ostringstream text;
    text << in.rdbuf();
    return parse_run_config(text.str(), path);
}

void validate_run_config(RunConfig& cfg) {
    const std::string& origin = cfg.origin;

    if (!cfg.schedule.betas.empty()) {
        for (double b : cfg.schedule.betas)
            if (!(b >= 0.0 && b <= 1.0))
                fail(origin, "schedule.betas entries must lie in [0, 1]");
        cfg.schedule.T = int(cfg.schedule.betas.size());
    }
    if (cfg.schedule.T < 1)
        fail(origin, "schedule.T must be at least 1");

    try {
        validate_pyramid(cfg.pyramid.spec);
    } catch (const ConfigError& e) {
        fail(origin, e.what());
    }
    int levels = cfg.pyramid.spec.levels();
    if (cfg.pyramid.start_from_scale < 0 || cfg.pyramid.start_from_scale >= levels)
        fail(origin, "pyramid.start_from_scale must name one of the " +
                         std::to_string(levels) + " scales");

    if (cfg.layout.rows < 1 || cfg.layout.cols < 1)
        fail(origin, "layout.rows and layout.cols must be at least 1");
    if (!(cfg.layout.overlap >= 0.0 && cfg.layout.overlap < 1.0))
        fail(origin, "layout.overlap must lie in [0, 1)");

    // The train section inherits the single sources of truth for timestep
    // count, resampling mode, and seed.
    cfg.train.T = cfg.schedule.T;
    cfg.train.saf_mode = cfg.pyramid.saf_mode;
    cfg.train.seed = cfg.seed;
    try {
        validate_train_config(cfg.train);
    } catch (const ConfigError& e) {
        fail(origin, e.what());
    }

    if (cfg.eval.sample_count < 1)
        fail(origin, "eval.sample_count must be at least 1");
    if (std::isnan(cfg.eval.mmd_bandwidth) || std::isinf(cfg.eval.mmd_bandwidth))
        fail(origin, "eval.mmd_bandwidth must be finite");
    if (cfg.eval.ignore_index < -1)
        fail(origin, "eval.ignore_index must be a class id or -1 for none");

    if (!cfg.paths.models.empty() && int(cfg.paths.models.size()) != levels)
        fail(origin, "paths.models must list exactly one checkpoint per pyramid scale (" +
                         std::to_string(levels) + ")");
}

NoiseSchedule make_schedule(const ScheduleConfig& s) {
    if (s.betas.empty())
        return default_schedule(s.T);
    return schedule_from_betas(s.betas);
}

} // namespace voxdiff
