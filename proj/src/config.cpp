#include "t1cl/config.hpp"

#include <fstream>
#include <functional>
#include <sstream>

#include "json.hpp"

namespace t1cl {

namespace {

using nlohmann::json;

std::string fmt_double(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

std::size_t as_size(const json& v, const std::string& where) {
    if (!v.is_number_integer() || (v.is_number_integer() && v.get<long long>() < 0))
        throw config_error(where + " wants a non-negative integer");
    return v.get<std::size_t>();
}

std::uint64_t as_u64(const json& v, const std::string& where) {
    if (!v.is_number_integer() || v.get<long long>() < 0)
        throw config_error(where + " wants a non-negative integer");
    return v.get<std::uint64_t>();
}

double as_double(const json& v, const std::string& where) {
    if (!v.is_number()) throw config_error(where + " wants a number");
    return v.get<double>();
}

bool as_bool(const json& v, const std::string& where) {
    if (!v.is_boolean()) throw config_error(where + " wants true or false");
    return v.get<bool>();
}

std::string as_string(const json& v, const std::string& where) {
    if (!v.is_string()) throw config_error(where + " wants a string");
    return v.get<std::string>();
}

struct KeyDesc {
    const char* section;
    const char* key;
    const char* help;
    std::function<void(RunConfig&, const json&, const std::string&)> apply;
    std::function<std::string(const RunConfig&)> show;
};

const std::vector<KeyDesc>& key_table() {
    static const std::vector<KeyDesc> table = {
        {"kernel", "format", "fusion kernel factorization: cp, tt, or tr",
         [](RunConfig& c, const json& v, const std::string& w) {
             c.format = kernel_format_from_name(as_string(v, w));
         },
         [](const RunConfig& c) { return std::string(format_name(c.format)); }},
        {"kernel", "order", "contraction order p of the fusion layer",
         [](RunConfig& c, const json& v, const std::string& w) { c.order = as_size(v, w); },
         [](const RunConfig& c) { return std::to_string(c.order); }},
        {"kernel", "rank", "uniform factorization rank",
         [](RunConfig& c, const json& v, const std::string& w) { c.rank = as_size(v, w); },
         [](const RunConfig& c) { return std::to_string(c.rank); }},
        {"kernel", "shared", "tie all kernel cores to one shared core",
         [](RunConfig& c, const json& v, const std::string& w) { c.shared = as_bool(v, w); },
         [](const RunConfig& c) { return c.shared ? "true" : "false"; }},
        {"kernel", "add1", "append a constant-1 channel before fusing",
         [](RunConfig& c, const json& v, const std::string& w) { c.add1 = as_bool(v, w); },
         [](const RunConfig& c) { return c.add1 ? "true" : "false"; }},

        {"net", "blocks", "number of operation blocks",
         [](RunConfig& c, const json& v, const std::string& w) { c.blocks = as_size(v, w); },
         [](const RunConfig& c) { return std::to_string(c.blocks); }},
        {"net", "ops", "operations per block, drawn from the bank in order",
         [](RunConfig& c, const json& v, const std::string& w) { c.ops = as_size(v, w); },
         [](const RunConfig& c) { return std::to_string(c.ops); }},
        {"net", "channels", "feature channels inside the body",
         [](RunConfig& c, const json& v, const std::string& w) { c.channels = as_size(v, w); },
         [](const RunConfig& c) { return std::to_string(c.channels); }},
        {"net", "residual", "per-block skip connections",
         [](RunConfig& c, const json& v, const std::string& w) { c.residual = as_bool(v, w); },
         [](const RunConfig& c) { return c.residual ? "true" : "false"; }},

        {"train", "epochs", "training epochs",
         [](RunConfig& c, const json& v, const std::string& w) { c.epochs = as_size(v, w); },
         [](const RunConfig& c) { return std::to_string(c.epochs); }},
        {"train", "batch", "mini-batch size",
         [](RunConfig& c, const json& v, const std::string& w) { c.batch = as_size(v, w); },
         [](const RunConfig& c) { return std::to_string(c.batch); }},
        {"train", "seed", "master seed for init, data, and shuffling",
         [](RunConfig& c, const json& v, const std::string& w) { c.seed = as_u64(v, w); },
         [](const RunConfig& c) { return std::to_string(c.seed); }},
        {"train", "lr", "peak learning rate (cosine-annealed)",
         [](RunConfig& c, const json& v, const std::string& w) { c.lr = as_double(v, w); },
         [](const RunConfig& c) { return fmt_double(c.lr); }},
        {"train", "level", "distortion level: mild, moderate, or severe",
         [](RunConfig& c, const json& v, const std::string& w) {
             const std::string name = as_string(v, w);
             try {
                 c.level = distort_level_from_name(name);
             } catch (const std::invalid_argument& e) {
                 throw config_error(e.what());
             }
         },
         [](const RunConfig& c) { return std::string(distort_level_name(c.level)); }},
        {"train", "train_patches", "synthetic training patches",
         [](RunConfig& c, const json& v, const std::string& w) { c.train_patches = as_size(v, w); },
         [](const RunConfig& c) { return std::to_string(c.train_patches); }},
        {"train", "test_patches", "synthetic evaluation patches",
         [](RunConfig& c, const json& v, const std::string& w) { c.test_patches = as_size(v, w); },
         [](const RunConfig& c) { return std::to_string(c.test_patches); }},
        {"train", "side", "square patch side in pixels",
         [](RunConfig& c, const json& v, const std::string& w) { c.side = as_size(v, w); },
         [](const RunConfig& c) { return std::to_string(c.side); }},

        {"io", "checkpoint", "checkpoint path (written by train, read by ablate/hist)",
         [](RunConfig& c, const json& v, const std::string& w) { c.checkpoint = as_string(v, w); },
         [](const RunConfig& c) { return c.checkpoint; }},
        {"io", "loss_csv", "per-epoch loss curve path",
         [](RunConfig& c, const json& v, const std::string& w) { c.loss_csv = as_string(v, w); },
         [](const RunConfig& c) { return c.loss_csv; }},
        {"io", "ablation_csv", "ablation table path",
         [](RunConfig& c, const json& v, const std::string& w) { c.ablation_csv = as_string(v, w); },
         [](const RunConfig& c) { return c.ablation_csv; }},
        {"io", "histogram_csv", "feature histogram path",
         [](RunConfig& c, const json& v, const std::string& w) {
             c.histogram_csv = as_string(v, w);
         },
         [](const RunConfig& c) { return c.histogram_csv; }},
        {"io", "oracle_csv", "oracle sweep report path",
         [](RunConfig& c, const json& v, const std::string& w) { c.oracle_csv = as_string(v, w); },
         [](const RunConfig& c) { return c.oracle_csv; }},
        {"io", "gradcheck_csv", "gradient check report path",
         [](RunConfig& c, const json& v, const std::string& w) {
             c.gradcheck_csv = as_string(v, w);
         },
         [](const RunConfig& c) { return c.gradcheck_csv; }},
        {"io", "bench_csv", "complexity benchmark path",
         [](RunConfig& c, const json& v, const std::string& w) { c.bench_csv = as_string(v, w); },
         [](const RunConfig& c) { return c.bench_csv; }},
    };
    return table;
}

const KeyDesc* find_key(const std::string& section, const std::string& key) {
    for (const KeyDesc& d : key_table())
        if (section == d.section && key == d.key) return &d;
    return nullptr;
}

void apply_json(RunConfig& cfg, const json& root) {
    if (!root.is_object()) throw config_error("config root must be a JSON object");
    for (const auto& [section, body] : root.items()) {
        if (!body.is_object())
            throw config_error("config section '" + section + "' must be an object");
        for (const auto& [key, value] : body.items()) {
            const KeyDesc* d = find_key(section, key);
            if (!d) throw config_error("unknown config key: " + section + "." + key);
            d->apply(cfg, value, section + "." + key);
        }
    }
}

void validate(const RunConfig& c) {
    if (c.order < 1) throw config_error("kernel.order must be at least 1");
    if (c.rank < 1) throw config_error("kernel.rank must be at least 1");
    if (c.blocks < 1) throw config_error("net.blocks must be at least 1");
    if (c.ops < 1 || c.ops > 6) throw config_error("net.ops must be between 1 and 6");
    if (c.channels < 1) throw config_error("net.channels must be at least 1");
    if (c.batch < 1) throw config_error("train.batch must be at least 1");
    if (c.side < 1) throw config_error("train.side must be at least 1");
    if (c.train_patches < 1) throw config_error("train.train_patches must be at least 1");
    if (c.test_patches < 1) throw config_error("train.test_patches must be at least 1");
    if (c.lr < 0.0) throw config_error("train.lr must not be negative");
    if (c.level == DistortLevel::Custom)
        throw config_error("train.level must name a calibrated level");
}

}  // namespace

KernelFormat kernel_format_from_name(const std::string& name) {
    if (name == "cp") return KernelFormat::CP;
    if (name == "tt") return KernelFormat::TT;
    if (name == "tr") return KernelFormat::TR;
    throw config_error("unknown kernel format: " + name);
}

RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
    RunConfig cfg;
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) throw config_error("cannot open config: " + path);
        json root;
        try {
            root = json::parse(in);
        } catch (const json::exception& e) {
            throw config_error("config parse failure in " + path + ": " + e.what());
        }
        apply_json(cfg, root);
    }
    for (const std::string& ov : overrides) {
        const std::size_t eq = ov.find('=');
        const std::size_t dot = ov.find('.');
        if (eq == std::string::npos || dot == std::string::npos || dot > eq)
            throw config_error("override must look like section.key=value: " + ov);
        const std::string section = ov.substr(0, dot);
        const std::string key = ov.substr(dot + 1, eq - dot - 1);
        const std::string raw = ov.substr(eq + 1);
        const KeyDesc* d = find_key(section, key);
        if (!d) throw config_error("unknown config key: " + section + "." + key);
        json value;
        try {
            value = json::parse(raw);
        } catch (const json::exception&) {
            value = raw;  // bare words (paths, level names) read as strings
        }
        d->apply(cfg, value, section + "." + key);
    }
    validate(cfg);
    return cfg;
}

RunConfig default_config(const std::vector<std::string>& overrides) {
    return load_config("", overrides);
}

std::string config_help() {
    const RunConfig defaults;
    std::ostringstream os;
    os << "Config keys (JSON sections in the --config file, or --set section.key=value):\n";
    std::string last;
    for (const KeyDesc& d : key_table()) {
        if (last != d.section) {
            os << "  [" << d.section << "]\n";
            last = d.section;
        }
        os << "    " << d.section << "." << d.key << " = " << d.show(defaults) << "\n        "
           << d.help << "\n";
    }
    os << "  Environment: T1CL_SEED overrides train.seed when set.\n";
    return os.str();
}

std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
    for (const KeyDesc& d : key_table())
        keys.push_back(std::string(d.section) + "." + d.key);
    return keys;
}

}  // namespace t1cl
