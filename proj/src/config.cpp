#include "fusionbench/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

namespace fusion::cfg {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    std::size_t b = s.find_last_not_of(" \t\r");
    if (a == std::string::npos) return "";
    return s.substr(a, b - a + 1);
}

const std::set<std::string> kKnownKeys = {
    "dataset.mode",       "dataset.classes",    "dataset.per_class", "dataset.hw",
    "dataset.seed",       "dataset.fraction",   "dataset.path",      "dataset.cifar_path",
    "model.channels",     "model.output_dim",   "model.seed",
    "pretrain.lr",        "pretrain.momentum",  "pretrain.epochs",   "pretrain.batch",
    "pretrain.seed",
    "train.lr",           "train.momentum",     "train.epochs",      "train.batch",
    "train.seed",         "train.mode",         "train.kind",        "train.alpha",
    "train.adv_eps",      "train.warm_start",
    "attack.eps_grid",    "attack.sigma_grid",  "attack.source",     "attack.kind",
    "attack.epsilon",     "attack.sigma",
    "curve.models",       "curve.axis",
    "reg.alphas",         "retrain.eps",
    "out.dir",            "run.deterministic",
};

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

double parse_number(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' has non-numeric value '" + value + "'");
    }
}

int parse_int(const std::string& key, const std::string& value) {
    const double v = parse_number(key, value);
    if (v != static_cast<double>(static_cast<long long>(v)))
        throw ConfigError("config key '" + key + "' must be an integer, got '" + value + "'");
    return static_cast<int>(v);
}

std::vector<float> parse_float_list(const std::string& key, const std::string& value) {
    std::vector<float> out;
    for (const auto& item : split_csv(value))
        out.push_back(static_cast<float>(parse_number(key, item)));
    if (out.empty()) throw ConfigError("config key '" + key + "' must list at least one value");
    return out;
}

}  // namespace

const std::string* KeyValues::find(const std::string& key) const {
    for (const auto& [k, v] : items)
        if (k == key) return &v;
    return nullptr;
}

void KeyValues::set(const std::string& key, const std::string& value) {
    for (auto& [k, v] : items)
        if (k == key) {
            v = value;
            return;
        }
    items.emplace_back(key, value);
}

KeyValues parse_config_text(const std::string& text) {
    KeyValues kv;
    std::stringstream ss(text);
    std::string line;
    int line_no = 0;
    while (std::getline(ss, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line_no) +
                              " is not key=value: '" + line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw ConfigError("config line " + std::to_string(line_no) + " has an empty key");
        kv.set(key, value);
    }
    return kv;
}

KeyValues load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

std::string canonical_text(const KeyValues& kv) {
    auto items = kv.items;
    std::sort(items.begin(), items.end());
    std::string out;
    for (const auto& [k, v] : items) out += k + "=" + v + "\n";
    return out;
}

std::string config_hash_hex(const KeyValues& kv) {
    const std::string text = canonical_text(kv);
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

model::ArchConfig ExperimentConfig::arch() const {
    model::ArchConfig a;
    a.input_channels = 3;
    a.input_hw = image_hw;
    a.channels = channels;
    a.output_dim = output_dim;
    return a;
}

data::DatasetMeta ExperimentConfig::dataset_meta() const {
    data::DatasetMeta meta;
    meta.class_count = classes;
    meta.h = image_hw;
    meta.w = image_hw;
    meta.mode = mode;
    return meta;
}

std::string ExperimentConfig::path_in_out(const std::string& name) const {
    return out_dir + "/" + name;
}

ExperimentConfig experiment_from(const KeyValues& kv) {
    for (const auto& [k, v] : kv.items)
        if (!kKnownKeys.count(k)) throw ConfigError("unknown config key '" + k + "'");

    ExperimentConfig ec;
    ec.pretrain.mode = train::TrainConfig::Mode::full;
    ec.pretrain.epochs = 8;
    ec.pretrain.seed = 31;
    ec.head.mode = train::TrainConfig::Mode::head_only;

    if (auto* v = kv.find("dataset.mode")) ec.mode = data::mode_from_name(*v);
    if (auto* v = kv.find("dataset.classes")) ec.classes = parse_int("dataset.classes", *v);
    if (auto* v = kv.find("dataset.per_class")) ec.per_class = parse_int("dataset.per_class", *v);
    if (auto* v = kv.find("dataset.hw")) ec.image_hw = parse_int("dataset.hw", *v);
    if (auto* v = kv.find("dataset.seed"))
        ec.data_seed = static_cast<std::uint64_t>(parse_int("dataset.seed", *v));
    if (auto* v = kv.find("dataset.fraction"))
        ec.train_fraction = parse_number("dataset.fraction", *v);
    if (auto* v = kv.find("dataset.path")) ec.dataset_path = *v;
    if (auto* v = kv.find("dataset.cifar_path")) ec.cifar_path = *v;

    if (auto* v = kv.find("model.channels")) {
        ec.channels.clear();
        for (float c : parse_float_list("model.channels", *v))
            ec.channels.push_back(static_cast<int>(c));
    }
    if (auto* v = kv.find("model.output_dim")) ec.output_dim = parse_int("model.output_dim", *v);
    if (auto* v = kv.find("model.seed"))
        ec.model_seed = static_cast<std::uint64_t>(parse_int("model.seed", *v));

    if (auto* v = kv.find("pretrain.lr")) ec.pretrain.lr = static_cast<float>(parse_number("pretrain.lr", *v));
    if (auto* v = kv.find("pretrain.momentum"))
        ec.pretrain.momentum = static_cast<float>(parse_number("pretrain.momentum", *v));
    if (auto* v = kv.find("pretrain.epochs")) ec.pretrain.epochs = parse_int("pretrain.epochs", *v);
    if (auto* v = kv.find("pretrain.batch")) ec.pretrain.batch_size = parse_int("pretrain.batch", *v);
    if (auto* v = kv.find("pretrain.seed"))
        ec.pretrain.seed = static_cast<std::uint64_t>(parse_int("pretrain.seed", *v));

    if (auto* v = kv.find("train.lr")) ec.head.lr = static_cast<float>(parse_number("train.lr", *v));
    if (auto* v = kv.find("train.momentum"))
        ec.head.momentum = static_cast<float>(parse_number("train.momentum", *v));
    if (auto* v = kv.find("train.epochs")) ec.head.epochs = parse_int("train.epochs", *v);
    if (auto* v = kv.find("train.batch")) ec.head.batch_size = parse_int("train.batch", *v);
    if (auto* v = kv.find("train.seed"))
        ec.head.seed = static_cast<std::uint64_t>(parse_int("train.seed", *v));
    if (auto* v = kv.find("train.mode")) {
        if (*v == "full")
            ec.head.mode = train::TrainConfig::Mode::full;
        else if (*v == "head_only")
            ec.head.mode = train::TrainConfig::Mode::head_only;
        else
            throw ConfigError("train.mode must be 'full' or 'head_only', got '" + *v + "'");
    }
    if (auto* v = kv.find("train.kind")) {
        if (*v != "foreground" && *v != "background" && *v != "joint")
            throw ConfigError("train.kind must be foreground, background, or joint");
        ec.train_kind = *v;
    }
    if (auto* v = kv.find("train.alpha"))
        ec.train_alpha = static_cast<float>(parse_number("train.alpha", *v));
    if (auto* v = kv.find("train.adv_eps"))
        ec.train_adv_eps = static_cast<float>(parse_number("train.adv_eps", *v));
    if (auto* v = kv.find("train.warm_start")) ec.warm_start = parse_int("train.warm_start", *v) != 0;

    if (auto* v = kv.find("attack.eps_grid")) ec.eps_grid = parse_float_list("attack.eps_grid", *v);
    if (auto* v = kv.find("attack.sigma_grid"))
        ec.sigma_grid = parse_float_list("attack.sigma_grid", *v);
    if (auto* v = kv.find("attack.source")) ec.attack_source = *v;
    if (auto* v = kv.find("attack.kind")) {
        if (*v != "fgsm" && *v != "blur")
            throw ConfigError("attack.kind must be 'fgsm' or 'blur', got '" + *v + "'");
        ec.attack_kind = *v;
    }
    if (auto* v = kv.find("attack.epsilon"))
        ec.attack_epsilon = static_cast<float>(parse_number("attack.epsilon", *v));
    if (auto* v = kv.find("attack.sigma"))
        ec.attack_sigma = static_cast<float>(parse_number("attack.sigma", *v));

    if (auto* v = kv.find("curve.models")) ec.curve_models = split_csv(*v);
    if (auto* v = kv.find("curve.axis")) {
        if (*v != "epsilon" && *v != "sigma")
            throw ConfigError("curve.axis must be 'epsilon' or 'sigma', got '" + *v + "'");
        ec.curve_axis = *v;
    }

    if (auto* v = kv.find("reg.alphas")) ec.alphas = parse_float_list("reg.alphas", *v);
    if (auto* v = kv.find("retrain.eps"))
        ec.retrain_eps = static_cast<float>(parse_number("retrain.eps", *v));

    if (auto* v = kv.find("out.dir")) ec.out_dir = *v;
    if (auto* v = kv.find("run.deterministic"))
        ec.deterministic = parse_int("run.deterministic", *v) != 0;

    if (const char* env = std::getenv("FUSIONBENCH_OUT"); env && *env) ec.out_dir = env;
    if (ec.dataset_path.empty()) ec.dataset_path = ec.path_in_out("dataset.cfds");

    if (ec.classes < 2) throw ConfigError("dataset.classes must be >= 2");
    if (ec.per_class < 1) throw ConfigError("dataset.per_class must be >= 1");
    if (!(ec.train_fraction > 0.0 && ec.train_fraction < 1.0))
        throw ConfigError("dataset.fraction must be in (0,1)");
    if (ec.train_alpha < 0.f) throw ConfigError("train.alpha must be non-negative");
    if (ec.retrain_eps < 0.f) throw ConfigError("retrain.eps must be non-negative");
    return ec;
}

ExperimentConfig defaults_with_overrides(const KeyValues& kv) { return experiment_from(kv); }

}  // namespace fusion::cfg
