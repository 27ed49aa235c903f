#include "udma/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <set>
#include <sstream>
#include <vector>

#include "udma/errors.hpp"

namespace udma {

namespace {

struct Key {
    std::string name;
    std::string range;  // human-readable legal range
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        if (!std::isfinite(x)) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': cannot parse '" + v + "' as a number");
    }
}

std::int64_t parse_int(const std::string& key, const std::string& v) {
    std::int64_t x = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
    if (ec != std::errc() || p != v.data() + v.size())
        throw ConfigError("key '" + key + "': cannot parse '" + v + "' as an integer");
    return x;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "on") return true;
    if (v == "false" || v == "0" || v == "off") return false;
    throw ConfigError("key '" + key + "': cannot parse '" + v +
                      "' as a boolean (true/false/1/0/on/off)");
}

std::string fmt(double x) {
    std::ostringstream os;
    os.precision(17);
    os << x;
    return os.str();
}

void check(bool ok, const std::string& key, const std::string& range) {
    if (!ok) throw ConfigError("key '" + key + "': value out of range, must be " + range);
}

std::vector<Key> build_registry() {
    std::vector<Key> keys;
    auto add_int = [&](const std::string& name, int RunConfig::*member,
                       std::int64_t lo, std::int64_t hi, const std::string& range) {
        keys.push_back(Key{
            name, range,
            [=](RunConfig& c, const std::string& v) {
                std::int64_t x = parse_int(name, v);
                check(x >= lo && x <= hi, name, range);
                c.*member = static_cast<int>(x);
            },
            [=](const RunConfig& c) { return std::to_string(c.*member); }});
    };
    auto add_double = [&](const std::string& name, double RunConfig::*member,
                          std::function<bool(double)> ok, const std::string& range) {
        keys.push_back(Key{
            name, range,
            [=](RunConfig& c, const std::string& v) {
                double x = parse_double(name, v);
                check(ok(x), name, range);
                c.*member = x;
            },
            [=](const RunConfig& c) { return fmt(c.*member); }});
    };
    auto add_bool = [&](const std::string& name, bool RunConfig::*member) {
        keys.push_back(Key{
            name, "true|false",
            [=](RunConfig& c, const std::string& v) { c.*member = parse_bool(name, v); },
            [=](const RunConfig& c) { return c.*member ? "true" : "false"; }});
    };

    auto positive = [](double x) { return x > 0; };
    auto nonneg = [](double x) { return x >= 0; };
    auto any = [](double) { return true; };
    constexpr std::int64_t imax = std::numeric_limits<int>::max();

    add_int("range_width", &RunConfig::range_width, 1, imax, ">= 1");
    add_int("range_height", &RunConfig::range_height, 1, imax, ">= 1");
    add_double("fov_up_deg", &RunConfig::fov_up_deg, nonneg, ">= 0");
    add_double("fov_down_deg", &RunConfig::fov_down_deg, nonneg, ">= 0");

    add_int("ransac_iterations", &RunConfig::ransac_iterations, 1, imax, ">= 1");
    add_double("ransac_threshold", &RunConfig::ransac_threshold, positive, "> 0");
    add_double("ransac_max_tilt_deg", &RunConfig::ransac_max_tilt_deg,
               [](double x) { return x >= 0 && x <= 90; }, "in [0, 90]");

    add_double("cluster_base_threshold", &RunConfig::cluster_base_threshold, positive, "> 0");
    add_double("cluster_range_coeff", &RunConfig::cluster_range_coeff, nonneg, ">= 0");

    add_double("wall_min_height", &RunConfig::wall_min_height, positive, "> 0");
    add_double("wall_min_spread", &RunConfig::wall_min_spread, positive, "> 0");
    add_double("car_box_length", &RunConfig::car_box_length, positive, "> 0");
    add_double("car_box_width", &RunConfig::car_box_width, positive, "> 0");
    add_double("car_box_height", &RunConfig::car_box_height, positive, "> 0");
    add_int("car_min_points", &RunConfig::car_min_points, 1, imax, ">= 1");
    add_double("car_point_min_height", &RunConfig::car_point_min_height, nonneg, ">= 0");

    add_int("feature_dim", &RunConfig::feature_dim, 1, imax, ">= 1");
    add_int("knn", &RunConfig::knn, 1, imax, ">= 1");
    add_int("enc_channels1", &RunConfig::enc_channels1, 1, imax, ">= 1");
    add_int("enc_channels2", &RunConfig::enc_channels2, 1, imax, ">= 1");
    add_int("disc_hidden", &RunConfig::disc_hidden, 1, imax, ">= 1");

    add_double("lambda_scene", &RunConfig::lambda_scene, nonneg, ">= 0");
    add_double("lambda_instance", &RunConfig::lambda_instance, nonneg, ">= 0");
    add_double("lr_generator", &RunConfig::lr_generator, positive, "> 0");
    add_double("lr_discriminator", &RunConfig::lr_discriminator, positive, "> 0");
    add_double("adam_beta1", &RunConfig::adam_beta1,
               [](double x) { return x >= 0 && x < 1; }, "in [0, 1)");
    add_double("adam_beta2", &RunConfig::adam_beta2,
               [](double x) { return x >= 0 && x < 1; }, "in [0, 1)");
    add_double("adam_eps", &RunConfig::adam_eps, positive, "> 0");
    add_int("train_steps", &RunConfig::train_steps, 0, imax, ">= 0");
    add_int("fine_tune_steps", &RunConfig::fine_tune_steps, 0, imax, ">= 0");
    add_bool("ce_sum_mode", &RunConfig::ce_sum_mode);

    add_int("synth_cars", &RunConfig::synth_cars, 0, imax, ">= 0");
    add_int("synth_walls", &RunConfig::synth_walls, 0, imax, ">= 0");
    add_int("synth_blobs", &RunConfig::synth_blobs, 0, imax, ">= 0");
    add_double("synth_noise_sigma", &RunConfig::synth_noise_sigma, nonneg, ">= 0");
    add_double("synth_max_range", &RunConfig::synth_max_range, positive, "> 0");
    add_double("source_scale_range", &RunConfig::source_scale_range, any, "any finite");
    add_double("source_offset_range", &RunConfig::source_offset_range, any, "any finite");
    add_double("source_scale_intensity", &RunConfig::source_scale_intensity, any, "any finite");
    add_double("source_offset_intensity", &RunConfig::source_offset_intensity, any, "any finite");

    keys.push_back(Key{
        "seed", ">= 0",
        [](RunConfig& c, const std::string& v) {
            try {
                c.seed = std::stoull(v);
            } catch (const std::exception&) {
                throw ConfigError("key 'seed': cannot parse '" + v + "' as an integer");
            }
        },
        [](const RunConfig& c) { return std::to_string(c.seed); }});
    add_bool("parallel", &RunConfig::parallel);
    keys.push_back(Key{
        "dataset_root", "any path",
        [](RunConfig& c, const std::string& v) { c.dataset_root = v; },
        [](const RunConfig& c) { return c.dataset_root; }});
    return keys;
}

const std::vector<Key>& registry() {
    static const std::vector<Key> keys = build_registry();
    return keys;
}

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

void cross_validate(const RunConfig& cfg) {
    if (cfg.fov_up_deg + cfg.fov_down_deg <= 0)
        throw ConfigError("fov_up_deg + fov_down_deg must be > 0");
}

}  // namespace

RunConfig parse_config(const std::string& text) {
    RunConfig cfg;
    std::set<std::string> seen;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) +
                              ": expected 'key = value', got '" + line + "'");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (!seen.insert(key).second)
            throw ConfigError("duplicate key '" + key + "' (line " + std::to_string(lineno) + ")");
        bool matched = false;
        for (const auto& k : registry()) {
            if (k.name == key) {
                k.set(cfg, value);
                matched = true;
                break;
            }
        }
        if (!matched) throw ConfigError("unknown key '" + key + "'");
    }
    cross_validate(cfg);
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << f.rdbuf();
    return parse_config(buf.str());
}

std::string dump_config(const RunConfig& cfg) {
    std::ostringstream os;
    for (const auto& k : registry()) os << k.name << " = " << k.get(cfg) << "\n";
    return os.str();
}

std::string config_key_table() {
    RunConfig defaults;
    std::ostringstream os;
    for (const auto& k : registry())
        os << k.name << "  (default " << k.get(defaults) << ", " << k.range << ")\n";
    return os.str();
}

}  // namespace udma
