#include "claf/config.hpp"

#include "claf/model.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

namespace claf {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

double parse_double(const std::string& key, const std::string& v) {
    // accept plain numbers and fractions like 8/255
    const std::size_t slash = v.find('/');
    try {
        if (slash != std::string::npos) {
            const double num = std::stod(trim(v.substr(0, slash)));
            const double den = std::stod(trim(v.substr(slash + 1)));
            if (den == 0.0) throw Error("config: division by zero in " + key);
            return num / den;
        }
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (trim(v.substr(used)) != "") throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw Error("config: bad numeric value '" + v + "' for " + key);
    }
}

long long parse_int(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const long long i = std::stoll(v, &used);
        if (trim(v.substr(used)) != "") throw std::invalid_argument(v);
        return i;
    } catch (const std::exception&) {
        throw Error("config: bad integer value '" + v + "' for " + key);
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true") return true;
    if (v == "false") return false;
    throw Error("config: bad boolean value '" + v + "' for " + key + " (use true/false)");
}

std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::string cur;
    std::stringstream ss(v);
    while (std::getline(ss, cur, ',')) {
        cur = trim(cur);
        if (!cur.empty()) out.push_back(cur);
    }
    return out;
}

struct Field {
    std::string key;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&, const std::string&)> set;
};

std::vector<Field> field_table() {
    std::vector<Field> f;
    auto str = [&](const char* key, std::string RunConfig::* m) {
        f.push_back({key, [m](const RunConfig& c) { return c.*m; },
                     [m](RunConfig& c, const std::string&, const std::string& v) { c.*m = v; }});
    };
    auto dbl = [&](const char* key, double RunConfig::* m) {
        f.push_back({key, [m](const RunConfig& c) { return fmt_double(c.*m); },
                     [m](RunConfig& c, const std::string& k, const std::string& v) {
                         c.*m = parse_double(k, v);
                     }});
    };
    auto intf = [&](const char* key, int RunConfig::* m) {
        f.push_back({key, [m](const RunConfig& c) { return std::to_string(c.*m); },
                     [m](RunConfig& c, const std::string& k, const std::string& v) {
                         c.*m = static_cast<int>(parse_int(k, v));
                     }});
    };
    auto szf = [&](const char* key, std::size_t RunConfig::* m) {
        f.push_back({key, [m](const RunConfig& c) { return std::to_string(c.*m); },
                     [m](RunConfig& c, const std::string& k, const std::string& v) {
                         const long long i = parse_int(k, v);
                         if (i < 0) throw Error("config: " + k + " must be >= 0");
                         c.*m = static_cast<std::size_t>(i);
                     }});
    };
    auto u64f = [&](const char* key, std::uint64_t RunConfig::* m) {
        f.push_back({key, [m](const RunConfig& c) { return std::to_string(c.*m); },
                     [m](RunConfig& c, const std::string& k, const std::string& v) {
                         const long long i = parse_int(k, v);
                         if (i < 0) throw Error("config: " + k + " must be >= 0");
                         c.*m = static_cast<std::uint64_t>(i);
                     }});
    };
    auto boolf = [&](const char* key, bool RunConfig::* m) {
        f.push_back({key, [m](const RunConfig& c) { return c.*m ? "true" : "false"; },
                     [m](RunConfig& c, const std::string& k, const std::string& v) {
                         c.*m = parse_bool(k, v);
                     }});
    };
    auto attack = [&](const std::string& prefix, AttackConfig RunConfig::* m) {
        f.push_back({prefix + "_eps",
                     [m](const RunConfig& c) { return fmt_double((c.*m).epsilon); },
                     [m](RunConfig& c, const std::string& k, const std::string& v) {
                         (c.*m).epsilon = parse_double(k, v);
                     }});
        f.push_back({prefix + "_eta",
                     [m](const RunConfig& c) { return fmt_double((c.*m).eta); },
                     [m](RunConfig& c, const std::string& k, const std::string& v) {
                         (c.*m).eta = parse_double(k, v);
                     }});
        f.push_back({prefix + "_k", [m](const RunConfig& c) { return std::to_string((c.*m).k); },
                     [m](RunConfig& c, const std::string& k, const std::string& v) {
                         (c.*m).k = static_cast<int>(parse_int(k, v));
                     }});
        f.push_back({prefix + "_random_start",
                     [m](const RunConfig& c) { return (c.*m).random_start ? "true" : "false"; },
                     [m](RunConfig& c, const std::string& k, const std::string& v) {
                         (c.*m).random_start = parse_bool(k, v);
                     }});
        f.push_back({prefix + "_restarts",
                     [m](const RunConfig& c) { return std::to_string((c.*m).restarts); },
                     [m](RunConfig& c, const std::string& k, const std::string& v) {
                         (c.*m).restarts = static_cast<int>(parse_int(k, v));
                     }});
    };
    auto triple = [&](const char* key, double (RunConfig::* m)[3]) {
        f.push_back({key,
                     [m](const RunConfig& c) {
                         return fmt_double((c.*m)[0]) + "," + fmt_double((c.*m)[1]) + "," +
                                fmt_double((c.*m)[2]);
                     },
                     [m](RunConfig& c, const std::string& k, const std::string& v) {
                         auto parts = split_list(v);
                         if (parts.size() != 3) throw Error("config: " + k + " needs 3 values");
                         for (int i = 0; i < 3; ++i) (c.*m)[i] = parse_double(k, parts[i]);
                     }});
    };

    str("dataset", &RunConfig::dataset);
    str("data_root", &RunConfig::data_root);
    f.push_back({"classes",
                 [](const RunConfig& c) {
                     std::string s;
                     for (std::size_t i = 0; i < c.classes.size(); ++i)
                         s += (i ? "," : "") + std::to_string(c.classes[i]);
                     return s;
                 },
                 [](RunConfig& c, const std::string& k, const std::string& v) {
                     c.classes.clear();
                     for (const std::string& p : split_list(v))
                         c.classes.push_back(static_cast<int>(parse_int(k, p)));
                 }});
    szf("train_per_class", &RunConfig::train_per_class);
    szf("test_per_class", &RunConfig::test_per_class);
    u64f("synth_seed", &RunConfig::synth_seed);

    str("arch", &RunConfig::arch);
    intf("proj_hidden", &RunConfig::proj_hidden);
    intf("proj_out", &RunConfig::proj_out);
    triple("norm_mean", &RunConfig::norm_mean);
    triple("norm_std", &RunConfig::norm_std);

    szf("batch_size", &RunConfig::batch_size);
    intf("stage1_epochs", &RunConfig::stage1_epochs);
    intf("stage2_epochs", &RunConfig::stage2_epochs);
    intf("eval_epochs", &RunConfig::eval_epochs);
    intf("checkpoint_every", &RunConfig::checkpoint_every);

    dbl("tau", &RunConfig::tau);
    dbl("enc_lr", &RunConfig::enc_lr);
    dbl("enc_momentum", &RunConfig::enc_momentum);
    dbl("enc_weight_decay", &RunConfig::enc_weight_decay);

    dbl("cls_lr", &RunConfig::cls_lr);
    dbl("cls_beta1", &RunConfig::cls_beta1);
    dbl("cls_beta2", &RunConfig::cls_beta2);
    dbl("cls_eps", &RunConfig::cls_eps);
    intf("classifier_epochs", &RunConfig::classifier_epochs);
    dbl("classifier_fraction", &RunConfig::classifier_fraction);
    dbl("eval_lr", &RunConfig::eval_lr);

    attack("cls_attack", &RunConfig::cls_attack);
    attack("enc_attack", &RunConfig::enc_attack);
    attack("eval_head_attack", &RunConfig::eval_head_attack);
    f.push_back({"eval_attack_eps",
                 [](const RunConfig& c) {
                     std::string s;
                     for (std::size_t i = 0; i < c.eval_attack_eps.size(); ++i)
                         s += (i ? "," : "") + fmt_double(c.eval_attack_eps[i]);
                     return s;
                 },
                 [](RunConfig& c, const std::string& k, const std::string& v) {
                     c.eval_attack_eps.clear();
                     for (const std::string& p : split_list(v))
                         c.eval_attack_eps.push_back(parse_double(k, p));
                 }});
    dbl("eval_attack_eta", &RunConfig::eval_attack_eta);
    intf("eval_attack_k", &RunConfig::eval_attack_k);
    boolf("eval_attack_random_start", &RunConfig::eval_attack_random_start);
    intf("eval_attack_restarts", &RunConfig::eval_attack_restarts);

    str("classifier_training", &RunConfig::classifier_training);
    str("classifier_reset", &RunConfig::classifier_reset);
    str("linear_eval", &RunConfig::linear_eval);
    boolf("reuse_c_for_eval", &RunConfig::reuse_c_for_eval);

    // augmentation
    f.push_back({"aug_crop", [](const RunConfig& c) { return c.aug.crop ? "true" : "false"; },
                 [](RunConfig& c, const std::string& k, const std::string& v) {
                     c.aug.crop = parse_bool(k, v);
                 }});
    f.push_back({"aug_crop_pad", [](const RunConfig& c) { return std::to_string(c.aug.crop_pad); },
                 [](RunConfig& c, const std::string& k, const std::string& v) {
                     c.aug.crop_pad = static_cast<int>(parse_int(k, v));
                 }});
    f.push_back({"aug_flip", [](const RunConfig& c) { return c.aug.flip ? "true" : "false"; },
                 [](RunConfig& c, const std::string& k, const std::string& v) {
                     c.aug.flip = parse_bool(k, v);
                 }});
    f.push_back({"aug_flip_p", [](const RunConfig& c) { return fmt_double(c.aug.flip_p); },
                 [](RunConfig& c, const std::string& k, const std::string& v) {
                     c.aug.flip_p = parse_double(k, v);
                 }});
    f.push_back({"aug_jitter", [](const RunConfig& c) { return c.aug.jitter ? "true" : "false"; },
                 [](RunConfig& c, const std::string& k, const std::string& v) {
                     c.aug.jitter = parse_bool(k, v);
                 }});
    f.push_back({"aug_jitter_p", [](const RunConfig& c) { return fmt_double(c.aug.jitter_p); },
                 [](RunConfig& c, const std::string& k, const std::string& v) {
                     c.aug.jitter_p = parse_double(k, v);
                 }});
    f.push_back({"aug_brightness", [](const RunConfig& c) { return fmt_double(c.aug.brightness); },
                 [](RunConfig& c, const std::string& k, const std::string& v) {
                     c.aug.brightness = parse_double(k, v);
                 }});
    f.push_back({"aug_contrast", [](const RunConfig& c) { return fmt_double(c.aug.contrast); },
                 [](RunConfig& c, const std::string& k, const std::string& v) {
                     c.aug.contrast = parse_double(k, v);
                 }});
    f.push_back({"aug_saturation", [](const RunConfig& c) { return fmt_double(c.aug.saturation); },
                 [](RunConfig& c, const std::string& k, const std::string& v) {
                     c.aug.saturation = parse_double(k, v);
                 }});
    f.push_back({"aug_grayscale",
                 [](const RunConfig& c) { return c.aug.grayscale ? "true" : "false"; },
                 [](RunConfig& c, const std::string& k, const std::string& v) {
                     c.aug.grayscale = parse_bool(k, v);
                 }});
    f.push_back({"aug_grayscale_p",
                 [](const RunConfig& c) { return fmt_double(c.aug.grayscale_p); },
                 [](RunConfig& c, const std::string& k, const std::string& v) {
                     c.aug.grayscale_p = parse_double(k, v);
                 }});

    u64f("seed", &RunConfig::seed);
    return f;
}

}  // namespace

void RunConfig::validate() const {
    if (dataset != "cifar10" && dataset != "synthetic")
        throw Error("config: dataset must be cifar10 or synthetic, got '" + dataset + "'");
    if (classes.size() < 2) throw Error("config: need at least 2 classes");
    if (batch_size < 1) throw Error("config: batch_size must be >= 1");
    if (stage1_epochs < 0 || stage2_epochs < 0 || eval_epochs < 0)
        throw Error("config: epoch counts must be >= 0");
    if (!(tau > 0.0)) throw Error("config: tau must be positive");
    if (classifier_fraction <= 0.0 || classifier_fraction > 1.0)
        throw Error("config: classifier_fraction must be in (0,1]");
    if (classifier_training != "adversarial" && classifier_training != "natural")
        throw Error("config: classifier_training must be adversarial or natural");
    if (classifier_reset != "continuous" && classifier_reset != "reinitialized")
        throw Error("config: classifier_reset must be continuous or reinitialized");
    if (linear_eval != "natural" && linear_eval != "adversarial")
        throw Error("config: linear_eval must be natural or adversarial");
    cls_attack.validate();
    enc_attack.validate();
    eval_head_attack.validate();
    aug.validate();
    encoder_def_by_name(arch);  // throws on unknown preset
}

AttackConfig RunConfig::eval_attack(double epsilon) const {
    AttackConfig a;
    a.epsilon = epsilon;
    a.eta = eval_attack_eta;
    a.k = eval_attack_k;
    a.random_start = eval_attack_random_start;
    a.restarts = eval_attack_restarts;
    return a;
}

RunConfig parse_run_config(const std::string& text) {
    RunConfig cfg;
    const auto fields = field_table();
    std::vector<bool> seen(fields.size(), false);
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw Error("config line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        bool matched = false;
        for (std::size_t i = 0; i < fields.size(); ++i) {
            if (fields[i].key != key) continue;
            if (seen[i])
                throw Error("config line " + std::to_string(lineno) + ": duplicate key " + key);
            seen[i] = true;
            fields[i].set(cfg, key, value);
            matched = true;
            break;
        }
        if (!matched)
            throw Error("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
    cfg.validate();
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw Error("config: cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return parse_run_config(text);
}

std::string serialize_run_config(const RunConfig& cfg) {
    std::string out;
    for (const Field& f : field_table()) {
        out += f.key;
        out += " = ";
        out += f.get(cfg);
        out += "\n";
    }
    return out;
}

std::vector<std::string> config_diff(const RunConfig& a, const RunConfig& b) {
    std::vector<std::string> out;
    for (const Field& f : field_table())
        if (f.get(a) != f.get(b)) out.push_back(f.key);
    return out;
}

std::uint64_t config_digest(const RunConfig& cfg) {
    const std::string s = serialize_run_config(cfg);
    return fnv1a(s.data(), s.size());
}

}  // namespace claf
