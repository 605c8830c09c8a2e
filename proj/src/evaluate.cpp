#include "claf/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "claf/pipeline.hpp"

namespace claf {

namespace {

constexpr std::size_t kEvalBatch = 64;

std::size_t argmax_row(const Tensor& logits, std::size_t row) {
    const std::size_t n = logits.shape[1];
    const double* d = logits.data.data() + row * n;
    return static_cast<std::size_t>(std::max_element(d, d + n) - d);
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

}  // namespace

double EvalReport::robust_at(double epsilon) const {
    for (const RobustEntry& e : robust)
        if (std::fabs(e.attack.epsilon - epsilon) < 1e-12) return e.robust_acc;
    return -1.0;
}

double clean_accuracy(const Encoder& f, const Classifier& head, const Dataset& data) {
    if (data.items.empty()) throw Error("clean_accuracy: empty dataset");
    std::size_t correct = 0;
    for (std::size_t start = 0; start < data.items.size(); start += kEvalBatch) {
        const std::size_t end = std::min(start + kEvalBatch, data.items.size());
        std::vector<LabeledImage> chunk(data.items.begin() + start, data.items.begin() + end);
        Tensor logits = classify_value(f, head, stack_images(chunk));
        for (std::size_t i = 0; i < chunk.size(); ++i)
            if (argmax_row(logits, i) == static_cast<std::size_t>(chunk[i].label)) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(data.items.size());
}

double robust_accuracy(const Encoder& f, const Classifier& head, const Dataset& data,
                       const AttackConfig& cfg, std::uint64_t seed) {
    if (data.items.empty()) throw Error("robust_accuracy: empty dataset");
    cfg.validate();
    std::size_t correct = 0;
    for (std::size_t start = 0; start < data.items.size(); start += kEvalBatch) {
        const std::size_t end = std::min(start + kEvalBatch, data.items.size());
        std::vector<LabeledImage> chunk(data.items.begin() + start, data.items.begin() + end);
        Tensor x = stack_images(chunk);
        const std::vector<int> y = image_labels(chunk);
        // per-sample streams keyed on the global index, batch-size independent
        Tensor x_adv = pgd(f, head, x, y, cfg, Rng(Rng::mix(seed, start)));
        Tensor logits = classify_value(f, head, x_adv);
        for (std::size_t i = 0; i < chunk.size(); ++i)
            if (argmax_row(logits, i) == static_cast<std::size_t>(chunk[i].label)) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(data.items.size());
}

EvalReport evaluate_model(const Encoder& f, const Classifier& head, const Dataset& data,
                          const std::vector<AttackConfig>& attacks, std::uint64_t seed) {
    EvalReport r;
    r.samples = data.items.size();
    r.clean_acc = clean_accuracy(f, head, data);
    for (const AttackConfig& a : attacks)
        r.robust.push_back({a, robust_accuracy(f, head, data, a, seed)});
    return r;
}

std::string format_eval_report(const EvalReport& r) {
    std::string out;
    out += "samples = " + std::to_string(r.samples) + "\n";
    out += "clean_acc = " + fmt(r.clean_acc) + "\n";
    for (std::size_t i = 0; i < r.robust.size(); ++i) {
        const std::string p = "attack" + std::to_string(i) + ".";
        const AttackConfig& a = r.robust[i].attack;
        char eps[40], eta[40];
        std::snprintf(eps, sizeof(eps), "%.9g", a.epsilon);
        std::snprintf(eta, sizeof(eta), "%.9g", a.eta);
        out += p + "eps = " + eps + "\n";
        out += p + "eta = " + eta + "\n";
        out += p + "k = " + std::to_string(a.k) + "\n";
        out += p + "random_start = " + (a.random_start ? "true" : "false") + "\n";
        out += p + "restarts = " + std::to_string(a.restarts) + "\n";
        out += p + "robust_acc = " + fmt(r.robust[i].robust_acc) + "\n";
    }
    return out;
}

// ---- ablations ----

const std::vector<std::string> kAblationNames = {"classifier_nat_vs_adv", "eval_nat_vs_adv",
                                                 "reinit_vs_continuous", "reuse_c"};

AblationOutcome make_ablation_arms(const std::string& name, const RunConfig& base) {
    AblationOutcome o;
    o.name = name;
    o.arm_a = base;
    o.arm_b = base;
    if (name == "classifier_nat_vs_adv") {
        o.switch_key = "classifier_training";
        o.arm_a.classifier_training = "natural";
        o.arm_b.classifier_training = "adversarial";
        o.label_a = "natural";
        o.label_b = "adversarial";
    } else if (name == "eval_nat_vs_adv") {
        o.switch_key = "linear_eval";
        o.arm_a.linear_eval = "natural";
        o.arm_b.linear_eval = "adversarial";
        o.label_a = "natural";
        o.label_b = "adversarial";
    } else if (name == "reinit_vs_continuous") {
        o.switch_key = "classifier_reset";
        o.arm_a.classifier_reset = "reinitialized";
        o.arm_b.classifier_reset = "continuous";
        o.label_a = "reinitialized";
        o.label_b = "continuous";
    } else if (name == "reuse_c") {
        o.switch_key = "reuse_c_for_eval";
        o.arm_a.reuse_c_for_eval = false;
        o.arm_b.reuse_c_for_eval = true;
        o.label_a = "fresh_head";
        o.label_b = "continue_c";
    } else {
        throw Error("unknown ablation '" + name + "' (expected one of: classifier_nat_vs_adv, "
                    "eval_nat_vs_adv, reinit_vs_continuous, reuse_c)");
    }
    const auto diff = config_diff(o.arm_a, o.arm_b);
    if (diff.size() != 1 || diff[0] != o.switch_key)
        throw Error("ablation " + name + ": arms differ in more than the switch");
    return o;
}

AblationOutcome run_ablation(const std::string& name, const RunConfig& base) {
    AblationOutcome o = make_ablation_arms(name, base);
    o.report_a = run(o.arm_a).metrics.final_report;
    o.report_b = run(o.arm_b).metrics.final_report;
    return o;
}

std::string format_ablation(const AblationOutcome& o) {
    auto row = [](const std::string& label, const EvalReport& r) {
        std::string s = label;
        s += ": clean " + fmt(r.clean_acc);
        for (const auto& e : r.robust) {
            char eps[40];
            std::snprintf(eps, sizeof(eps), "%.9g", e.attack.epsilon);
            s += std::string("  robust(eps=") + eps + ") " + fmt(e.robust_acc);
        }
        return s + "\n";
    };
    std::string out = "ablation " + o.name + " (switch: " + o.switch_key + ")\n";
    out += row(o.label_a, o.report_a);
    out += row(o.label_b, o.report_b);
    return out;
}

}  // namespace claf
