#pragma once

#include <string>
#include <vector>

#include "claf/attack.hpp"
#include "claf/config.hpp"
#include "claf/data.hpp"
#include "claf/model.hpp"

namespace claf {

struct EvalReport {
    std::size_t samples = 0;
    double clean_acc = 0.0;
    struct RobustEntry {
        AttackConfig attack;
        double robust_acc = 0.0;
    };
    std::vector<RobustEntry> robust;

    // robust accuracy for the entry with this epsilon, or -1 if absent
    double robust_at(double epsilon) const;
};

double clean_accuracy(const Encoder& f, const Classifier& head, const Dataset& data);

// Accuracy on PGD outputs; the prediction on the attacked point is what
// counts (not worst-of-clean-and-adversarial). Per-sample attack noise is
// seeded by global sample index, so the value is independent of batching.
double robust_accuracy(const Encoder& f, const Classifier& head, const Dataset& data,
                       const AttackConfig& cfg, std::uint64_t seed);

EvalReport evaluate_model(const Encoder& f, const Classifier& head, const Dataset& data,
                          const std::vector<AttackConfig>& attacks, std::uint64_t seed);

// flat key = value block for scripting
std::string format_eval_report(const EvalReport& r);

// ---- ablations ----

extern const std::vector<std::string> kAblationNames;

struct AblationOutcome {
    std::string name;
    std::string switch_key;  // the one config key the arms differ in
    RunConfig arm_a, arm_b;
    std::string label_a, label_b;
    EvalReport report_a, report_b;
};

// Builds the two arm configs for a named ablation (shared seed, one switch
// apart) without running them.
AblationOutcome make_ablation_arms(const std::string& name, const RunConfig& base);

// Runs both arms end-to-end and fills in the reports.
AblationOutcome run_ablation(const std::string& name, const RunConfig& base);

// paired comparison table
std::string format_ablation(const AblationOutcome& o);

}  // namespace claf
