#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "claf/attack.hpp"
#include "claf/data.hpp"

namespace claf {

// Full run description. Every field has a key in the flat `key = value`
// config format; unknown keys are parse errors.
struct RunConfig {
    // data
    std::string dataset = "synthetic";  // "cifar10" or "synthetic"
    std::string data_root = "data";
    std::vector<int> classes = {0, 1};
    std::size_t train_per_class = 1000;
    std::size_t test_per_class = 250;
    std::uint64_t synth_seed = 1234;  // dataset identity, separate from the run seed

    // model
    std::string arch = "desk";
    int proj_hidden = 64;
    int proj_out = 32;
    double norm_mean[3] = {0.4914, 0.4822, 0.4465};
    double norm_std[3] = {0.2470, 0.2435, 0.2616};

    // schedule
    std::size_t batch_size = 32;
    int stage1_epochs = 20;
    int stage2_epochs = 10;
    int eval_epochs = 30;
    int checkpoint_every = 0;  // 0 = stage boundaries and final only

    // encoder/projection optimizer; note the contrastive loss is a sum over
    // anchors (not a mean), and this default is tuned to that convention
    double tau = 0.1;
    double enc_lr = 0.002;
    double enc_momentum = 0.9;
    double enc_weight_decay = 5e-4;

    // classifier optimizer (Adam)
    double cls_lr = 0.001;
    double cls_beta1 = 0.9;
    double cls_beta2 = 0.999;
    double cls_eps = 1e-8;
    int classifier_epochs = 5;
    double classifier_fraction = 1.0;  // fraction of the loader per retrain epoch

    // linear evaluation optimizer (Adam, cosine decay)
    double eval_lr = 0.001;

    // attacks
    AttackConfig cls_attack{8.0 / 255.0, 2.0 / 255.0, 5, true, 1};
    AttackConfig enc_attack{8.0 / 255.0, 2.0 / 255.0, 5, true, 1};
    AttackConfig eval_head_attack{8.0 / 255.0, 2.0 / 255.0, 10, true, 1};
    std::vector<double> eval_attack_eps = {8.0 / 255.0, 16.0 / 255.0};
    double eval_attack_eta = 2.0 / 255.0;
    int eval_attack_k = 10;
    bool eval_attack_random_start = true;
    int eval_attack_restarts = 1;

    // ablation switches
    std::string classifier_training = "adversarial";  // or "natural"
    std::string classifier_reset = "continuous";      // or "reinitialized"
    std::string linear_eval = "natural";              // or "adversarial"
    bool reuse_c_for_eval = false;

    // augmentation policy
    AugPolicy aug;

    std::uint64_t seed = 1;

    void validate() const;
    AttackConfig eval_attack(double epsilon) const;
    int n_classes() const { return static_cast<int>(classes.size()); }
};

// Flat UTF-8 `key = value` lines, '#' comments. Unknown or duplicate keys
// are errors. Values: numbers (fractions like 8/255 accepted), true/false,
// comma lists.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);

// Canonical form: every key, fixed order, round-trippable. Equal configs
// serialize identically, which is what config digests and diffs rely on.
std::string serialize_run_config(const RunConfig& cfg);

// Keys whose canonical values differ.
std::vector<std::string> config_diff(const RunConfig& a, const RunConfig& b);

std::uint64_t config_digest(const RunConfig& cfg);

}  // namespace claf
