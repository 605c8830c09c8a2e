#pragma once

#include <optional>
#include <string>
#include <vector>

#include "claf/config.hpp"
#include "claf/evaluate.hpp"
#include "claf/optim.hpp"

namespace claf {

struct MetricsRow {
    int stage = 0;  // 1, 2, 3
    int epoch = 0;  // within the stage
    double loss = 0.0;
    double lr = 0.0;
    std::optional<double> clean_acc;
    std::optional<double> robust_acc_eps8;
    std::optional<double> robust_acc_eps16;
};

struct RunMetrics {
    std::vector<MetricsRow> rows;
    EvalReport final_report;
    std::uint64_t final_encoder_hash = 0;
};

// header: stage,epoch,loss,lr,clean_acc,robust_acc_eps8,robust_acc_eps16
std::string metrics_csv(const RunMetrics& m);
void write_metrics_csv(const std::string& path, const RunMetrics& m);

// Everything the three stages train, plus optimizer state so checkpoints
// resume exactly.
struct TrainState {
    Encoder f;
    ProjectionHead g;
    Classifier c;          // Algorithm co-trained classifier
    Classifier eval_head;  // stage-3 head
    SgdMomentum enc_opt;
    Adam cls_opt;
    Adam eval_opt;

    explicit TrainState(const RunConfig& cfg);
};

// ---- deterministic derivations shared by the loops and the tests ----
// Every random draw in a run comes from (seed, purpose, stage, epoch, index)
// so execution order, batching and resume points cannot change results.
std::vector<std::size_t> epoch_permutation(std::uint64_t seed, int stage, int epoch, std::size_t n);
Rng multiview_rng(std::uint64_t seed, int stage, int epoch, std::size_t batch_start);
Rng attack_rng(std::uint64_t seed, const char* tag, int epoch, std::size_t batch_start);

// ---- stages ----
// Each returns the mean per-anchor (stage 1/2) or per-sample (stage 3) loss
// of the epoch. Freezing contracts are enforced with parameter hashes and
// violations throw.

double stage1_epoch(TrainState& st, const Dataset& train, const RunConfig& cfg, int epoch);

// Algorithm co-training: cfg.classifier_epochs passes over a
// cfg.classifier_fraction sample of the loader; adversarial or natural per
// the classifier_training switch. The encoder is frozen.
double retrain_classifier(TrainState& st, const Dataset& train, const RunConfig& cfg, int stage,
                          int epoch);

// Classifier retraining first, then per batch: two augmentations plus a PGD
// example of the clean sample, 3N views, one SGD step on the contrastive
// loss. The classifier is frozen during the encoder phase.
double stage2_epoch(TrainState& st, const Dataset& train, const RunConfig& cfg, int epoch);

// Linear evaluation head on the frozen encoder; fresh head unless
// cfg.reuse_c_for_eval, natural or adversarial per cfg.linear_eval.
double stage3_epoch(TrainState& st, const Dataset& train, const RunConfig& cfg, int epoch);

// ---- full run ----

struct RunOutput {
    RunMetrics metrics;
    TrainState state;
};

Dataset load_train_dataset(const RunConfig& cfg);
Dataset load_test_dataset(const RunConfig& cfg);

// stage1 -> stage2 -> stage3 -> final evaluation. out_dir (when non-empty)
// receives metrics.csv, periodic checkpoints and final.ckpt. resume_path
// restarts from a saved epoch boundary; the config digest must match.
RunOutput run(const RunConfig& cfg, const std::string& out_dir = "",
              const std::string& resume_path = "");

// checkpoint contents for a given position in the run
Checkpoint make_run_checkpoint(const TrainState& st, const RunConfig& cfg, int stage,
                               int epochs_done);
void restore_run_checkpoint(const Checkpoint& ckpt, TrainState& st, const RunConfig& cfg,
                            int& stage, int& epochs_done);

}  // namespace claf
