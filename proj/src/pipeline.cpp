#include "claf/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "claf/loss.hpp"

namespace claf {

namespace {

std::string fmt_metric(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

std::string fmt_opt(const std::optional<double>& v) { return v ? fmt_metric(*v) : ""; }

EncoderDef encoder_def_from_config(const RunConfig& cfg) {
    EncoderDef def = encoder_def_by_name(cfg.arch);
    for (int i = 0; i < 3; ++i) {
        def.norm_mean[i] = cfg.norm_mean[i];
        def.norm_std[i] = cfg.norm_std[i];
    }
    return def;
}

struct BatchSlice {
    std::vector<LabeledImage> samples;
    std::size_t start;
};

std::vector<BatchSlice> make_batches(const Dataset& data, const std::vector<std::size_t>& perm,
                                     std::size_t batch_size) {
    std::vector<BatchSlice> out;
    for (std::size_t start = 0; start < perm.size(); start += batch_size) {
        BatchSlice b;
        b.start = start;
        const std::size_t end = std::min(start + batch_size, perm.size());
        for (std::size_t i = start; i < end; ++i) b.samples.push_back(data.items[perm[i]]);
        out.push_back(std::move(b));
    }
    return out;
}

std::vector<Tensor> split_rows(const Tensor& batch) {
    const std::size_t B = batch.shape[0];
    Shape row_shape(batch.shape.begin() + 1, batch.shape.end());
    const std::size_t stride = numel(row_shape);
    std::vector<Tensor> out;
    out.reserve(B);
    for (std::size_t i = 0; i < B; ++i) {
        Tensor t(row_shape);
        std::copy(batch.data.begin() + i * stride, batch.data.begin() + (i + 1) * stride,
                  t.data.begin());
        out.push_back(std::move(t));
    }
    return out;
}

int total_encoder_epochs(const RunConfig& cfg) {
    return std::max(1, cfg.stage1_epochs + cfg.stage2_epochs);
}

}  // namespace

std::string metrics_csv(const RunMetrics& m) {
    std::string out = "stage,epoch,loss,lr,clean_acc,robust_acc_eps8,robust_acc_eps16\n";
    for (const MetricsRow& r : m.rows) {
        out += std::to_string(r.stage) + "," + std::to_string(r.epoch) + "," + fmt_metric(r.loss) +
               "," + fmt_metric(r.lr) + "," + fmt_opt(r.clean_acc) + "," +
               fmt_opt(r.robust_acc_eps8) + "," + fmt_opt(r.robust_acc_eps16) + "\n";
    }
    return out;
}

void write_metrics_csv(const std::string& path, const RunMetrics& m) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("metrics: cannot open " + path);
    const std::string s = metrics_csv(m);
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

TrainState::TrainState(const RunConfig& cfg)
    : f(make_encoder(encoder_def_from_config(cfg), Rng::mix(cfg.seed, 101))),
      g(make_projection(f.def.out_dim, cfg.proj_hidden, cfg.proj_out, Rng::mix(cfg.seed, 102))),
      c(make_classifier(f.def.out_dim, cfg.n_classes(), Rng::mix(cfg.seed, 103))),
      eval_head(make_classifier(f.def.out_dim, cfg.n_classes(), Rng::mix(cfg.seed, 104))),
      enc_opt(cfg.enc_momentum, cfg.enc_weight_decay),
      cls_opt(cfg.cls_beta1, cfg.cls_beta2, cfg.cls_eps),
      eval_opt(cfg.cls_beta1, cfg.cls_beta2, cfg.cls_eps) {}

std::vector<std::size_t> epoch_permutation(std::uint64_t seed, int stage, int epoch, std::size_t n) {
    Rng rng(Rng::mix({seed, 0x7065726dULL, static_cast<std::uint64_t>(stage),
                      static_cast<std::uint64_t>(epoch)}));
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.uniform_int(i)]);
    return perm;
}

Rng multiview_rng(std::uint64_t seed, int stage, int epoch, std::size_t batch_start) {
    return Rng(Rng::mix({seed, 0x6d767277ULL, static_cast<std::uint64_t>(stage),
                         static_cast<std::uint64_t>(epoch), batch_start}));
}

Rng attack_rng(std::uint64_t seed, const char* tag, int epoch, std::size_t batch_start) {
    return Rng(Rng::mix({seed, fnv1a(tag, std::string(tag).size()),
                         static_cast<std::uint64_t>(epoch), batch_start}));
}

double stage1_epoch(TrainState& st, const Dataset& train, const RunConfig& cfg, int epoch) {
    const double lr = cosine_lr(epoch, total_encoder_epochs(cfg), cfg.enc_lr);
    const auto perm = epoch_permutation(cfg.seed, 1, epoch, train.items.size());
    double loss_total = 0.0;
    std::size_t anchors = 0;
    for (const BatchSlice& batch : make_batches(train, perm, cfg.batch_size)) {
        MultiviewBatch mb =
            make_multiview_batch(batch.samples, cfg.aug, multiview_rng(cfg.seed, 1, epoch, batch.start));
        Tape tape;
        BoundParams fb = bind_params(tape, st.f.params, true);
        BoundParams gb = bind_params(tape, st.g.params, true);
        DiffTensor z = project(st.g, gb, encode(st.f, fb, tape.constant(batch_tensor(mb))));
        DiffTensor loss = scl_loss({z, mb.labels, cfg.tau});
        tape.backward(loss);
        st.enc_opt.step(st.f.params, collect_grads(tape, fb), lr);
        st.enc_opt.step(st.g.params, collect_grads(tape, gb), lr);
        loss_total += loss.value().item();
        anchors += mb.n_views();
    }
    return loss_total / static_cast<double>(anchors);
}

double retrain_classifier(TrainState& st, const Dataset& train, const RunConfig& cfg, int stage,
                          int epoch) {
    if (cfg.classifier_reset == "reinitialized") {
        st.c = make_classifier(st.f.def.out_dim, cfg.n_classes(),
                               Rng::mix({cfg.seed, 105, static_cast<std::uint64_t>(epoch)}));
        st.cls_opt.reset();
    }
    const std::uint64_t f_hash = st.f.params.hash();
    const bool adversarial = cfg.classifier_training == "adversarial";
    const std::size_t n = train.items.size();
    const std::size_t take =
        std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(cfg.classifier_fraction *
                                                                    static_cast<double>(n))));
    double loss_total = 0.0;
    std::size_t seen = 0;
    for (int sub = 0; sub < cfg.classifier_epochs; ++sub) {
        auto perm = epoch_permutation(cfg.seed, 100 * stage + 10 + sub, epoch, n);
        perm.resize(take);
        for (const BatchSlice& batch : make_batches(train, perm, cfg.batch_size)) {
            Tensor x = stack_images(batch.samples);
            const std::vector<int> y = image_labels(batch.samples);
            if (adversarial) {
                Rng ar = attack_rng(cfg.seed, "clsatk",
                                    epoch * (cfg.classifier_epochs + 1) + sub, batch.start);
                x = pgd(st.f, st.c, x, y, cfg.cls_attack, ar);
            }
            Tape tape;
            BoundParams fb = bind_params(tape, st.f.params, false);
            BoundParams cb = bind_params(tape, st.c.params, true);
            DiffTensor loss = cross_entropy(classify(st.c, cb, encode(st.f, fb, tape.constant(x))), y);
            tape.backward(loss);
            st.cls_opt.step(st.c.params, collect_grads(tape, cb), cfg.cls_lr);
            loss_total += loss.value().item() * static_cast<double>(batch.samples.size());
            seen += batch.samples.size();
        }
    }
    if (st.f.params.hash() != f_hash)
        throw Error("retrain_classifier: encoder parameters changed while frozen");
    return seen ? loss_total / static_cast<double>(seen) : 0.0;
}

double stage2_epoch(TrainState& st, const Dataset& train, const RunConfig& cfg, int epoch) {
    // classifier refresh precedes every encoder batch of the epoch
    retrain_classifier(st, train, cfg, 2, epoch);
    const std::uint64_t c_hash = st.c.params.hash();

    const double lr = cosine_lr(cfg.stage1_epochs + epoch, total_encoder_epochs(cfg), cfg.enc_lr);
    const auto perm = epoch_permutation(cfg.seed, 2, epoch, train.items.size());
    double loss_total = 0.0;
    std::size_t anchors = 0;
    for (const BatchSlice& batch : make_batches(train, perm, cfg.batch_size)) {
        MultiviewBatch mb =
            make_multiview_batch(batch.samples, cfg.aug, multiview_rng(cfg.seed, 2, epoch, batch.start));
        // adversarial positives come from the clean, un-augmented samples
        Tensor x_clean = stack_images(batch.samples);
        const std::vector<int> y = image_labels(batch.samples);
        Tensor x_adv = pgd(st.f, st.c, x_clean, y, cfg.enc_attack,
                           attack_rng(cfg.seed, "s2atk", epoch, batch.start));
        mb = append_adversarial(std::move(mb), split_rows(x_adv));

        Tape tape;
        BoundParams fb = bind_params(tape, st.f.params, true);
        BoundParams gb = bind_params(tape, st.g.params, true);
        DiffTensor z = project(st.g, gb, encode(st.f, fb, tape.constant(batch_tensor(mb))));
        DiffTensor loss = scl_loss({z, mb.labels, cfg.tau});
        tape.backward(loss);
        st.enc_opt.step(st.f.params, collect_grads(tape, fb), lr);
        st.enc_opt.step(st.g.params, collect_grads(tape, gb), lr);
        loss_total += loss.value().item();
        anchors += mb.n_views();
    }
    if (st.c.params.hash() != c_hash)
        throw Error("stage2_epoch: classifier parameters changed during encoder update");
    return loss_total / static_cast<double>(anchors);
}

double stage3_epoch(TrainState& st, const Dataset& train, const RunConfig& cfg, int epoch) {
    if (epoch == 0 && cfg.reuse_c_for_eval) {
        st.eval_head = st.c;  // continue the co-trained classifier's weights
        st.eval_opt.reset();
    }
    const std::uint64_t f_hash = st.f.params.hash();
    const bool adversarial = cfg.linear_eval == "adversarial";
    const double lr = cosine_lr(epoch, std::max(1, cfg.eval_epochs), cfg.eval_lr);
    const auto perm = epoch_permutation(cfg.seed, 3, epoch, train.items.size());
    double loss_total = 0.0;
    std::size_t seen = 0;
    for (const BatchSlice& batch : make_batches(train, perm, cfg.batch_size)) {
        Tensor x = stack_images(batch.samples);
        const std::vector<int> y = image_labels(batch.samples);
        if (adversarial)
            x = pgd(st.f, st.eval_head, x, y, cfg.eval_head_attack,
                    attack_rng(cfg.seed, "ev3atk", epoch, batch.start));
        Tape tape;
        BoundParams fb = bind_params(tape, st.f.params, false);
        BoundParams hb = bind_params(tape, st.eval_head.params, true);
        DiffTensor loss =
            cross_entropy(classify(st.eval_head, hb, encode(st.f, fb, tape.constant(x))), y);
        tape.backward(loss);
        st.eval_opt.step(st.eval_head.params, collect_grads(tape, hb), lr);
        loss_total += loss.value().item() * static_cast<double>(batch.samples.size());
        seen += batch.samples.size();
    }
    if (st.f.params.hash() != f_hash)
        throw Error("stage3_epoch: encoder parameters changed while frozen");
    return seen ? loss_total / static_cast<double>(seen) : 0.0;
}

Dataset load_train_dataset(const RunConfig& cfg) {
    if (cfg.dataset == "cifar10")
        return load_cifar10(cfg.data_root, true, cfg.classes, cfg.train_per_class);
    return synthetic_dataset(cfg.n_classes(), cfg.train_per_class, cfg.synth_seed, false);
}

Dataset load_test_dataset(const RunConfig& cfg) {
    if (cfg.dataset == "cifar10")
        return load_cifar10(cfg.data_root, false, cfg.classes, cfg.test_per_class);
    return synthetic_dataset(cfg.n_classes(), cfg.test_per_class, cfg.synth_seed, true);
}

// ---- checkpointing ----

namespace {

void add_optimizer_state(Checkpoint& ckpt, const std::string& prefix, const ParamMap& state) {
    for (const auto& [name, t] : state.items()) ckpt.add_tensor(prefix + name, t);
}

void restore_optimizer_state(const Checkpoint& ckpt, const std::string& prefix, ParamMap& state) {
    state = ParamMap();
    for (const auto& [name, t] : ckpt.tensors)
        if (name.size() > prefix.size() && name.compare(0, prefix.size(), prefix) == 0)
            state.add(name.substr(prefix.size()), t);
}

}  // namespace

Checkpoint make_run_checkpoint(const TrainState& st, const RunConfig& cfg, int stage,
                               int epochs_done) {
    Checkpoint ckpt;
    add_params(ckpt, "enc.", st.f.params);
    add_params(ckpt, "proj.", st.g.params);
    add_params(ckpt, "cls.", st.c.params);
    add_params(ckpt, "evalhead.", st.eval_head.params);
    add_optimizer_state(ckpt, "opt.enc.v.", st.enc_opt.velocity());
    add_optimizer_state(ckpt, "opt.cls.m.", st.cls_opt.m());
    add_optimizer_state(ckpt, "opt.cls.v.", st.cls_opt.v());
    add_optimizer_state(ckpt, "opt.eval.m.", st.eval_opt.m());
    add_optimizer_state(ckpt, "opt.eval.v.", st.eval_opt.v());
    ckpt.set_meta("stage", std::to_string(stage));
    ckpt.set_meta("epochs_done", std::to_string(epochs_done));
    ckpt.set_meta("opt.cls.t", std::to_string(st.cls_opt.t()));
    ckpt.set_meta("opt.eval.t", std::to_string(st.eval_opt.t()));
    ckpt.set_meta("config_digest", std::to_string(config_digest(cfg)));
    ckpt.set_meta("config", serialize_run_config(cfg));
    return ckpt;
}

void restore_run_checkpoint(const Checkpoint& ckpt, TrainState& st, const RunConfig& cfg,
                            int& stage, int& epochs_done) {
    const std::string digest = std::to_string(config_digest(cfg));
    if (ckpt.meta_or("config_digest", "") != digest)
        throw Error("resume: checkpoint was written by a different config");
    load_params(ckpt, "enc.", st.f.params);
    load_params(ckpt, "proj.", st.g.params);
    load_params(ckpt, "cls.", st.c.params);
    load_params(ckpt, "evalhead.", st.eval_head.params);
    restore_optimizer_state(ckpt, "opt.enc.v.", st.enc_opt.velocity());
    restore_optimizer_state(ckpt, "opt.cls.m.", st.cls_opt.m());
    restore_optimizer_state(ckpt, "opt.cls.v.", st.cls_opt.v());
    restore_optimizer_state(ckpt, "opt.eval.m.", st.eval_opt.m());
    restore_optimizer_state(ckpt, "opt.eval.v.", st.eval_opt.v());
    st.cls_opt.set_t(std::stoll(ckpt.meta_or("opt.cls.t", "0")));
    st.eval_opt.set_t(std::stoll(ckpt.meta_or("opt.eval.t", "0")));
    stage = std::stoi(ckpt.meta_or("stage", "1"));
    epochs_done = std::stoi(ckpt.meta_or("epochs_done", "0"));
}

RunOutput run(const RunConfig& cfg, const std::string& out_dir, const std::string& resume_path) {
    cfg.validate();
    namespace fs = std::filesystem;
    if (!out_dir.empty()) fs::create_directories(out_dir);

    const Dataset train = load_train_dataset(cfg);
    const Dataset test = load_test_dataset(cfg);

    RunOutput out{RunMetrics{}, TrainState(cfg)};
    TrainState& st = out.state;

    int resume_stage = 1, resume_done = 0;
    if (!resume_path.empty())
        restore_run_checkpoint(load_checkpoint(resume_path), st, cfg, resume_stage, resume_done);

    auto maybe_checkpoint = [&](int stage, int epochs_done, bool boundary) {
        if (out_dir.empty()) return;
        const bool periodic = cfg.checkpoint_every > 0 && epochs_done % cfg.checkpoint_every == 0;
        if (!periodic && !boundary) return;
        const std::string name = boundary ? ("stage" + std::to_string(stage) + ".ckpt")
                                          : ("s" + std::to_string(stage) + "_e" +
                                             std::to_string(epochs_done) + ".ckpt");
        save_checkpoint((fs::path(out_dir) / name).string(),
                        make_run_checkpoint(st, cfg, stage, epochs_done));
    };

    const int T = total_encoder_epochs(cfg);
    // stage 1
    int start1 = resume_stage > 1 ? cfg.stage1_epochs : resume_done;
    for (int e = start1; e < cfg.stage1_epochs; ++e) {
        const double loss = stage1_epoch(st, train, cfg, e);
        out.metrics.rows.push_back({1, e, loss, cosine_lr(e, T, cfg.enc_lr), {}, {}, {}});
        maybe_checkpoint(1, e + 1, e + 1 == cfg.stage1_epochs);
    }
    // stage 2
    int start2 = resume_stage > 2 ? cfg.stage2_epochs : (resume_stage == 2 ? resume_done : 0);
    for (int e = start2; e < cfg.stage2_epochs; ++e) {
        const double loss = stage2_epoch(st, train, cfg, e);
        out.metrics.rows.push_back(
            {2, e, loss, cosine_lr(cfg.stage1_epochs + e, T, cfg.enc_lr), {}, {}, {}});
        maybe_checkpoint(2, e + 1, e + 1 == cfg.stage2_epochs);
    }
    // stage 3 (linear evaluation)
    int start3 = resume_stage == 3 ? resume_done : 0;
    for (int e = start3; e < cfg.eval_epochs; ++e) {
        const double loss = stage3_epoch(st, train, cfg, e);
        MetricsRow row{3, e, loss, cosine_lr(e, std::max(1, cfg.eval_epochs), cfg.eval_lr),
                       {}, {}, {}};
        out.metrics.rows.push_back(row);
        maybe_checkpoint(3, e + 1, false);
    }

    // final evaluation on the test split
    std::vector<AttackConfig> attacks;
    for (double eps : cfg.eval_attack_eps) attacks.push_back(cfg.eval_attack(eps));
    out.metrics.final_report =
        evaluate_model(st.f, st.eval_head, test, attacks, Rng::mix(cfg.seed, 0x6576616cULL));
    out.metrics.final_encoder_hash = st.f.params.hash();
    if (!out.metrics.rows.empty()) {
        MetricsRow& last = out.metrics.rows.back();
        last.clean_acc = out.metrics.final_report.clean_acc;
        const double r8 = out.metrics.final_report.robust_at(8.0 / 255.0);
        const double r16 = out.metrics.final_report.robust_at(16.0 / 255.0);
        if (r8 >= 0.0) last.robust_acc_eps8 = r8;
        if (r16 >= 0.0) last.robust_acc_eps16 = r16;
    }

    if (!out_dir.empty()) {
        save_checkpoint((fs::path(out_dir) / "final.ckpt").string(),
                        make_run_checkpoint(st, cfg, 3, cfg.eval_epochs));
        write_metrics_csv((fs::path(out_dir) / "metrics.csv").string(), out.metrics);
        std::ofstream rep((fs::path(out_dir) / "eval_report.txt").string(),
                          std::ios::binary | std::ios::trunc);
        rep << format_eval_report(out.metrics.final_report);
    }
    return out;
}

}  // namespace claf
