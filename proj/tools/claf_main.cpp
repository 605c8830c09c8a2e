// claf: contrastive training with adversarial positives, plus the attack,
// evaluation and ablation tooling around it.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "claf/gradcheck.hpp"
#include "claf/pipeline.hpp"

namespace fs = std::filesystem;
using namespace claf;

namespace {

// epsilon flags accept pixel fractions ("0.031"), ratios ("8/255") and the
// CIFAR shorthand where a bare value > 1 means n/255
double parse_eps(const std::string& s) {
    const std::size_t slash = s.find('/');
    double v = 0.0;
    if (slash != std::string::npos)
        v = std::stod(s.substr(0, slash)) / std::stod(s.substr(slash + 1));
    else
        v = std::stod(s);
    if (v > 1.0) v /= 255.0;
    return v;
}

RunConfig config_for_model(const Checkpoint& ckpt) {
    const std::string* text = ckpt.find_meta("config");
    if (!text) throw Error("checkpoint carries no config metadata");
    return parse_run_config(*text);
}

void write_ppm(const std::string& path, const Tensor& pixels) {
    const int H = static_cast<int>(pixels.shape[1]), W = static_cast<int>(pixels.shape[2]);
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    os << "P6\n" << W << " " << H << "\n255\n";
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < 3; ++c) {
                const double v = pixels.data[(static_cast<std::size_t>(c) * H + y) * W + x];
                os.put(static_cast<char>(std::lround(std::min(1.0, std::max(0.0, v)) * 255.0)));
            }
}

int cmd_train(const std::string& config_path, std::uint64_t* seed, const std::string* data_root,
              const std::string& out_dir, const std::string& resume) {
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    if (seed) cfg.seed = *seed;
    if (data_root) cfg.data_root = *data_root;
    cfg.validate();
    std::printf("training: dataset=%s classes=%d train=%zu arch=%s stages=%d/%d/%d out=%s\n",
                cfg.dataset.c_str(), cfg.n_classes(), cfg.train_per_class * cfg.classes.size(),
                cfg.arch.c_str(), cfg.stage1_epochs, cfg.stage2_epochs, cfg.eval_epochs,
                out_dir.c_str());
    RunOutput out = run(cfg, out_dir, resume);
    for (const MetricsRow& r : out.metrics.rows)
        std::printf("stage %d epoch %3d  loss %.6f  lr %.6f\n", r.stage, r.epoch, r.loss, r.lr);
    std::printf("%s", format_eval_report(out.metrics.final_report).c_str());
    std::printf("wrote %s/metrics.csv and %s/final.ckpt\n", out_dir.c_str(), out_dir.c_str());
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::vector<std::string>& eps_flags, int steps,
             double eta, std::uint64_t seed, const std::string* data_root) {
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    RunConfig cfg = config_for_model(ckpt);
    if (data_root) cfg.data_root = *data_root;
    TrainState st(cfg);
    int stage = 0, done = 0;
    restore_run_checkpoint(ckpt, st, cfg, stage, done);

    std::vector<double> eps_list;
    for (const std::string& e : eps_flags) eps_list.push_back(parse_eps(e));
    if (eps_list.empty()) eps_list = cfg.eval_attack_eps;

    std::vector<AttackConfig> attacks;
    for (double eps : eps_list) {
        AttackConfig a = cfg.eval_attack(eps);
        if (steps > 0) a.k = steps;
        if (eta > 0.0) a.eta = eta;
        attacks.push_back(a);
    }
    Dataset test = load_test_dataset(cfg);
    EvalReport report =
        evaluate_model(st.f, st.eval_head, test, attacks, Rng::mix(seed, 0x6576616cULL));
    std::printf("%s", format_eval_report(report).c_str());
    return 0;
}

int cmd_attack(const std::string& ckpt_path, const std::string& out_dir, std::size_t count,
               const std::string& eps_flag, int steps, double eta, std::uint64_t seed,
               const std::string* data_root) {
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    RunConfig cfg = config_for_model(ckpt);
    if (data_root) cfg.data_root = *data_root;
    TrainState st(cfg);
    int stage = 0, done = 0;
    restore_run_checkpoint(ckpt, st, cfg, stage, done);

    AttackConfig atk = cfg.eval_attack(parse_eps(eps_flag));
    if (steps > 0) atk.k = steps;
    if (eta > 0.0) atk.eta = eta;

    Dataset test = load_test_dataset(cfg);
    count = std::min(count, test.items.size());
    std::vector<LabeledImage> chunk(test.items.begin(), test.items.begin() + count);
    Tensor x = stack_images(chunk);
    const std::vector<int> y = image_labels(chunk);
    Tensor x_adv = pgd(st.f, st.eval_head, x, y, atk, Rng(Rng::mix(seed, 0x61746bULL)));

    fs::create_directories(out_dir);
    std::vector<LabeledImage> adv_images = chunk;
    const std::size_t stride = x_adv.numel() / count;
    std::size_t flips = 0;
    Tensor clean_logits = classify_value(st.f, st.eval_head, x);
    Tensor adv_logits = classify_value(st.f, st.eval_head, x_adv);
    for (std::size_t i = 0; i < count; ++i) {
        std::copy(x_adv.data.begin() + i * stride, x_adv.data.begin() + (i + 1) * stride,
                  adv_images[i].pixels.data.begin());
        auto arg = [&](const Tensor& l) {
            const double* row = l.data.data() + i * l.shape[1];
            return std::max_element(row, row + l.shape[1]) - row;
        };
        if (arg(clean_logits) != arg(adv_logits)) ++flips;
        if (i < 8) {
            write_ppm(out_dir + "/clean_" + std::to_string(i) + ".ppm", chunk[i].pixels);
            write_ppm(out_dir + "/adv_" + std::to_string(i) + ".ppm", adv_images[i].pixels);
        }
    }
    const auto bytes = serialize_cifar10(adv_images);
    std::ofstream os(out_dir + "/adv_images.bin", std::ios::binary | std::ios::trunc);
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    std::printf("attacked %zu samples: eps=%.6f k=%d eta=%.6f, prediction flips: %zu\n", count,
                atk.epsilon, atk.k, atk.eta, flips);
    std::printf("wrote %s/adv_images.bin and %zu ppm pairs\n", out_dir.c_str(),
                std::min<std::size_t>(count, 8));
    return 0;
}

int cmd_ablate(const std::string& name, const std::string& config_path, std::uint64_t* seed,
               const std::string* data_root, const std::string& out_dir) {
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    if (seed) cfg.seed = *seed;
    if (data_root) cfg.data_root = *data_root;
    AblationOutcome o = run_ablation(name, cfg);
    const std::string table = format_ablation(o);
    std::printf("%s", table.c_str());
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        std::ofstream(out_dir + "/" + name + ".txt", std::ios::trunc) << table;
        std::ofstream(out_dir + "/" + name + "_" + o.label_a + ".txt", std::ios::trunc)
            << format_eval_report(o.report_a);
        std::ofstream(out_dir + "/" + name + "_" + o.label_b + ".txt", std::ios::trunc)
            << format_eval_report(o.report_b);
    }
    return 0;
}

int cmd_gradcheck() {
    auto cases = run_gradcheck_suite();
    double worst = 0.0;
    for (const auto& c : cases) {
        std::printf("%-32s probes %5zu  max_rel %.3e  %s\n", c.name.c_str(), c.report.probes,
                    c.report.max_rel_err, c.pass ? "ok" : "FAIL");
        worst = std::max(worst, c.report.max_rel_err);
    }
    std::printf("gradcheck: %zu cases, worst relative error %.3e\n", cases.size(), worst);
    if (!gradcheck_suite_passed(cases)) {
        std::fprintf(stderr, "gradcheck FAILED (threshold 1e-4)\n");
        return 1;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"contrastive learning with adversarial positives"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "run", ckpt_path, resume, name;
    std::string data_root;
    bool data_root_set = false;
    std::uint64_t seed = 1;
    bool seed_set = false;
    std::vector<std::string> eps_flags;
    std::string eps_flag = "8/255";
    int steps = 0;
    double eta = 0.0;
    std::size_t count = 16;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--seed", seed, "run seed")->each([&](const std::string&) { seed_set = true; });
        sub->add_option("--data-root", data_root, "CIFAR-10 binary directory")
            ->each([&](const std::string&) { data_root_set = true; });
    };

    CLI::App* train = app.add_subcommand("train", "run the three training stages");
    train->add_option("--config", config_path, "config file (key = value)");
    train->add_option("--out-dir", out_dir, "output directory");
    train->add_option("--resume", resume, "checkpoint to resume from");
    add_common(train);

    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    eval->add_option("--checkpoint", ckpt_path, "trained checkpoint")->required();
    eval->add_option("--eps", eps_flags, "attack epsilon (repeatable; 8 means 8/255)");
    eval->add_option("--steps", steps, "PGD steps override");
    eval->add_option("--eta", eta, "PGD step size override");
    add_common(eval);

    CLI::App* attack = app.add_subcommand("attack", "emit adversarial images for inspection");
    attack->add_option("--checkpoint", ckpt_path, "trained checkpoint")->required();
    attack->add_option("--out-dir", out_dir, "output directory");
    attack->add_option("--count", count, "number of test images to attack");
    attack->add_option("--eps", eps_flag, "attack epsilon");
    attack->add_option("--steps", steps, "PGD steps override");
    attack->add_option("--eta", eta, "PGD step size override");
    add_common(attack);

    CLI::App* ablate = app.add_subcommand("ablate", "run a paired ablation");
    ablate
        ->add_option("--name", name,
                     "one of: classifier_nat_vs_adv, eval_nat_vs_adv, reinit_vs_continuous, reuse_c")
        ->required();
    ablate->add_option("--config", config_path, "base config file");
    ablate->add_option("--out-dir", out_dir, "output directory");
    add_common(ablate);

    app.add_subcommand("gradcheck", "run the gradient verification suite");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return 2;
    }

    try {
        if (app.got_subcommand("train"))
            return cmd_train(config_path, seed_set ? &seed : nullptr,
                             data_root_set ? &data_root : nullptr, out_dir, resume);
        if (app.got_subcommand("eval"))
            return cmd_eval(ckpt_path, eps_flags, steps, eta, seed,
                            data_root_set ? &data_root : nullptr);
        if (app.got_subcommand("attack"))
            return cmd_attack(ckpt_path, out_dir, count, eps_flag, steps, eta, seed,
                              data_root_set ? &data_root : nullptr);
        if (app.got_subcommand("ablate"))
            return cmd_ablate(name, config_path, seed_set ? &seed : nullptr,
                              data_root_set ? &data_root : nullptr, out_dir);
        if (app.got_subcommand("gradcheck")) return cmd_gradcheck();
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}
