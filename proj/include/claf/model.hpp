#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "claf/tape.hpp"

namespace claf {

// Named parameter tensors with a stable insertion order (checkpoint layout
// and optimizer-state iteration both rely on it).
class ParamMap {
public:
    void add(std::string name, Tensor t);
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    bool contains(const std::string& name) const;
    std::vector<std::pair<std::string, Tensor>>& items() { return items_; }
    const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
    std::size_t size() const { return items_.size(); }
    std::uint64_t hash() const;

private:
    std::vector<std::pair<std::string, Tensor>> items_;
};

// Parameters registered on a tape for one forward/backward pass.
class BoundParams {
public:
    void add(std::string name, DiffTensor v) { vars_.emplace_back(std::move(name), v); }
    const DiffTensor& at(const std::string& name) const;
    const std::vector<std::pair<std::string, DiffTensor>>& items() const { return vars_; }

private:
    std::vector<std::pair<std::string, DiffTensor>> vars_;
};

BoundParams bind_params(Tape& tape, const ParamMap& params, bool requires_grad);
// Gradients for every bound parameter, in ParamMap order; zero tensors for
// parameters the loss never touched.
std::vector<std::pair<std::string, Tensor>> collect_grads(const Tape& tape, const BoundParams& bound);

// ---- architecture ----

enum class LayerKind { Conv, Relu, MaxPool2, GlobalAvgPool };

struct LayerSpec {
    LayerKind kind;
    int in_ch = 0, out_ch = 0, kernel = 0, stride = 1, pad = 0;  // Conv only
};

struct EncoderDef {
    std::string preset;                 // "desk", "tiny", "micro"
    std::vector<LayerSpec> layers;
    int out_dim = 0;                    // representation size d
    std::array<double, 3> norm_mean{};  // per-channel input normalization,
    std::array<double, 3> norm_std{};   // applied inside encode()
};

// conv3x3(3->32) relu conv3x3(32->32) relu pool conv3x3(32->64) relu
// conv3x3(64->64) relu pool gap, d = 64
EncoderDef desk_encoder_def();
// same shape with 8/8/16/16 channels, d = 16
EncoderDef tiny_encoder_def();
// 6/6/12/12 channels, d = 12
EncoderDef micro_encoder_def();
EncoderDef encoder_def_by_name(const std::string& preset);

struct Encoder {
    EncoderDef def;
    ParamMap params;  // conv{i}.w, conv{i}.b
};

struct ProjectionHead {
    int in_dim = 0, hidden = 0, out_dim = 0;
    ParamMap params;  // w1 [d,h], b1 [h], w2 [h,p], b2 [p]
};

struct Classifier {
    int in_dim = 0, n_classes = 0;
    ParamMap params;  // w [d,n], b [n]
};

// Kaiming-uniform fan-in weights (variance 2/fan_in), zero biases,
// deterministic per seed.
Encoder make_encoder(const EncoderDef& def, std::uint64_t seed);
ProjectionHead make_projection(int in_dim, int hidden, int out_dim, std::uint64_t seed);
Classifier make_classifier(int in_dim, int n_classes, std::uint64_t seed);

// x: [B,3,H,W] pixels in [0,1]; normalization happens inside, so callers
// (attacks in particular) always work in raw pixel space. Returns v: [B,d].
DiffTensor encode(const Encoder& f, const BoundParams& bound, const DiffTensor& x);
// v -> z: [B,p] with unit-norm rows.
DiffTensor project(const ProjectionHead& g, const BoundParams& bound, const DiffTensor& v);
// v -> logits: [B,n]
DiffTensor classify(const Classifier& c, const BoundParams& bound, const DiffTensor& v);

// Forward without gradients for evaluation paths.
Tensor encode_value(const Encoder& f, const Tensor& x);
Tensor classify_value(const Encoder& f, const Classifier& c, const Tensor& x);

// ---- checkpoints ----
// Little-endian binary: magic "CLAF", u32 version, u32 tensor count, then
// (name, dtype, shape, raw f64 data) records, then a key/value metadata
// block. load(save(x)) is bit-exact.

struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;
    std::vector<std::pair<std::string, Tensor>> tensors;
    std::vector<std::pair<std::string, std::string>> meta;

    void add_tensor(const std::string& name, const Tensor& t) { tensors.emplace_back(name, t); }
    const Tensor* find_tensor(const std::string& name) const;
    void set_meta(const std::string& key, const std::string& value);
    const std::string* find_meta(const std::string& key) const;
    std::string meta_or(const std::string& key, const std::string& fallback) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Replaces every tensor of `params` with the checkpoint entry `prefix + name`;
// missing names or shape disagreements are errors.
void load_params(const Checkpoint& ckpt, const std::string& prefix, ParamMap& params);
void add_params(Checkpoint& ckpt, const std::string& prefix, const ParamMap& params);

std::uint64_t file_hash(const std::string& path);

}  // namespace claf
