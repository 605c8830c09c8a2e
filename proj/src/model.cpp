#include "claf/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "claf/rng.hpp"

namespace claf {

void ParamMap::add(std::string name, Tensor t) {
    if (contains(name)) throw Error("ParamMap: duplicate parameter " + name);
    items_.emplace_back(std::move(name), std::move(t));
}

Tensor& ParamMap::at(const std::string& name) {
    for (auto& [n, t] : items_)
        if (n == name) return t;
    throw Error("ParamMap: no parameter named " + name);
}

const Tensor& ParamMap::at(const std::string& name) const {
    for (const auto& [n, t] : items_)
        if (n == name) return t;
    throw Error("ParamMap: no parameter named " + name);
}

bool ParamMap::contains(const std::string& name) const {
    for (const auto& [n, t] : items_)
        if (n == name) return true;
    return false;
}

std::uint64_t ParamMap::hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [n, t] : items_) {
        h = fnv1a(n.data(), n.size(), h);
        h = fnv1a(t.data.data(), t.data.size() * sizeof(double), h);
    }
    return h;
}

const DiffTensor& BoundParams::at(const std::string& name) const {
    for (const auto& [n, v] : vars_)
        if (n == name) return v;
    throw Error("BoundParams: no parameter named " + name);
}

BoundParams bind_params(Tape& tape, const ParamMap& params, bool requires_grad) {
    BoundParams out;
    for (const auto& [n, t] : params.items()) out.add(n, tape.leaf(t, requires_grad));
    return out;
}

std::vector<std::pair<std::string, Tensor>> collect_grads(const Tape& tape, const BoundParams& bound) {
    std::vector<std::pair<std::string, Tensor>> out;
    out.reserve(bound.items().size());
    for (const auto& [n, v] : bound.items()) {
        if (tape.has_grad(v))
            out.emplace_back(n, tape.grad(v));
        else
            out.emplace_back(n, Tensor(v.shape()));
    }
    return out;
}

// ---- architecture ----

namespace {

EncoderDef four_conv_def(std::string preset, int c1, int c2, int c3, int c4) {
    EncoderDef def;
    def.preset = std::move(preset);
    auto conv = [](int in, int out) {
        LayerSpec s;
        s.kind = LayerKind::Conv;
        s.in_ch = in;
        s.out_ch = out;
        s.kernel = 3;
        s.stride = 1;
        s.pad = 1;
        return s;
    };
    def.layers = {conv(3, c1),  {LayerKind::Relu},          conv(c1, c2), {LayerKind::Relu},
                  {LayerKind::MaxPool2}, conv(c2, c3), {LayerKind::Relu}, conv(c3, c4),
                  {LayerKind::Relu}, {LayerKind::MaxPool2}, {LayerKind::GlobalAvgPool}};
    def.out_dim = c4;
    // CIFAR-10 train statistics
    def.norm_mean = {0.4914, 0.4822, 0.4465};
    def.norm_std = {0.2470, 0.2435, 0.2616};
    return def;
}

}  // namespace

EncoderDef desk_encoder_def() { return four_conv_def("desk", 32, 32, 64, 64); }
EncoderDef tiny_encoder_def() { return four_conv_def("tiny", 8, 8, 16, 16); }
EncoderDef micro_encoder_def() { return four_conv_def("micro", 6, 6, 12, 12); }

EncoderDef encoder_def_by_name(const std::string& preset) {
    if (preset == "desk") return desk_encoder_def();
    if (preset == "tiny") return tiny_encoder_def();
    if (preset == "micro") return micro_encoder_def();
    throw Error("unknown encoder preset '" + preset + "' (expected desk, tiny or micro)");
}

namespace {

Tensor kaiming_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
    Tensor t(std::move(shape));
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (double& v : t.data) v = rng.uniform(-bound, bound);
    return t;
}

}  // namespace

Encoder make_encoder(const EncoderDef& def, std::uint64_t seed) {
    Encoder f;
    f.def = def;
    Rng rng(Rng::mix(seed, 0x656e63));
    int conv_idx = 0;
    for (const LayerSpec& l : def.layers) {
        if (l.kind != LayerKind::Conv) continue;
        const std::size_t fan_in = static_cast<std::size_t>(l.in_ch) * l.kernel * l.kernel;
        Rng wr = rng.fork(conv_idx);
        std::string base = "conv" + std::to_string(conv_idx);
        f.params.add(base + ".w",
                     kaiming_uniform({static_cast<std::size_t>(l.out_ch),
                                      static_cast<std::size_t>(l.in_ch),
                                      static_cast<std::size_t>(l.kernel),
                                      static_cast<std::size_t>(l.kernel)},
                                     fan_in, wr));
        f.params.add(base + ".b", Tensor({static_cast<std::size_t>(l.out_ch)}));
        ++conv_idx;
    }
    return f;
}

ProjectionHead make_projection(int in_dim, int hidden, int out_dim, std::uint64_t seed) {
    ProjectionHead g;
    g.in_dim = in_dim;
    g.hidden = hidden;
    g.out_dim = out_dim;
    Rng rng(Rng::mix(seed, 0x70726f6a));
    Rng r1 = rng.fork(1), r2 = rng.fork(2);
    g.params.add("w1", kaiming_uniform({static_cast<std::size_t>(in_dim),
                                        static_cast<std::size_t>(hidden)},
                                       in_dim, r1));
    g.params.add("b1", Tensor({static_cast<std::size_t>(hidden)}));
    g.params.add("w2", kaiming_uniform({static_cast<std::size_t>(hidden),
                                        static_cast<std::size_t>(out_dim)},
                                       hidden, r2));
    g.params.add("b2", Tensor({static_cast<std::size_t>(out_dim)}));
    return g;
}

Classifier make_classifier(int in_dim, int n_classes, std::uint64_t seed) {
    Classifier c;
    c.in_dim = in_dim;
    c.n_classes = n_classes;
    Rng rng(Rng::mix(seed, 0x636c73));
    Rng r1 = rng.fork(1);
    c.params.add("w", kaiming_uniform({static_cast<std::size_t>(in_dim),
                                       static_cast<std::size_t>(n_classes)},
                                      in_dim, r1));
    c.params.add("b", Tensor({static_cast<std::size_t>(n_classes)}));
    return c;
}

DiffTensor encode(const Encoder& f, const BoundParams& bound, const DiffTensor& x) {
    if (x.shape().size() != 4)
        throw Error("encode: expected [B,3,H,W] input, got " + shape_str(x.shape()));
    std::vector<double> a(3), b(3);
    for (int c = 0; c < 3; ++c) {
        a[c] = 1.0 / f.def.norm_std[c];
        b[c] = -f.def.norm_mean[c] / f.def.norm_std[c];
    }
    DiffTensor h = channel_affine(x, a, b);
    int conv_idx = 0;
    for (const LayerSpec& l : f.def.layers) {
        switch (l.kind) {
            case LayerKind::Conv: {
                std::string base = "conv" + std::to_string(conv_idx++);
                h = bias_add_channels(conv2d(h, bound.at(base + ".w"), l.stride, l.pad),
                                      bound.at(base + ".b"));
                break;
            }
            case LayerKind::Relu:
                h = relu(h);
                break;
            case LayerKind::MaxPool2:
                h = maxpool2x2(h);
                break;
            case LayerKind::GlobalAvgPool:
                h = global_avg_pool(h);
                break;
        }
    }
    return h;
}

DiffTensor project(const ProjectionHead&, const BoundParams& bound, const DiffTensor& v) {
    DiffTensor h = relu(bias_add_rows(matmul(v, bound.at("w1")), bound.at("b1")));
    DiffTensor z = bias_add_rows(matmul(h, bound.at("w2")), bound.at("b2"));
    return l2_normalize_rows(z);
}

DiffTensor classify(const Classifier&, const BoundParams& bound, const DiffTensor& v) {
    return bias_add_rows(matmul(v, bound.at("w")), bound.at("b"));
}

Tensor encode_value(const Encoder& f, const Tensor& x) {
    Tape tape;
    BoundParams bound = bind_params(tape, f.params, false);
    return encode(f, bound, tape.constant(x)).value();
}

Tensor classify_value(const Encoder& f, const Classifier& c, const Tensor& x) {
    Tape tape;
    BoundParams fb = bind_params(tape, f.params, false);
    BoundParams cb = bind_params(tape, c.params, false);
    return classify(c, cb, encode(f, fb, tape.constant(x))).value();
}

// ---- checkpoints ----

const Tensor* Checkpoint::find_tensor(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return &t;
    return nullptr;
}

void Checkpoint::set_meta(const std::string& key, const std::string& value) {
    for (auto& [k, v] : meta)
        if (k == key) {
            v = value;
            return;
        }
    meta.emplace_back(key, value);
}

const std::string* Checkpoint::find_meta(const std::string& key) const {
    for (const auto& [k, v] : meta)
        if (k == key) return &v;
    return nullptr;
}

std::string Checkpoint::meta_or(const std::string& key, const std::string& fallback) const {
    const std::string* v = find_meta(key);
    return v ? *v : fallback;
}

namespace {

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double d) { put_u64(out, std::bit_cast<std::uint64_t>(d)); }

void put_str(std::string& out, const std::string& s) {
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    out.append(s);
}

struct Reader {
    const unsigned char* p;
    std::size_t n;
    std::size_t off = 0;
    const std::string& path;

    void need(std::size_t k, const char* what) {
        if (off + k > n)
            throw Error("checkpoint " + path + ": truncated while reading " + what + " at offset " +
                        std::to_string(off));
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[off + i]) << (8 * i);
        off += 4;
        return v;
    }
    std::uint64_t u64(const char* what) {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[off + i]) << (8 * i);
        off += 8;
        return v;
    }
    std::string str(const char* what) {
        std::uint32_t len = u32(what);
        need(len, what);
        std::string s(reinterpret_cast<const char*>(p + off), len);
        off += len;
        return s;
    }
};

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::string out;
    out.append("CLAF");
    put_u32(out, Checkpoint::kVersion);
    put_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& [name, t] : ckpt.tensors) {
        put_str(out, name);
        out.push_back(0);  // dtype 0 = f64
        put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
        for (std::size_t d : t.shape) put_u64(out, d);
        for (double v : t.data) put_f64(out, v);
    }
    put_u32(out, static_cast<std::uint32_t>(ckpt.meta.size()));
    for (const auto& [k, v] : ckpt.meta) {
        put_str(out, k);
        put_str(out, v);
    }
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("checkpoint: cannot open " + path + " for writing");
    os.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!os) throw Error("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("checkpoint: cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    Reader r{reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), 0, path};

    r.need(4, "magic");
    if (std::memcmp(bytes.data(), "CLAF", 4) != 0)
        throw Error("checkpoint " + path + ": corrupt (bad magic)");
    r.off = 4;
    const std::uint32_t version = r.u32("version");
    if (version != Checkpoint::kVersion)
        throw Error("checkpoint " + path + ": version " + std::to_string(version) +
                    " unsupported (expected " + std::to_string(Checkpoint::kVersion) + ")");

    Checkpoint ckpt;
    const std::uint32_t n_tensors = r.u32("tensor count");
    for (std::uint32_t i = 0; i < n_tensors; ++i) {
        std::string name = r.str("tensor name");
        r.need(1, "dtype");
        const unsigned char dtype = r.p[r.off++];
        if (dtype != 0)
            throw Error("checkpoint " + path + ": tensor " + name + " has unsupported dtype " +
                        std::to_string(dtype));
        const std::uint32_t ndim = r.u32("rank");
        Shape shape(ndim);
        for (std::uint32_t d = 0; d < ndim; ++d) shape[d] = r.u64("dim");
        Tensor t(shape);
        r.need(t.numel() * 8, "tensor data");
        for (std::size_t j = 0; j < t.numel(); ++j)
            t.data[j] = std::bit_cast<double>(r.u64("tensor data"));
        ckpt.tensors.emplace_back(std::move(name), std::move(t));
    }
    const std::uint32_t n_meta = r.u32("metadata count");
    for (std::uint32_t i = 0; i < n_meta; ++i) {
        std::string k = r.str("metadata key");
        std::string v = r.str("metadata value");
        ckpt.meta.emplace_back(std::move(k), std::move(v));
    }
    if (r.off != r.n)
        throw Error("checkpoint " + path + ": " + std::to_string(r.n - r.off) +
                    " trailing bytes after metadata");
    return ckpt;
}

void load_params(const Checkpoint& ckpt, const std::string& prefix, ParamMap& params) {
    for (auto& [name, t] : params.items()) {
        const Tensor* src = ckpt.find_tensor(prefix + name);
        if (!src) throw Error("checkpoint: missing tensor " + prefix + name);
        if (src->shape != t.shape)
            throw Error("checkpoint: tensor " + prefix + name + " has shape " +
                        shape_str(src->shape) + ", expected " + shape_str(t.shape));
        t = *src;
    }
}

void add_params(Checkpoint& ckpt, const std::string& prefix, const ParamMap& params) {
    for (const auto& [name, t] : params.items()) ckpt.add_tensor(prefix + name, t);
}

std::uint64_t file_hash(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("file_hash: cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return fnv1a(bytes.data(), bytes.size());
}

}  // namespace claf
