#include "claf/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

namespace claf {

namespace {

constexpr std::size_t kPlane = static_cast<std::size_t>(kImageSize) * kImageSize;

double luma(double r, double g, double b) { return 0.299 * r + 0.587 * g + 0.114 * b; }

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot open " + path);
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace

std::vector<LabeledImage> parse_cifar10(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() % kCifarRecordBytes != 0)
        throw Error("cifar10: truncated stream, " + std::to_string(bytes.size()) +
                    " bytes is not a multiple of " + std::to_string(kCifarRecordBytes) +
                    " (first partial record at offset " +
                    std::to_string(bytes.size() - bytes.size() % kCifarRecordBytes) + ")");
    const std::size_t n = bytes.size() / kCifarRecordBytes;
    std::vector<LabeledImage> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint8_t* rec = bytes.data() + i * kCifarRecordBytes;
        if (rec[0] > 9)
            throw Error("cifar10: label byte " + std::to_string(rec[0]) + " > 9 at offset " +
                        std::to_string(i * kCifarRecordBytes));
        LabeledImage img;
        img.label = rec[0];
        img.pixels = Tensor({3, kImageSize, kImageSize});
        for (std::size_t j = 0; j < 3 * kPlane; ++j)
            img.pixels.data[j] = static_cast<double>(rec[1 + j]) / 255.0;
        out.push_back(std::move(img));
    }
    return out;
}

std::vector<std::uint8_t> serialize_cifar10(const std::vector<LabeledImage>& images) {
    std::vector<std::uint8_t> out;
    out.reserve(images.size() * kCifarRecordBytes);
    for (const LabeledImage& img : images) {
        if (img.pixels.shape != Shape{3, kImageSize, kImageSize})
            throw Error("serialize_cifar10: image shape " + shape_str(img.pixels.shape));
        if (img.label < 0 || img.label > 9)
            throw Error("serialize_cifar10: label " + std::to_string(img.label) + " out of range");
        out.push_back(static_cast<std::uint8_t>(img.label));
        for (double v : img.pixels.data)
            out.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0)));
    }
    return out;
}

AugPolicy AugPolicy::disabled() {
    AugPolicy p;
    p.crop = p.flip = p.jitter = p.grayscale = false;
    return p;
}

void AugPolicy::validate() const {
    auto prob = [](double p, const char* what) {
        if (p < 0.0 || p > 1.0) throw Error(std::string("AugPolicy: ") + what + " not in [0,1]");
    };
    prob(flip_p, "flip_p");
    prob(jitter_p, "jitter_p");
    prob(grayscale_p, "grayscale_p");
    if (crop_pad < 0) throw Error("AugPolicy: negative crop_pad");
}

namespace {

Tensor crop_from_padded(const Tensor& px, int pad, int oy, int ox) {
    const int C = static_cast<int>(px.shape[0]);
    const int H = static_cast<int>(px.shape[1]);
    const int W = static_cast<int>(px.shape[2]);
    Tensor out(px.shape);
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const int sy = y + oy - pad;
                const int sx = x + ox - pad;
                double v = 0.0;
                if (sy >= 0 && sy < H && sx >= 0 && sx < W)
                    v = px.data[(static_cast<std::size_t>(c) * H + sy) * W + sx];
                out.data[(static_cast<std::size_t>(c) * H + y) * W + x] = v;
            }
    return out;
}

void hflip_inplace(Tensor& px) {
    const std::size_t C = px.shape[0], H = px.shape[1], W = px.shape[2];
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < H; ++y) {
            double* row = px.data.data() + (c * H + y) * W;
            std::reverse(row, row + W);
        }
}

}  // namespace

LabeledImage augment(const LabeledImage& img, const AugPolicy& policy, Rng rng) {
    policy.validate();
    LabeledImage out;
    out.label = img.label;
    out.pixels = img.pixels;
    const std::size_t C = out.pixels.shape[0], H = out.pixels.shape[1], W = out.pixels.shape[2];

    if (policy.crop && policy.crop_pad > 0) {
        const int oy = static_cast<int>(rng.uniform_int(2 * policy.crop_pad + 1));
        const int ox = static_cast<int>(rng.uniform_int(2 * policy.crop_pad + 1));
        out.pixels = crop_from_padded(out.pixels, policy.crop_pad, oy, ox);
    }
    if (policy.flip && rng.bernoulli(policy.flip_p)) hflip_inplace(out.pixels);
    if (policy.jitter && rng.bernoulli(policy.jitter_p)) {
        const double fb = rng.uniform(std::max(0.0, 1.0 - policy.brightness), 1.0 + policy.brightness);
        const double fc = rng.uniform(std::max(0.0, 1.0 - policy.contrast), 1.0 + policy.contrast);
        const double fs = rng.uniform(std::max(0.0, 1.0 - policy.saturation), 1.0 + policy.saturation);
        double* d = out.pixels.data.data();
        for (std::size_t i = 0; i < C * H * W; ++i) d[i] *= fb;
        double mean_gray = 0.0;
        for (std::size_t i = 0; i < H * W; ++i)
            mean_gray += luma(d[i], d[kPlane + i], d[2 * kPlane + i]);
        mean_gray /= static_cast<double>(H * W);
        for (std::size_t i = 0; i < C * H * W; ++i) d[i] = fc * d[i] + (1.0 - fc) * mean_gray;
        for (std::size_t i = 0; i < H * W; ++i) {
            const double g = luma(d[i], d[kPlane + i], d[2 * kPlane + i]);
            for (std::size_t c = 0; c < 3; ++c) {
                double& v = d[c * kPlane + i];
                v = fs * v + (1.0 - fs) * g;
            }
        }
    }
    if (policy.grayscale && rng.bernoulli(policy.grayscale_p)) {
        double* d = out.pixels.data.data();
        for (std::size_t i = 0; i < H * W; ++i) {
            const double g = luma(d[i], d[kPlane + i], d[2 * kPlane + i]);
            d[i] = d[kPlane + i] = d[2 * kPlane + i] = g;
        }
    }
    for (double& v : out.pixels.data) v = std::min(1.0, std::max(0.0, v));
    return out;
}

void MultiviewBatch::validate() const {
    if (views.size() != labels.size() || views.size() != origins.size())
        throw Error("MultiviewBatch: inconsistent view/label/origin counts");
    for (std::size_t i = 0; i < views.size(); ++i)
        if (positive_set(*this, i).empty())
            throw Error("MultiviewBatch: view " + std::to_string(i) + " has an empty positive set");
}

MultiviewBatch make_multiview_batch(const std::vector<LabeledImage>& samples,
                                    const AugPolicy& policy, const Rng& rng) {
    if (samples.empty()) throw Error("make_multiview_batch: empty sample list");
    MultiviewBatch b;
    b.n_sources = samples.size();
    const std::size_t N = samples.size();
    b.views.resize(2 * N);
    b.labels.resize(2 * N);
    b.origins.resize(2 * N);
    for (std::size_t i = 0; i < N; ++i) {
        for (std::size_t v = 0; v < 2; ++v) {
            LabeledImage a = augment(samples[i], policy, rng.fork(2 * i + v));
            b.views[v * N + i] = std::move(a.pixels);
            b.labels[v * N + i] = samples[i].label;
            b.origins[v * N + i] = v == 0 ? ViewOrigin::Aug1 : ViewOrigin::Aug2;
        }
    }
    return b;
}

MultiviewBatch append_adversarial(MultiviewBatch batch, const std::vector<Tensor>& adv) {
    const std::size_t N = batch.n_sources;
    if (adv.size() != N)
        throw Error("append_adversarial: got " + std::to_string(adv.size()) +
                    " adversarial images for batch of " + std::to_string(N));
    if (batch.views.size() != 2 * N)
        throw Error("append_adversarial: batch already has " + std::to_string(batch.views.size()) +
                    " views, expected 2N");
    for (std::size_t i = 0; i < N; ++i) {
        for (double v : adv[i].data)
            if (v < 0.0 || v > 1.0)
                throw Error("append_adversarial: adversarial pixel " + std::to_string(v) +
                            " outside [0,1] in image " + std::to_string(i));
        batch.views.push_back(adv[i]);
        batch.labels.push_back(batch.labels[i]);  // source labels carry over
        batch.origins.push_back(ViewOrigin::Adversarial);
    }
    return batch;
}

std::vector<std::size_t> positive_set(const MultiviewBatch& batch, std::size_t i) {
    std::vector<std::size_t> out;
    for (std::size_t j = 0; j < batch.views.size(); ++j)
        if (j != i && batch.labels[j] == batch.labels[i]) out.push_back(j);
    return out;
}

Tensor batch_tensor(const MultiviewBatch& batch) {
    if (batch.views.empty()) throw Error("batch_tensor: empty batch");
    const Shape& s = batch.views[0].shape;
    Tensor out({batch.views.size(), s[0], s[1], s[2]});
    const std::size_t stride = numel(s);
    for (std::size_t i = 0; i < batch.views.size(); ++i) {
        if (batch.views[i].shape != s) throw Error("batch_tensor: inconsistent view shapes");
        std::copy(batch.views[i].data.begin(), batch.views[i].data.end(),
                  out.data.begin() + i * stride);
    }
    return out;
}

Tensor stack_images(const std::vector<LabeledImage>& images) {
    if (images.empty()) throw Error("stack_images: empty list");
    const Shape& s = images[0].pixels.shape;
    Tensor out({images.size(), s[0], s[1], s[2]});
    const std::size_t stride = numel(s);
    for (std::size_t i = 0; i < images.size(); ++i)
        std::copy(images[i].pixels.data.begin(), images[i].pixels.data.end(),
                  out.data.begin() + i * stride);
    return out;
}

std::vector<int> image_labels(const std::vector<LabeledImage>& images) {
    std::vector<int> out(images.size());
    for (std::size_t i = 0; i < images.size(); ++i) out[i] = images[i].label;
    return out;
}

// ---- datasets ----

bool cifar10_present(const std::string& root) {
    namespace fs = std::filesystem;
    for (int i = 1; i <= 5; ++i)
        if (!fs::exists(fs::path(root) / ("data_batch_" + std::to_string(i) + ".bin"))) return false;
    return fs::exists(fs::path(root) / "test_batch.bin");
}

Dataset load_cifar10(const std::string& root, bool train, const std::vector<int>& classes,
                     std::size_t per_class) {
    namespace fs = std::filesystem;
    std::vector<int> keep = classes;
    if (keep.empty())
        for (int k = 0; k < 10; ++k) keep.push_back(k);
    for (int k : keep)
        if (k < 0 || k > 9) throw Error("load_cifar10: class " + std::to_string(k) + " out of range");

    std::vector<std::string> files;
    if (train)
        for (int i = 1; i <= 5; ++i)
            files.push_back((fs::path(root) / ("data_batch_" + std::to_string(i) + ".bin")).string());
    else
        files.push_back((fs::path(root) / "test_batch.bin").string());

    Dataset ds;
    ds.n_classes = static_cast<int>(keep.size());
    std::vector<std::size_t> counts(keep.size(), 0);
    for (const std::string& f : files) {
        const bool done = per_class > 0 &&
                          std::all_of(counts.begin(), counts.end(),
                                      [per_class](std::size_t c) { return c >= per_class; });
        if (done) break;
        for (LabeledImage& img : parse_cifar10(read_file(f))) {
            auto it = std::find(keep.begin(), keep.end(), img.label);
            if (it == keep.end()) continue;
            const std::size_t new_label = static_cast<std::size_t>(it - keep.begin());
            if (per_class > 0 && counts[new_label] >= per_class) continue;
            ++counts[new_label];
            img.label = static_cast<int>(new_label);  // dense re-index
            ds.items.push_back(std::move(img));
        }
    }
    if (ds.items.empty()) throw Error("load_cifar10: no samples matched under " + root);
    return ds;
}

namespace {

// Oriented grating frequencies and unit color axes per class; ten entries so
// any CIFAR-sized class count works.
struct SynthClass {
    double fy, fx;
    double color[3];
};
constexpr SynthClass kSynthClasses[10] = {
    {0.0, 3.0, {1.0, 0.2, 0.2}},  {3.0, 0.0, {0.2, 0.2, 1.0}},  {2.0, 2.0, {0.2, 1.0, 0.2}},
    {4.0, 1.0, {1.0, 1.0, 0.2}},  {1.0, 4.0, {1.0, 0.2, 1.0}},  {5.0, 0.0, {0.2, 1.0, 1.0}},
    {0.0, 5.0, {1.0, 0.6, 0.2}},  {3.0, 3.0, {0.6, 0.2, 1.0}},  {5.0, 2.0, {0.4, 1.0, 0.6}},
    {2.0, 5.0, {1.0, 0.4, 0.6}},
};

}  // namespace

Dataset synthetic_dataset(int n_classes, std::size_t per_class, std::uint64_t seed, bool test_split) {
    if (n_classes < 2 || n_classes > 10)
        throw Error("synthetic_dataset: class count " + std::to_string(n_classes) +
                    " outside [2,10]");
    Rng root(Rng::mix({seed, 0x73796e7468ULL, test_split ? 1ULL : 0ULL}));
    std::vector<LabeledImage> images;
    images.reserve(n_classes * per_class);
    constexpr double kTwoPi = 6.283185307179586;
    for (int k = 0; k < n_classes; ++k) {
        const SynthClass& sc = kSynthClasses[k];
        for (std::size_t s = 0; s < per_class; ++s) {
            Rng rng = root.fork(static_cast<std::uint64_t>(k) * 1000003ULL + s);
            LabeledImage img;
            img.label = k;
            img.pixels = Tensor({3, kImageSize, kImageSize});
            // smooth background: two random low-frequency waves per channel
            double bg_amp[3], bg_fy[3][2], bg_fx[3][2], bg_ph[3][2];
            for (int c = 0; c < 3; ++c) {
                bg_amp[c] = rng.uniform(0.05, 0.12);
                for (int w = 0; w < 2; ++w) {
                    bg_fy[c][w] = rng.uniform(0.5, 1.5);
                    bg_fx[c][w] = rng.uniform(0.5, 1.5);
                    bg_ph[c][w] = rng.uniform(0.0, kTwoPi);
                }
            }
            const double amp = rng.uniform(0.10, 0.20);
            const double phase = rng.uniform(0.0, kTwoPi);
            const double base = rng.uniform(0.35, 0.65);
            for (int y = 0; y < kImageSize; ++y)
                for (int x = 0; x < kImageSize; ++x) {
                    const double u = static_cast<double>(y) / kImageSize;
                    const double v = static_cast<double>(x) / kImageSize;
                    const double grating = amp * std::sin(kTwoPi * (sc.fy * u + sc.fx * v) + phase);
                    for (int c = 0; c < 3; ++c) {
                        double val = base + grating * sc.color[c];
                        for (int w = 0; w < 2; ++w)
                            val += bg_amp[c] *
                                   std::sin(kTwoPi * (bg_fy[c][w] * u + bg_fx[c][w] * v) + bg_ph[c][w]);
                        val += rng.uniform(-0.04, 0.04);
                        img.pixels.data[(static_cast<std::size_t>(c) * kImageSize + y) * kImageSize +
                                        x] = std::min(1.0, std::max(0.0, val));
                    }
                }
            images.push_back(std::move(img));
        }
    }
    // shuffle deterministically so class blocks do not line up with batches
    Rng sh = root.fork(0xdead);
    for (std::size_t i = images.size(); i > 1; --i)
        std::swap(images[i - 1], images[sh.uniform_int(i)]);
    // route through the binary format so parser and generator stay in sync
    Dataset ds;
    ds.n_classes = n_classes;
    ds.items = parse_cifar10(serialize_cifar10(images));
    return ds;
}

}  // namespace claf
