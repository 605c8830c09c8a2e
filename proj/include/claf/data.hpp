#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "claf/rng.hpp"
#include "claf/tensor.hpp"

namespace claf {

// One CIFAR-shaped samplearranged [3,32,32], pixels in [0,1].
struct LabeledImage {
    Tensor pixels;  // [3,H,W]
    int label = 0;
};

constexpr int kImageChannels = 3;
constexpr int kImageSize = 32;
constexpr std::size_t kCifarRecordBytes = 1 + 3072;

// CIFAR-10 binary record stream: label byte + 3072 pixel bytes (R, G, B
// planes, row-major); pixel byte b maps to b/255. Errors carry the byte
// offset of the malformed record.
std::vector<LabeledImage> parse_cifar10(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> serialize_cifar10(const std::vector<LabeledImage>& images);

struct AugPolicy {
    bool crop = true;
    int crop_pad = 4;
    bool flip = true;
    double flip_p = 0.5;
    bool jitter = true;
    double jitter_p = 0.8;
    double brightness = 0.4, contrast = 0.4, saturation = 0.4;
    bool grayscale = true;
    double grayscale_p = 0.2;

    static AugPolicy disabled();
    void validate() const;
};

// Stochastic augmentation: random crop from a zero-padded canvas, horizontal
// flip, color jitter (brightness -> contrast -> saturation, in that fixed
// order), random grayscale. Output pixels clamped to [0,1]; label preserved;
// pure given the rng stream.
LabeledImage augment(const LabeledImage& img, const AugPolicy& policy, Rng rng);

enum class ViewOrigin : std::uint8_t { Aug1 = 0, Aug2 = 1, Adversarial = 2 };

// 2N views ordered [aug1 block, aug2 block], extended to 3N when the
// adversarial block is appended. Views of one source sample share its label.
struct MultiviewBatch {
    std::vector<Tensor> views;
    std::vector<int> labels;
    std::vector<ViewOrigin> origins;
    std::size_t n_sources = 0;

    std::size_t n_views() const { return views.size(); }
    void validate() const;
};

// View (i, v) is augmented with the stream rng.fork(2*i + v), so execution
// order can never change the result.
MultiviewBatch make_multiview_batch(const std::vector<LabeledImage>& samples,
                                    const AugPolicy& policy, const Rng& rng);

MultiviewBatch append_adversarial(MultiviewBatch batch, const std::vector<Tensor>& adv);

// Positive set P(i): same-label views other than i itself.
std::vector<std::size_t> positive_set(const MultiviewBatch& batch, std::size_t i);

// Stacks views into one [V,3,H,W] tensor.
Tensor batch_tensor(const MultiviewBatch& batch);
Tensor stack_images(const std::vector<LabeledImage>& images);
std::vector<int> image_labels(const std::vector<LabeledImage>& images);

// ---- datasets ----

struct Dataset {
    std::vector<LabeledImage> items;
    int n_classes = 0;
};

// Reads data_batch_1..5.bin / test_batch.bin from root, keeps only the
// requested classes (re-indexed densely in the given order) and caps the
// per-class count (0 = no cap).
Dataset load_cifar10(const std::string& root, bool train, const std::vector<int>& classes,
                     std::size_t per_class);

// Deterministic CIFAR-shaped stand-in: class-specific oriented gratings with
// random phase and color over a smooth background, plus pixel noise. The
// generated records round-trip through serialize/parse so the binary format
// code is on the path.
Dataset synthetic_dataset(int n_classes, std::size_t per_class, std::uint64_t seed, bool test_split);

bool cifar10_present(const std::string& root);

}  // namespace claf
