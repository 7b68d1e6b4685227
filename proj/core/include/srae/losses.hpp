#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "srae/data.hpp"
#include "srae/graph.hpp"
#include "srae/model.hpp"

namespace srae {

inline constexpr double kProbFloor = 1e-7;

/// Fixed, randomly initialized conv stack standing in for a pretrained
/// perceptual network. Its weights are graph inputs, never parameters, so no
/// update rule can touch them.
class FeatureExtractor {
public:
    FeatureExtractor() = default;
    FeatureExtractor(int image_channels, std::vector<int> widths, std::uint64_t seed);

    static FeatureExtractor standard(int image_channels, std::uint64_t seed) {
        return FeatureExtractor(image_channels, {8, 16, 32}, seed);
    }

    /// Conv layers; taps = layers + 1 (tap 0 is the raw image).
    int layers() const noexcept { return static_cast<int>(widths_.size()); }
    const std::vector<int>& widths() const noexcept { return widths_; }
    std::uint64_t seed() const noexcept { return seed_; }
    const TensorMap& weights() const noexcept { return weights_; }

    /// Appends the tap nodes for `image` (tap 0 is `image` itself).
    std::vector<NodeId> add_taps(OpGraph& g, NodeId image) const;
    void bind(Bindings& bindings) const;

    /// Tap activations for a single image or a batch.
    std::vector<Tensor> features(const Tensor& image) const;

private:
    int channels_ = 1;
    std::vector<int> widths_;
    std::uint64_t seed_ = 0;
    TensorMap weights_;  // "extractor/conv<i>/w|b"
};

/// Sum over taps of the mean squared feature difference.
double perceptual_loss(const FeatureExtractor& p, const Tensor& x, const Tensor& x_hat);

/// Same distance from caller-computed feature maps (e.g. a pretrained network).
double perceptual_loss_from_features(std::span<const Tensor> fx, std::span<const Tensor> fy);

/// -log(max(q[label], 1e-7)).
double cross_entropy(std::span<const float> q, int label);

/// -sum q log(max(q, 1e-7)).
double entropy(std::span<const float> q);

struct LossReport {
    double l_r = 0.0;
    double l_q_c = 0.0;
    std::optional<double> l_q_d;  // two-disc only
    double l_c_entropy = 0.0;     // batch-mean entropy of q_c(z_c)
    std::optional<double> kl;     // only when beta_kl > 0
};

/// Named outputs of the full training graph.
namespace out {
inline constexpr const char* kXHat = "x_hat";
inline constexpr const char* kQc = "q_c";
inline constexpr const char* kQd = "q_d";
inline constexpr const char* kLr = "l_r";
inline constexpr const char* kLqc = "l_q_c";
inline constexpr const char* kLqd = "l_q_d";
inline constexpr const char* kEntropy = "entropy_qc";
inline constexpr const char* kNegEntropy = "neg_entropy_qc";
inline constexpr const char* kKl = "kl";
inline constexpr const char* kDiscLoss = "loss_disc";
inline constexpr const char* kReconLoss = "loss_recon";
}  // namespace out

/// Inputs: "x" (N x H x W x C), "eps_c" (N x a x b x k), "eps_d" (N x 1 x 1 x j),
/// "onehot" (N x m), plus extractor weights and parameters.
OpGraph build_training_graph(const SraeHyper& hyper, Variant variant, const FeatureExtractor& extractor,
                             double beta_kl);

struct NoiseDraw {
    Tensor eps_c;
    Tensor eps_d;
};

/// Zero noise for a batch of n: the mean encoding.
NoiseDraw zero_noise(const SraeHyper& hyper, int n);
NoiseDraw sample_noise(const SraeHyper& hyper, int n, const RngState& rng);

Tensor one_hot(const std::vector<int>& labels, int m);

/// Binds everything the training graph needs.
Bindings training_bindings(const ParamStore& params, const FeatureExtractor& extractor, const Batch& batch,
                           const NoiseDraw& noise, int m);

/// All loss terms on a batch (batch means of per-example terms).
LossReport srae_losses(const ParamStore& params, const SraeHyper& hyper, const FeatureExtractor& extractor,
                       const Batch& batch, const NoiseDraw& noise, Variant variant, double beta_kl = 0.0);

}  // namespace srae
