#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>

#include "umrl/autograd.hpp"
#include "umrl/model.hpp"

namespace umrl {

struct LossWeights {
    double lambda1 = 0.1; // log-confidence regularizer
    double lambda2 = 1.0; // perceptual term

    void validate() const;
};

/// Fixed (never trained) differentiable map from a 3-channel image to a
/// feature volume.
class FeatureExtractor {
public:
    virtual ~FeatureExtractor() = default;
    virtual nn::Var extract(const nn::Var& image) const = 0;
};

/// Conv(3->N, 3x3) -> ReLU -> Conv(N->N, 3x3) with frozen weights.
class ConvFeatureExtractor final : public FeatureExtractor {
public:
    /// Seed-deterministic random weights, N = 16.
    static ConvFeatureExtractor random(std::uint64_t seed, int channels = 16);
    /// Tensors conv1.weight, conv1.bias, conv2.weight, conv2.bias from a
    /// checkpoint-format archive.
    static ConvFeatureExtractor load(const std::filesystem::path& archive);
    static ConvFeatureExtractor from_tensors(const std::vector<NamedTensor>& tensors);

    nn::Var extract(const nn::Var& image) const override;
    std::vector<NamedTensor> tensors() const;

private:
    Conv first_;
    Conv second_;
};

/// F(x) = x. Useful for checking the perceptual term by hand.
class IdentityFeatureExtractor final : public FeatureExtractor {
public:
    nn::Var extract(const nn::Var& image) const override { return image; }
};

using Pyramid = std::array<Image, 3>;
using VarPyramid = std::array<nn::Var, 3>;

// Differentiable terms. Scale index 0 = x1, 1 = x2, 2 = x4.

/// sum_i || c_i * (xhat_i - x_i) ||_1, summed over pixels and channels.
nn::Var confidence_l1_term(const VarPyramid& derained, const VarPyramid& confidence, const VarPyramid& clean);
/// sum_i sum_jk log c_i,jk (natural log). Throws std::domain_error if any c <= 0.
nn::Var log_confidence_term(const VarPyramid& confidence);
/// (1 / (N H W)) * || F(xhat_1) - F(x_1) ||_2^2.
nn::Var perceptual_term(const nn::Var& derained_x1, const nn::Var& clean_x1, const FeatureExtractor& f);

struct LossTerms {
    nn::Var l1;
    nn::Var log_conf;
    nn::Var perceptual;
    nn::Var total;
};

/// Training objective per variant:
///   UMRL:  L_l - lambda1 * L_c + lambda2 * L_p
///   BN+RN: multi-scale L1 (unit confidence) + lambda2 * L_p
///   BN:    x1 L1 + lambda2 * L_p
LossTerms training_objective(const UmrlGraph& g, const VarPyramid& clean, const FeatureExtractor& f,
                             const LossWeights& weights, Variant variant);

// Value-level wrappers over network outputs.
double loss_confidence_l1(const UmrlOutput& out, const Pyramid& clean);
double loss_log_confidence(const UmrlOutput& out);
double loss_u(const UmrlOutput& out, const Pyramid& clean, double lambda1);
double loss_perceptual(const Image& derained_x1, const Image& clean_x1, const FeatureExtractor& f);
double loss_total(const UmrlOutput& out, const Pyramid& clean, const FeatureExtractor& f, const LossWeights& weights);

/// Per-element minimizer of c*|d| - lambda1*log(c) over c in (0, 1].
double optimal_confidence(double abs_diff, double lambda1);

VarPyramid constant_pyramid(const Pyramid& p);

} // namespace umrl
