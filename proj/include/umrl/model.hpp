#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "umrl/autograd.hpp"
#include "umrl/imaging.hpp"

namespace umrl {

// Layer strings the network is audited against at construction.
inline constexpr std::string_view kBaseNetworkLayout =
    "ConvBlock(3,32)-AvgPool-ConvBlock(32,32)-AvgPool-Convblock(32,32)-AvgPool-ConvBlock(32,32)-AvgPool-"
    "ConvBlock(32,32)-UpSample-ConvBlock(64,32)-UpSample-ConvBlock(67,32)-UpSample-ConvBlock(67,16)-"
    "ConvBlock(16,16)-Conv2d(3x3)";
inline constexpr std::string_view kResidualNetworkLayout = "Convblock(64,32)-Convblock(32,32)-Convblock(32,3)";
inline constexpr std::string_view kConfidenceNetworkLayout = "Convblock(67,16)-Convblock(16,16)-Convblock(16,3)";
inline constexpr std::string_view kRefinementNetworkLayout = "Conv2d(7x7)-Conv2d(3x3)-tanh()";

/// Floor applied to every confidence value.
inline constexpr double kConfidenceFloor = 1e-3;
/// Hidden width of the refinement network's 7x7 layer.
inline constexpr int kRefinementWidth = 16;
/// Output width of the learned upsampling convolutions.
inline constexpr int kUpsampleWidth = 32;

/// Ablation variants: base network only, base + residual heads with unit
/// confidence, and the full residual + confidence model.
enum class Variant { BN, BN_RN, UMRL };

std::string to_string(Variant v);
/// Accepts "BN", "BN+RN", "UMRL". Throws std::invalid_argument otherwise.
Variant parse_variant(std::string_view name);

/// One token of a layer string, e.g. ConvBlock(64,32) or Conv2d(7x7).
struct LayoutToken {
    enum class Kind { ConvBlock, Conv2d, AvgPool, UpSample, Tanh } kind;
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 0;
};
std::vector<LayoutToken> parse_layout(std::string_view layout);

struct ConvBlockSpec {
    int in_channels = 0;
    int out_channels = 0;
    // false for the last block of RN and CN heads, which is then a plain
    // convolution without normalization
    bool relu = true;
};

struct Conv {
    nn::Var weight; // {out, in, k, k}
    nn::Var bias;   // {out}

    int in_channels() const { return weight.value().dim(1); }
    int out_channels() const { return weight.value().dim(0); }
    int kernel() const { return weight.value().dim(2); }
};

/// Conv(3x3, pad 1) -> BatchNorm -> ReLU.
struct ConvBlock {
    ConvBlockSpec spec;
    Conv conv;
    nn::Var gamma; // undefined for output blocks
    nn::Var beta;
    nn::BatchNormState bn;
};

/// Channel widths of every layer. The default reproduces the audited layout;
/// tests perturb it to check that construction rejects deviations.
struct ArchitectureTable {
    std::array<ConvBlockSpec, 5> encoder;
    std::array<int, 4> upsample_in;
    std::array<ConvBlockSpec, 4> decoder;
    int head_in = 16;
    std::array<ConvBlockSpec, 3> rn;
    std::array<ConvBlockSpec, 3> cn_coarse;
    std::array<ConvBlockSpec, 3> cn_full;
    int rfn_hidden = kRefinementWidth;
    int rfn_kernel_wide = 7;
    int rfn_kernel_narrow = 3;

    static ArchitectureTable standard();
};

/// Throws std::logic_error if the table disagrees with the layer strings.
void audit_architecture(const ArchitectureTable& table);

struct NamedTensor {
    std::string name;
    nn::Tensor value;
};

/// All parameters and normalization statistics of the network. Move-only:
/// the handles share storage, use clone() for an independent copy.
class UmrlWeights {
public:
    static UmrlWeights create(std::uint64_t seed, const ArchitectureTable& table = ArchitectureTable::standard());

    UmrlWeights(UmrlWeights&&) = default;
    UmrlWeights& operator=(UmrlWeights&&) = default;
    UmrlWeights(const UmrlWeights&) = delete;
    UmrlWeights& operator=(const UmrlWeights&) = delete;

    UmrlWeights clone() const;

    /// Trainable tensors in a fixed order.
    std::vector<std::pair<std::string, nn::Var>> parameters() const;
    /// Parameters followed by running statistics, copied out.
    std::vector<NamedTensor> state() const;
    /// Overwrites from a state() listing. Names and shapes must match exactly.
    void load_state(const std::vector<NamedTensor>& tensors);

    std::size_t parameter_count() const;

    std::array<ConvBlock, 5> encoder;
    std::array<Conv, 4> upsample;
    std::array<ConvBlock, 4> decoder;
    Conv head;
    std::array<ConvBlock, 3> rn_x4;
    std::array<ConvBlock, 3> rn_x2;
    std::array<ConvBlock, 3> cn_x4;
    std::array<ConvBlock, 3> cn_x2;
    std::array<ConvBlock, 3> cn_x1;
    Conv rfn_wide;
    Conv rfn_narrow;

private:
    UmrlWeights() = default;

    std::vector<std::pair<std::string, const ConvBlock*>> named_blocks() const;
    std::vector<std::pair<std::string, const Conv*>> named_convs() const;
};

enum class Mode { Train, Eval };

nn::Var conv_forward(const nn::Var& x, const Conv& conv);
/// In Train mode the block's running statistics are updated.
nn::Var conv_block_forward(const nn::Var& x, const ConvBlock& block, Mode mode);

struct BaseFeatures {
    nn::Var e1, e2, e3, e4;  // 32 channels at H, H/2, H/4, H/8
    nn::Var bottleneck;      // 32 channels at H/16
    nn::Var d4;              // 64 channels at H/4
    nn::Var d2;              // 64 channels at H/2
    nn::Var final_features;  // 16 channels at H
    nn::Var residual_x1;     // 3 channels at H
};

/// Returns the 3-channel map fed back from the stage whose 64-channel
/// concatenation is given (scale 4 or 2). It is upsampled by the caller.
using FeedbackHook = std::function<nn::Var(int scale, const nn::Var& concat)>;

/// Encoder/decoder pass. Without a hook the feedback channels are zero.
BaseFeatures base_forward(const nn::Var& y, const UmrlWeights& w, Mode mode, const FeedbackHook& hook = {});

nn::Var rn_forward(const nn::Var& features, const std::array<ConvBlock, 3>& rn, Mode mode);
nn::Var cn_forward(const nn::Var& features, const nn::Var& residual, const std::array<ConvBlock, 3>& cn, Mode mode);
/// Shared across scales: tanh output remapped to [0, 1].
nn::Var rfn_forward(const nn::Var& diff, const UmrlWeights& w);

/// Scale index 0 = x1, 1 = x2 (half size), 2 = x4 (quarter size).
struct UmrlGraph {
    std::array<nn::Var, 3> rainy;
    std::array<nn::Var, 3> residual;
    std::array<nn::Var, 3> confidence;
    std::array<nn::Var, 3> derained;
};

UmrlGraph umrl_forward_graph(const Image& y, const UmrlWeights& w, Variant variant, Mode mode);

struct UmrlOutput {
    std::array<Image, 3> residual;
    std::array<Image, 3> confidence;
    std::array<Image, 3> derained;
};

UmrlOutput to_output(const UmrlGraph& g);

/// Eval-mode inference; a pure function of (y, w).
UmrlOutput umrl_forward(const Image& y, const UmrlWeights& w, Variant variant = Variant::UMRL);

/// Eval-mode x1 de-rained output.
Image derain(const Image& y, const UmrlWeights& w, Variant variant = Variant::UMRL);

/// x1, x2, x4 via repeated area halving.
std::array<Image, 3> image_pyramid(const Image& img);

} // namespace umrl
