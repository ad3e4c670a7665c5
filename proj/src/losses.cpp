#include "umrl/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "umrl/checkpoint.hpp"
#include "umrl/detail/random.hpp"

namespace umrl {

using nn::Tensor;
using nn::Var;

namespace {

void require_pyramid_shapes(const VarPyramid& a, const VarPyramid& b, const char* what)
{
    for (int i = 0; i < 3; ++i) {
        if (!a[i].value().same_shape(b[i].value())) {
            throw std::invalid_argument(std::string(what) + ": scale " + std::to_string(i) + " shape " +
                                        a[i].value().shape_string() + " vs " + b[i].value().shape_string());
        }
    }
}

Var add_all(const std::array<Var, 3>& terms) { return nn::add(nn::add(terms[0], terms[1]), terms[2]); }

VarPyramid output_vars(const std::array<Image, 3>& maps)
{
    VarPyramid out;
    for (int i = 0; i < 3; ++i) out[i] = nn::constant(to_tensor(maps[i]));
    return out;
}

const Tensor& find_tensor(const std::vector<NamedTensor>& tensors, const std::string& name)
{
    for (const auto& t : tensors) {
        if (t.name == name) return t.value;
    }
    throw std::invalid_argument("feature extractor archive lacks tensor '" + name + "'");
}

} // namespace

void LossWeights::validate() const
{
    if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0)) throw std::invalid_argument("loss weights must be nonnegative");
}

ConvFeatureExtractor ConvFeatureExtractor::random(std::uint64_t seed, int channels)
{
    detail::Rng rng(detail::mix_seed(seed, 0xfea7));
    auto conv = [&](int in, int out) {
        const double bound = std::sqrt(6.0 / (in * 9));
        Tensor w({out, in, 3, 3});
        // float32-representable so that an archive copy is exact
        for (double& v : w.values()) v = static_cast<float>(rng.uniform(-bound, bound));
        Tensor b({out});
        for (double& v : b.values()) v = static_cast<float>(rng.uniform(-0.1, 0.1));
        return Conv{nn::constant(std::move(w)), nn::constant(std::move(b))};
    };
    ConvFeatureExtractor f;
    f.first_ = conv(3, channels);
    f.second_ = conv(channels, channels);
    return f;
}

ConvFeatureExtractor ConvFeatureExtractor::from_tensors(const std::vector<NamedTensor>& tensors)
{
    ConvFeatureExtractor f;
    f.first_ = Conv{nn::constant(find_tensor(tensors, "conv1.weight")), nn::constant(find_tensor(tensors, "conv1.bias"))};
    f.second_ = Conv{nn::constant(find_tensor(tensors, "conv2.weight")), nn::constant(find_tensor(tensors, "conv2.bias"))};
    const auto& w1 = f.first_.weight.value();
    const auto& w2 = f.second_.weight.value();
    if (w1.rank() != 4 || w2.rank() != 4 || w1.dim(1) != 3 || w2.dim(1) != w1.dim(0) ||
        f.first_.bias.value().size() != static_cast<std::size_t>(w1.dim(0)) ||
        f.second_.bias.value().size() != static_cast<std::size_t>(w2.dim(0))) {
        throw std::invalid_argument("feature extractor tensors have inconsistent shapes");
    }
    return f;
}

ConvFeatureExtractor ConvFeatureExtractor::load(const std::filesystem::path& archive)
{
    return from_tensors(load_tensor_archive(archive));
}

Var ConvFeatureExtractor::extract(const Var& image) const
{
    return conv_forward(nn::relu(conv_forward(image, first_)), second_);
}

std::vector<NamedTensor> ConvFeatureExtractor::tensors() const
{
    return {{"conv1.weight", first_.weight.value()},
            {"conv1.bias", first_.bias.value()},
            {"conv2.weight", second_.weight.value()},
            {"conv2.bias", second_.bias.value()}};
}

Var confidence_l1_term(const VarPyramid& derained, const VarPyramid& confidence, const VarPyramid& clean)
{
    require_pyramid_shapes(derained, clean, "confidence-guided L1");
    require_pyramid_shapes(derained, confidence, "confidence-guided L1");
    std::array<Var, 3> terms;
    for (int i = 0; i < 3; ++i) terms[i] = nn::sum_abs(nn::mul(confidence[i], nn::sub(derained[i], clean[i])));
    return add_all(terms);
}

Var log_confidence_term(const VarPyramid& confidence)
{
    std::array<Var, 3> terms;
    for (int i = 0; i < 3; ++i) terms[i] = nn::sum_log(confidence[i]);
    return add_all(terms);
}

Var perceptual_term(const Var& derained_x1, const Var& clean_x1, const FeatureExtractor& f)
{
    if (!derained_x1.value().same_shape(clean_x1.value())) {
        throw std::invalid_argument("perceptual loss: shape mismatch " + derained_x1.value().shape_string() + " vs " +
                                    clean_x1.value().shape_string());
    }
    const Var diff = nn::sub(f.extract(derained_x1), f.extract(clean_x1));
    return nn::scale(nn::sum_square(diff), 1.0 / static_cast<double>(diff.value().size()));
}

LossTerms training_objective(const UmrlGraph& g, const VarPyramid& clean, const FeatureExtractor& f,
                             const LossWeights& weights, Variant variant)
{
    weights.validate();
    LossTerms t;
    t.perceptual = perceptual_term(g.derained[0], clean[0], f);
    switch (variant) {
    case Variant::UMRL:
        t.l1 = confidence_l1_term(g.derained, g.confidence, clean);
        t.log_conf = log_confidence_term(g.confidence);
        t.total = nn::add(nn::sub(t.l1, nn::scale(t.log_conf, weights.lambda1)), nn::scale(t.perceptual, weights.lambda2));
        return t;
    case Variant::BN_RN: {
        std::array<Var, 3> terms;
        for (int i = 0; i < 3; ++i) terms[i] = nn::sum_abs(nn::sub(g.derained[i], clean[i]));
        t.l1 = add_all(terms);
        break;
    }
    case Variant::BN:
        t.l1 = nn::sum_abs(nn::sub(g.derained[0], clean[0]));
        break;
    }
    t.log_conf = nn::constant(Tensor({1}, 0.0));
    t.total = nn::add(t.l1, nn::scale(t.perceptual, weights.lambda2));
    return t;
}

VarPyramid constant_pyramid(const Pyramid& p) { return output_vars(p); }

double loss_confidence_l1(const UmrlOutput& out, const Pyramid& clean)
{
    nn::NoGradGuard guard;
    return confidence_l1_term(output_vars(out.derained), output_vars(out.confidence), output_vars(clean)).item();
}

double loss_log_confidence(const UmrlOutput& out)
{
    nn::NoGradGuard guard;
    return log_confidence_term(output_vars(out.confidence)).item();
}

double loss_u(const UmrlOutput& out, const Pyramid& clean, double lambda1)
{
    if (!(lambda1 >= 0.0)) throw std::invalid_argument("lambda1 must be nonnegative");
    return loss_confidence_l1(out, clean) - lambda1 * loss_log_confidence(out);
}

double loss_perceptual(const Image& derained_x1, const Image& clean_x1, const FeatureExtractor& f)
{
    nn::NoGradGuard guard;
    return perceptual_term(nn::constant(to_tensor(derained_x1)), nn::constant(to_tensor(clean_x1)), f).item();
}

double loss_total(const UmrlOutput& out, const Pyramid& clean, const FeatureExtractor& f, const LossWeights& weights)
{
    weights.validate();
    return loss_u(out, clean, weights.lambda1) + weights.lambda2 * loss_perceptual(out.derained[0], clean[0], f);
}

double optimal_confidence(double abs_diff, double lambda1)
{
    if (abs_diff <= 0.0) return 1.0;
    return std::min(1.0, lambda1 / abs_diff);
}

} // namespace umrl
