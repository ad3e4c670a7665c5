#include "umrl/model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <stdexcept>

#include "umrl/detail/random.hpp"

namespace umrl {

using nn::Tensor;
using nn::Var;

namespace {

std::string lower(std::string_view s)
{
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
    return out;
}

constexpr double kRefinementGain = 2.0;

Conv make_conv(int in, int out, int k, detail::Rng& rng)
{
    // Kaiming-uniform for ReLU networks: U(-b, b), b = sqrt(6 / fan_in).
    const double bound = std::sqrt(6.0 / (in * k * k));
    Tensor w({out, in, k, k});
    for (double& v : w.values()) v = rng.uniform(-bound, bound);
    return Conv{nn::parameter(std::move(w)), nn::parameter(Tensor({out}))};
}

// Every residual starts at zero, every confidence at 1/2, and the refinement network at
// (tanh(g (x - 1/2)) + 1) / 2 per channel, close to the identity on [0, 1].
// Its remaining hidden channels keep their random 7x7 weights.
void start_near_identity(UmrlWeights& w)
{
    w.head.weight.mutable_value().fill(0.0);
    for (auto* head : {&w.rn_x4, &w.rn_x2, &w.cn_x4, &w.cn_x2, &w.cn_x1}) head->back().conv.weight.mutable_value().fill(0.0);

    Tensor& wide = w.rfn_wide.weight.mutable_value();
    Tensor& narrow = w.rfn_narrow.weight.mutable_value();
    const int kw = wide.dim(2) / 2;
    const int kn = narrow.dim(2) / 2;
    narrow.fill(0.0);
    const std::size_t wide_filter = static_cast<std::size_t>(wide.dim(1)) * wide.dim(2) * wide.dim(3);
    auto tap = [](Tensor& t, int out, int in, int y, int x) -> double& {
        return t[((static_cast<std::size_t>(out) * t.dim(1) + in) * t.dim(2) + y) * t.dim(3) + x];
    };
    for (int c = 0; c < 3; ++c) {
        std::fill_n(wide.data() + c * wide_filter, wide_filter, 0.0);
        tap(wide, c, c, kw, kw) = 1.0;
        tap(narrow, c, c, kn, kn) = kRefinementGain;
    }
    w.rfn_narrow.bias.mutable_value().fill(-0.5 * kRefinementGain);
}

ConvBlock make_block(const ConvBlockSpec& spec, detail::Rng& rng)
{
    ConvBlock b;
    b.spec = spec;
    b.conv = make_conv(spec.in_channels, spec.out_channels, 3, rng);
    if (!spec.relu) return b;
    b.gamma = nn::parameter(Tensor({spec.out_channels}, 1.0));
    b.beta = nn::parameter(Tensor({spec.out_channels}, 0.0));
    b.bn.running_mean = Tensor({spec.out_channels}, 0.0);
    b.bn.running_var = Tensor({spec.out_channels}, 1.0);
    return b;
}

template <std::size_t N>
std::array<ConvBlock, N> make_blocks(const std::array<ConvBlockSpec, N>& specs, detail::Rng& rng)
{
    std::array<ConvBlock, N> out;
    for (std::size_t i = 0; i < N; ++i) out[i] = make_block(specs[i], rng);
    return out;
}

Var clone_var(const Var& v) { return nn::parameter(v.value()); }

Conv clone_conv(const Conv& c) { return Conv{clone_var(c.weight), clone_var(c.bias)}; }

ConvBlock clone_block(const ConvBlock& b)
{
    if (!b.spec.relu) return ConvBlock{b.spec, clone_conv(b.conv), {}, {}, b.bn};
    return ConvBlock{b.spec, clone_conv(b.conv), clone_var(b.gamma), clone_var(b.beta), b.bn};
}

template <std::size_t N>
std::array<ConvBlock, N> clone_blocks(const std::array<ConvBlock, N>& in)
{
    std::array<ConvBlock, N> out;
    for (std::size_t i = 0; i < N; ++i) out[i] = clone_block(in[i]);
    return out;
}

[[noreturn]] void audit_fail(const std::string& what) { throw std::logic_error("architecture audit: " + what); }

void expect_blocks(const std::vector<LayoutToken>& tokens, std::span<const ConvBlockSpec> specs, const char* where)
{
    std::vector<LayoutToken> blocks;
    for (const auto& t : tokens) {
        if (t.kind == LayoutToken::Kind::ConvBlock) blocks.push_back(t);
    }
    if (blocks.size() != specs.size()) {
        audit_fail(std::string(where) + " has " + std::to_string(specs.size()) + " ConvBlocks, layout lists " +
                   std::to_string(blocks.size()));
    }
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        if (blocks[i].in_channels != specs[i].in_channels || blocks[i].out_channels != specs[i].out_channels) {
            audit_fail(std::string(where) + " block " + std::to_string(i) + " is (" +
                       std::to_string(specs[i].in_channels) + "," + std::to_string(specs[i].out_channels) +
                       "), layout requires (" + std::to_string(blocks[i].in_channels) + "," +
                       std::to_string(blocks[i].out_channels) + ")");
        }
    }
}

void expect_head_activation(std::span<const ConvBlockSpec> specs, const char* where)
{
    for (std::size_t i = 0; i < specs.size(); ++i) {
        const bool want = i + 1 < specs.size();
        if (specs[i].relu != want) audit_fail(std::string(where) + " ReLU placement differs at block " + std::to_string(i));
    }
}

void expect(bool ok, const std::string& what)
{
    if (!ok) audit_fail(what);
}

Var zeros(int c, int h, int w) { return nn::constant(Tensor({c, h, w}, 0.0)); }
Var ones(int c, int h, int w) { return nn::constant(Tensor({c, h, w}, 1.0)); }

Var upsample_forward(const Var& x, const Conv& conv) { return conv_forward(nn::upsample_nearest2(x), conv); }

} // namespace

std::string to_string(Variant v)
{
    switch (v) {
    case Variant::BN: return "BN";
    case Variant::BN_RN: return "BN+RN";
    case Variant::UMRL: return "UMRL";
    }
    return "?";
}

Variant parse_variant(std::string_view name)
{
    if (name == "BN") return Variant::BN;
    if (name == "BN+RN") return Variant::BN_RN;
    if (name == "UMRL") return Variant::UMRL;
    throw std::invalid_argument("unknown variant '" + std::string(name) + "' (expected BN, BN+RN or UMRL)");
}

std::vector<LayoutToken> parse_layout(std::string_view layout)
{
    std::vector<LayoutToken> out;
    std::size_t pos = 0;
    while (pos < layout.size()) {
        // Tokens are separated by '-' outside parentheses.
        std::size_t end = pos;
        int depth = 0;
        while (end < layout.size() && !(layout[end] == '-' && depth == 0)) {
            if (layout[end] == '(') ++depth;
            if (layout[end] == ')') --depth;
            ++end;
        }
        const std::string token = lower(layout.substr(pos, end - pos));
        pos = end + 1;

        const auto open = token.find('(');
        const std::string head = token.substr(0, open);
        const std::string args = open == std::string::npos ? "" : token.substr(open + 1, token.size() - open - 2);
        LayoutToken t{};
        if (head == "convblock") {
            t.kind = LayoutToken::Kind::ConvBlock;
            const auto comma = args.find(',');
            if (comma == std::string::npos) throw std::invalid_argument("malformed ConvBlock token: " + token);
            t.in_channels = std::stoi(args.substr(0, comma));
            t.out_channels = std::stoi(args.substr(comma + 1));
            t.kernel = 3;
        } else if (head == "conv2d") {
            t.kind = LayoutToken::Kind::Conv2d;
            const auto x = args.find('x');
            if (x == std::string::npos) throw std::invalid_argument("malformed Conv2d token: " + token);
            t.kernel = std::stoi(args.substr(0, x));
        } else if (head == "avgpool") {
            t.kind = LayoutToken::Kind::AvgPool;
        } else if (head == "upsample") {
            t.kind = LayoutToken::Kind::UpSample;
        } else if (head == "tanh") {
            t.kind = LayoutToken::Kind::Tanh;
        } else {
            throw std::invalid_argument("unknown layout token: " + token);
        }
        out.push_back(t);
    }
    return out;
}

ArchitectureTable ArchitectureTable::standard()
{
    ArchitectureTable t;
    t.encoder = {{{3, 32}, {32, 32}, {32, 32}, {32, 32}, {32, 32}}};
    t.upsample_in = {32, 64, 32, 32};
    t.decoder = {{{64, 32}, {67, 32}, {67, 16}, {16, 16}}};
    t.head_in = 16;
    t.rn = {{{64, 32}, {32, 32}, {32, 3, false}}};
    t.cn_coarse = {{{67, 16}, {16, 16}, {16, 3, false}}};
    t.cn_full = {{{19, 16}, {16, 16}, {16, 3, false}}};
    return t;
}

void audit_architecture(const ArchitectureTable& t)
{
    const auto base = parse_layout(kBaseNetworkLayout);
    std::vector<ConvBlockSpec> base_blocks(t.encoder.begin(), t.encoder.end());
    base_blocks.insert(base_blocks.end(), t.decoder.begin(), t.decoder.end());
    expect_blocks(base, base_blocks, "base network");
    for (const auto& b : base_blocks) expect(b.relu, "base network blocks all end in ReLU");

    const auto pools = std::count_if(base.begin(), base.end(),
                                     [](const LayoutToken& k) { return k.kind == LayoutToken::Kind::AvgPool; });
    expect(pools == static_cast<long>(t.encoder.size()) - 1, "one AvgPool between consecutive encoder blocks");
    expect(base.back().kind == LayoutToken::Kind::Conv2d && base.back().kernel == 3,
           "base network ends in a 3x3 convolution");
    expect(t.head_in == t.decoder.back().out_channels, "final convolution consumes the last decoder block");

    // Decoder inputs: upsampled features + encoder skip (+ 3 feedback channels).
    const int skip = t.encoder[0].out_channels;
    expect(t.upsample_in[0] == t.encoder[4].out_channels, "first upsampling consumes the bottleneck");
    expect(t.upsample_in[1] == kUpsampleWidth + t.encoder[3].out_channels, "second upsampling consumes the H/8 concat");
    expect(t.upsample_in[2] == t.decoder[0].out_channels, "third upsampling consumes decoder block 0");
    expect(t.upsample_in[3] == t.decoder[1].out_channels, "fourth upsampling consumes decoder block 1");
    expect(t.decoder[0].in_channels == kUpsampleWidth + t.encoder[2].out_channels, "decoder block 0 input width");
    expect(t.decoder[1].in_channels == kUpsampleWidth + t.encoder[1].out_channels + 3, "decoder block 1 input width");
    expect(t.decoder[2].in_channels == kUpsampleWidth + skip + 3, "decoder block 2 input width");

    expect_blocks(parse_layout(kResidualNetworkLayout), t.rn, "residual network");
    expect_head_activation(t.rn, "residual network");
    expect(t.rn[0].in_channels == t.decoder[0].in_channels, "residual network reads the 64-channel concatenation");

    expect_blocks(parse_layout(kConfidenceNetworkLayout), t.cn_coarse, "confidence network");
    expect_head_activation(t.cn_coarse, "confidence network");
    expect(t.cn_coarse[0].in_channels == t.rn[0].in_channels + 3, "confidence network reads features + residual");

    // Full-resolution head: same layout, first width = final features + residual.
    auto full = parse_layout(kConfidenceNetworkLayout);
    full.front().in_channels = t.decoder.back().out_channels + 3;
    expect_blocks(full, t.cn_full, "full-resolution confidence network");
    expect_head_activation(t.cn_full, "full-resolution confidence network");

    const auto rfn = parse_layout(kRefinementNetworkLayout);
    expect(rfn.size() == 3 && rfn[0].kind == LayoutToken::Kind::Conv2d && rfn[1].kind == LayoutToken::Kind::Conv2d &&
               rfn[2].kind == LayoutToken::Kind::Tanh,
           "refinement network is conv-conv-tanh");
    expect(t.rfn_kernel_wide == rfn[0].kernel && t.rfn_kernel_narrow == rfn[1].kernel, "refinement kernel sizes");
    expect(t.rfn_hidden >= 1, "refinement hidden width");
}

UmrlWeights UmrlWeights::create(std::uint64_t seed, const ArchitectureTable& t)
{
    audit_architecture(t);
    detail::Rng rng(detail::mix_seed(seed, 0x3e1));
    UmrlWeights w;
    w.encoder = make_blocks(t.encoder, rng);
    for (std::size_t i = 0; i < w.upsample.size(); ++i) w.upsample[i] = make_conv(t.upsample_in[i], kUpsampleWidth, 3, rng);
    w.decoder = make_blocks(t.decoder, rng);
    w.head = make_conv(t.head_in, 3, 3, rng);
    w.rn_x4 = make_blocks(t.rn, rng);
    w.rn_x2 = make_blocks(t.rn, rng);
    w.cn_x4 = make_blocks(t.cn_coarse, rng);
    w.cn_x2 = make_blocks(t.cn_coarse, rng);
    w.cn_x1 = make_blocks(t.cn_full, rng);
    w.rfn_wide = make_conv(3, t.rfn_hidden, t.rfn_kernel_wide, rng);
    w.rfn_narrow = make_conv(t.rfn_hidden, 3, t.rfn_kernel_narrow, rng);
    start_near_identity(w);
    return w;
}

UmrlWeights UmrlWeights::clone() const
{
    UmrlWeights w;
    w.encoder = clone_blocks(encoder);
    for (std::size_t i = 0; i < upsample.size(); ++i) w.upsample[i] = clone_conv(upsample[i]);
    w.decoder = clone_blocks(decoder);
    w.head = clone_conv(head);
    w.rn_x4 = clone_blocks(rn_x4);
    w.rn_x2 = clone_blocks(rn_x2);
    w.cn_x4 = clone_blocks(cn_x4);
    w.cn_x2 = clone_blocks(cn_x2);
    w.cn_x1 = clone_blocks(cn_x1);
    w.rfn_wide = clone_conv(rfn_wide);
    w.rfn_narrow = clone_conv(rfn_narrow);
    return w;
}

std::vector<std::pair<std::string, const ConvBlock*>> UmrlWeights::named_blocks() const
{
    std::vector<std::pair<std::string, const ConvBlock*>> out;
    auto add = [&](const std::string& prefix, const auto& blocks) {
        for (std::size_t i = 0; i < blocks.size(); ++i) out.emplace_back(prefix + "." + std::to_string(i), &blocks[i]);
    };
    add("encoder", encoder);
    add("decoder", decoder);
    add("rn_x4", rn_x4);
    add("rn_x2", rn_x2);
    add("cn_x4", cn_x4);
    add("cn_x2", cn_x2);
    add("cn_x1", cn_x1);
    return out;
}

std::vector<std::pair<std::string, const Conv*>> UmrlWeights::named_convs() const
{
    std::vector<std::pair<std::string, const Conv*>> out;
    for (std::size_t i = 0; i < upsample.size(); ++i) out.emplace_back("upsample." + std::to_string(i), &upsample[i]);
    out.emplace_back("head", &head);
    out.emplace_back("rfn.wide", &rfn_wide);
    out.emplace_back("rfn.narrow", &rfn_narrow);
    return out;
}

std::vector<std::pair<std::string, Var>> UmrlWeights::parameters() const
{
    std::vector<std::pair<std::string, Var>> out;
    for (const auto& [name, b] : named_blocks()) {
        out.emplace_back(name + ".conv.weight", b->conv.weight);
        out.emplace_back(name + ".conv.bias", b->conv.bias);
        if (!b->spec.relu) continue;
        out.emplace_back(name + ".bn.weight", b->gamma);
        out.emplace_back(name + ".bn.bias", b->beta);
    }
    for (const auto& [name, c] : named_convs()) {
        out.emplace_back(name + ".weight", c->weight);
        out.emplace_back(name + ".bias", c->bias);
    }
    return out;
}

std::vector<NamedTensor> UmrlWeights::state() const
{
    std::vector<NamedTensor> out;
    for (const auto& [name, v] : parameters()) out.push_back({name, v.value()});
    for (const auto& [name, b] : named_blocks()) {
        if (!b->spec.relu) continue;
        out.push_back({name + ".bn.running_mean", b->bn.running_mean});
        out.push_back({name + ".bn.running_var", b->bn.running_var});
    }
    return out;
}

void UmrlWeights::load_state(const std::vector<NamedTensor>& tensors)
{
    auto params = parameters();
    auto blocks = named_blocks();
    std::erase_if(blocks, [](const auto& b) { return !b.second->spec.relu; });
    const std::size_t expected = params.size() + 2 * blocks.size();
    if (tensors.size() != expected) {
        throw std::invalid_argument("weight state has " + std::to_string(tensors.size()) + " tensors, network needs " +
                                    std::to_string(expected));
    }
    auto assign = [](const NamedTensor& src, const std::string& name, Tensor& dst) {
        if (src.name != name) throw std::invalid_argument("weight state expected '" + name + "', found '" + src.name + "'");
        if (!src.value.same_shape(dst)) {
            throw std::invalid_argument("weight '" + name + "' has shape " + src.value.shape_string() +
                                        ", network needs " + dst.shape_string());
        }
        dst = src.value;
    };
    std::size_t i = 0;
    for (auto& [name, v] : params) assign(tensors[i++], name, v.mutable_value());
    for (auto& [name, b] : blocks) {
        auto* block = const_cast<ConvBlock*>(b);
        assign(tensors[i++], name + ".bn.running_mean", block->bn.running_mean);
        assign(tensors[i++], name + ".bn.running_var", block->bn.running_var);
    }
}

std::size_t UmrlWeights::parameter_count() const
{
    std::size_t n = 0;
    for (const auto& [name, v] : parameters()) n += v.value().size();
    return n;
}

Var conv_forward(const Var& x, const Conv& conv) { return nn::conv2d(x, conv.weight, conv.bias, conv.kernel() / 2); }

Var conv_block_forward(const Var& x, const ConvBlock& block, Mode mode)
{
    if (x.value().channels() != block.spec.in_channels) {
        throw std::invalid_argument("ConvBlock(" + std::to_string(block.spec.in_channels) + "," +
                                    std::to_string(block.spec.out_channels) + ") got " +
                                    std::to_string(x.value().channels()) + " input channels");
    }
    Var y = conv_forward(x, block.conv);
    if (!block.spec.relu) return y;
    if (mode == Mode::Train) {
        // Running statistics are training state owned by the single writer.
        y = nn::batch_norm_train(y, block.gamma, block.beta, const_cast<nn::BatchNormState&>(block.bn));
    } else {
        y = nn::batch_norm_eval(y, block.gamma, block.beta, block.bn);
    }
    return block.spec.relu ? nn::relu(y) : y;
}

BaseFeatures base_forward(const Var& y, const UmrlWeights& w, Mode mode, const FeedbackHook& hook)
{
    const Tensor& in = y.value();
    if (in.rank() != 3 || in.height() % 16 != 0 || in.width() % 16 != 0) {
        throw std::invalid_argument("base network input " + in.shape_string() +
                                    " must be {C,H,W} with H and W divisible by 16");
    }
    auto feedback = [&](int scale, const Var& concat) {
        if (hook) return hook(scale, concat);
        return zeros(3, concat.value().height(), concat.value().width());
    };

    BaseFeatures f;
    f.e1 = conv_block_forward(y, w.encoder[0], mode);
    f.e2 = conv_block_forward(nn::avg_pool2(f.e1), w.encoder[1], mode);
    f.e3 = conv_block_forward(nn::avg_pool2(f.e2), w.encoder[2], mode);
    f.e4 = conv_block_forward(nn::avg_pool2(f.e3), w.encoder[3], mode);
    f.bottleneck = conv_block_forward(nn::avg_pool2(f.e4), w.encoder[4], mode);

    const Var d8 = nn::concat_channels({upsample_forward(f.bottleneck, w.upsample[0]), f.e4});
    f.d4 = nn::concat_channels({upsample_forward(d8, w.upsample[1]), f.e3});
    const Var fb4 = feedback(4, f.d4);
    const Var x4 = conv_block_forward(f.d4, w.decoder[0], mode);

    f.d2 = nn::concat_channels({upsample_forward(x4, w.upsample[2]), f.e2});
    const Var x2 = conv_block_forward(nn::concat_channels({f.d2, nn::resize_double(fb4)}), w.decoder[1], mode);
    const Var fb2 = feedback(2, f.d2);

    const Var d1 = nn::concat_channels({upsample_forward(x2, w.upsample[3]), f.e1, nn::resize_double(fb2)});
    f.final_features = conv_block_forward(conv_block_forward(d1, w.decoder[2], mode), w.decoder[3], mode);
    f.residual_x1 = conv_forward(f.final_features, w.head);
    return f;
}

Var rn_forward(const Var& features, const std::array<ConvBlock, 3>& rn, Mode mode)
{
    Var x = features;
    for (const auto& b : rn) x = conv_block_forward(x, b, mode);
    return x;
}

Var cn_forward(const Var& features, const Var& residual, const std::array<ConvBlock, 3>& cn, Mode mode)
{
    Var x = nn::concat_channels({features, residual});
    for (const auto& b : cn) x = conv_block_forward(x, b, mode);
    return nn::clamp(nn::sigmoid(x), kConfidenceFloor, 1.0);
}

Var rfn_forward(const Var& diff, const UmrlWeights& w)
{
    if (diff.value().channels() != 3) {
        throw std::invalid_argument("refinement network needs 3 channels, got " + diff.value().shape_string());
    }
    const Var t = nn::tanh(conv_forward(conv_forward(diff, w.rfn_wide), w.rfn_narrow));
    return nn::affine(t, 0.5, 0.5);
}

UmrlGraph umrl_forward_graph(const Image& y, const UmrlWeights& w, Variant variant, Mode mode)
{
    require_model_size(y);
    UmrlGraph g;
    g.rainy[0] = nn::constant(to_tensor(y));
    g.rainy[1] = nn::resize_half(g.rainy[0]);
    g.rainy[2] = nn::resize_half(g.rainy[1]);

    FeedbackHook hook;
    if (variant != Variant::BN) {
        hook = [&](int scale, const Var& concat) {
            const int idx = scale == 4 ? 2 : 1;
            const auto& rn = scale == 4 ? w.rn_x4 : w.rn_x2;
            Var r = rn_forward(concat, rn, mode);
            g.residual[idx] = r;
            if (variant == Variant::BN_RN) {
                g.confidence[idx] = ones(3, r.value().height(), r.value().width());
                return r;
            }
            const auto& cn = scale == 4 ? w.cn_x4 : w.cn_x2;
            g.confidence[idx] = cn_forward(concat, r, cn, mode);
            return nn::mul(g.confidence[idx], r);
        };
    }
    const BaseFeatures f = base_forward(g.rainy[0], w, mode, hook);
    g.residual[0] = f.residual_x1;
    if (variant == Variant::UMRL) {
        g.confidence[0] = cn_forward(f.final_features, f.residual_x1, w.cn_x1, mode);
    } else {
        g.confidence[0] = ones(3, y.height(), y.width());
    }
    for (int i = 1; i < 3 && variant == Variant::BN; ++i) {
        const Tensor& r = g.rainy[i].value();
        g.residual[i] = zeros(3, r.height(), r.width());
        g.confidence[i] = ones(3, r.height(), r.width());
    }
    for (int i = 0; i < 3; ++i) g.derained[i] = rfn_forward(nn::sub(g.rainy[i], g.residual[i]), w);
    return g;
}

UmrlOutput to_output(const UmrlGraph& g)
{
    UmrlOutput out;
    for (int i = 0; i < 3; ++i) {
        out.residual[i] = from_tensor(g.residual[i].value());
        out.confidence[i] = from_tensor(g.confidence[i].value());
        out.derained[i] = from_tensor(g.derained[i].value());
    }
    return out;
}

UmrlOutput umrl_forward(const Image& y, const UmrlWeights& w, Variant variant)
{
    nn::NoGradGuard no_grad;
    return to_output(umrl_forward_graph(y, w, variant, Mode::Eval));
}

Image derain(const Image& y, const UmrlWeights& w, Variant variant)
{
    nn::NoGradGuard no_grad;
    return from_tensor(umrl_forward_graph(y, w, variant, Mode::Eval).derained[0].value());
}

std::array<Image, 3> image_pyramid(const Image& img)
{
    std::array<Image, 3> out;
    out[0] = img;
    out[1] = resize_half(out[0]);
    out[2] = resize_half(out[1]);
    return out;
}

} // namespace umrl
