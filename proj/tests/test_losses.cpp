#include <doctest.h>

#include <cmath>
#include <random>

#include "support.hpp"
#include "umrl/checkpoint.hpp"
#include "umrl/losses.hpp"

using namespace umrl;
using testing::random_image;
using testing::random_tensor;

namespace {

// Pyramid of the given top size filled by a generator.
Pyramid pyramid_of(int h, int w, int c, double value)
{
    return {Image(h, w, c, value), Image(h / 2, w / 2, c, value), Image(h / 4, w / 4, c, value)};
}

Pyramid random_pyramid(int h, int w, std::uint64_t seed, double lo = 0.0, double hi = 1.0)
{
    return {random_image(h, w, 3, seed, lo, hi), random_image(h / 2, w / 2, 3, seed + 1, lo, hi),
            random_image(h / 4, w / 4, 3, seed + 2, lo, hi)};
}

UmrlOutput output_of(const Pyramid& derained, const Pyramid& confidence)
{
    UmrlOutput out;
    out.derained = derained;
    out.confidence = confidence;
    for (int i = 0; i < 3; ++i) out.residual[i] = Image(derained[i].height(), derained[i].width(), derained[i].channels());
    return out;
}

std::size_t element_count(const Pyramid& p)
{
    return p[0].size() + p[1].size() + p[2].size();
}

double sum_abs_diff(const Pyramid& a, const Pyramid& b)
{
    double s = 0;
    for (int i = 0; i < 3; ++i) {
        for (std::size_t k = 0; k < a[i].size(); ++k) s += std::abs(a[i].data()[k] - b[i].data()[k]);
    }
    return s;
}

VarPyramid parameters_of(const Pyramid& p)
{
    return {nn::parameter(to_tensor(p[0])), nn::parameter(to_tensor(p[1])), nn::parameter(to_tensor(p[2]))};
}

void expect_pyramid_gradient(VarPyramid& leaves, const std::function<nn::Var()>& f, std::uint64_t seed)
{
    for (int i = 0; i < 3; ++i) {
        for (int k = 0; k < 3; ++k) {
            const auto c = testing::check_direction(leaves[i], f, random_tensor(leaves[i].value().shape(), seed + 10 * i + k));
            INFO("scale " << i << " analytic " << c.analytic << " numeric " << c.numeric);
            CHECK(c.error() < 1e-4);
        }
    }
}

} // namespace

TEST_CASE("confidence-guided L1 examples")
{
    const Pyramid x = random_pyramid(16, 16, 1);
    CHECK(loss_confidence_l1(output_of(x, random_pyramid(16, 16, 4, 0.01, 1.0)), x) == 0.0);

    const Pyramid xhat = random_pyramid(16, 16, 7);
    const double floor_value = loss_confidence_l1(output_of(xhat, pyramid_of(16, 16, 3, kConfidenceFloor)), x);
    CHECK(floor_value == doctest::Approx(kConfidenceFloor * sum_abs_diff(xhat, x)).epsilon(1e-12));

    // One element at x1, zero difference elsewhere.
    Pyramid toy_clean = pyramid_of(4, 4, 1, 0.2);
    Pyramid toy_pred = toy_clean;
    toy_pred[0].at(0, 0, 0) = 0.8;
    Pyramid toy_conf = pyramid_of(4, 4, 1, 1.0);
    toy_conf[0].at(0, 0, 0) = 0.5;
    CHECK(loss_confidence_l1(output_of(toy_pred, toy_conf), toy_clean) == doctest::Approx(0.3).epsilon(1e-14));

    Pyramid bad = x;
    bad[1] = Image(4, 4, 3);
    CHECK_THROWS_AS(loss_confidence_l1(output_of(x, pyramid_of(16, 16, 3, 1.0)), bad), std::invalid_argument);
}

TEST_CASE("log-confidence examples")
{
    const Pyramid x = random_pyramid(16, 16, 9);
    CHECK(loss_log_confidence(output_of(x, pyramid_of(16, 16, 3, 1.0))) == 0.0);
    const double p = static_cast<double>(element_count(x));
    CHECK(p == 3 * (256 + 64 + 16));
    CHECK(loss_log_confidence(output_of(x, pyramid_of(16, 16, 3, 0.5))) ==
          doctest::Approx(p * std::log(0.5)).epsilon(1e-13));
    const double at_floor = loss_log_confidence(output_of(x, pyramid_of(16, 16, 3, kConfidenceFloor)));
    CHECK(std::isfinite(at_floor));
    CHECK(at_floor == doctest::Approx(p * std::log(1e-3)).epsilon(1e-13));
    CHECK_THROWS_AS(loss_log_confidence(output_of(x, pyramid_of(16, 16, 3, 0.0))), std::domain_error);
}

TEST_CASE("regularized loss examples")
{
    const Pyramid x = random_pyramid(16, 16, 11);
    CHECK(loss_u(output_of(x, pyramid_of(16, 16, 3, 1.0)), x, 0.1) == 0.0);
    const double p = static_cast<double>(element_count(x));
    const double half = loss_u(output_of(x, pyramid_of(16, 16, 3, 0.5)), x, 0.1);
    CHECK(half == doctest::Approx(-0.1 * p * std::log(0.5)).epsilon(1e-13));
    CHECK(half / p == doctest::Approx(0.0693).epsilon(1e-3));
    CHECK(half > 0.0);
    CHECK_THROWS_AS(loss_u(output_of(x, pyramid_of(16, 16, 3, 1.0)), x, -0.1), std::invalid_argument);
}

TEST_CASE("perceptual loss examples")
{
    const IdentityFeatureExtractor id;
    const Image a = random_image(2, 2, 1, 12);
    Image b = a;
    for (double& v : b.data()) v += 0.1;
    CHECK(loss_perceptual(a, a, id) == 0.0);
    CHECK(loss_perceptual(a, b, id) == doctest::Approx(0.01).epsilon(1e-12));

    const auto f = ConvFeatureExtractor::random(3);
    const Image u = random_image(8, 8, 3, 13);
    const Image v = random_image(8, 8, 3, 14);
    CHECK(loss_perceptual(u, u, f) == 0.0);
    CHECK(loss_perceptual(u, v, f) == loss_perceptual(v, u, f));
    CHECK(loss_perceptual(u, v, f) > 0.0);
    CHECK_THROWS_AS(loss_perceptual(u, random_image(8, 4, 3, 1), f), std::invalid_argument);
}

TEST_CASE("total objective reduces to its parts")
{
    const Pyramid x = random_pyramid(16, 16, 15);
    const Pyramid xhat = random_pyramid(16, 16, 18);
    const Pyramid c = random_pyramid(16, 16, 21, 0.01, 1.0);
    const UmrlOutput out = output_of(xhat, c);
    const auto f = ConvFeatureExtractor::random(4);
    CHECK(loss_total(out, x, f, LossWeights{0.1, 0.0}) == loss_u(out, x, 0.1));
    CHECK(loss_total(out, x, f, LossWeights{0.0, 0.0}) == loss_confidence_l1(out, x));
    CHECK(loss_total(out, x, f, LossWeights{0.1, 1.0}) ==
          doctest::Approx(loss_u(out, x, 0.1) + loss_perceptual(xhat[0], x[0], f)).epsilon(1e-14));
    CHECK_THROWS_AS(loss_total(out, x, f, LossWeights{0.1, -1.0}), std::invalid_argument);
}

TEST_CASE("total objective on a seeded forward pass matches the recorded value")
{
    const UmrlWeights w = UmrlWeights::create(2024);
    const Image y = random_image(32, 32, 3, 5);
    const Image x = random_image(32, 32, 3, 6);
    const UmrlOutput out = umrl_forward(y, w);
    const double value = loss_total(out, image_pyramid(x), ConvFeatureExtractor::random(7), LossWeights{});
    // Recorded from the first audited run.
    CHECK(value == doctest::Approx(820.9634347757883).epsilon(1e-9));
}

TEST_CASE("loss gradients match central differences on 8x8 toys")
{
    VarPyramid xhat = parameters_of(random_pyramid(8, 8, 30));
    VarPyramid conf = parameters_of(random_pyramid(8, 8, 33, 0.05, 1.0));
    const VarPyramid clean = constant_pyramid(random_pyramid(8, 8, 36));
    auto l1 = [&] { return confidence_l1_term(xhat, conf, clean); };
    expect_pyramid_gradient(xhat, l1, 100);
    expect_pyramid_gradient(conf, l1, 200);
    expect_pyramid_gradient(conf, [&] { return log_confidence_term(conf); }, 300);

    const auto f = ConvFeatureExtractor::random(8);
    nn::Var a = nn::parameter(random_tensor({3, 8, 8}, 39, 0.0, 1.0));
    const nn::Var b = nn::constant(random_tensor({3, 8, 8}, 40, 0.0, 1.0));
    for (int k = 0; k < 5; ++k) {
        const auto c = testing::check_direction(a, [&] { return perceptual_term(a, b, f); },
                                                random_tensor({3, 8, 8}, 400 + k));
        CHECK(c.error() < 1e-4);
    }
    // Extractor input directly.
    nn::Var z = nn::parameter(random_tensor({3, 8, 8}, 41));
    for (int k = 0; k < 3; ++k) {
        const auto c = testing::check_direction(z, [&] { return nn::sum_square(f.extract(z)); },
                                                random_tensor({3, 8, 8}, 500 + k));
        CHECK(c.error() < 1e-4);
    }

    // Composite objective with lambda weights, through a graph.
    UmrlGraph g;
    for (int i = 0; i < 3; ++i) {
        g.derained[i] = xhat[i];
        g.confidence[i] = conf[i];
        g.residual[i] = nn::constant(nn::Tensor(xhat[i].value().shape()));
        g.rainy[i] = g.residual[i];
    }
    auto total = [&] { return training_objective(g, clean, f, LossWeights{0.1, 1.0}, Variant::UMRL).total; };
    expect_pyramid_gradient(xhat, total, 600);
    expect_pyramid_gradient(conf, total, 700);
}

TEST_CASE("closed-form confidence minimizer agrees with grid search")
{
    std::mt19937_64 gen(77);
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    const double lambda1 = 0.1;
    for (int n = 0; n < 100; ++n) {
        const double d = dist(gen);
        double best_c = 0.0;
        double best = std::numeric_limits<double>::infinity();
        for (int k = 0; k < 1000; ++k) {
            const double c = kConfidenceFloor + (1.0 - kConfidenceFloor) * k / 999.0;
            const double v = c * d - lambda1 * std::log(c);
            if (v < best) {
                best = v;
                best_c = c;
            }
        }
        const double closed = optimal_confidence(d, lambda1);
        INFO("d " << d << " grid " << best_c << " closed " << closed);
        CHECK(std::abs(best_c - closed) <= (1.0 - kConfidenceFloor) / 999.0);
        // Anti-collapse: the floor is never the minimizer while d < lambda1 / floor.
        CHECK(best_c > kConfidenceFloor);
    }
    CHECK(optimal_confidence(0.0, 0.1) == 1.0);
    CHECK(optimal_confidence(0.05, 0.1) == 1.0);
    CHECK(optimal_confidence(0.5, 0.1) == doctest::Approx(0.2));
}

TEST_CASE("regularizer penalty grows as any confidence shrinks")
{
    const Pyramid x = random_pyramid(8, 8, 50);
    const Pyramid c = random_pyramid(8, 8, 53, 0.2, 1.0);
    const double base = -0.1 * loss_log_confidence(output_of(x, c));
    for (int i = 0; i < 3; ++i) {
        for (std::size_t k : {std::size_t{0}, c[i].size() / 2, c[i].size() - 1}) {
            Pyramid lower = c;
            lower[i].data()[k] *= 0.9;
            CHECK(-0.1 * loss_log_confidence(output_of(x, lower)) > base);
        }
    }
}

TEST_CASE("every scale contributes to the L1 term")
{
    const Pyramid x = random_pyramid(16, 16, 60);
    const Pyramid xhat = random_pyramid(16, 16, 63);
    const Pyramid c = pyramid_of(16, 16, 3, 1.0);
    const double full = loss_confidence_l1(output_of(xhat, c), x);
    for (int i = 0; i < 3; ++i) {
        Pyramid without = xhat;
        without[i] = x[i];
        CHECK(loss_confidence_l1(output_of(without, c), x) < full);
    }
}

TEST_CASE("feature extractor weights are seeded and round-trip through an archive")
{
    const auto a = ConvFeatureExtractor::random(9);
    const auto b = ConvFeatureExtractor::random(9);
    const auto other = ConvFeatureExtractor::random(10);
    const Image u = random_image(8, 8, 3, 70);
    const Image v = random_image(8, 8, 3, 71);
    CHECK(loss_perceptual(u, v, a) == loss_perceptual(u, v, b));
    CHECK(loss_perceptual(u, v, a) != loss_perceptual(u, v, other));
    CHECK(a.extract(nn::constant(to_tensor(u))).value().channels() == 16);

    const auto dir = testing::scratch_dir("losses-extractor");
    save_tensor_archive(dir / "f.bin", a.tensors());
    const auto loaded = ConvFeatureExtractor::load(dir / "f.bin");
    CHECK(loss_perceptual(u, v, loaded) == loss_perceptual(u, v, a));

    auto partial = a.tensors();
    partial.pop_back();
    CHECK_THROWS_AS(ConvFeatureExtractor::from_tensors(partial), std::invalid_argument);
}
