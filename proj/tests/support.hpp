#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>

#include "umrl/autograd.hpp"
#include "umrl/imaging.hpp"

namespace testing {

inline umrl::Image random_image(int h, int w, int c, std::uint64_t seed, double lo = 0.0, double hi = 1.0)
{
    std::mt19937_64 gen(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    umrl::Image img(h, w, c);
    for (double& v : img.data()) v = u(gen);
    return img;
}

inline umrl::nn::Tensor random_tensor(std::vector<int> shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0)
{
    std::mt19937_64 gen(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    umrl::nn::Tensor t(std::move(shape));
    for (double& v : t.values()) v = u(gen);
    return t;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name)
{
    const auto dir = std::filesystem::temp_directory_path() / ("umrl-test-" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline double relative_error(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12}); }

/// Directional derivative check: compares grad . d against the central
/// difference (f(x + h d) - f(x - h d)) / 2h for one leaf.
struct DirectionalCheck {
    double analytic = 0.0;
    double numeric = 0.0;
    double error() const { return relative_error(analytic, numeric); }
};

inline DirectionalCheck check_direction(umrl::nn::Var leaf, const std::function<umrl::nn::Var()>& f,
                                        const umrl::nn::Tensor& direction, double h = 1e-5)
{
    leaf.zero_grad();
    umrl::nn::backward(f());
    DirectionalCheck c;
    const umrl::nn::Tensor g = leaf.grad();
    for (std::size_t i = 0; i < g.size(); ++i) c.analytic += g[i] * direction[i];

    umrl::nn::Tensor& x = leaf.mutable_value();
    const umrl::nn::Tensor saved = x;
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = saved[i] + h * direction[i];
    const double plus = f().item();
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = saved[i] - h * direction[i];
    const double minus = f().item();
    x = saved;
    c.numeric = (plus - minus) / (2 * h);
    return c;
}

} // namespace testing
