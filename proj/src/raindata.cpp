#include "umrl/raindata.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <stdexcept>

#include "umrl/detail/random.hpp"

namespace umrl {

namespace fs = std::filesystem;

namespace {

std::vector<std::pair<int, int>> line_kernel(double angle_deg, int length)
{
    const double a = angle_deg * std::numbers::pi / 180.0;
    const double dy = std::cos(a);
    const double dx = std::sin(a);
    std::set<std::pair<int, int>> taps;
    for (int i = 0; i < length; ++i) {
        const double t = i - (length - 1) / 2.0;
        taps.emplace(static_cast<int>(std::floor(t * dy + 0.5)), static_cast<int>(std::floor(t * dx + 0.5)));
    }
    return {taps.begin(), taps.end()};
}

double quantize(double v, double levels) { return std::round(std::clamp(v, 0.0, 1.0) * levels) / levels; }

std::vector<fs::path> png_files(const fs::path& dir)
{
    std::vector<fs::path> out;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".png") out.push_back(entry.path().filename());
    }
    std::sort(out.begin(), out.end());
    return out;
}

} // namespace

void StreakParams::validate() const
{
    if (!(angle >= -45.0 && angle <= 45.0)) throw std::invalid_argument("streak angle must lie in [-45, 45] degrees");
    if (length < 1) throw std::invalid_argument("streak length must be >= 1");
    if (!(density > 0.0 && density <= 0.2)) throw std::invalid_argument("streak density must lie in (0, 0.2]");
    if (!(intensity > 0.0 && intensity <= 1.0)) throw std::invalid_argument("streak intensity must lie in (0, 1]");
}

void StreakRanges::validate() const
{
    StreakParams lo{angle_min, length_min, density_min, intensity_min, 0};
    StreakParams hi{angle_max, length_max, density_max, intensity_max, 0};
    lo.validate();
    hi.validate();
    if (angle_min > angle_max || length_min > length_max || density_min > density_max ||
        intensity_min > intensity_max) {
        throw std::invalid_argument("streak range minimum exceeds maximum");
    }
}

Image synthesize_streaks(int height, int width, const StreakParams& params)
{
    if (height < 16 || width < 16) throw std::invalid_argument("streak maps need height and width >= 16");
    params.validate();

    detail::Rng rng(params.seed);
    const double rate = params.density / params.length;
    std::vector<double> impulses(static_cast<std::size_t>(height) * width, 0.0);
    for (double& v : impulses) v = rng.uniform() < rate ? 1.0 : 0.0;

    const auto taps = line_kernel(params.angle, params.length);
    Image out(height, width, 3);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            if (impulses[static_cast<std::size_t>(y) * width + x] == 0.0) continue;
            for (const auto& [ty, tx] : taps) {
                const int yy = ((y + ty) % height + height) % height;
                const int xx = ((x + tx) % width + width) % width;
                out.at(0, yy, xx) += 1.0;
            }
        }
    }
    const std::size_t plane = static_cast<std::size_t>(height) * width;
    for (std::size_t i = 0; i < plane; ++i) {
        const double v = params.intensity * std::min(out.data()[i], 1.0);
        out.data()[i] = v;
        out.data()[plane + i] = v;
        out.data()[2 * plane + i] = v;
    }
    return out;
}

Image synthesize_clean(int height, int width, std::uint64_t seed)
{
    detail::Rng rng(detail::mix_seed(seed, 0xc1ea));
    Image img(height, width, 3);

    double top[3], bottom[3];
    for (int c = 0; c < 3; ++c) {
        top[c] = rng.uniform(0.15, 0.7);
        bottom[c] = rng.uniform(0.1, 0.6);
    }
    const double tilt = rng.uniform(-0.5, 0.5);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const double t = std::clamp((y + tilt * x) / static_cast<double>(height), 0.0, 1.0);
            for (int c = 0; c < 3; ++c) img.at(c, y, x) = (1.0 - t) * top[c] + t * bottom[c];
        }
    }

    const int shapes = 3 + rng.below(4);
    for (int s = 0; s < shapes; ++s) {
        const bool ellipse = rng.uniform() < 0.5;
        const double cy = rng.uniform(0.0, height);
        const double cx = rng.uniform(0.0, width);
        const double ry = rng.uniform(0.08, 0.3) * height;
        const double rx = rng.uniform(0.08, 0.3) * width;
        double color[3];
        for (double& c : color) c = rng.uniform(0.05, 0.75);
        for (int y = 0; y < height; ++y) {
            for (int x = 0; x < width; ++x) {
                const double u = (y - cy) / ry;
                const double v = (x - cx) / rx;
                const bool inside = ellipse ? u * u + v * v <= 1.0 : std::abs(u) <= 1.0 && std::abs(v) <= 1.0;
                if (!inside) continue;
                for (int c = 0; c < 3; ++c) img.at(c, y, x) = color[c];
            }
        }
    }

    const double fy = rng.uniform(0.05, 0.3);
    const double fx = rng.uniform(0.05, 0.3);
    const double amp = rng.uniform(0.01, 0.05);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const double tex = amp * std::sin(fy * y + fx * x) * std::cos(0.7 * fx * y - 0.3 * fy * x);
            for (int c = 0; c < 3; ++c) img.at(c, y, x) = std::clamp(img.at(c, y, x) + tex, 0.0, 0.85);
        }
    }
    return img;
}

RainyPair compose_rainy(const Image& clean, const Image& residual)
{
    if (!clean.same_shape(residual)) {
        throw std::invalid_argument("compose_rainy: shape mismatch " + clean.shape_string() + " vs " +
                                    residual.shape_string());
    }
    Image rainy = clean;
    for (std::size_t i = 0; i < rainy.size(); ++i) {
        rainy.data()[i] = std::clamp(clean.data()[i] + residual.data()[i], 0.0, 1.0);
    }
    return RainyPair{"", std::move(rainy), clean, residual};
}

ShiftOffset draw_shift(int height, int width, std::uint64_t seed)
{
    detail::Rng rng(detail::mix_seed(seed, 0x5417));
    const int p = rng.below(height);
    const int q = rng.below(width);
    return {p, q};
}

RainyPair random_shift_pair(const RainyPair& pair, std::uint64_t seed)
{
    const ShiftOffset s = draw_shift(pair.rainy.height(), pair.rainy.width(), seed);
    RainyPair out{pair.name, cyclic_shift(pair.rainy, s), cyclic_shift(pair.clean, s), std::nullopt};
    if (pair.residual) out.residual = cyclic_shift(*pair.residual, s);
    return out;
}

LoadedDataset load_matched_pngs(const fs::path& first_dir, const fs::path& second_dir)
{
    for (const auto& dir : {first_dir, second_dir}) {
        if (!fs::is_directory(dir)) throw std::runtime_error("missing dataset directory " + dir.string());
    }
    const auto first_names = png_files(first_dir);
    const auto second_names = png_files(second_dir);

    LoadedDataset out;
    std::vector<fs::path> matched;
    std::set_intersection(first_names.begin(), first_names.end(), second_names.begin(), second_names.end(),
                          std::back_inserter(matched));
    out.warnings = static_cast<int>(first_names.size() + second_names.size() - 2 * matched.size());
    for (const auto& name : matched) {
        RainyPair pair{name.string(), read_png(first_dir / name), read_png(second_dir / name), std::nullopt};
        if (!pair.rainy.same_shape(pair.clean)) {
            throw std::runtime_error("pair " + name.string() + " has mismatched shapes " + pair.rainy.shape_string() +
                                     " and " + pair.clean.shape_string());
        }
        out.pairs.push_back(std::move(pair));
    }
    return out;
}

LoadedDataset load_pair_dataset(const fs::path& root) { return load_matched_pngs(root / "rainy", root / "clean"); }

std::vector<GeneratedPair> generate_corpus(int count, int height, int width, const StreakRanges& ranges,
                                           std::uint64_t seed)
{
    if (count < 0) throw std::invalid_argument("corpus count must be >= 0");
    ranges.validate();
    std::vector<GeneratedPair> out;
    out.reserve(count);
    detail::Rng rng(detail::mix_seed(seed, 0xda7a));
    for (int i = 0; i < count; ++i) {
        GeneratedPair g;
        g.clean_seed = rng.next();
        g.streak.angle = rng.uniform(ranges.angle_min, ranges.angle_max);
        g.streak.length = ranges.length_min + rng.below(ranges.length_max - ranges.length_min + 1);
        g.streak.density = rng.uniform(ranges.density_min, ranges.density_max);
        g.streak.intensity = rng.uniform(ranges.intensity_min, ranges.intensity_max);
        g.streak.seed = rng.next();

        Image clean = synthesize_clean(height, width, g.clean_seed);
        for (double& v : clean.data()) v = quantize(v, 255.0);
        Image residual = synthesize_streaks(height, width, g.streak);
        for (double& v : residual.data()) v = quantize(v, 65535.0);
        g.pair = compose_rainy(clean, residual);
        char name[32];
        std::snprintf(name, sizeof name, "%04d.png", i);
        g.pair.name = name;
        out.push_back(std::move(g));
    }
    return out;
}

void write_corpus(const fs::path& root, const std::vector<GeneratedPair>& corpus, const StreakRanges& ranges,
                  std::uint64_t seed)
{
    for (const char* sub : {"rainy", "clean", "residual"}) fs::create_directories(root / sub);

    nlohmann::ordered_json manifest;
    manifest["format"] = "umrl-dataset-v1";
    manifest["seed"] = seed;
    manifest["count"] = corpus.size();
    manifest["ranges"] = {
        {"angle", {ranges.angle_min, ranges.angle_max}},
        {"length", {ranges.length_min, ranges.length_max}},
        {"density", {ranges.density_min, ranges.density_max}},
        {"intensity", {ranges.intensity_min, ranges.intensity_max}},
    };
    auto& pairs = manifest["pairs"] = nlohmann::ordered_json::array();
    for (const auto& g : corpus) {
        write_png(root / "rainy" / g.pair.name, g.pair.rainy, 8);
        write_png(root / "clean" / g.pair.name, g.pair.clean, 8);
        if (g.pair.residual) write_png(root / "residual" / g.pair.name, *g.pair.residual, 16);
        nlohmann::ordered_json entry;
        entry["name"] = g.pair.name;
        entry["height"] = g.pair.clean.height();
        entry["width"] = g.pair.clean.width();
        entry["clean_seed"] = g.clean_seed;
        entry["streak"] = {
            {"angle", g.streak.angle},
            {"length", g.streak.length},
            {"density", g.streak.density},
            {"intensity", g.streak.intensity},
            {"seed", g.streak.seed},
        };
        pairs.push_back(std::move(entry));
    }
    std::ofstream out(root / "manifest.json", std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + (root / "manifest.json").string());
    out << manifest.dump(2) << '\n';
    if (!out) throw std::runtime_error("failed writing manifest in " + root.string());
}

std::vector<RainyPair> pairs_of(const std::vector<GeneratedPair>& corpus)
{
    std::vector<RainyPair> out;
    out.reserve(corpus.size());
    for (const auto& g : corpus) out.push_back(g.pair);
    return out;
}

} // namespace umrl
