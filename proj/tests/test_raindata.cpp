#include <doctest.h>

#include <cmath>
#include <fstream>
#include <iterator>
#include <nlohmann/json.hpp>

#include "support.hpp"
#include "umrl/raindata.hpp"

using namespace umrl;
namespace fs = std::filesystem;

namespace {

// Dominant gradient orientation of channel 0: 8 bins of 22.5 degrees centred
// on 0, 22.5, ..., 157.5, weighted by gradient magnitude (cyclic differences).
int dominant_orientation(const Image& img)
{
    double bins[8] = {};
    const int h = img.height();
    const int w = img.width();
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double gx = img.at(0, y, (x + 1) % w) - img.at(0, y, (x + w - 1) % w);
            const double gy = img.at(0, (y + 1) % h, x) - img.at(0, (y + h - 1) % h, x);
            const double mag = std::hypot(gx, gy);
            if (mag == 0.0) continue;
            double deg = std::atan2(gy, gx) * 180.0 / M_PI;
            deg = std::fmod(deg + 360.0, 180.0);
            bins[static_cast<int>(std::floor((deg + 11.25) / 22.5)) % 8] += mag;
        }
    }
    return static_cast<int>(std::max_element(bins, bins + 8) - bins);
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

bool same_tree(const fs::path& a, const fs::path& b)
{
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(a)) {
        if (e.is_regular_file()) files.push_back(fs::relative(e.path(), a));
    }
    std::size_t count_b = 0;
    for (const auto& e : fs::recursive_directory_iterator(b)) count_b += e.is_regular_file();
    if (files.size() != count_b) return false;
    for (const auto& f : files) {
        if (slurp(a / f) != slurp(b / f)) return false;
    }
    return true;
}

} // namespace

TEST_CASE("streak parameters are range checked")
{
    StreakParams p;
    CHECK_NOTHROW(p.validate());
    for (auto mutate : std::vector<std::function<void(StreakParams&)>>{
             [](StreakParams& s) { s.angle = 46; }, [](StreakParams& s) { s.angle = -45.5; },
             [](StreakParams& s) { s.length = 0; }, [](StreakParams& s) { s.density = 0; },
             [](StreakParams& s) { s.density = 0.25; }, [](StreakParams& s) { s.intensity = 0; },
             [](StreakParams& s) { s.intensity = 1.5; }}) {
        StreakParams bad;
        mutate(bad);
        CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    }
    CHECK_THROWS_AS(synthesize_streaks(8, 64, p), std::invalid_argument);
}

TEST_CASE("streak synthesis examples")
{
    StreakParams none{10.0, 8, 1e-9, 0.5, 3};
    const Image empty = synthesize_streaks(64, 64, none);
    CHECK(std::all_of(empty.data().begin(), empty.data().end(), [](double v) { return v == 0.0; }));

    StreakParams p{-20.0, 10, 0.03, 0.4, 99};
    CHECK(synthesize_streaks(64, 48, p) == synthesize_streaks(64, 48, p));
    StreakParams other = p;
    other.seed = 100;
    CHECK_FALSE(synthesize_streaks(64, 48, p) == synthesize_streaks(64, 48, other));
}

TEST_CASE("streak maps are nonnegative, saturate at the intensity and share channels")
{
    StreakParams p{15.0, 12, 0.05, 0.35, 7};
    const Image r = synthesize_streaks(64, 64, p);
    double peak = 0.0;
    for (int y = 0; y < 64; ++y) {
        for (int x = 0; x < 64; ++x) {
            const double v = r.at(0, y, x);
            CHECK((v == 0.0 || v == 0.35));
            CHECK(r.at(1, y, x) == v);
            CHECK(r.at(2, y, x) == v);
            peak = std::max(peak, v);
        }
    }
    CHECK(peak == 0.35);
}

TEST_CASE("vertical streaks form column runs of at least their length")
{
    const Image r = synthesize_streaks(64, 64, StreakParams{0.0, 8, 0.03, 0.5, 2024});
    int runs = 0;
    for (int x = 0; x < 64; ++x) {
        int start = 0;
        while (start < 64 && r.at(0, start, x) != 0.0) ++start;
        if (start == 64) continue; // whole column lit
        for (int k = 1; k <= 64; ++k) {
            const int y = (start + k) % 64;
            if (r.at(0, y, x) == 0.0) continue;
            int len = 0;
            while (r.at(0, (y + len) % 64, x) != 0.0) ++len;
            CHECK(len >= 8);
            ++runs;
            k += len;
        }
    }
    CHECK(runs > 0);
}

TEST_CASE("streak orientation survives area halving")
{
    const double angles[5] = {0.0, 22.5, -22.5, 45.0, -45.0};
    for (int k = 0; k < 5; ++k) {
        const Image r = synthesize_streaks(128, 128, StreakParams{angles[k], 14, 0.05, 0.5, 500u + k});
        const Image half = resize_half(r);
        CHECK(std::all_of(half.data().begin(), half.data().end(), [](double v) { return v >= 0.0; }));
        CHECK(dominant_orientation(half) == dominant_orientation(r));
    }
    // Vertical streaks have horizontal gradients.
    CHECK(dominant_orientation(synthesize_streaks(128, 128, StreakParams{0.0, 14, 0.05, 0.5, 1})) == 0);
}

TEST_CASE("compose_rainy examples")
{
    const Image clean = testing::random_image(16, 16, 3, 1);
    const RainyPair same = compose_rainy(clean, Image(16, 16, 3));
    CHECK(same.rainy == clean);

    const RainyPair clipped = compose_rainy(Image(4, 4, 3, 0.9), Image(4, 4, 3, 0.3));
    CHECK(clipped.rainy == Image(4, 4, 3, 1.0));

    const Image residual = testing::random_image(16, 16, 3, 2, 0.0, 0.5);
    const RainyPair p = compose_rainy(clean, residual);
    REQUIRE(p.residual.has_value());
    for (std::size_t i = 0; i < clean.size(); ++i) {
        if (clean.data()[i] + residual.data()[i] <= 1.0) {
            CHECK(p.rainy.data()[i] - clean.data()[i] == doctest::Approx(residual.data()[i]).epsilon(1e-15));
        } else {
            CHECK(p.rainy.data()[i] == 1.0);
        }
    }
    CHECK_THROWS_AS(compose_rainy(clean, Image(16, 8, 3)), std::invalid_argument);
}

TEST_CASE("random_shift_pair")
{
    const Image clean = synthesize_clean(16, 16, 4);
    const RainyPair pair = compose_rainy(clean, synthesize_streaks(16, 16, StreakParams{5.0, 6, 0.05, 0.4, 8}));

    std::uint64_t zero_seed = 0;
    while (!(draw_shift(16, 16, zero_seed) == ShiftOffset{0, 0})) ++zero_seed;
    const RainyPair unshifted = random_shift_pair(pair, zero_seed);
    CHECK(unshifted.rainy == pair.rainy);
    CHECK(unshifted.clean == pair.clean);

    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const ShiftOffset s = draw_shift(16, 16, seed);
        CHECK(s == draw_shift(16, 16, seed));
        CHECK((s.p >= 0 && s.p < 16 && s.q >= 0 && s.q < 16));
        const RainyPair shifted = random_shift_pair(pair, seed);
        CHECK(shifted.rainy == cyclic_shift(pair.rainy, s));
        CHECK(psnr(shifted.rainy, shifted.clean) == psnr(pair.rainy, pair.clean));
        const RainyPair recomposed = compose_rainy(shifted.clean, *shifted.residual);
        CHECK(recomposed.rainy == shifted.rainy);
    }
}

TEST_CASE("dataset loading matches by filename")
{
    const fs::path root = testing::scratch_dir("raindata-load");
    fs::create_directories(root / "rainy");
    fs::create_directories(root / "clean");
    LoadedDataset empty = load_pair_dataset(root);
    CHECK(empty.pairs.empty());
    CHECK(empty.warnings == 0);

    for (const char* name : {"b.png", "a.png", "c.png"}) {
        write_png(root / "rainy" / name, testing::random_image(16, 16, 3, 1), 8);
        write_png(root / "clean" / name, testing::random_image(16, 16, 3, 2), 8);
    }
    write_png(root / "rainy" / "orphan.png", testing::random_image(16, 16, 3, 3), 8);
    const LoadedDataset d = load_pair_dataset(root);
    REQUIRE(d.pairs.size() == 3);
    CHECK(d.warnings == 1);
    CHECK(d.pairs[0].name == "a.png");
    CHECK(d.pairs[2].name == "c.png");
    CHECK_FALSE(d.pairs[0].residual.has_value());

    CHECK_THROWS(load_pair_dataset(root / "nowhere"));
}

TEST_CASE("generated corpus round-trips through files")
{
    const fs::path root = testing::scratch_dir("raindata-corpus");
    const StreakRanges ranges;
    const auto corpus = generate_corpus(8, 32, 48, ranges, 11);
    write_corpus(root, corpus, ranges, 11);
    const LoadedDataset d = load_pair_dataset(root);
    REQUIRE(d.pairs.size() == 8);
    for (std::size_t i = 0; i < 8; ++i) {
        const RainyPair& g = corpus[i].pair;
        CHECK(d.pairs[i].name == g.name);
        CHECK(d.pairs[i].clean == g.clean); // clean lies on the 8-bit grid
        for (std::size_t k = 0; k < g.rainy.size(); ++k) {
            CHECK(std::abs(d.pairs[i].rainy.data()[k] - g.rainy.data()[k]) <= 0.5 / 255 + 1e-12);
        }
        // Stored files reproduce the rain model within one 8-bit level.
        const Image residual = read_png(root / "residual" / g.name);
        CHECK(residual == *g.residual);
        const Image recomposed = compose_rainy(d.pairs[i].clean, residual).rainy;
        for (std::size_t k = 0; k < recomposed.size(); ++k) {
            CHECK(std::abs(recomposed.data()[k] - d.pairs[i].rainy.data()[k]) <= 1.0 / 255);
        }
    }

    std::ifstream in(root / "manifest.json");
    const auto manifest = nlohmann::json::parse(in);
    CHECK(manifest["count"] == 8);
    CHECK(manifest["pairs"].size() == 8);
    CHECK(manifest["seed"] == 11);
}

TEST_CASE("corpus generation is byte-reproducible")
{
    const fs::path a = testing::scratch_dir("raindata-rep-a");
    const fs::path b = testing::scratch_dir("raindata-rep-b");
    const StreakRanges ranges;
    write_corpus(a, generate_corpus(4, 32, 32, ranges, 5), ranges, 5);
    write_corpus(b, generate_corpus(4, 32, 32, ranges, 5), ranges, 5);
    CHECK(same_tree(a, b));

    const fs::path z = testing::scratch_dir("raindata-zero");
    write_corpus(z, generate_corpus(0, 32, 32, ranges, 5), ranges, 5);
    std::ifstream in(z / "manifest.json");
    CHECK(nlohmann::json::parse(in)["count"] == 0);
    CHECK(load_pair_dataset(z).pairs.empty());
}

TEST_CASE("streak ranges are validated")
{
    StreakRanges r;
    r.angle_min = 10;
    r.angle_max = 5;
    CHECK_THROWS_AS(r.validate(), std::invalid_argument);
    CHECK_THROWS_AS(generate_corpus(-1, 32, 32, StreakRanges{}, 1), std::invalid_argument);
}
