#include <doctest.h>

#include <algorithm>
#include <atomic>
#include <random>

#include "support.hpp"
#include "umrl/cyclespin.hpp"

using namespace umrl;
using testing::random_image;

namespace {

// Cyclic 3x3 box filter, exactly shift-equivariant.
Image box3(const Image& img)
{
    const int h = img.height();
    const int w = img.width();
    Image out(h, w, img.channels());
    for (int c = 0; c < img.channels(); ++c) {
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                double s = 0;
                for (int dy = -1; dy <= 1; ++dy) {
                    for (int dx = -1; dx <= 1; ++dx) s += img.at(c, (y + dy + h) % h, (x + dx + w) % w);
                }
                out.at(c, y, x) = s / 9.0;
            }
        }
    }
    return out;
}

// Not shift-equivariant: brightens a fixed top-left square.
Image corner_gain(const Image& img)
{
    Image out = img;
    for (int c = 0; c < img.channels(); ++c) {
        for (int y = 0; y < img.height() / 2; ++y) {
            for (int x = 0; x < img.width() / 2; ++x) out.at(c, y, x) = std::min(1.0, 1.5 * img.at(c, y, x));
        }
    }
    return out;
}

std::vector<Image> per_offset(const Restorer& r, const Image& y, const ShiftGrid& g)
{
    std::vector<Image> out;
    for (const auto& s : g.offsets) out.push_back(cyclic_shift(r(cyclic_shift(y, s)), -s.p, -s.q));
    return out;
}

} // namespace

TEST_CASE("shift grid enumeration")
{
    const ShiftGrid g = make_shift_grid(100, 100, 50);
    REQUIRE(g.offsets.size() == 4);
    CHECK(g.offsets[0] == ShiftOffset{0, 0});
    CHECK(g.offsets[1] == ShiftOffset{0, 50});
    CHECK(g.offsets[2] == ShiftOffset{50, 0});
    CHECK(g.offsets[3] == ShiftOffset{50, 50});
    CHECK(g.step_rows == 50);
    CHECK(g.step_cols == 50);

    CHECK(make_shift_grid(64, 48, 64).offsets.size() == 1);
    CHECK(make_shift_grid(40, 40, 1000).offsets.size() == 1);
    CHECK(make_shift_grid(512, 512).offsets.size() == 121);
    CHECK(make_shift_grid(100, 30, 20).offsets.size() == 5 * 2);
    CHECK_THROWS_AS(make_shift_grid(64, 64, 0), std::invalid_argument);

    const ShiftGrid g7 = make_shift_grid(33, 21, 7);
    for (std::size_t i = 1; i < g7.offsets.size(); ++i) {
        const auto& a = g7.offsets[i - 1];
        const auto& b = g7.offsets[i];
        CHECK((a.p < b.p || (a.p == b.p && a.q < b.q)));
    }
    CHECK_NOTHROW(validate_grid(g7, 33, 21));
}

TEST_CASE("grid validation")
{
    ShiftGrid empty;
    CHECK_THROWS_AS(validate_grid(empty, 8, 8), std::invalid_argument);
    ShiftGrid late{{{0, 4}, {0, 0}}, 4, 4};
    CHECK_THROWS_AS(validate_grid(late, 8, 8), std::invalid_argument);
    ShiftGrid repeat{{{0, 0}, {0, 4}, {0, 4}}, 4, 4};
    CHECK_THROWS_AS(validate_grid(repeat, 8, 8), std::invalid_argument);
    ShiftGrid outside{{{0, 0}, {8, 0}}, 8, 8};
    CHECK_THROWS_AS(validate_grid(outside, 8, 8), std::invalid_argument);
    CHECK_THROWS_AS(cycle_spin_restore([](const Image& i) { return i; }, random_image(8, 8, 3, 1), outside),
                    std::invalid_argument);
}

TEST_CASE("single offset and identity restorer")
{
    const Image y = random_image(24, 20, 3, 2);
    CHECK(cycle_spin_restore(corner_gain, y, make_shift_grid(24, 20, 100)) == corner_gain(y));
    for (int step : {1, 5, 8, 50}) {
        CHECK(cycle_spin_restore([](const Image& i) { return i; }, y, make_shift_grid(24, 20, step)) == y);
    }
}

TEST_CASE("shift-equivariant restorers are fixed points")
{
    const Image y = random_image(16, 16, 3, 3);
    const Image direct = box3(y);
    for (int step : {1, 3, 4, 7}) {
        const Image spun = cycle_spin_restore(box3, y, make_shift_grid(16, 16, step));
        for (std::size_t k = 0; k < y.size(); ++k) CHECK(std::abs(spun.data()[k] - direct.data()[k]) <= 1e-12);
    }
    // Conjugation identity term by term.
    const ShiftGrid g = make_shift_grid(16, 16, 5);
    for (const Image& term : per_offset(box3, y, g)) {
        for (std::size_t k = 0; k < y.size(); ++k) CHECK(std::abs(term.data()[k] - direct.data()[k]) <= 1e-12);
    }
}

TEST_CASE("average lies between per-offset extremes and matches the explicit mean")
{
    const Image y = random_image(20, 24, 3, 4);
    const ShiftGrid g = make_shift_grid(20, 24, 6);
    const Image spun = cycle_spin_restore(corner_gain, y, g);
    const auto terms = per_offset(corner_gain, y, g);
    for (std::size_t k = 0; k < y.size(); ++k) {
        double lo = 1e9, hi = -1e9, mean = 0;
        for (const Image& t : terms) {
            lo = std::min(lo, t.data()[k]);
            hi = std::max(hi, t.data()[k]);
            mean += t.data()[k];
        }
        mean /= static_cast<double>(terms.size());
        CHECK(spun.data()[k] >= lo);
        CHECK(spun.data()[k] <= hi);
        CHECK(spun.data()[k] == doctest::Approx(mean).epsilon(1e-14));
    }
    CHECK_FALSE(spun == corner_gain(y));
}

TEST_CASE("constant restorer yields the constant")
{
    const Image y = random_image(30, 30, 3, 5);
    for (double v : {0.0, 0.1, 1.0 / 3.0, 0.7}) {
        const Image out = cycle_spin_restore([v](const Image& i) { return Image(i.height(), i.width(), i.channels(), v); },
                                             y, make_shift_grid(30, 30, 4));
        for (double x : out.data()) CHECK(x == v);
    }
}

TEST_CASE("grid order and worker count")
{
    const Image y = random_image(24, 24, 3, 6);
    const ShiftGrid g = make_shift_grid(24, 24, 5);
    const Image base = cycle_spin_restore(corner_gain, y, g);

    ShiftGrid shuffled = g;
    std::mt19937 gen(7);
    std::shuffle(shuffled.offsets.begin() + 1, shuffled.offsets.end(), gen);
    REQUIRE_FALSE(shuffled.offsets == g.offsets);
    const Image permuted = cycle_spin_restore(corner_gain, y, shuffled);
    for (std::size_t k = 0; k < y.size(); ++k) CHECK(std::abs(permuted.data()[k] - base.data()[k]) < 1e-10);

    for (int workers : {2, 3, 8}) CHECK(cycle_spin_restore(corner_gain, y, g, workers) == base);
    CHECK_THROWS_AS(cycle_spin_restore(corner_gain, y, g, 0), std::invalid_argument);

    std::atomic<int> calls{0};
    cycle_spin_restore(
        [&](const Image& i) {
            ++calls;
            return i;
        },
        y, g, 4);
    CHECK(calls.load() == static_cast<int>(g.offsets.size()));
}

TEST_CASE("restorer shape mismatch is reported")
{
    const Image y = random_image(16, 16, 3, 8);
    CHECK_THROWS_AS(cycle_spin_restore([](const Image&) { return Image(8, 8, 3); }, y, make_shift_grid(16, 16, 8)),
                    std::invalid_argument);
}

TEST_CASE("external restorer through a subprocess")
{
    const Image y = random_image(16, 12, 3, 9);
    const Restorer copy = external_restorer("cp {in} {out}");
    const Image out = copy(y);
    REQUIRE(out.height() == 16);
    for (std::size_t k = 0; k < y.size(); ++k) CHECK(std::abs(out.data()[k] - y.data()[k]) <= 0.5 / 65535 + 1e-12);

    const Image spun = cycle_spin_restore(copy, y, make_shift_grid(16, 12, 8));
    for (std::size_t k = 0; k < y.size(); ++k) CHECK(std::abs(spun.data()[k] - y.data()[k]) <= 0.5 / 65535 + 1e-12);

    CHECK_THROWS(external_restorer("false {in} {out}")(y));
    CHECK_THROWS_AS(external_restorer("cp {in} /dev/null"), std::invalid_argument);
}
