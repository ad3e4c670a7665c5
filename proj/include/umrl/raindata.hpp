#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "umrl/imaging.hpp"

namespace umrl {

/// Oriented-streak rain model. Angle is measured from vertical.
struct StreakParams {
    double angle = 0.0;     // degrees, [-45, 45]
    int length = 8;         // pixels, >= 1
    double density = 0.02;  // expected streak-pixel fraction, (0, 0.2]
    double intensity = 0.5; // additive peak brightness, (0, 1]
    std::uint64_t seed = 0;

    void validate() const;
};

/// Rainy/clean pair with optional ground-truth residual (y = clip(x + r)).
struct RainyPair {
    std::string name;
    Image rainy;
    Image clean;
    std::optional<Image> residual;
};

/// Nonnegative 3-channel residual: Bernoulli impulses at rate density/length,
/// cyclically convolved with a length-pixel line at the given angle and
/// saturated at `intensity`. Deterministic in params.seed.
Image synthesize_streaks(int height, int width, const StreakParams& params);

/// Smooth procedural clean scene (gradient background, flat shapes, mild texture).
Image synthesize_clean(int height, int width, std::uint64_t seed);

/// rainy = clip(clean + residual, 0, 1).
RainyPair compose_rainy(const Image& clean, const Image& residual);

/// Uniform offset in [0, height) x [0, width) drawn from seed.
ShiftOffset draw_shift(int height, int width, std::uint64_t seed);

/// Applies one seeded cyclic shift to every image of the pair.
RainyPair random_shift_pair(const RainyPair& pair, std::uint64_t seed);

struct LoadedDataset {
    std::vector<RainyPair> pairs;
    int warnings = 0;
};

/// Reads root/rainy/*.png and root/clean/*.png matched by filename, sorted.
/// Unmatched files are skipped and counted as warnings.
LoadedDataset load_pair_dataset(const std::filesystem::path& root);

/// Same matching for two arbitrary directories; files of the first land in
/// RainyPair::rainy, files of the second in RainyPair::clean.
LoadedDataset load_matched_pngs(const std::filesystem::path& first_dir, const std::filesystem::path& second_dir);

/// Ranges sampled per pair when generating a corpus.
struct StreakRanges {
    double angle_min = -30.0;
    double angle_max = 30.0;
    int length_min = 6;
    int length_max = 14;
    double density_min = 0.01;
    double density_max = 0.04;
    double intensity_min = 0.3;
    double intensity_max = 0.6;

    void validate() const;
};

struct GeneratedPair {
    RainyPair pair;
    StreakParams streak;
    std::uint64_t clean_seed = 0;
};

/// Deterministic synthetic corpus. Clean images lie on the 8-bit grid and
/// residuals on the 16-bit grid so stored files reproduce the rain model.
std::vector<GeneratedPair> generate_corpus(int count, int height, int width, const StreakRanges& ranges,
                                           std::uint64_t seed);

/// Writes rainy/, clean/, residual/ PNGs and manifest.json under root.
void write_corpus(const std::filesystem::path& root, const std::vector<GeneratedPair>& corpus,
                  const StreakRanges& ranges, std::uint64_t seed);

std::vector<RainyPair> pairs_of(const std::vector<GeneratedPair>& corpus);

} // namespace umrl
