#pragma once

#include <functional>
#include <string>
#include <vector>

#include "umrl/imaging.hpp"

namespace umrl {

/// Test-time shift set: multiples of `step` below the image size, row-major,
/// always starting at (0, 0).
struct ShiftGrid {
    std::vector<ShiftOffset> offsets;
    int step_rows = 0;
    int step_cols = 0;
};

/// Maps an image to a restored image of identical shape. Must be callable
/// concurrently when cycle spinning uses more than one worker.
using Restorer = std::function<Image(const Image&)>;

ShiftGrid make_shift_grid(int height, int width, int step = 50);

/// Throws std::invalid_argument if the grid is empty, lacks (0,0) first,
/// repeats an offset, or leaves [0,H) x [0,W).
void validate_grid(const ShiftGrid& grid, int height, int width);

/// mean over offsets of shift^-1(restorer(shift(y))). Per-offset results are
/// reduced in grid order with a single final division, so the output does
/// not depend on the worker count.
Image cycle_spin_restore(const Restorer& restorer, const Image& y, const ShiftGrid& grid, int workers = 1);

/// Runs an external command per image. `command` must contain the
/// placeholders {in} and {out}; the tool reads a PNG from {in}, writes a
/// PNG to {out} and exits 0. Images are exchanged as 16-bit PNG.
Restorer external_restorer(std::string command);

} // namespace umrl
