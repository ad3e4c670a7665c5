#include "umrl/cyclespin.hpp"

#include <atomic>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <mutex>
#include <set>
#include <stdexcept>
#include <thread>
#include <unistd.h>

namespace umrl {

namespace fs = std::filesystem;

ShiftGrid make_shift_grid(int height, int width, int step)
{
    if (step < 1) throw std::invalid_argument("shift grid step must be >= 1");
    if (height < 1 || width < 1) throw std::invalid_argument("shift grid needs a positive image size");
    ShiftGrid g;
    g.step_rows = step;
    g.step_cols = step;
    for (int p = 0; p < height; p += step) {
        for (int q = 0; q < width; q += step) g.offsets.push_back({p, q});
    }
    return g;
}

void validate_grid(const ShiftGrid& grid, int height, int width)
{
    if (grid.offsets.empty() || !(grid.offsets.front() == ShiftOffset{0, 0})) {
        throw std::invalid_argument("shift grid must start with (0, 0)");
    }
    std::set<std::pair<int, int>> seen;
    for (const auto& o : grid.offsets) {
        if (o.p < 0 || o.p >= height || o.q < 0 || o.q >= width) {
            throw std::invalid_argument("shift (" + std::to_string(o.p) + ", " + std::to_string(o.q) +
                                        ") lies outside the image");
        }
        if (!seen.emplace(o.p, o.q).second) throw std::invalid_argument("shift grid repeats an offset");
    }
}

Image cycle_spin_restore(const Restorer& restorer, const Image& y, const ShiftGrid& grid, int workers)
{
    validate_grid(grid, y.height(), y.width());
    if (workers < 1) throw std::invalid_argument("cycle spinning needs at least one worker");
    const std::size_t n = grid.offsets.size();
    std::vector<Image> slots(n);

    auto run_one = [&](std::size_t i) {
        const ShiftOffset s = grid.offsets[i];
        Image restored = restorer(cyclic_shift(y, s.p, s.q));
        if (!restored.same_shape(y)) {
            throw std::invalid_argument("restorer changed the image shape from " + y.shape_string() + " to " +
                                        restored.shape_string());
        }
        slots[i] = cyclic_shift(restored, -s.p, -s.q);
    };

    const int threads = std::min<int>(workers, static_cast<int>(n));
    if (threads == 1) {
        for (std::size_t i = 0; i < n; ++i) run_one(i);
    } else {
        std::atomic<std::size_t> next{0};
        std::exception_ptr failure;
        std::mutex failure_mutex;
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t) {
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < n; i = next++) {
                    try {
                        run_one(i);
                    } catch (...) {
                        std::lock_guard lock(failure_mutex);
                        if (!failure) failure = std::current_exception();
                    }
                }
            });
        }
        for (auto& th : pool) th.join();
        if (failure) std::rethrow_exception(failure);
    }

    // Extended-precision accumulator: n identical doubles sum exactly for
    // n < 2^11, so shift-equivariant restorers reproduce their output bit for bit.
    std::vector<long double> acc(y.size(), 0.0L);
    for (const Image& s : slots) {
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += s.data()[i];
    }
    Image out(y.height(), y.width(), y.channels());
    const long double count = static_cast<long double>(n);
    for (std::size_t i = 0; i < acc.size(); ++i) out.data()[i] = static_cast<double>(acc[i] / count);
    return out;
}

Restorer external_restorer(std::string command)
{
    if (command.find("{in}") == std::string::npos || command.find("{out}") == std::string::npos) {
        throw std::invalid_argument("external restorer command needs {in} and {out} placeholders");
    }
    return [command = std::move(command)](const Image& img) {
        static std::atomic<unsigned> counter{0};
        const fs::path dir = fs::temp_directory_path();
        const std::string stem = "umrl-ext-" + std::to_string(::getpid()) + "-" + std::to_string(counter++);
        const fs::path in = dir / (stem + "-in.png");
        const fs::path out = dir / (stem + "-out.png");
        write_png(in, img, 16);

        std::string cmd = command;
        auto substitute = [&cmd](const std::string& key, const std::string& value) {
            for (auto pos = cmd.find(key); pos != std::string::npos; pos = cmd.find(key, pos + value.size())) {
                cmd.replace(pos, key.size(), value);
            }
        };
        substitute("{in}", "'" + in.string() + "'");
        substitute("{out}", "'" + out.string() + "'");
        const int status = std::system(cmd.c_str());
        fs::remove(in);
        if (status != 0) {
            fs::remove(out);
            throw std::runtime_error("external restorer exited with status " + std::to_string(status));
        }
        Image result = read_png(out);
        fs::remove(out);
        if (result.channels() == 1 && img.channels() == 3) {
            Image rgb(result.height(), result.width(), 3);
            for (int c = 0; c < 3; ++c) {
                for (int yy = 0; yy < result.height(); ++yy) {
                    for (int x = 0; x < result.width(); ++x) rgb.at(c, yy, x) = result.at(0, yy, x);
                }
            }
            return rgb;
        }
        return result;
    };
}

} // namespace umrl
