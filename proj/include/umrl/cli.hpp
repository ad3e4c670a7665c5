#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "umrl/trainer.hpp"

namespace umrl::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitRuntime = 3;

/// Bad flags, config or input paths. Maps to exit status 2.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Sectioned key = value file, ';' starts a comment. Keys outside a
/// section, unknown sections and unknown keys are rejected.
using ConfigSections = std::map<std::string, std::map<std::string, std::string>>;
ConfigSections read_config(const std::filesystem::path& path);

struct TrainJob {
    TrainConfig train;
    std::filesystem::path data;
    std::filesystem::path checkpoint;
    std::filesystem::path log; // CSV training log
    int log_every = 10;
};

struct AblateJob {
    TrainConfig train;
    std::filesystem::path train_data;
    std::filesystem::path test_data;
    std::filesystem::path report; // text table; the CSV goes next to it
    int cycle_step = 16;
    int workers = 1;
    int log_every = 10;
};

/// Relative paths resolve against the config file's directory. The
/// UMRL_SEED environment variable, when set, replaces the configured seed.
TrainJob load_train_job(const std::filesystem::path& config_path);
AblateJob load_ablate_job(const std::filesystem::path& config_path);

/// Entry point shared by the executable and the tests. args[0] is the
/// program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace umrl::cli
