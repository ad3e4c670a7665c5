#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "umrl/checkpoint.hpp"
#include "umrl/cyclespin.hpp"
#include "umrl/losses.hpp"
#include "umrl/raindata.hpp"

namespace umrl {

struct TrainConfig {
    int epochs = 30;
    int batch_size = 1;
    /// Optimizer steps per epoch. 0 means one pass over the dataset.
    int steps_per_epoch = 0;
    double lr_initial = 1e-3;
    double lr_after_epoch10 = 1e-4;
    int lr_switch_epoch = 10; // last epoch trained at lr_initial
    double lambda1_initial = 0.1;
    double lambda1_switched = 0.03;
    double lambda2 = 1.0;
    double conf_switch_threshold = 0.8;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;
    Variant variant = Variant::UMRL;
    bool augment = true; // random cyclic shift per step
    /// Square training window taken after the shift (a random cyclic crop).
    /// 0 trains on full images; otherwise a multiple of 16.
    int crop = 0;
    /// Checkpoint-format archive with conv1/conv2 tensors. Empty: random
    /// extractor seeded from `seed`.
    std::filesystem::path feature_weights;
    /// Where a non-finite loss dumps the offending batch. Empty: temp dir.
    std::filesystem::path dump_dir;

    void validate() const;
};

/// Learning rate for a 1-based epoch.
double lr_schedule(int epoch, const TrainConfig& cfg);

/// One-way latch: lambda1_switched once any mean confidence exceeded the
/// threshold, else `current`.
double lambda1_schedule(double mean_confidence, double current, const TrainConfig& cfg);

/// Adam over a fixed parameter list.
class Adam {
public:
    Adam(std::vector<nn::Var> params, double beta1, double beta2, double eps);

    /// Applies one update from the parameters' accumulated gradients.
    void step(double lr);
    void zero_grad();
    long steps() const { return t_; }

private:
    std::vector<nn::Var> params_;
    std::vector<nn::Tensor> m_;
    std::vector<nn::Tensor> v_;
    double beta1_;
    double beta2_;
    double eps_;
    long t_ = 0;
};

struct StepLog {
    long step = 0; // 1-based
    int epoch = 0; // 1-based
    double l1 = 0.0;
    double log_conf = 0.0;
    double perceptual = 0.0;
    double total = 0.0;
    double mean_conf = 0.0;    // over c_x1, c_x2, c_x4
    double mean_conf_x1 = 0.0;
    double mean_conf_x4 = 0.0;
    double lambda1 = 0.0;
    double lr = 0.0;
};

inline constexpr const char* kTrainLogHeader = "step,epoch,L_l,L_c,L_p,total,mean_conf,lambda1,lr";
std::string train_log_line(const StepLog& s);

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<StepLog> history;
};

/// Raised on a non-finite loss or gradient. The batch and loss terms have
/// been written to `dump`.
class TrainingAborted : public std::runtime_error {
public:
    TrainingAborted(const std::string& what, std::filesystem::path dump)
        : std::runtime_error(what), dump_(std::move(dump))
    {
    }
    const std::filesystem::path& dump() const { return dump_; }

private:
    std::filesystem::path dump_;
};

using StepCallback = std::function<void(const StepLog&)>;

/// Deterministic given cfg.seed and the dataset order. Pairs are visited in
/// dataset order, cycling when steps_per_epoch exceeds the dataset size.
TrainResult train(const std::vector<RainyPair>& dataset, const TrainConfig& cfg, const StepCallback& on_step = {});

struct EvalRow {
    std::string name;
    double psnr = 0.0;
    double ssim = 0.0;
};

struct EvalReport {
    std::vector<EvalRow> rows;
    double mean_psnr = 0.0; // +inf if any row is +inf
    double mean_ssim = 0.0;

    static EvalReport from_rows(std::vector<EvalRow> rows);
    std::string render_text() const;
    std::string render_csv() const;
};

/// "PSNR|SSIM" with PSNR to two decimals (or "Inf") and SSIM to three.
std::string format_cell(double psnr_db, double ssim_value);

struct EvalOptions {
    bool cycle_spin = false;
    int step = 50;
    int workers = 1;
};

/// Scores restorer(rainy) against clean for every pair, in dataset order.
EvalReport evaluate_restorer(const Restorer& restorer, const std::vector<RainyPair>& dataset,
                             const EvalOptions& opts = {});
EvalReport evaluate(const Checkpoint& ckpt, const std::vector<RainyPair>& dataset, const EvalOptions& opts = {});
/// Scores already restored images against references with matching names.
EvalReport evaluate_images(const std::vector<std::string>& names, const std::vector<Image>& predicted,
                           const std::vector<Image>& reference);

struct AblationRow {
    std::string label; // "Rainy", "BN", "BN+RN", "UMRL"
    EvalReport plain;
    EvalReport cycle_spun;
};

struct AblationResult {
    std::vector<AblationRow> rows;
    std::vector<TrainResult> runs; // BN, BN+RN, UMRL

    std::string render_text() const;
    std::string render_csv() const;
    /// mean PSNR of UMRL >= BN+RN >= BN on the plain column.
    bool ordering_holds() const;
    /// Largest drop in mean PSNR from the plain to the cycle-spun column.
    double worst_cycle_spin_drop() const;
};

struct AblationOptions {
    int cycle_step = 16;
    int workers = 1;
};

/// Trains BN, BN+RN and UMRL under cfg (variant overridden) and evaluates
/// each with and without cycle spinning on the test set.
AblationResult ablate(const std::vector<RainyPair>& train_set, const std::vector<RainyPair>& test_set,
                      const TrainConfig& cfg, const AblationOptions& opts = {}, const StepCallback& on_step = {});

} // namespace umrl
