#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "umrl/model.hpp"

namespace umrl {

inline constexpr const char* kCheckpointVersion = "umrl-ckpt-v1";

/// Training-schedule position stored alongside the weights.
struct ScheduleState {
    int epoch = 0;
    long step = 0;
    double lambda1 = 0.1;
    bool lambda1_latched = false;

    bool operator==(const ScheduleState&) const = default;
};

/// Serialized network. Tensor values are float32-representable, so a
/// save/load cycle reproduces them exactly.
struct Checkpoint {
    Variant variant = Variant::UMRL;
    ScheduleState schedule;
    std::vector<NamedTensor> tensors;

    static Checkpoint from_weights(const UmrlWeights& w, Variant variant, const ScheduleState& schedule);
    /// Builds a standard network and loads the tensors; throws on any
    /// name or shape mismatch.
    UmrlWeights to_weights() const;
};

/// Archive layout:
///   8 bytes   "UMRLCKPT"
///   4 bytes   manifest length N, little-endian
///   N bytes   UTF-8 JSON manifest {version, variant, schedule, tensors:[{name, shape, dtype}]}
///   payload   float32 little-endian values of every tensor in manifest order
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Reads only the named tensors of an archive (used for external feature
/// extractor weights). Variant and schedule are ignored.
std::vector<NamedTensor> load_tensor_archive(const std::filesystem::path& path);
void save_tensor_archive(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);

/// Rounds every value to the nearest float32.
nn::Tensor round_to_float(const nn::Tensor& t);

} // namespace umrl
