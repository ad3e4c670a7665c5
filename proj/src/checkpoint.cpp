#include "umrl/checkpoint.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace umrl {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr std::array<char, 8> kMagic{'U', 'M', 'R', 'L', 'C', 'K', 'P', 'T'};

void put_u32(std::ostream& out, std::uint32_t v)
{
    const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                       static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    out.write(b, 4);
}

std::uint32_t get_u32(const unsigned char* b)
{
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_archive(const fs::path& path, const json& header_extra, const std::vector<NamedTensor>& tensors)
{
    json manifest;
    manifest["version"] = kCheckpointVersion;
    for (const auto& [k, v] : header_extra.items()) manifest[k] = v;
    auto& list = manifest["tensors"] = json::array();
    for (const auto& t : tensors) list.push_back({{"name", t.name}, {"shape", t.value.shape()}, {"dtype", "float32"}});
    const std::string text = manifest.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
    out.write(kMagic.data(), kMagic.size());
    put_u32(out, static_cast<std::uint32_t>(text.size()));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& t : tensors) {
        for (double v : t.value.values()) {
            const float f = static_cast<float>(v);
            std::uint32_t bits;
            std::memcpy(&bits, &f, 4);
            put_u32(out, bits);
        }
    }
    out.flush();
    if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

std::pair<json, std::vector<NamedTensor>> read_archive(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
    const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic.data(), kMagic.size()) != 0) {
        throw std::runtime_error(path.string() + " is not a checkpoint archive");
    }
    const std::uint32_t len = get_u32(bytes.data() + 8);
    if (bytes.size() < 12 + static_cast<std::size_t>(len)) throw std::runtime_error("truncated checkpoint manifest");
    json manifest;
    try {
        manifest = json::parse(bytes.begin() + 12, bytes.begin() + 12 + len);
    } catch (const json::exception& e) {
        throw std::runtime_error("corrupt checkpoint manifest: " + std::string(e.what()));
    }
    if (manifest.value("version", "") != kCheckpointVersion) {
        throw std::runtime_error("unsupported checkpoint version '" + manifest.value("version", "") + "'");
    }

    std::vector<NamedTensor> tensors;
    std::size_t offset = 12 + len;
    for (const auto& entry : manifest.at("tensors")) {
        if (entry.at("dtype") != "float32") throw std::runtime_error("unsupported tensor dtype " + entry.at("dtype").dump());
        nn::Tensor t(entry.at("shape").get<std::vector<int>>());
        if (bytes.size() < offset + 4 * t.size()) throw std::runtime_error("truncated checkpoint payload");
        for (std::size_t i = 0; i < t.size(); ++i) {
            const std::uint32_t bits = get_u32(bytes.data() + offset + 4 * i);
            float f;
            std::memcpy(&f, &bits, 4);
            t[i] = f;
        }
        offset += 4 * t.size();
        tensors.push_back({entry.at("name").get<std::string>(), std::move(t)});
    }
    if (offset != bytes.size()) throw std::runtime_error("checkpoint has trailing bytes");
    return {std::move(manifest), std::move(tensors)};
}

} // namespace

nn::Tensor round_to_float(const nn::Tensor& t)
{
    nn::Tensor out = t;
    for (double& v : out.values()) v = static_cast<float>(v);
    return out;
}

Checkpoint Checkpoint::from_weights(const UmrlWeights& w, Variant variant, const ScheduleState& schedule)
{
    Checkpoint c;
    c.variant = variant;
    c.schedule = schedule;
    for (auto& t : w.state()) c.tensors.push_back({t.name, round_to_float(t.value)});
    return c;
}

UmrlWeights Checkpoint::to_weights() const
{
    UmrlWeights w = UmrlWeights::create(0);
    w.load_state(tensors);
    return w;
}

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt)
{
    json extra;
    extra["variant"] = to_string(ckpt.variant);
    extra["schedule"] = {{"epoch", ckpt.schedule.epoch},
                         {"step", ckpt.schedule.step},
                         {"lambda1", ckpt.schedule.lambda1},
                         {"lambda1_latched", ckpt.schedule.lambda1_latched}};
    write_archive(path, extra, ckpt.tensors);
}

Checkpoint load_checkpoint(const fs::path& path)
{
    auto [manifest, tensors] = read_archive(path);
    Checkpoint c;
    try {
        c.variant = parse_variant(manifest.at("variant").get<std::string>());
        const auto& s = manifest.at("schedule");
        c.schedule.epoch = s.at("epoch").get<int>();
        c.schedule.step = s.at("step").get<long>();
        c.schedule.lambda1 = s.at("lambda1").get<double>();
        c.schedule.lambda1_latched = s.at("lambda1_latched").get<bool>();
    } catch (const json::exception& e) {
        throw std::runtime_error("checkpoint " + path.string() + " lacks schedule metadata: " + e.what());
    }
    c.tensors = std::move(tensors);
    return c;
}

std::vector<NamedTensor> load_tensor_archive(const fs::path& path) { return read_archive(path).second; }

void save_tensor_archive(const fs::path& path, const std::vector<NamedTensor>& tensors)
{
    write_archive(path, json::object(), tensors);
}

} // namespace umrl
