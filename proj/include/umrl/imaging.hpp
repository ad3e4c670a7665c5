#pragma once

#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "umrl/tensor.hpp"

namespace umrl {

/// Planar raster, channel-major (C x H x W). Values are nominally in [0, 1].
class Image {
public:
    Image() = default;
    Image(int height, int width, int channels, double fill = 0.0);
    Image(int height, int width, int channels, std::vector<double> data);

    int height() const { return height_; }
    int width() const { return width_; }
    int channels() const { return channels_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& at(int c, int y, int x) { return data_[index(c, y, x)]; }
    double at(int c, int y, int x) const { return data_[index(c, y, x)]; }

    const double* row(int c, int y) const { return data_.data() + index(c, y, 0); }
    double* row(int c, int y) { return data_.data() + index(c, y, 0); }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    bool same_shape(const Image& other) const
    {
        return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
    }
    std::string shape_string() const;

    bool operator==(const Image& other) const = default;

private:
    std::size_t index(int c, int y, int x) const
    {
        return (static_cast<std::size_t>(c) * height_ + y) * width_ + x;
    }

    int height_ = 0;
    int width_ = 0;
    int channels_ = 0;
    std::vector<double> data_;
};

/// Row/column displacement of a cyclic shift. Any sign; reduced modulo the
/// image size when applied.
struct ShiftOffset {
    int p = 0;
    int q = 0;

    bool operator==(const ShiftOffset&) const = default;
};

/// out(i, j) = in((i - p) mod H, (j - q) mod W). Exact, bit-identical values.
Image cyclic_shift(const Image& img, int p, int q);
inline Image cyclic_shift(const Image& img, ShiftOffset s) { return cyclic_shift(img, s.p, s.q); }

/// 2x2 area average. Throws std::invalid_argument on odd dimensions.
Image resize_half(const Image& img);

/// Bilinear 2x upsampling, half-pixel centers, edges clamped.
Image resize_double(const Image& img);

/// Pixelwise clamp to [0, 1].
Image clamp01(const Image& img);

/// Extends the bottom and right edges by mirror reflection about the last
/// row/column (the edge sample is not repeated).
Image pad_reflect(const Image& img, int bottom, int right);

/// Top-left height x width window.
Image crop(const Image& img, int height, int width);

/// Throws std::invalid_argument unless height and width are multiples of 16.
void require_model_size(const Image& img);

// Metrics operate on [0,1]-clamped copies of their inputs.
constexpr double kInfinitePsnr = std::numeric_limits<double>::infinity();

/// RGB PSNR in dB. Identical inputs give kInfinitePsnr.
double psnr(const Image& a, const Image& b, double peak = 1.0);

/// Mean SSIM over valid 11x11 Gaussian windows (sigma 1.5), averaged over channels.
double ssim(const Image& a, const Image& b);

/// "Inf" for the infinite sentinel, otherwise fixed two decimals.
std::string format_psnr(double db);

// Conversions to and from network tensors ({C, H, W}).
nn::Tensor to_tensor(const Image& img);
Image from_tensor(const nn::Tensor& t);

struct PngInfo {
    int bit_depth = 8;
};

/// Reads 8- or 16-bit grayscale/RGB PNG (alpha dropped, palette expanded).
/// Samples are divided by 2^bits - 1.
Image read_png(const std::filesystem::path& path, PngInfo* info = nullptr);

/// Writes an 8- or 16-bit PNG with round-to-nearest quantization after clamping to [0,1].
void write_png(const std::filesystem::path& path, const Image& img, int bit_depth = 8);

} // namespace umrl
