#include "umrl/imaging.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>
#include <stdexcept>

#include "umrl/detail/resample.hpp"

namespace umrl {

namespace {

int wrap(long v, int n)
{
    const long r = v % n;
    return static_cast<int>(r < 0 ? r + n : r);
}

void require_same_shape(const Image& a, const Image& b, const char* what)
{
    if (!a.same_shape(b)) {
        throw std::invalid_argument(std::string(what) + ": shape mismatch " + a.shape_string() + " vs " +
                                    b.shape_string());
    }
}

double clamp_unit(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

std::array<double, 11> gaussian_window()
{
    std::array<double, 11> g{};
    double total = 0.0;
    for (int i = 0; i < 11; ++i) {
        const double d = i - 5;
        g[i] = std::exp(-(d * d) / (2.0 * 1.5 * 1.5));
        total += g[i];
    }
    for (double& v : g) v /= total;
    return g;
}

// Separable "valid" filtering of one plane with the 11-tap window.
std::vector<double> filter_valid(const std::vector<double>& plane, int h, int w, const std::array<double, 11>& g)
{
    const int oh = h - 10;
    const int ow = w - 10;
    std::vector<double> rows(static_cast<std::size_t>(h) * ow);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int k = 0; k < 11; ++k) s += g[k] * plane[static_cast<std::size_t>(y) * w + x + k];
            rows[static_cast<std::size_t>(y) * ow + x] = s;
        }
    }
    std::vector<double> out(static_cast<std::size_t>(oh) * ow);
    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int k = 0; k < 11; ++k) s += g[k] * rows[static_cast<std::size_t>(y + k) * ow + x];
            out[static_cast<std::size_t>(y) * ow + x] = s;
        }
    }
    return out;
}

struct FileCloser {
    void operator()(std::FILE* f) const
    {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

} // namespace

Image::Image(int height, int width, int channels, double fill)
    : height_(height), width_(width), channels_(channels)
{
    if (height < 1 || width < 1 || channels < 1) {
        throw std::invalid_argument("image dimensions must be positive, got " + std::to_string(height) + "x" +
                                    std::to_string(width) + "x" + std::to_string(channels));
    }
    data_.assign(static_cast<std::size_t>(height) * width * channels, fill);
}

Image::Image(int height, int width, int channels, std::vector<double> data) : Image(height, width, channels)
{
    if (data.size() != data_.size()) {
        throw std::invalid_argument("image data length " + std::to_string(data.size()) + " does not match " +
                                    shape_string());
    }
    data_ = std::move(data);
}

std::string Image::shape_string() const
{
    return std::to_string(height_) + "x" + std::to_string(width_) + "x" + std::to_string(channels_);
}

Image cyclic_shift(const Image& img, int p, int q)
{
    const int h = img.height();
    const int w = img.width();
    const int dp = wrap(p, h);
    const int dq = wrap(q, w);
    Image out(h, w, img.channels());
    for (int c = 0; c < img.channels(); ++c) {
        for (int y = 0; y < h; ++y) {
            const int sy = y - dp < 0 ? y - dp + h : y - dp;
            const double* src = img.row(c, sy);
            double* dst = out.row(c, y);
            // Two contiguous runs: columns [dq, w) come from [0, w - dq).
            std::copy(src, src + (w - dq), dst + dq);
            std::copy(src + (w - dq), src + w, dst);
        }
    }
    return out;
}

Image resize_half(const Image& img)
{
    if (img.height() % 2 != 0 || img.width() % 2 != 0) {
        throw std::invalid_argument("resize_half: odd dimension " + img.shape_string() +
                                    " is not a valid model input size");
    }
    Image out(img.height() / 2, img.width() / 2, img.channels());
    detail::area_half(img.data().data(), img.channels(), img.height(), img.width(), out.data().data());
    return out;
}

Image resize_double(const Image& img)
{
    Image out(img.height() * 2, img.width() * 2, img.channels());
    detail::bilinear_double(img.data().data(), img.channels(), img.height(), img.width(), out.data().data());
    return out;
}

Image clamp01(const Image& img)
{
    Image out = img;
    for (double& v : out.data()) v = clamp_unit(v);
    return out;
}

namespace {

int reflect_index(int i, int n)
{
    if (n == 1) return 0;
    const int period = 2 * (n - 1);
    i %= period;
    return i < n ? i : period - i;
}

} // namespace

Image pad_reflect(const Image& img, int bottom, int right)
{
    if (bottom < 0 || right < 0) throw std::invalid_argument("padding must be nonnegative");
    Image out(img.height() + bottom, img.width() + right, img.channels());
    for (int c = 0; c < img.channels(); ++c) {
        for (int y = 0; y < out.height(); ++y) {
            const double* src = img.row(c, reflect_index(y, img.height()));
            double* dst = out.row(c, y);
            for (int x = 0; x < out.width(); ++x) dst[x] = src[reflect_index(x, img.width())];
        }
    }
    return out;
}

Image crop(const Image& img, int height, int width)
{
    if (height < 1 || width < 1 || height > img.height() || width > img.width()) {
        throw std::invalid_argument("crop " + std::to_string(height) + "x" + std::to_string(width) +
                                    " exceeds image " + img.shape_string());
    }
    Image out(height, width, img.channels());
    for (int c = 0; c < img.channels(); ++c) {
        for (int y = 0; y < height; ++y) std::copy_n(img.row(c, y), width, out.row(c, y));
    }
    return out;
}

void require_model_size(const Image& img)
{
    if (img.height() % 16 != 0 || img.width() % 16 != 0) {
        throw std::invalid_argument("model input " + img.shape_string() +
                                    " must have height and width divisible by 16");
    }
}

double psnr(const Image& a, const Image& b, double peak)
{
    require_same_shape(a, b, "psnr");
    double se = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = clamp_unit(a.data()[i]) - clamp_unit(b.data()[i]);
        se += d * d;
    }
    if (se == 0.0) return kInfinitePsnr;
    const double mse = se / static_cast<double>(a.size());
    return 10.0 * std::log10(peak * peak / mse);
}

double ssim(const Image& a, const Image& b)
{
    require_same_shape(a, b, "ssim");
    const int h = a.height();
    const int w = a.width();
    if (std::min(h, w) < 11) {
        throw std::invalid_argument("ssim: image " + a.shape_string() + " is smaller than the 11x11 window");
    }
    constexpr double c1 = (0.01 * 1.0) * (0.01 * 1.0);
    constexpr double c2 = (0.03 * 1.0) * (0.03 * 1.0);
    const auto g = gaussian_window();
    const std::size_t plane = static_cast<std::size_t>(h) * w;

    double total = 0.0;
    for (int c = 0; c < a.channels(); ++c) {
        std::vector<double> x(plane), y(plane), xx(plane), yy(plane), xy(plane);
        for (std::size_t i = 0; i < plane; ++i) {
            x[i] = clamp_unit(a.data()[c * plane + i]);
            y[i] = clamp_unit(b.data()[c * plane + i]);
            xx[i] = x[i] * x[i];
            yy[i] = y[i] * y[i];
            xy[i] = x[i] * y[i];
        }
        const auto mx = filter_valid(x, h, w, g);
        const auto my = filter_valid(y, h, w, g);
        const auto sxx = filter_valid(xx, h, w, g);
        const auto syy = filter_valid(yy, h, w, g);
        const auto sxy = filter_valid(xy, h, w, g);
        double acc = 0.0;
        for (std::size_t i = 0; i < mx.size(); ++i) {
            const double vx = sxx[i] - mx[i] * mx[i];
            const double vy = syy[i] - my[i] * my[i];
            const double cov = sxy[i] - mx[i] * my[i];
            acc += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2)) /
                   ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
        }
        total += acc / static_cast<double>(mx.size());
    }
    return total / a.channels();
}

std::string format_psnr(double db)
{
    if (std::isinf(db) && db > 0) return "Inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", db);
    return buf;
}

nn::Tensor to_tensor(const Image& img)
{
    return nn::Tensor({img.channels(), img.height(), img.width()}, img.data());
}

Image from_tensor(const nn::Tensor& t)
{
    if (t.rank() != 3) throw std::invalid_argument("from_tensor: expected {C,H,W}, got " + t.shape_string());
    return Image(t.height(), t.width(), t.channels(), std::vector<double>(t.data(), t.data() + t.size()));
}

Image read_png(const std::filesystem::path& path, PngInfo* info)
{
    FilePtr file(std::fopen(path.c_str(), "rb"));
    if (!file) throw std::runtime_error("cannot open " + path.string());

    png_byte sig[8];
    if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
        throw std::runtime_error(path.string() + " is not a PNG file");
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop pinfo = png ? png_create_info_struct(png) : nullptr;
    if (!png || !pinfo) {
        png_destroy_read_struct(&png, &pinfo, nullptr);
        throw std::runtime_error("libpng initialization failed");
    }

    std::vector<png_byte> pixels;
    std::vector<png_bytep> rows;
    png_uint_32 width = 0;
    png_uint_32 height = 0;
    int depth = 0;
    int channels = 0;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &pinfo, nullptr);
        throw std::runtime_error("corrupt PNG data in " + path.string());
    }
    png_init_io(png, file.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, pinfo);

    const int color = png_get_color_type(png, pinfo);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, pinfo) < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, pinfo);

    width = png_get_image_width(png, pinfo);
    height = png_get_image_height(png, pinfo);
    depth = png_get_bit_depth(png, pinfo);
    channels = png_get_channels(png, pinfo);
    const std::size_t rowbytes = png_get_rowbytes(png, pinfo);
    pixels.resize(rowbytes * height);
    rows.resize(height);
    for (png_uint_32 y = 0; y < height; ++y) rows[y] = pixels.data() + y * rowbytes;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &pinfo, nullptr);

    if (channels != 1 && channels != 3) {
        throw std::runtime_error(path.string() + ": unsupported channel layout");
    }
    Image img(static_cast<int>(height), static_cast<int>(width), channels);
    const double scale = depth == 16 ? 65535.0 : 255.0;
    for (int y = 0; y < img.height(); ++y) {
        const png_byte* row = rows[y];
        for (int x = 0; x < img.width(); ++x) {
            for (int c = 0; c < channels; ++c) {
                const std::size_t s = static_cast<std::size_t>(x) * channels + c;
                const unsigned v = depth == 16 ? (static_cast<unsigned>(row[2 * s]) << 8) | row[2 * s + 1] : row[s];
                img.at(c, y, x) = v / scale;
            }
        }
    }
    if (info) info->bit_depth = depth;
    return img;
}

void write_png(const std::filesystem::path& path, const Image& img, int bit_depth)
{
    if (bit_depth != 8 && bit_depth != 16) throw std::invalid_argument("PNG bit depth must be 8 or 16");
    if (img.channels() != 1 && img.channels() != 3) {
        throw std::invalid_argument("PNG output needs 1 or 3 channels, got " + img.shape_string());
    }
    const int channels = img.channels();
    const int bytes = bit_depth / 8;
    const std::size_t rowbytes = static_cast<std::size_t>(img.width()) * channels * bytes;
    std::vector<png_byte> pixels(rowbytes * img.height());
    const double scale = bit_depth == 16 ? 65535.0 : 255.0;
    for (int y = 0; y < img.height(); ++y) {
        png_byte* row = pixels.data() + y * rowbytes;
        for (int x = 0; x < img.width(); ++x) {
            for (int c = 0; c < channels; ++c) {
                const auto v = static_cast<unsigned>(std::lround(clamp_unit(img.at(c, y, x)) * scale));
                const std::size_t s = static_cast<std::size_t>(x) * channels + c;
                if (bytes == 2) {
                    row[2 * s] = static_cast<png_byte>(v >> 8);
                    row[2 * s + 1] = static_cast<png_byte>(v & 0xff);
                } else {
                    row[s] = static_cast<png_byte>(v);
                }
            }
        }
    }
    std::vector<png_bytep> rows(img.height());
    for (int y = 0; y < img.height(); ++y) rows[y] = pixels.data() + y * rowbytes;

    FilePtr file(std::fopen(path.c_str(), "wb"));
    if (!file) throw std::runtime_error("cannot write " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop pinfo = png ? png_create_info_struct(png) : nullptr;
    if (!png || !pinfo) {
        png_destroy_write_struct(&png, &pinfo);
        throw std::runtime_error("libpng initialization failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &pinfo);
        throw std::runtime_error("failed writing PNG " + path.string());
    }
    png_init_io(png, file.get());
    png_set_IHDR(png, pinfo, static_cast<png_uint_32>(img.width()), static_cast<png_uint_32>(img.height()), bit_depth,
                 channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, pinfo);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &pinfo);
    if (std::fflush(file.get()) != 0) throw std::runtime_error("failed flushing " + path.string());
}

} // namespace umrl
