#pragma once

// File formats:
//   RGB images       8-bit RGB PNG.
//   Instance masks   16-bit grayscale PNG, pixel value = label (0 = background).
//                    8-bit grayscale masks are accepted on read.
//   Probability map  8-bit grayscale PNG with value round(255 p), or the raw
//                    float form below.
//
// Raw float probability map:
//   header  ASCII "PFM-like: <W> <H>" right-padded with spaces and terminated
//           by '\n' so the header length is a multiple of 16 bytes (exactly 16
//           whenever the text fits, e.g. "PFM-like: 64 64\n").
//   body    W*H IEEE-754 binary32 values, little-endian, row-major.

#include <png.h>

#include <bit>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "glandseg/error.hpp"
#include "glandseg/raster.hpp"

namespace glandseg {

namespace detail {

struct PngRaw {
    int width = 0;
    int height = 0;
    int bit_depth = 0;
    int channels = 0;
    std::vector<std::uint8_t> bytes;
    std::vector<png_bytep> rows;
};

struct PngErrorContext {
    std::jmp_buf jump;
    char message[256] = {0};
};

extern "C" {
inline void png_error_to_context(png_structp png, png_const_charp msg) {
    auto* ctx = static_cast<PngErrorContext*>(png_get_error_ptr(png));
    std::snprintf(ctx->message, sizeof ctx->message, "%s", msg);
    std::longjmp(ctx->jump, 1);
}
inline void png_ignore_warning(png_structp, png_const_charp) {}
}

// Plain-C style on purpose: libpng reports errors with longjmp, so no object
// with a destructor may live in this frame.
inline bool png_read_raw(std::FILE* fp, PngRaw& out, PngErrorContext& ctx) {
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &ctx, png_error_to_context,
                                             png_ignore_warning);
    if (!png) return false;
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        return false;
    }
    if (setjmp(ctx.jump)) {
        png_destroy_read_struct(&png, &info, nullptr);
        return false;
    }
    png_init_io(png, fp);
    png_read_info(png, info);
    const png_byte color = png_get_color_type(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    png_read_update_info(png, info);
    out.width = static_cast<int>(png_get_image_width(png, info));
    out.height = static_cast<int>(png_get_image_height(png, info));
    out.bit_depth = png_get_bit_depth(png, info);
    out.channels = png_get_channels(png, info);
    const std::size_t stride = png_get_rowbytes(png, info);
    out.bytes.resize(stride * static_cast<std::size_t>(out.height));
    out.rows.resize(static_cast<std::size_t>(out.height));
    for (int y = 0; y < out.height; ++y) out.rows[y] = out.bytes.data() + stride * y;
    png_read_image(png, out.rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return true;
}

inline bool png_write_raw(std::FILE* fp, PngRaw& in, int color_type, PngErrorContext& ctx) {
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &ctx, png_error_to_context,
                                              png_ignore_warning);
    if (!png) return false;
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        return false;
    }
    if (setjmp(ctx.jump)) {
        png_destroy_write_struct(&png, &info);
        return false;
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(in.width), static_cast<png_uint_32>(in.height),
                 in.bit_depth, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, in.rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return true;
}

class File {
public:
    File(const std::filesystem::path& path, const char* mode) : fp_(std::fopen(path.c_str(), mode)) {}
    ~File() {
        if (fp_) std::fclose(fp_);
    }
    File(const File&) = delete;
    File& operator=(const File&) = delete;
    std::FILE* get() const noexcept { return fp_; }
    explicit operator bool() const noexcept { return fp_ != nullptr; }

private:
    std::FILE* fp_;
};

inline PngRaw read_png(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw DataError("file not found: " + path.string());
    File f(path, "rb");
    if (!f) throw DataError("cannot open: " + path.string());
    PngRaw raw;
    PngErrorContext ctx;
    if (!png_read_raw(f.get(), raw, ctx))
        throw DataError("cannot decode PNG " + path.string() + ": " + ctx.message);
    return raw;
}

inline void write_png(const std::filesystem::path& path, PngRaw& raw, int color_type) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    File f(path, "wb");
    if (!f) throw DataError("cannot open for writing: " + path.string());
    raw.rows.resize(static_cast<std::size_t>(raw.height));
    const std::size_t stride = raw.bytes.size() / static_cast<std::size_t>(raw.height);
    for (int y = 0; y < raw.height; ++y) raw.rows[y] = raw.bytes.data() + stride * y;
    PngErrorContext ctx;
    if (!png_write_raw(f.get(), raw, color_type, ctx))
        throw DataError("cannot encode PNG " + path.string() + ": " + ctx.message);
}

}  // namespace detail

/// Loads an 8-bit RGB PNG (palette images are expanded). Pixel-exact; no
/// colour management is applied.
inline RgbImage load_image(const std::filesystem::path& path) {
    auto raw = detail::read_png(path);
    if (raw.bit_depth != 8)
        throw UnsupportedBitDepth(path.string() + ": expected 8-bit samples, found " +
                                  std::to_string(raw.bit_depth) + "-bit");
    if (raw.channels != 3)
        throw UnsupportedChannels(path.string() + ": expected 3 channels (RGB), found " +
                                  std::to_string(raw.channels));
    RgbImage img(raw.width, raw.height);
    auto px = img.pixels();
    for (std::size_t i = 0; i < px.size(); ++i)
        px[i] = {raw.bytes[3 * i], raw.bytes[3 * i + 1], raw.bytes[3 * i + 2]};
    return img;
}

inline void save_image(const std::filesystem::path& path, const RgbImage& img) {
    detail::PngRaw raw;
    raw.width = img.width();
    raw.height = img.height();
    raw.bit_depth = 8;
    raw.bytes.resize(img.size() * 3);
    auto px = img.pixels();
    for (std::size_t i = 0; i < px.size(); ++i)
        for (int c = 0; c < 3; ++c) raw.bytes[3 * i + c] = px[i][c];
    detail::write_png(path, raw, PNG_COLOR_TYPE_RGB);
}

/// Reads a grayscale label PNG (16-bit, or 8-bit for convenience).
inline InstanceMask load_mask(const std::filesystem::path& path) {
    auto raw = detail::read_png(path);
    if (raw.channels != 1)
        throw UnsupportedChannels(path.string() + ": instance masks must be single-channel, found " +
                                  std::to_string(raw.channels));
    if (raw.bit_depth != 8 && raw.bit_depth != 16)
        throw UnsupportedBitDepth(path.string() + ": instance masks must be 8- or 16-bit, found " +
                                  std::to_string(raw.bit_depth) + "-bit");
    InstanceMask mask(raw.width, raw.height);
    auto px = mask.pixels();
    for (std::size_t i = 0; i < px.size(); ++i) {
        px[i] = raw.bit_depth == 16 ? (raw.bytes[2 * i] << 8) | raw.bytes[2 * i + 1] : raw.bytes[i];
    }
    return mask;
}

inline void save_mask(const std::filesystem::path& path, const InstanceMask& mask) {
    detail::PngRaw raw;
    raw.width = mask.width();
    raw.height = mask.height();
    raw.bit_depth = 16;
    raw.bytes.resize(mask.size() * 2);
    auto px = mask.pixels();
    for (std::size_t i = 0; i < px.size(); ++i) {
        if (px[i] < 0 || px[i] > 65535)
            throw DataError("label " + std::to_string(px[i]) + " does not fit a 16-bit mask");
        raw.bytes[2 * i] = static_cast<std::uint8_t>(px[i] >> 8);
        raw.bytes[2 * i + 1] = static_cast<std::uint8_t>(px[i] & 0xff);
    }
    detail::write_png(path, raw, PNG_COLOR_TYPE_GRAY);
}

/// Writes a [0,1] map as 8-bit grayscale, value = round(255 p).
inline void save_probability_png(const std::filesystem::path& path, const ProbabilityMap& p) {
    detail::PngRaw raw;
    raw.width = p.width();
    raw.height = p.height();
    raw.bit_depth = 8;
    raw.bytes.resize(p.size());
    auto px = p.pixels();
    for (std::size_t i = 0; i < px.size(); ++i) {
        const double v = std::clamp(static_cast<double>(px[i]), 0.0, 1.0);
        raw.bytes[i] = static_cast<std::uint8_t>(std::lround(255.0 * v));
    }
    detail::write_png(path, raw, PNG_COLOR_TYPE_GRAY);
}

inline ProbabilityMap load_probability_png(const std::filesystem::path& path) {
    auto raw = detail::read_png(path);
    if (raw.channels != 1) throw UnsupportedChannels(path.string() + ": expected grayscale");
    if (raw.bit_depth != 8) throw UnsupportedBitDepth(path.string() + ": expected 8-bit");
    ProbabilityMap p(raw.width, raw.height);
    auto px = p.pixels();
    for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<float>(raw.bytes[i] / 255.0);
    return p;
}

inline std::string probability_raw_header(int width, int height) {
    std::string text = "PFM-like: " + std::to_string(width) + " " + std::to_string(height);
    const std::size_t total = ((text.size() + 1 + 15) / 16) * 16;
    text.resize(total - 1, ' ');
    text.push_back('\n');
    return text;
}

inline std::string encode_probability_raw(const ProbabilityMap& p) {
    std::string out = probability_raw_header(p.width(), p.height());
    const std::size_t header = out.size();
    out.resize(header + p.size() * 4);
    auto px = p.pixels();
    for (std::size_t i = 0; i < px.size(); ++i) {
        auto bits = std::bit_cast<std::uint32_t>(px[i]);
        for (int b = 0; b < 4; ++b)
            out[header + 4 * i + b] = static_cast<char>((bits >> (8 * b)) & 0xff);
    }
    return out;
}

inline ProbabilityMap decode_probability_raw(const std::string& bytes) {
    const auto nl = bytes.find('\n');
    if (nl == std::string::npos || bytes.compare(0, 10, "PFM-like: ") != 0)
        throw DataError("not a PFM-like probability map");
    if ((nl + 1) % 16 != 0) throw DataError("PFM-like header length is not a multiple of 16");
    std::istringstream hs(bytes.substr(10, nl - 10));
    int w = 0, h = 0;
    if (!(hs >> w >> h) || w < 1 || h < 1) throw DataError("bad PFM-like dimensions");
    const std::size_t header = nl + 1;
    const std::size_t n = static_cast<std::size_t>(w) * h;
    if (bytes.size() != header + 4 * n) throw DataError("PFM-like body length mismatch");
    ProbabilityMap p(w, h);
    auto px = p.pixels();
    for (std::size_t i = 0; i < n; ++i) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b)
            bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[header + 4 * i + b])) << (8 * b);
        px[i] = std::bit_cast<float>(bits);
    }
    return p;
}

inline void save_probability_raw(const std::filesystem::path& path, const ProbabilityMap& p) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open for writing: " + path.string());
    const auto bytes = encode_probability_raw(p);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline ProbabilityMap load_probability_raw(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("file not found: " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return decode_probability_raw(bytes);
}

}  // namespace glandseg
