#include "faceedit/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>

namespace faceedit {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

std::uint8_t to_byte(double v) {
    if (v <= 0.0) return 0;
    if (v >= 1.0) return 255;
    return static_cast<std::uint8_t>(std::lround(v * 255.0));
}

std::uint16_t to_u16(double v) {
    if (v <= 0.0) return 0;
    if (v >= 1.0) return 65535;
    return static_cast<std::uint16_t>(std::lround(v * 65535.0));
}

}  // namespace

Image Image::to_gray() const {
    if (channels == 1) return *this;
    if (channels != 3)
        throw Error(ErrorKind::parameter, "to_gray expects 1 or 3 channels");
    Image g(1, height, width);
    for (std::size_t y = 0; y < height; ++y)
        for (std::size_t x = 0; x < width; ++x)
            g.at(0, y, x) =
                0.299 * at(0, y, x) + 0.587 * at(1, y, x) + 0.114 * at(2, y, x);
    return g;
}

void save_png(const std::filesystem::path& path, const Image& img) {
    if (img.channels != 1 && img.channels != 3)
        throw Error(ErrorKind::parameter, "save_png expects 1 or 3 channels");
    FilePtr fp(std::fopen(path.string().c_str(), "wb"));
    if (!fp) throw Error(ErrorKind::io, "cannot open for write: " + path.string());

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info) throw Error(ErrorKind::io, "libpng init failed");
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw Error(ErrorKind::io, "libpng write failed: " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
                 static_cast<png_uint_32>(img.height), 8,
                 img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<std::uint8_t> row(img.width * img.channels);
    for (std::size_t y = 0; y < img.height; ++y) {
        for (std::size_t x = 0; x < img.width; ++x)
            for (std::size_t c = 0; c < img.channels; ++c)
                row[x * img.channels + c] = to_byte(img.at(c, y, x));
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Image load_png(const std::filesystem::path& path) {
    FilePtr fp(std::fopen(path.string().c_str(), "rb"));
    if (!fp) throw Error(ErrorKind::io, "cannot open: " + path.string());

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info) throw Error(ErrorKind::io, "libpng init failed");
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw Error(ErrorKind::io, "libpng read failed: " + path.string());
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    png_uint_32 w = png_get_image_width(png, info);
    png_uint_32 h = png_get_image_height(png, info);
    int bit_depth = png_get_bit_depth(png, info);
    int color_type = png_get_color_type(png, info);

    // Normalize everything to 8-bit gray or RGB.
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (bit_depth == 16) png_set_strip_16(png);
    if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    int channels = png_get_channels(png, info);
    if (channels != 1 && channels != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw Error(ErrorKind::io, "unsupported channel count in " + path.string());
    }

    Image img(static_cast<std::size_t>(channels), h, w);
    std::vector<std::uint8_t> row(static_cast<std::size_t>(w) * channels);
    for (png_uint_32 y = 0; y < h; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (png_uint_32 x = 0; x < w; ++x)
            for (int c = 0; c < channels; ++c)
                img.at(c, y, x) = row[x * channels + c] / 255.0;
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

void save_png16_gray(const std::filesystem::path& path,
                     const std::vector<double>& grid, std::size_t height,
                     std::size_t width) {
    if (grid.size() != height * width)
        throw Error(ErrorKind::dimension_mismatch, "grid size mismatch");
    FilePtr fp(std::fopen(path.string().c_str(), "wb"));
    if (!fp) throw Error(ErrorKind::io, "cannot open for write: " + path.string());

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info) throw Error(ErrorKind::io, "libpng init failed");
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw Error(ErrorKind::io, "libpng write failed: " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width),
                 static_cast<png_uint_32>(height), 16, PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<std::uint8_t> row(width * 2);
    for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
            std::uint16_t v = to_u16(grid[y * width + x]);
            row[2 * x] = static_cast<std::uint8_t>(v >> 8);  // network byte order
            row[2 * x + 1] = static_cast<std::uint8_t>(v & 0xff);
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

std::vector<double> load_png16_gray(const std::filesystem::path& path,
                                    std::size_t& height, std::size_t& width) {
    FilePtr fp(std::fopen(path.string().c_str(), "rb"));
    if (!fp) throw Error(ErrorKind::io, "cannot open: " + path.string());

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info) throw Error(ErrorKind::io, "libpng init failed");
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw Error(ErrorKind::io, "libpng read failed: " + path.string());
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    if (png_get_color_type(png, info) != PNG_COLOR_TYPE_GRAY ||
        png_get_bit_depth(png, info) != 16) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw Error(ErrorKind::io, "expected 16-bit gray PNG: " + path.string());
    }
    width = png_get_image_width(png, info);
    height = png_get_image_height(png, info);

    std::vector<double> grid(height * width);
    std::vector<std::uint8_t> row(width * 2);
    for (std::size_t y = 0; y < height; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (std::size_t x = 0; x < width; ++x) {
            std::uint16_t v = static_cast<std::uint16_t>((row[2 * x] << 8) | row[2 * x + 1]);
            grid[y * width + x] = v / 65535.0;
        }
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return grid;
}

}  // namespace faceedit
