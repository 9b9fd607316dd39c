#include "bsdn/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>

#include "bsdn/errors.hpp"

namespace bsdn {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const noexcept { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

Tensor read_png(const std::filesystem::path& path) {
    FilePtr file(std::fopen(path.string().c_str(), "rb"));
    if (!file) {
        throw IoError("cannot open image " + path.string());
    }
    png_byte header[8];
    if (std::fread(header, 1, 8, file.get()) != 8 || png_sig_cmp(header, 0, 8) != 0) {
        throw InputError("not a PNG file: " + path.string());
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("libpng initialization failed");
    }

    int width = 0;
    int height = 0;
    int channels = 0;
    int depth = 0;
    std::vector<png_byte> pixels;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw InputError("corrupt PNG file: " + path.string());
    }
    png_init_io(png, file.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    const int color = png_get_color_type(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);

    width = static_cast<int>(png_get_image_width(png, info));
    height = static_cast<int>(png_get_image_height(png, info));
    channels = png_get_channels(png, info);
    depth = png_get_bit_depth(png, info);
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    pixels.resize(rowbytes * static_cast<std::size_t>(height));
    rows.resize(static_cast<std::size_t>(height));
    for (int y = 0; y < height; ++y) rows[static_cast<std::size_t>(y)] = pixels.data() + rowbytes * y;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    if (channels != 1 && channels != 3) {
        throw InputError("unsupported PNG channel layout in " + path.string());
    }
    Tensor out(Shape{1, channels, height, width});
    const double scale = depth == 16 ? 65535.0 : 255.0;
    for (int y = 0; y < height; ++y) {
        const png_byte* row = rows[static_cast<std::size_t>(y)];
        for (int x = 0; x < width; ++x) {
            for (int c = 0; c < channels; ++c) {
                const std::size_t k = static_cast<std::size_t>(x) * channels + c;
                const unsigned code = depth == 16 ? (static_cast<unsigned>(row[2 * k]) << 8) | row[2 * k + 1] : row[k];
                out.at(0, c, y, x) = static_cast<float>(code / scale);
            }
        }
    }
    return out;
}

void write_png(const std::filesystem::path& path, const Tensor& image, int bit_depth) {
    const Shape& s = image.shape();
    if (s.n != 1 || (s.c != 1 && s.c != 3)) {
        throw DimensionError("write_png: expected [1, 1|3, H, W], got " + s.str());
    }
    if (bit_depth != 8 && bit_depth != 16) {
        throw ParameterError("write_png: bit depth must be 8 or 16");
    }
    const int bytes_per = bit_depth / 8;
    const double scale = bit_depth == 16 ? 65535.0 : 255.0;
    const std::size_t rowbytes = static_cast<std::size_t>(s.w) * s.c * bytes_per;
    std::vector<png_byte> pixels(rowbytes * static_cast<std::size_t>(s.h));
    for (int y = 0; y < s.h; ++y) {
        for (int x = 0; x < s.w; ++x) {
            for (int c = 0; c < s.c; ++c) {
                const double v = std::clamp(static_cast<double>(image.at(0, c, y, x)), 0.0, 1.0);
                const auto code = static_cast<unsigned>(std::lround(v * scale));
                const std::size_t k = rowbytes * y + (static_cast<std::size_t>(x) * s.c + c) * bytes_per;
                if (bit_depth == 16) {
                    pixels[k] = static_cast<png_byte>(code >> 8);
                    pixels[k + 1] = static_cast<png_byte>(code & 0xFFu);
                } else {
                    pixels[k] = static_cast<png_byte>(code);
                }
            }
        }
    }

    FilePtr file(std::fopen(path.string().c_str(), "wb"));
    if (!file) {
        throw IoError("cannot write image " + path.string());
    }
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng initialization failed");
    }
    std::vector<png_bytep> rows(static_cast<std::size_t>(s.h));
    for (int y = 0; y < s.h; ++y) rows[static_cast<std::size_t>(y)] = pixels.data() + rowbytes * y;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("failed writing PNG " + path.string());
    }
    png_init_io(png, file.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(s.w), static_cast<png_uint_32>(s.h), bit_depth,
                 s.c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) {
        throw IoError("not a directory: " + dir.string());
    }
    std::vector<std::filesystem::path> out;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".png") {
            out.push_back(entry.path());
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace bsdn
