#include "spoilcal/png_io.hpp"

#include "spoilcal/error.hpp"

#include <png.h>

#include <cstdio>
#include <memory>

namespace spoilcal::png {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

} // namespace

void write_rgba(const std::filesystem::path& path, std::size_t width, std::size_t height,
                std::span<const std::uint8_t> rgba) {
    if (rgba.size() != width * height * 4) {
        throw FormatError("png: pixel buffer size does not match " + std::to_string(width) + "x" +
                          std::to_string(height));
    }
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw IoError("cannot open for writing: " + path.string());

    png_structp png_ptr = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info_ptr = png_ptr ? png_create_info_struct(png_ptr) : nullptr;
    if (!png_ptr || !info_ptr) {
        png_destroy_write_struct(&png_ptr, &info_ptr);
        throw IoError("png: cannot allocate encoder");
    }
    if (setjmp(png_jmpbuf(png_ptr))) {
        png_destroy_write_struct(&png_ptr, &info_ptr);
        throw IoError("png: encoding failed for " + path.string());
    }
    png_init_io(png_ptr, fp.get());
    png_set_compression_level(png_ptr, 6);
    png_set_IHDR(png_ptr, info_ptr, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
                 PNG_COLOR_TYPE_RGBA, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png_ptr, info_ptr);
    for (std::size_t row = 0; row < height; ++row) {
        png_write_row(png_ptr, const_cast<png_bytep>(rgba.data() + row * width * 4));
    }
    png_write_end(png_ptr, nullptr);
    png_destroy_write_struct(&png_ptr, &info_ptr);
    if (std::fflush(fp.get()) != 0) throw IoError("png: write failed for " + path.string());
}

Image read_rgba(const std::filesystem::path& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IoError("cannot open: " + path.string());
    png_structp png_ptr = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info_ptr = png_ptr ? png_create_info_struct(png_ptr) : nullptr;
    if (!png_ptr || !info_ptr) {
        png_destroy_read_struct(&png_ptr, &info_ptr, nullptr);
        throw IoError("png: cannot allocate decoder");
    }
    if (setjmp(png_jmpbuf(png_ptr))) {
        png_destroy_read_struct(&png_ptr, &info_ptr, nullptr);
        throw FormatError("png: decoding failed for " + path.string());
    }
    png_init_io(png_ptr, fp.get());
    png_read_info(png_ptr, info_ptr);
    png_set_expand(png_ptr);
    png_set_strip_16(png_ptr);
    png_set_gray_to_rgb(png_ptr);
    png_set_add_alpha(png_ptr, 0xFF, PNG_FILLER_AFTER);
    png_read_update_info(png_ptr, info_ptr);
    Image img;
    img.width = png_get_image_width(png_ptr, info_ptr);
    img.height = png_get_image_height(png_ptr, info_ptr);
    img.rgba.resize(img.width * img.height * 4);
    for (std::size_t row = 0; row < img.height; ++row) {
        png_read_row(png_ptr, img.rgba.data() + row * img.width * 4, nullptr);
    }
    png_read_end(png_ptr, nullptr);
    png_destroy_read_struct(&png_ptr, &info_ptr, nullptr);
    return img;
}

} // namespace spoilcal::png
