#pragma once

// 8-bit grayscale PNG encode/decode through libpng's simplified API.

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"
#include "types.hpp"

namespace avlm::png {

inline std::uint8_t to_byte(double v) {
    return static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(v, 0.0, 1.0)));
}

inline std::vector<unsigned char> encode(const Image& img) {
    std::vector<std::uint8_t> gray(img.size());
    for (std::size_t i = 0; i < img.size(); ++i) gray[i] = to_byte(img.pixels[i]);

    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(img.width);
    image.height = static_cast<png_uint_32>(img.height);
    image.format = PNG_FORMAT_GRAY;

    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&image, nullptr, &size, 0, gray.data(), 0, nullptr))
        throw std::runtime_error(std::string("png encode failed: ") + image.message);
    std::vector<unsigned char> out(size);
    if (!png_image_write_to_memory(&image, out.data(), &size, 0, gray.data(), 0, nullptr))
        throw std::runtime_error(std::string("png encode failed: ") + image.message);
    out.resize(size);
    return out;
}

// Any PNG libpng understands is converted to 8-bit gray, scaled to [0, 1].
inline Image decode(std::span<const unsigned char> bytes) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (bytes.empty() || !png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
        throw InvalidInput(std::string("undecodable PNG: ") + (bytes.empty() ? "empty payload" : image.message));
    image.format = PNG_FORMAT_GRAY;
    std::vector<std::uint8_t> gray(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, gray.data(), 0, nullptr)) {
        png_image_free(&image);
        throw InvalidInput(std::string("undecodable PNG: ") + image.message);
    }
    Image out(static_cast<int>(image.height), static_cast<int>(image.width));
    for (std::size_t i = 0; i < out.size(); ++i) out.pixels[i] = gray[i] / 255.0;
    return out;
}

}  // namespace avlm::png
