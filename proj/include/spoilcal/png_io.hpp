#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace spoilcal::png {

// 8-bit RGBA, non-interlaced, fixed compression settings so identical
// pixels give identical bytes.
void write_rgba(const std::filesystem::path& path, std::size_t width, std::size_t height,
                std::span<const std::uint8_t> rgba);

struct Image {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> rgba;
};

Image read_rgba(const std::filesystem::path& path);

} // namespace spoilcal::png
