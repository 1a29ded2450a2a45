#pragma once

#include <cstdint>

#include "doconv/model_io.hpp"

namespace doconv {

// Procedural 10-class digit images: a 5x7 glyph per class, randomly rotated,
// scaled, shifted and noised onto a size x size canvas. Classes are balanced
// (label = index mod 10) and the output is deterministic given the seed.
DatasetHandle make_digit_dataset(std::size_t count, std::uint64_t seed, std::size_t size = 28);

}  // namespace doconv
