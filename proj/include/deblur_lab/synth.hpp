#pragma once

// Procedural sharp images for fixtures and synthetic corpora.

#include <cstddef>
#include <cstdint>

#include "deblur_lab/image.hpp"

namespace deblur {

// Dark pseudo-glyph rows on a light page: high-contrast edges at several
// orientations, the hard case for motion blur.
Image render_text_image(std::size_t height, std::size_t width, std::uint64_t seed);

// Smooth two-tone gradient background, a handful of flat shapes and a short
// text block; closer to the intensity statistics of photographs.
Image render_scene_image(std::size_t height, std::size_t width, std::uint64_t seed);

}  // namespace deblur
