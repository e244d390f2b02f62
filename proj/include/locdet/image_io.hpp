#pragma once

#include <string>

#include "locdet/raster.hpp"

namespace locdet {

// Supported containers: 8/16-bit single-channel PNG (".png") and a plain
// text raster (any other extension): first line "w h", then w*h
// whitespace-separated reals in row-major order.
//
// PNG intensities are scaled to [0,1] on load (v/255 or v/65535).
// Multi-channel or palette PNG input is rejected.
GreyImage load_image(const std::string& path);
void save_image_png8(const GreyImage& img, const std::string& path);
void save_image_png16(const GreyImage& img, const std::string& path);
void save_image_text(const GreyImage& img, const std::string& path);
// Dispatches on extension: .png -> 8-bit PNG, otherwise text.
void save_image(const GreyImage& img, const std::string& path);

// Masks use fixed byte codes: 0 = Background, 128 = Object, 255 = Confuser.
// Any other pixel value is an error naming the value and its position.
// Text masks carry the same codes as reals.
LabelMask load_mask(const std::string& path);
void save_mask(const LabelMask& mask, const std::string& path);

}  // namespace locdet
