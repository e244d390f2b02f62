#include "locdet/image_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>
#include <vector>

namespace locdet {

namespace {

bool has_png_extension(const std::string& path) {
  auto dot = path.find_last_of('.');
  if (dot == std::string::npos) return false;
  std::string ext = path.substr(dot);
  return ext == ".png" || ext == ".PNG";
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

// Raw 8- or 16-bit grayscale rows straight out of the PNG decoder.
struct RawPng {
  int width = 0, height = 0, bit_depth = 0;
  std::vector<uint16_t> pixels;  // native values, 0..255 or 0..65535
};

RawPng read_grey_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw std::runtime_error("cannot open file: " + path);

  png_byte header[8];
  if (std::fread(header, 1, 8, fp.get()) != 8 || png_sig_cmp(header, 0, 8))
    throw std::runtime_error("not a PNG file: " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("png_create_info_struct failed");
  }
  std::vector<png_bytep> row_ptrs;
  std::vector<png_byte> buffer;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("PNG decode error: " + path);
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  int color_type = png_get_color_type(png, info);
  int bit_depth = png_get_bit_depth(png, info);
  int width = static_cast<int>(png_get_image_width(png, info));
  int height = static_cast<int>(png_get_image_height(png, info));

  if (color_type != PNG_COLOR_TYPE_GRAY) {
    png_destroy_read_struct(&png, &info, nullptr);
    if (color_type == PNG_COLOR_TYPE_PALETTE)
      throw std::runtime_error("unsupported palette PNG: " + path);
    throw std::runtime_error("multi-channel input: " + path);
  }
  if (bit_depth != 8 && bit_depth != 16) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("unsupported bit depth " + std::to_string(bit_depth) +
                             ": " + path);
  }
  if (bit_depth == 16) png_set_swap(png);  // big-endian on the wire
  png_read_update_info(png, info);

  size_t rowbytes = png_get_rowbytes(png, info);
  buffer.resize(rowbytes * height);
  row_ptrs.resize(height);
  for (int y = 0; y < height; ++y) row_ptrs[y] = buffer.data() + rowbytes * y;
  png_read_image(png, row_ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  RawPng out;
  out.width = width;
  out.height = height;
  out.bit_depth = bit_depth;
  out.pixels.resize(static_cast<size_t>(width) * height);
  if (bit_depth == 8) {
    for (size_t i = 0; i < out.pixels.size(); ++i) out.pixels[i] = buffer[i];
  } else {
    std::memcpy(out.pixels.data(), buffer.data(), out.pixels.size() * 2);
  }
  return out;
}

void write_grey_png(const std::string& path, int width, int height, int bit_depth,
                    const std::vector<uint16_t>& pixels) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw std::runtime_error("cannot write file: " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("PNG encode error: " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, width, height, bit_depth, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (bit_depth == 16) png_set_swap(png);

  std::vector<png_byte> row(static_cast<size_t>(width) * (bit_depth / 8));
  for (int y = 0; y < height; ++y) {
    if (bit_depth == 8) {
      for (int x = 0; x < width; ++x)
        row[x] = static_cast<png_byte>(pixels[static_cast<size_t>(y) * width + x]);
    } else {
      std::memcpy(row.data(), pixels.data() + static_cast<size_t>(y) * width,
                  static_cast<size_t>(width) * 2);
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

GreyImage load_image_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  int w = 0, h = 0;
  if (!(in >> w >> h) || w < 1 || h < 1)
    throw std::runtime_error("bad text raster header: " + path);
  GreyImage img(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (!(in >> img(x, y)))
        throw std::runtime_error("truncated text raster: " + path);
  return img;
}

}  // namespace

GreyImage load_image(const std::string& path) {
  if (!has_png_extension(path)) return load_image_text(path);
  RawPng raw = read_grey_png(path);
  GreyImage img(raw.width, raw.height);
  double scale = raw.bit_depth == 8 ? 255.0 : 65535.0;
  for (int y = 0; y < raw.height; ++y)
    for (int x = 0; x < raw.width; ++x)
      img(x, y) = raw.pixels[static_cast<size_t>(y) * raw.width + x] / scale;
  return img;
}

void save_image_png8(const GreyImage& img, const std::string& path) {
  std::vector<uint16_t> px(img.size());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      double v = std::min(1.0, std::max(0.0, img(x, y)));
      px[static_cast<size_t>(y) * img.width() + x] =
          static_cast<uint16_t>(std::lround(v * 255.0));
    }
  write_grey_png(path, img.width(), img.height(), 8, px);
}

void save_image_png16(const GreyImage& img, const std::string& path) {
  std::vector<uint16_t> px(img.size());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      double v = std::min(1.0, std::max(0.0, img(x, y)));
      px[static_cast<size_t>(y) * img.width() + x] =
          static_cast<uint16_t>(std::lround(v * 65535.0));
    }
  write_grey_png(path, img.width(), img.height(), 16, px);
}

void save_image_text(const GreyImage& img, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out << img.width() << " " << img.height() << "\n";
  char buf[40];
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      std::snprintf(buf, sizeof buf, "%.17g", img(x, y));
      out << buf << (x + 1 == img.width() ? "\n" : " ");
    }
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

void save_image(const GreyImage& img, const std::string& path) {
  if (has_png_extension(path))
    save_image_png8(img, path);
  else
    save_image_text(img, path);
}

namespace {

PixelLabel decode_mask_value(double v, int x, int y, const std::string& path) {
  if (v == 0) return PixelLabel::Background;
  if (v == 128) return PixelLabel::Object;
  if (v == 255) return PixelLabel::Confuser;
  std::ostringstream msg;
  msg << "invalid mask value " << v << " at (" << x << ", " << y << "): " << path;
  throw std::runtime_error(msg.str());
}

}  // namespace

LabelMask load_mask(const std::string& path) {
  if (has_png_extension(path)) {
    RawPng raw = read_grey_png(path);
    if (raw.bit_depth != 8)
      throw std::runtime_error("unsupported bit depth " + std::to_string(raw.bit_depth) +
                               " for mask: " + path);
    LabelMask mask(raw.width, raw.height);
    for (int y = 0; y < raw.height; ++y)
      for (int x = 0; x < raw.width; ++x)
        mask(x, y) = decode_mask_value(
            raw.pixels[static_cast<size_t>(y) * raw.width + x], x, y, path);
    return mask;
  }
  GreyImage img = load_image_text(path);
  LabelMask mask(img.width(), img.height());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      mask(x, y) = decode_mask_value(img(x, y), x, y, path);
  return mask;
}

void save_mask(const LabelMask& mask, const std::string& path) {
  static const uint16_t codes[3] = {0, 128, 255};
  if (has_png_extension(path)) {
    std::vector<uint16_t> px(mask.size());
    for (int y = 0; y < mask.height(); ++y)
      for (int x = 0; x < mask.width(); ++x)
        px[static_cast<size_t>(y) * mask.width() + x] =
            codes[static_cast<int>(mask(x, y))];
    write_grey_png(path, mask.width(), mask.height(), 8, px);
    return;
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out << mask.width() << " " << mask.height() << "\n";
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x)
      out << codes[static_cast<int>(mask(x, y))]
          << (x + 1 == mask.width() ? "\n" : " ");
}

}  // namespace locdet
