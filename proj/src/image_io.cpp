#include "bachkit/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <memory>
#include <sstream>
#include <string>

#include "bachkit/error.hpp"

namespace bachkit {

namespace {

std::string lower_ext(const std::filesystem::path& p) {
  std::string e = p.extension().string();
  for (auto& ch : e) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return e;
}

struct PngReadState {
  const std::vector<std::uint8_t>* bytes;
  std::size_t pos = 0;
};

void png_read_from_memory(png_structp png, png_bytep out, png_size_t n) {
  auto* s = static_cast<PngReadState*>(png_get_io_ptr(png));
  if (s->pos + n > s->bytes->size()) png_error(png, "truncated png");
  std::copy_n(s->bytes->data() + s->pos, n, out);
  s->pos += n;
}

void png_write_to_vector(png_structp png, png_bytep data, png_size_t n) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + n);
}

void png_flush_noop(png_structp) {}

[[noreturn]] void png_fail(png_structp, png_const_charp msg) {
  throw Error(ErrorKind::Io, std::string("png: ") + msg);
}

void png_warn(png_structp, png_const_charp) {}

Image8 decode_png(const std::vector<std::uint8_t>& bytes, const std::string& name) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) {
    fail(ErrorKind::Io, name + " is not a png file");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_read_struct(p, i, nullptr); }
  } guard{&png, &info};
  PngReadState state{&bytes, 0};
  png_set_read_fn(png, &state, png_read_from_memory);
  png_read_info(png, info);
  const auto color = png_get_color_type(png, info);
  const auto depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (depth < 8) png_set_packing(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  Image8 img;
  img.width = png_get_image_width(png, info);
  img.height = png_get_image_height(png, info);
  img.channels = png_get_channels(png, info);
  if (img.channels != 1 && img.channels != 3) {
    fail(ErrorKind::Io, name + ": unsupported png channel count");
  }
  img.pixels.resize(img.height * img.width * img.channels);
  std::vector<png_bytep> rows(img.height);
  for (std::size_t y = 0; y < img.height; ++y) {
    rows[y] = img.pixels.data() + y * img.width * img.channels;
  }
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  return img;
}

Image8 decode_pnm(const std::vector<std::uint8_t>& bytes, const std::string& name) {
  std::string text(bytes.begin(), bytes.end());
  std::istringstream in(text);
  std::string magic;
  in >> magic;
  const std::size_t channels = magic == "P5" ? 1 : magic == "P6" ? 3 : 0;
  if (channels == 0) fail(ErrorKind::Io, name + ": expected binary PGM/PPM");
  auto next_int = [&] {
    in >> std::ws;
    while (in.peek() == '#') {
      std::string skip;
      std::getline(in, skip);
      in >> std::ws;
    }
    long v = -1;
    in >> v;
    return v;
  };
  const long w = next_int(), h = next_int(), maxval = next_int();
  if (w <= 0 || h <= 0 || maxval != 255) fail(ErrorKind::Io, name + ": bad PNM header");
  in.get();
  const auto offset = static_cast<std::size_t>(in.tellg());
  Image8 img{static_cast<std::size_t>(h), static_cast<std::size_t>(w), channels, {}};
  const std::size_t n = img.height * img.width * channels;
  if (bytes.size() < offset + n) fail(ErrorKind::Io, name + ": truncated PNM");
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(offset),
                    bytes.begin() + static_cast<std::ptrdiff_t>(offset + n));
  return img;
}

}  // namespace

Image8 read_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot read image " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  const std::string ext = lower_ext(path);
  if (ext == ".pgm" || ext == ".ppm") return decode_pnm(bytes, path.string());
  return decode_png(bytes, path.string());
}

std::vector<std::uint8_t> encode_png(const Image8& image) {
  if (image.channels != 1 && image.channels != 3) {
    fail(ErrorKind::Io, "encode_png: unsupported channel count");
  }
  std::vector<std::uint8_t> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_write_struct(p, i); }
  } guard{&png, &info};
  png_set_write_fn(png, &out, png_write_to_vector, png_flush_noop);
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width),
               static_cast<png_uint_32>(image.height), 8,
               image.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(image.height);
  for (std::size_t y = 0; y < image.height; ++y) {
    rows[y] = const_cast<png_bytep>(image.pixels.data() + y * image.width * image.channels);
  }
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  return out;
}

void write_image(const std::filesystem::path& path, const Image8& image) {
  std::vector<std::uint8_t> bytes;
  const std::string ext = lower_ext(path);
  if (ext == ".pgm" || ext == ".ppm") {
    const std::string header = std::string(image.channels == 1 ? "P5" : "P6") + "\n" +
                               std::to_string(image.width) + " " +
                               std::to_string(image.height) + "\n255\n";
    bytes.assign(header.begin(), header.end());
    bytes.insert(bytes.end(), image.pixels.begin(), image.pixels.end());
  } else {
    bytes = encode_png(image);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot write image " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Image8 image_from_tensor(const Tensor& rgb) {
  const Extents& e = rgb.extents();
  if (e.groups() != 1 || e.channels() != 3) {
    fail(ErrorKind::Shape, "image_from_tensor: expected 1xHxWx3, got " + to_string(e));
  }
  require_finite(rgb, "image_from_tensor");
  Image8 img{e.height(), e.width(), 3, std::vector<std::uint8_t>(rgb.size())};
  for (std::size_t i = 0; i < rgb.size(); ++i) {
    const double v = std::round((std::clamp(rgb[i], -1.0, 1.0) + 1.0) * 127.5);
    img.pixels[i] = static_cast<std::uint8_t>(v);
  }
  return img;
}

}  // namespace bachkit
