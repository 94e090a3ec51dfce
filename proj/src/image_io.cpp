#include "mwrdcnn/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <csetjmp>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace mwrdcnn {
namespace {

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path + ": cannot open for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw std::runtime_error(path + ": read failed");
  return bytes;
}

std::uint8_t quantize8(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

std::string lower_ext(const std::string& path) {
  std::string ext = fs::path(path).extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext;
}

// --- PGM ---------------------------------------------------------------

struct PgmCursor {
  const std::vector<std::uint8_t>& bytes;
  const std::string& origin;
  std::size_t off = 0;

  [[noreturn]] void fail(const std::string& what) const {
    throw std::runtime_error(origin + ": " + what + " at byte " + std::to_string(off));
  }
  bool eof() const { return off >= bytes.size(); }
  std::uint8_t peek() const { return bytes[off]; }
};

void skip_space_and_comments(PgmCursor& c) {
  while (!c.eof()) {
    if (std::isspace(c.peek())) {
      ++c.off;
    } else if (c.peek() == '#') {
      while (!c.eof() && c.peek() != '\n') ++c.off;
    } else {
      return;
    }
  }
}

long parse_uint(PgmCursor& c, const char* what, long max) {
  skip_space_and_comments(c);
  if (c.eof() || !std::isdigit(c.peek())) c.fail(std::string("expected ") + what);
  long v = 0;
  while (!c.eof() && std::isdigit(c.peek())) {
    v = v * 10 + (c.peek() - '0');
    if (v > max) c.fail(std::string(what) + " exceeds " + std::to_string(max));
    ++c.off;
  }
  return v;
}

// --- PNG ---------------------------------------------------------------

struct MemCursor {
  const std::uint8_t* data;
  std::size_t size;
  std::size_t off;
};

extern "C" void png_mem_read(png_structp png, png_bytep out, png_size_t n) {
  MemCursor* c = static_cast<MemCursor*>(png_get_io_ptr(png));
  if (c->off + n > c->size) {
    png_error(png, "unexpected end of data");
  }
  std::memcpy(out, c->data + c->off, n);
  c->off += n;
}

GrayImage decode_png(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
  if (bytes.size() < 29 || png_sig_cmp(bytes.data(), 0, 8) != 0) {
    throw std::runtime_error(origin + ": not a PNG file");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (png == nullptr) throw std::runtime_error(origin + ": libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error(origin + ": libpng init failed");
  }
  MemCursor cur{bytes.data(), bytes.size(), 0};
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error(origin + ": PNG decode failed");
  }
  png_set_read_fn(png, &cur, png_mem_read);
  png_read_png(png, info,
               PNG_TRANSFORM_STRIP_16 | PNG_TRANSFORM_STRIP_ALPHA | PNG_TRANSFORM_PACKING |
                   PNG_TRANSFORM_EXPAND,
               nullptr);

  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const int channels = png_get_channels(png, info);
  png_bytepp rows = png_get_rows(png, info);
  if (w == 0 || h == 0 || rows == nullptr || (channels != 1 && channels != 3)) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error(origin + ": unsupported PNG layout (channels=" +
                             std::to_string(channels) + ")");
  }

  GrayImage img;
  img.w = static_cast<int>(w);
  img.h = static_cast<int>(h);
  img.source_bit_depth = bytes[24];  // IHDR bit-depth field
  img.pix.resize(static_cast<std::size_t>(w) * h);
  for (png_uint_32 y = 0; y < h; ++y) {
    const png_bytep row = rows[y];
    float* out = img.pix.data() + static_cast<std::size_t>(y) * w;
    if (channels == 1) {
      for (png_uint_32 x = 0; x < w; ++x) out[x] = row[x] / 255.0f;
    } else {
      for (png_uint_32 x = 0; x < w; ++x) {
        const float r = row[3 * x + 0] / 255.0f;
        const float g = row[3 * x + 1] / 255.0f;
        const float b = row[3 * x + 2] / 255.0f;
        out[x] = 0.299f * r + 0.587f * g + 0.114f * b;
      }
    }
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void encode_png_file(const std::string& path, const GrayImage& img) {
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(img.w) * img.h);
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = quantize8(img.pix[i]);
  png_image pi;
  std::memset(&pi, 0, sizeof(pi));
  pi.version = PNG_IMAGE_VERSION;
  pi.width = static_cast<png_uint_32>(img.w);
  pi.height = static_cast<png_uint_32>(img.h);
  pi.format = PNG_FORMAT_GRAY;
  if (png_image_write_to_file(&pi, path.c_str(), 0, buf.data(), 0, nullptr) == 0) {
    throw std::runtime_error(path + ": PNG encode failed: " + pi.message);
  }
}

}  // namespace

GrayImage decode_pgm(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
  PgmCursor c{bytes, origin};
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') {
    c.fail("expected binary PGM magic 'P5'");
  }
  c.off = 2;
  const long w = parse_uint(c, "width", 1 << 20);
  const long h = parse_uint(c, "height", 1 << 20);
  if (w < 1 || h < 1) c.fail("image dimensions must be positive");
  if (w * h > (1L << 28)) c.fail("image too large");
  const long maxval = parse_uint(c, "maxval", 65535);
  if (maxval < 1) c.fail("maxval must be positive");
  if (c.eof() || !std::isspace(c.peek())) c.fail("expected single whitespace after maxval");
  ++c.off;

  const int bytes_per = maxval > 255 ? 2 : 1;
  const std::size_t need = static_cast<std::size_t>(w) * h * bytes_per;
  if (bytes.size() - c.off < need) {
    c.fail("truncated pixel data: need " + std::to_string(need) + " bytes, have " +
           std::to_string(bytes.size() - c.off));
  }

  GrayImage img;
  img.w = static_cast<int>(w);
  img.h = static_cast<int>(h);
  img.source_bit_depth = maxval > 255 ? 16 : 8;
  img.pix.resize(static_cast<std::size_t>(w) * h);
  const std::uint8_t* p = bytes.data() + c.off;
  // divide rather than multiply by a reciprocal so the result is bit-identical
  // to the png path for maxval 255
  const float scale = static_cast<float>(maxval);
  for (std::size_t i = 0; i < img.pix.size(); ++i) {
    const unsigned v = bytes_per == 1 ? p[i] : (static_cast<unsigned>(p[2 * i]) << 8) | p[2 * i + 1];
    img.pix[i] = std::min(1.0f, static_cast<float>(v) / scale);
  }
  return img;
}

std::vector<std::uint8_t> encode_pgm(const GrayImage& img) {
  const std::string header =
      "P5\n" + std::to_string(img.w) + " " + std::to_string(img.h) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + img.pix.size());
  for (float v : img.pix) out.push_back(quantize8(v));
  return out;
}

GrayImage load_image(const std::string& path) {
  const std::vector<std::uint8_t> bytes = read_file(path);
  const std::string ext = lower_ext(path);
  if (ext == ".pgm") return decode_pgm(bytes, path);
  if (ext == ".png") return decode_png(bytes, path);
  // Fall back on content sniffing for unknown extensions.
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '5') return decode_pgm(bytes, path);
  if (bytes.size() >= 8 && png_sig_cmp(bytes.data(), 0, 8) == 0) return decode_png(bytes, path);
  throw std::runtime_error(path + ": unsupported image format (expected .pgm or .png)");
}

void save_image(const std::string& path, const GrayImage& img) {
  if (img.w < 1 || img.h < 1 || img.pix.size() != static_cast<std::size_t>(img.w) * img.h) {
    throw std::invalid_argument(path + ": refusing to save malformed image");
  }
  const std::string ext = lower_ext(path);
  if (ext == ".png") {
    encode_png_file(path, img);
    return;
  }
  if (ext == ".pgm") {
    const std::vector<std::uint8_t> bytes = encode_pgm(img);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error(path + ": cannot open for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error(path + ": write failed");
    return;
  }
  throw std::runtime_error(path + ": unsupported output format (expected .pgm or .png)");
}

Tensor<float> image_to_tensor(const GrayImage& img) {
  Tensor<float> t(1, 1, img.h, img.w);
  std::copy(img.pix.begin(), img.pix.end(), t.data.begin());
  return t;
}

GrayImage tensor_to_image(const Tensor<float>& t, bool clamp) {
  if (t.shape.n != 1 || t.shape.c != 1) {
    throw std::invalid_argument("tensor_to_image expects (1,1,h,w), got " + t.shape.str());
  }
  GrayImage img;
  img.h = t.shape.h;
  img.w = t.shape.w;
  img.pix.resize(t.numel());
  for (std::size_t i = 0; i < img.pix.size(); ++i) {
    img.pix[i] = clamp ? std::clamp(t.data[i], 0.0f, 1.0f) : t.data[i];
  }
  return img;
}

Dataset load_dataset(const std::string& dir, int min_side, std::ostream* warnings) {
  if (!fs::is_directory(dir)) {
    throw std::runtime_error(dir + ": not a directory");
  }
  std::vector<std::string> names;
  for (const fs::directory_entry& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string ext = lower_ext(e.path().string());
    if (ext == ".pgm" || ext == ".png") names.push_back(e.path().filename().string());
  }
  std::sort(names.begin(), names.end());

  Dataset ds;
  for (const std::string& name : names) {
    const std::string path = (fs::path(dir) / name).string();
    GrayImage img;
    try {
      img = load_image(path);
    } catch (const std::exception& e) {
      if (warnings != nullptr) *warnings << "skipping " << name << ": " << e.what() << "\n";
      continue;
    }
    if (img.h < min_side || img.w < min_side) {
      if (warnings != nullptr) {
        *warnings << "skipping " << name << ": " << img.w << "x" << img.h
                  << " is smaller than " << min_side << "x" << min_side << "\n";
      }
      continue;
    }
    ds.names.push_back(name);
    ds.images.push_back(std::move(img));
  }
  if (ds.images.empty()) {
    throw std::runtime_error(dir + ": no usable images (need .pgm or .png at least " +
                             std::to_string(min_side) + "px on each side)");
  }
  return ds;
}

}  // namespace mwrdcnn
