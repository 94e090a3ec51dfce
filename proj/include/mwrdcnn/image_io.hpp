#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "mwrdcnn/tensor.hpp"

namespace mwrdcnn {

// Grayscale image, row-major, values in [0, 1].
struct GrayImage {
  int h = 0;
  int w = 0;
  std::vector<float> pix;
  int source_bit_depth = 8;

  float& at(int y, int x) { return pix[static_cast<std::size_t>(y) * w + x]; }
  float at(int y, int x) const { return pix[static_cast<std::size_t>(y) * w + x]; }
};

// Dispatches on extension: .pgm or .png (case-insensitive). Color PNG input
// is reduced to luma with the 0.299/0.587/0.114 weights. Binary PGM keeps
// full precision for any maxval up to 65535.
GrayImage load_image(const std::string& path);

// .pgm writes binary 8-bit P5; .png writes 8-bit grayscale. Values are
// clamped to [0, 1] and rounded to the nearest level.
void save_image(const std::string& path, const GrayImage& img);

// In-memory PGM codec. Decode errors carry `origin` and the byte offset at
// which parsing stopped.
GrayImage decode_pgm(const std::vector<std::uint8_t>& bytes, const std::string& origin);
std::vector<std::uint8_t> encode_pgm(const GrayImage& img);

Tensor<float> image_to_tensor(const GrayImage& img);                 // (1, 1, h, w)
GrayImage tensor_to_image(const Tensor<float>& t, bool clamp = true);  // from (1, 1, h, w)

struct Dataset {
  std::vector<std::string> names;  // sorted basenames, parallel to images
  std::vector<GrayImage> images;

  std::size_t size() const { return images.size(); }
};

// Loads every .pgm/.png in `dir`, sorted by filename. Files that fail to
// decode or are smaller than min_side on either axis are skipped with one
// line on `warnings` (if given). Throws if the directory is missing or no
// usable image remains.
Dataset load_dataset(const std::string& dir, int min_side, std::ostream* warnings);

}  // namespace mwrdcnn
