#include "vqunet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include "vqunet/rng.hpp"

namespace vqunet {

namespace {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;
constexpr std::size_t kCanvas = 32;

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IdxError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& bytes, std::size_t offset, const std::filesystem::path& path) {
  if (offset + 4 > bytes.size()) throw IdxTruncatedError(path.string() + ": truncated header");
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

}  // namespace

void Dataset::validate() const {
  if (!images.defined() || images.rank() != 4) throw Error("dataset images must be [N,H,W,C]");
  if (images.dim(0) != labels.size()) {
    throw Error("dataset has " + std::to_string(images.dim(0)) + " images but " + std::to_string(labels.size()) +
                " labels");
  }
  for (double v : images.data()) {
    if (!(v >= 0.0 && v <= 1.0)) throw Error("dataset pixel outside [0,1]");
  }
}

Tensor gather_images(const Tensor& images, std::span<const std::size_t> indices) {
  const std::size_t per = images.dim(1) * images.dim(2) * images.dim(3);
  std::vector<double> out(indices.size() * per);
  auto src = images.data();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= images.dim(0)) throw ShapeError("gather_images: index out of range");
    std::copy_n(src.begin() + indices[i] * per, per, out.begin() + i * per);
  }
  return Tensor(Shape{indices.size(), images.dim(1), images.dim(2), images.dim(3)}, std::move(out));
}

Dataset subset(const Dataset& data, std::span<const std::size_t> indices, Split split) {
  Dataset out;
  out.images = gather_images(data.images, indices);
  out.labels.reserve(indices.size());
  for (auto i : indices) out.labels.push_back(data.labels[i]);
  out.split = split;
  return out;
}

Dataset head(const Dataset& data, std::size_t begin, std::size_t count, Split split) {
  if (begin + count > data.size()) {
    throw Error("dataset has " + std::to_string(data.size()) + " samples, requested [" + std::to_string(begin) +
                "," + std::to_string(begin + count) + ")");
  }
  std::vector<std::size_t> idx(count);
  for (std::size_t i = 0; i < count; ++i) idx[i] = begin + i;
  return subset(data, idx, split);
}

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path, Split split,
                 std::size_t max_samples) {
  const auto img = read_file(images_path);
  const auto lab = read_file(labels_path);

  if (read_be32(img, 0, images_path) != kIdxImagesMagic) {
    throw IdxMagicError(images_path.string() + ": bad magic, expected 0x00000803");
  }
  if (read_be32(lab, 0, labels_path) != kIdxLabelsMagic) {
    throw IdxMagicError(labels_path.string() + ": bad magic, expected 0x00000801");
  }
  const std::size_t count = read_be32(img, 4, images_path);
  const std::size_t rows = read_be32(img, 8, images_path);
  const std::size_t cols = read_be32(img, 12, images_path);
  const std::size_t label_count = read_be32(lab, 4, labels_path);
  if (img.size() < 16 + count * rows * cols) {
    throw IdxTruncatedError(images_path.string() + ": payload truncated, expected " +
                            std::to_string(count * rows * cols) + " pixel bytes, found " +
                            std::to_string(img.size() - 16));
  }
  if (lab.size() < 8 + label_count) {
    throw IdxTruncatedError(labels_path.string() + ": payload truncated, expected " + std::to_string(label_count) +
                            " label bytes, found " + std::to_string(lab.size() - 8));
  }
  if (count != label_count) {
    throw IdxCountMismatchError("image file holds " + std::to_string(count) + " images but label file holds " +
                                std::to_string(label_count) + " labels");
  }

  const std::size_t kept = std::min(count, max_samples);
  const std::size_t out_rows = std::max(rows, kCanvas);
  const std::size_t out_cols = std::max(cols, kCanvas);
  const std::size_t top = (out_rows - rows) / 2;
  const std::size_t left = (out_cols - cols) / 2;
  std::vector<double> pixels(kept * out_rows * out_cols, 0.0);
  for (std::size_t n = 0; n < kept; ++n)
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) {
        pixels[(n * out_rows + r + top) * out_cols + c + left] =
            static_cast<double>(img[16 + (n * rows + r) * cols + c]) / 255.0;
      }

  Dataset out;
  out.images = Tensor(Shape{kept, out_rows, out_cols, 1}, std::move(pixels));
  out.labels.resize(kept);
  for (std::size_t n = 0; n < kept; ++n) out.labels[n] = lab[8 + n];
  out.split = split;
  return out;
}

std::vector<std::uint8_t> encode_idx_images(std::span<const std::uint8_t> pixels, std::uint32_t count,
                                            std::uint32_t rows, std::uint32_t cols) {
  if (pixels.size() != std::size_t{count} * rows * cols) throw Error("encode_idx_images: pixel count mismatch");
  std::vector<std::uint8_t> out;
  put_be32(out, kIdxImagesMagic);
  put_be32(out, count);
  put_be32(out, rows);
  put_be32(out, cols);
  out.insert(out.end(), pixels.begin(), pixels.end());
  return out;
}

std::vector<std::uint8_t> encode_idx_labels(std::span<const std::uint8_t> labels) {
  std::vector<std::uint8_t> out;
  put_be32(out, kIdxLabelsMagic);
  put_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.insert(out.end(), labels.begin(), labels.end());
  return out;
}

namespace {

// Coverage of one shape family at offset (dx, dy) from its centre, `s` being
// the nominal half-extent in pixels.
bool shape_covers(std::size_t cls, double dx, double dy, double s) {
  const double ax = std::abs(dx), ay = std::abs(dy);
  const double r = std::hypot(dx, dy);
  const double t = std::max(1.5, 0.3 * s);  // stroke half-width
  switch (cls) {
    case 0:  // filled square
      return ax <= s && ay <= s;
    case 1:  // disc
      return r <= s;
    case 2:  // plus
      return (ax <= t && ay <= s) || (ay <= t && ax <= s);
    case 3:  // two horizontal bars
      return ax <= s && std::abs(ay - 0.6 * s) <= t * 0.8;
    case 4:  // two vertical bars
      return ay <= s && std::abs(ax - 0.6 * s) <= t * 0.8;
    case 5:  // upward triangle
      return dy <= s && dy >= -s && ax <= (dy + s) * 0.5;
    case 6:  // ring
      return r <= s && r >= s - 2.0 * t;
    case 7:  // main diagonal stroke
      return ax <= s && ay <= s && std::abs(dx - dy) <= t * 1.4;
    case 8:  // X
      return ax <= s && ay <= s && (std::abs(dx - dy) <= t * 1.2 || std::abs(dx + dy) <= t * 1.2);
    default:  // hollow square
      return ax <= s && ay <= s && (ax >= s - t || ay >= s - t);
  }
}

}  // namespace

Dataset synthetic_dataset(std::size_t num_samples, std::size_t num_classes, std::uint64_t seed, Split split) {
  if (num_classes < 2 || num_classes > 10) throw Error("synthetic_dataset: num_classes must be in [2,10]");
  Rng rng(seed);
  std::vector<double> pixels(num_samples * kCanvas * kCanvas, 0.0);
  std::vector<int> labels(num_samples);
  for (std::size_t n = 0; n < num_samples; ++n) {
    const auto cls = n % num_classes;
    labels[n] = static_cast<int>(cls);
    const double cx = 15.5 + rng.uniform(-3.0, 3.0);
    const double cy = 15.5 + rng.uniform(-3.0, 3.0);
    const double s = rng.uniform(7.0, 10.0);
    const double intensity = rng.uniform(0.7, 1.0);
    double* img = pixels.data() + n * kCanvas * kCanvas;
    for (std::size_t y = 0; y < kCanvas; ++y)
      for (std::size_t x = 0; x < kCanvas; ++x) {
        if (shape_covers(cls, static_cast<double>(x) - cx, static_cast<double>(y) - cy, s)) {
          img[y * kCanvas + x] = intensity;
        }
      }
  }
  Dataset out;
  out.images = Tensor(Shape{num_samples, kCanvas, kCanvas, 1}, std::move(pixels));
  out.labels = std::move(labels);
  out.split = split;
  return out;
}

}  // namespace vqunet
