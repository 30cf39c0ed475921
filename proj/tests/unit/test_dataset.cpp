#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "test_support.hpp"
#include "vqunet/classifier.hpp"
#include "vqunet/dataset.hpp"

using namespace vqunet;
using namespace vqunet::testing;

namespace {

namespace fs = std::filesystem;

void write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

struct IdxFixture {
  fs::path dir = fs::temp_directory_path() / "vqunet_idx_test";
  fs::path images = dir / "images.idx";
  fs::path labels = dir / "labels.idx";
  IdxFixture() {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~IdxFixture() { fs::remove_all(dir); }
};

// Two 2x3 images written byte by byte: magic, count, rows, cols, payload.
const std::vector<std::uint8_t> kTinyImages = {0x00, 0x00, 0x08, 0x03, 0x00, 0x00, 0x00, 0x02, 0x00, 0x00,
                                               0x00, 0x02, 0x00, 0x00, 0x00, 0x03, 0,    51,   102,  153,
                                               204,  255, 255,  0,    17,   34,   68,   136};
const std::vector<std::uint8_t> kTinyLabels = {0x00, 0x00, 0x08, 0x01, 0x00, 0x00, 0x00, 0x02, 7, 3};

double pixel(const Dataset& d, std::size_t n, std::size_t y, std::size_t x) { return d.images.data()[(n * 32 + y) * 32 + x]; }

}  // namespace

TEST_SUITE("load_idx") {
  TEST_CASE("hand-built fixture recovers exact pixels and labels") {
    IdxFixture f;
    write_bytes(f.images, kTinyImages);
    write_bytes(f.labels, kTinyLabels);
    const Dataset d = load_idx(f.images, f.labels);
    CHECK(d.images.shape() == Shape{2, 32, 32, 1});
    CHECK(d.labels == std::vector<int>{7, 3});
    // 2x3 centred on 32x32: 15 rows above, 14 columns to the left.
    const std::uint8_t* payload = kTinyImages.data() + 16;
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t y = 0; y < 2; ++y)
        for (std::size_t x = 0; x < 3; ++x) {
          CHECK(pixel(d, n, 15 + y, 14 + x) == payload[n * 6 + y * 3 + x] / 255.0);
        }
    double total = 0.0;
    for (double v : d.images.data()) total += v;
    double expected = 0.0;
    for (std::size_t i = 0; i < 12; ++i) expected += payload[i] / 255.0;
    CHECK(total == doctest::Approx(expected).epsilon(1e-14));
  }

  TEST_CASE("28x28 images gain a 2-pixel zero border") {
    IdxFixture f;
    std::vector<std::uint8_t> px(28 * 28, 200);
    write_bytes(f.images, encode_idx_images(px, 1, 28, 28));
    const std::uint8_t label = 4;
    write_bytes(f.labels, encode_idx_labels(std::span(&label, 1)));
    const Dataset d = load_idx(f.images, f.labels);
    for (std::size_t y = 0; y < 32; ++y)
      for (std::size_t x = 0; x < 32; ++x) {
        const bool inside = y >= 2 && y < 30 && x >= 2 && x < 30;
        REQUIRE(pixel(d, 0, y, x) == (inside ? 200.0 / 255.0 : 0.0));
      }
  }

  TEST_CASE("encode and load round trip") {
    IdxFixture f;
    Rng rng(81);
    std::vector<std::uint8_t> px(5 * 32 * 32), labels(5);
    for (auto& p : px) p = static_cast<std::uint8_t>(rng.below(256));
    for (auto& l : labels) l = static_cast<std::uint8_t>(rng.below(10));
    write_bytes(f.images, encode_idx_images(px, 5, 32, 32));
    write_bytes(f.labels, encode_idx_labels(labels));
    const Dataset d = load_idx(f.images, f.labels, Split::kTest);
    CHECK(d.split == Split::kTest);
    for (std::size_t i = 0; i < px.size(); ++i) REQUIRE(d.images.data()[i] == px[i] / 255.0);
    for (std::size_t i = 0; i < labels.size(); ++i) CHECK(d.labels[i] == labels[i]);
  }

  TEST_CASE("max_samples decodes a prefix but still validates the whole file") {
    IdxFixture f;
    write_bytes(f.images, kTinyImages);
    write_bytes(f.labels, kTinyLabels);
    const Dataset one = load_idx(f.images, f.labels, Split::kTrain, 1);
    const Dataset both = load_idx(f.images, f.labels);
    CHECK(one.images.shape() == Shape{1, 32, 32, 1});
    CHECK(one.labels == std::vector<int>{7});
    CHECK(bit_equal(one.images.data(), both.images.data().subspan(0, 1024)));
    CHECK(load_idx(f.images, f.labels, Split::kTrain, 5).size() == 2);
    write_bytes(f.images, std::vector<std::uint8_t>(kTinyImages.begin(), kTinyImages.end() - 1));
    CHECK_THROWS_AS(load_idx(f.images, f.labels, Split::kTrain, 1), IdxTruncatedError);
  }

  TEST_CASE("bad magic") {
    IdxFixture f;
    auto images = kTinyImages;
    images[3] = 0x01;
    write_bytes(f.images, images);
    write_bytes(f.labels, kTinyLabels);
    CHECK_THROWS_AS(load_idx(f.images, f.labels), IdxMagicError);
    write_bytes(f.images, kTinyImages);
    write_bytes(f.labels, kTinyImages);
    CHECK_THROWS_AS(load_idx(f.images, f.labels), IdxMagicError);
  }

  TEST_CASE("truncated payload or header") {
    IdxFixture f;
    write_bytes(f.images, std::vector<std::uint8_t>(kTinyImages.begin(), kTinyImages.end() - 1));
    write_bytes(f.labels, kTinyLabels);
    CHECK_THROWS_AS(load_idx(f.images, f.labels), IdxTruncatedError);
    write_bytes(f.images, kTinyImages);
    write_bytes(f.labels, std::vector<std::uint8_t>(kTinyLabels.begin(), kTinyLabels.end() - 1));
    CHECK_THROWS_AS(load_idx(f.images, f.labels), IdxTruncatedError);
    write_bytes(f.images, std::vector<std::uint8_t>(kTinyImages.begin(), kTinyImages.begin() + 10));
    write_bytes(f.labels, kTinyLabels);
    CHECK_THROWS_AS(load_idx(f.images, f.labels), IdxTruncatedError);
  }

  TEST_CASE("count mismatch between files") {
    IdxFixture f;
    write_bytes(f.images, kTinyImages);
    write_bytes(f.labels, {0x00, 0x00, 0x08, 0x01, 0x00, 0x00, 0x00, 0x03, 7, 3, 1});
    CHECK_THROWS_AS(load_idx(f.images, f.labels), IdxCountMismatchError);
  }

  TEST_CASE("missing file") {
    IdxFixture f;
    CHECK_THROWS_AS(load_idx(f.dir / "nope", f.dir / "nope2"), IdxError);
  }
}

TEST_SUITE("synthetic_dataset") {
  TEST_CASE("same seed is bit-identical, different seed differs") {
    const Dataset a = synthetic_dataset(50, 10, 82), b = synthetic_dataset(50, 10, 82);
    CHECK(bit_equal(a.images.data(), b.images.data()));
    CHECK(a.labels == b.labels);
    CHECK_FALSE(bit_equal(a.images.data(), synthetic_dataset(50, 10, 83).images.data()));
  }

  TEST_CASE("classes are balanced to within one and pixels lie in [0,1]") {
    for (std::size_t k = 2; k <= 10; ++k) {
      const Dataset d = synthetic_dataset(97, k, 84);
      d.validate();
      std::vector<std::size_t> counts(k, 0);
      for (int y : d.labels) counts[static_cast<std::size_t>(y)]++;
      const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
      CHECK(*hi - *lo <= 1);
      CHECK(d.images.shape() == Shape{97, 32, 32, 1});
    }
  }

  TEST_CASE("class count outside [2,10] is rejected") {
    CHECK_THROWS_AS(synthetic_dataset(10, 1, 0), Error);
    CHECK_THROWS_AS(synthetic_dataset(10, 11, 0), Error);
  }

  TEST_CASE("learnable: small classifier reaches 90% held-out accuracy within 20 epochs") {
    const Dataset train = synthetic_dataset(600, 10, 85);
    const Dataset test = synthetic_dataset(200, 10, 86, Split::kTest);
    ClassifierConfig c;
    c.channels = {8, 16, 32};
    c.epochs = 20;
    c.batch_size = 32;
    const double acc = accuracy(train_classifier(train, c), test);
    MESSAGE("held-out accuracy " << acc);
    CHECK(acc >= 0.9);
  }
}

TEST_SUITE("Dataset helpers") {
  TEST_CASE("subset and head copy the requested samples") {
    const Dataset d = synthetic_dataset(10, 5, 87);
    const std::size_t idx[] = {7, 2};
    const Dataset s = subset(d, idx, Split::kTest);
    CHECK(s.labels == std::vector<int>{d.labels[7], d.labels[2]});
    CHECK(bit_equal(s.images.data().subspan(0, 1024), d.images.data().subspan(7 * 1024, 1024)));
    const Dataset h = head(d, 3, 4, Split::kTrain);
    CHECK(h.size() == 4);
    CHECK(h.labels.front() == d.labels[3]);
    CHECK_THROWS_AS(head(d, 8, 4, Split::kTrain), Error);
  }

  TEST_CASE("validate rejects out-of-range pixels and count mismatch") {
    Dataset d = synthetic_dataset(4, 2, 88);
    d.labels.pop_back();
    CHECK_THROWS_AS(d.validate(), Error);
    Dataset e = synthetic_dataset(4, 2, 88);
    e.images.mutable_data()[5] = 1.5;
    CHECK_THROWS_AS(e.validate(), Error);
  }
}
