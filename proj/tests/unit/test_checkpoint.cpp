#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "test_support.hpp"
#include "vqunet/checkpoint.hpp"
#include "vqunet/classifier.hpp"
#include "vqunet/model.hpp"

using namespace vqunet;
using namespace vqunet::testing;

namespace {

namespace fs = std::filesystem;

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

struct Scratch {
  fs::path dir = fs::temp_directory_path() / "vqunet_ckpt_test";
  Scratch() {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Scratch() { fs::remove_all(dir); }
};

}  // namespace

TEST_SUITE("checkpoint format") {
  TEST_CASE("header layout is little-endian magic, version, kind, config") {
    Scratch s;
    Parameter p("w", Tensor({2, 1}, {1.5, -2.0}));
    const Parameter* params[] = {&p};
    write_checkpoint(s.dir / "c.bin", ModelKind::kClassifier, "{}", params);
    const auto bytes = read_bytes(s.dir / "c.bin");
    REQUIRE(bytes.size() == 8 + 4 + 4 + 8 + 2 + 8 + 4 + 16 + 16);
    CHECK(std::string(bytes.begin(), bytes.begin() + 8) == "VQUNETCK");
    CHECK(bytes[8] == 1);
    CHECK(bytes[12] == 2);
    CHECK(bytes[16] == 2);
    CHECK(bytes[24] == '{');

    const Checkpoint ckpt = read_checkpoint(s.dir / "c.bin");
    CHECK(ckpt.kind == ModelKind::kClassifier);
    CHECK(ckpt.config_json == "{}");
    REQUIRE(ckpt.tensors.size() == 1);
    CHECK(ckpt.tensors[0].shape() == Shape{2, 1});
    CHECK(bit_equal(ckpt.tensors[0].data(), p.tensor.data()));
  }

  TEST_CASE("corruption is reported") {
    Scratch s;
    Parameter p("w", Tensor({3}, {1, 2, 3}));
    const Parameter* params[] = {&p};
    write_checkpoint(s.dir / "c.bin", ModelKind::kPurifier, "{}", params);
    const auto good = read_bytes(s.dir / "c.bin");

    auto bad = good;
    bad[0] = 'X';
    write_bytes(s.dir / "m.bin", bad);
    CHECK_THROWS_AS(read_checkpoint(s.dir / "m.bin"), CheckpointError);

    bad = good;
    bad[8] = 9;
    write_bytes(s.dir / "v.bin", bad);
    CHECK_THROWS_AS(read_checkpoint(s.dir / "v.bin"), CheckpointError);

    bad = good;
    bad[12] = 7;
    write_bytes(s.dir / "k.bin", bad);
    CHECK_THROWS_AS(read_checkpoint(s.dir / "k.bin"), CheckpointError);

    for (std::size_t cut : {std::size_t{4}, std::size_t{20}, good.size() - 1}) {
      write_bytes(s.dir / "t.bin", std::vector<std::uint8_t>(good.begin(), good.begin() + static_cast<std::ptrdiff_t>(cut)));
      CHECK_THROWS_AS(read_checkpoint(s.dir / "t.bin"), CheckpointError);
    }

    bad = good;
    bad.push_back(0);
    write_bytes(s.dir / "x.bin", bad);
    CHECK_THROWS_AS(read_checkpoint(s.dir / "x.bin"), CheckpointError);

    CHECK_THROWS_AS(read_checkpoint(s.dir / "missing.bin"), CheckpointError);
  }

  TEST_CASE("assign_parameters validates before copying") {
    Parameter a("a", Tensor({2}, {1, 2})), b("b", Tensor({3}, {3, 4, 5}));
    Checkpoint ckpt;
    ckpt.tensors = {Tensor({2}, {9, 9}), Tensor({2}, {9, 9})};
    Parameter* params[] = {&a, &b};
    CHECK_THROWS_AS(assign_parameters(ckpt, params), CheckpointError);
    CHECK(a.tensor.data()[0] == 1.0);
    ckpt.tensors.pop_back();
    CHECK_THROWS_AS(assign_parameters(ckpt, params), CheckpointError);
  }

  TEST_CASE("model kinds are not interchangeable") {
    Scratch s;
    VQUNetConfig vc;
    vc.input_shape = {8, 8, 1};
    vc.depth = 2;
    vc.stem_channels = 2;
    vc.channels = {2, 2};
    vc.codebook_k = {2, 2};
    save(VQUNet(vc), s.dir / "p.ckpt");
    CHECK_THROWS_AS(load_classifier(s.dir / "p.ckpt"), CheckpointError);
    ClassifierConfig cc;
    cc.channels = {2};
    save(Classifier(cc), s.dir / "c.ckpt");
    CHECK_THROWS_AS(load_vqunet(s.dir / "c.ckpt"), CheckpointError);
  }
}
