#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <vector>

#include "doconv/model_io.hpp"
#include "doconv/net.hpp"
#include "doconv/rng.hpp"
#include "doconv/synth.hpp"
#include "doconv/train.hpp"
#include "oracles.hpp"

using namespace doconv;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("doconv-test-" + std::to_string(Rng(std::random_device{}())()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

std::vector<char> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("load_idx: single 1x1 image with byte 255 becomes 1.0") {
  TempDir dir;
  write_bytes(dir.file("img"), {0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 255});
  write_bytes(dir.file("lab"), {0, 0, 8, 1, 0, 0, 0, 1, 7});
  const DatasetHandle d = load_idx(dir.file("img"), dir.file("lab"));
  CHECK(d.count() == 1);
  CHECK(d.images[0] == 1.0);
  CHECK(d.labels[0] == 7);
}

TEST_CASE("load_idx rejects bad magic, truncation and count mismatch") {
  TempDir dir;
  write_bytes(dir.file("img"), {0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 255});
  write_bytes(dir.file("lab"), {0, 0, 8, 1, 0, 0, 0, 1, 7});

  write_bytes(dir.file("badmagic"), {0, 0, 9, 9, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 255});
  CHECK_THROWS_WITH_AS(load_idx(dir.file("badmagic"), dir.file("lab")),
                       doctest::Contains("bad magic"), IoError);

  write_bytes(dir.file("short"), {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0, 1, 255});
  CHECK_THROWS_WITH_AS(load_idx(dir.file("short"), dir.file("lab")),
                       doctest::Contains("truncated"), IoError);

  write_bytes(dir.file("lab2"), {0, 0, 8, 1, 0, 0, 0, 2, 7, 3});
  CHECK_THROWS_WITH_AS(load_idx(dir.file("img"), dir.file("lab2")),
                       doctest::Contains("count mismatch"), IoError);
}

TEST_CASE("synthetic dataset round-trips through IDX up to quantization") {
  TempDir dir;
  const DatasetHandle d = make_digit_dataset(30, 2024, 14);
  CHECK(d.count() == 30);
  CHECK(d.images.shape() == Shape({30, 14, 14, 1}));
  save_idx(d, dir.file("img"), dir.file("lab"));
  const DatasetHandle back = load_idx(dir.file("img"), dir.file("lab"));
  CHECK(back.count() == 30);
  CHECK(back.labels == d.labels);
  CHECK(max_abs_diff(back.images, d.images) <= 0.5 / 255.0 + 1e-12);
  // a second save is byte-identical (quantization is idempotent)
  save_idx(back, dir.file("img2"), dir.file("lab2"));
  CHECK(slurp(dir.file("img")) == slurp(dir.file("img2")));
}

TEST_CASE("model save/load round trip is bit-exact and re-save is byte-identical") {
  TempDir dir;
  const NetworkSpec spec = reference_net(12, 12, 1).doconv_variant();
  Network net = Network::build(spec, 7);
  // perturb D' so the unfolded state is nontrivial
  Rng g(70);
  for (Layer& l : net.layers()) {
    if (l.has_d) {
      for (std::size_t i = 0; i < l.d_res.size(); ++i) l.d_res[i] = uniform(g, -0.2, 0.2);
    }
  }

  const std::string p1 = dir.file("net.docv");
  save_model(net, p1, /*folded=*/false);
  const Network back = load_model(p1);
  REQUIRE(back.layers().size() == net.layers().size());
  for (std::size_t i = 0; i < net.layers().size(); ++i) {
    CHECK(max_abs_diff(back.layers()[i].w, net.layers()[i].w) == 0.0);
    if (net.layers()[i].has_d) {
      CHECK(max_abs_diff(back.layers()[i].d_res, net.layers()[i].d_res) == 0.0);
    }
    if (net.layers()[i].has_bias) {
      CHECK(max_abs_diff(back.layers()[i].bias, net.layers()[i].bias) == 0.0);
    }
  }

  const std::string p2 = dir.file("net2.docv");
  save_model(back, p2, /*folded=*/false);
  CHECK(slurp(p1) == slurp(p2));
}

TEST_CASE("folded save matches in-memory folded inference and is smaller") {
  TempDir dir;
  const NetworkSpec spec = reference_net(12, 12, 1).doconv_variant();
  Network net = Network::build(spec, 8);
  Rng g(71);
  for (Layer& l : net.layers()) {
    if (l.has_d) {
      for (std::size_t i = 0; i < l.d_res.size(); ++i) l.d_res[i] = uniform(g, -0.2, 0.2);
    }
  }

  const std::string folded_path = dir.file("folded.docv");
  const std::string unfolded_path = dir.file("unfolded.docv");
  save_model(net, folded_path, /*folded=*/true);
  save_model(net, unfolded_path, /*folded=*/false);

  // folded file omits D', so it is strictly smaller when d_mul = m*n > 1
  CHECK(fs::file_size(folded_path) < fs::file_size(unfolded_path));

  const Network in_memory = net.fold();
  const Network from_disk = load_model(folded_path);
  CHECK(from_disk.folded());
  for (int i = 0; i < 4; ++i) {
    const Tensor x = oracle::random_tensor({12, 12, 1}, g, 0.0, 1.0);
    CHECK(max_abs_diff(from_disk.forward(x), in_memory.forward(x)) == 0.0);
    CHECK(max_abs_diff(from_disk.forward(x), net.forward(x, Composition::Kernel)) <= 1e-10);
  }
}

TEST_CASE("f32 dtype round-trips its own file bit-exactly") {
  TempDir dir;
  const NetworkSpec spec = reference_net(12, 12, 1);
  const Network net = Network::build(spec, 9);
  const std::string p1 = dir.file("f32.docv");
  save_model(net, p1, /*folded=*/false, Dtype::F32);
  const Network back = load_model(p1);
  const std::string p2 = dir.file("f32b.docv");
  save_model(back, p2, /*folded=*/false, Dtype::F32);
  CHECK(slurp(p1) == slurp(p2));
  // loaded values are the float-rounded originals
  for (std::size_t i = 0; i < net.layers().size(); ++i) {
    const Layer& a = net.layers()[i];
    const Layer& b = back.layers()[i];
    for (std::size_t j = 0; j < a.w.size(); ++j) {
      CHECK(b.w[j] == static_cast<double>(static_cast<float>(a.w[j])));
    }
  }
}

TEST_CASE("model loader rejects corrupt headers") {
  TempDir dir;
  const Network net = Network::build(reference_net(12, 12, 1), 10);
  const std::string good = dir.file("good.docv");
  save_model(net, good, false);

  auto bytes = slurp(good);
  // magic
  {
    auto bad = bytes;
    bad[0] = 'X';
    std::ofstream(dir.file("badmagic.docv"), std::ios::binary)
        .write(bad.data(), static_cast<std::streamsize>(bad.size()));
    CHECK_THROWS_WITH_AS(load_model(dir.file("badmagic.docv")),
                         doctest::Contains("bad magic"), IoError);
  }
  // version
  {
    auto bad = bytes;
    bad[4] = 9;
    std::ofstream(dir.file("badver.docv"), std::ios::binary)
        .write(bad.data(), static_cast<std::streamsize>(bad.size()));
    CHECK_THROWS_WITH_AS(load_model(dir.file("badver.docv")),
                         doctest::Contains("version"), IoError);
  }
  // truncation
  {
    auto bad = bytes;
    bad.resize(bad.size() / 2);
    std::ofstream(dir.file("short.docv"), std::ios::binary)
        .write(bad.data(), static_cast<std::streamsize>(bad.size()));
    CHECK_THROWS_AS(load_model(dir.file("short.docv")), IoError);
  }
  // trailing garbage
  {
    auto bad = bytes;
    bad.push_back(0);
    std::ofstream(dir.file("long.docv"), std::ios::binary)
        .write(bad.data(), static_cast<std::streamsize>(bad.size()));
    CHECK_THROWS_WITH_AS(load_model(dir.file("long.docv")),
                         doctest::Contains("trailing"), IoError);
  }
}

TEST_CASE("sidecar JSON summarizes the layers") {
  TempDir dir;
  const Network net = Network::build(reference_net(12, 12, 1).doconv_variant(), 11);
  const std::string path = dir.file("net.docv");
  save_model(net, path, false);
  std::ifstream in(model_sidecar_path(path));
  REQUIRE(in.good());
  nlohmann::json j;
  in >> j;
  CHECK(j["format"] == "DOCV");
  CHECK(j["folded"] == false);
  CHECK(j["layers"].size() == net.layers().size());
  CHECK(j["layers"][0]["kind"] == "doconv");
  CHECK(j["layers"][0]["tensors"][0]["name"] == "D'");
}
