#include <doctest.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "gradcheck.hpp"
#include "prwm/checkpoint.hpp"
#include "prwm/layers.hpp"

using namespace prwm;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("prwm-ckpt-" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("checkpoint round-trips tensors bit-exactly") {
  TempDir dir;
  Rng rng(21);
  std::vector<std::pair<std::string, Tensor>> tensors;
  tensors.emplace_back("weights/w", gradcheck::random_tensor({3, 4}, rng));
  tensors.emplace_back("weights/b", gradcheck::random_tensor({4}, rng));
  tensors.emplace_back("scalar", Tensor::scalar(-0.0));
  tensors.emplace_back("step", Tensor::scalar(12345.0));
  // Denormals, huge values and exact binary fractions must all survive.
  tensors[0].second[0] = 5e-324;
  tensors[0].second[1] = 1.7976931348623157e308;
  tensors[0].second[2] = 0.1;

  save_checkpoint(dir.file("a.prwm"), tensors);
  NamedTensors back = load_checkpoint(dir.file("a.prwm"));
  REQUIRE(back.items.size() == tensors.size());
  for (size_t i = 0; i < tensors.size(); ++i) {
    CHECK(back.items[i].first == tensors[i].first);
    REQUIRE(back.items[i].second.same_shape(tensors[i].second));
    for (int64_t j = 0; j < tensors[i].second.numel(); ++j) {
      // Bitwise comparison: distinguishes -0.0 from 0.0 and keeps NaN rules out.
      double a = back.items[i].second[j], b = tensors[i].second[j];
      CHECK(std::memcmp(&a, &b, sizeof a) == 0);
    }
  }

  CHECK(back.find("weights/w") != nullptr);
  CHECK(back.find("nope") == nullptr);
  CHECK(back.at("scalar")[0] == 0.0);
  CHECK_THROWS(back.at("nope"));
}

TEST_CASE("identical saves produce identical bytes") {
  TempDir dir;
  Rng rng(22);
  std::vector<std::pair<std::string, Tensor>> tensors;
  tensors.emplace_back("t", gradcheck::random_tensor({16}, rng));
  save_checkpoint(dir.file("x1.prwm"), tensors);
  save_checkpoint(dir.file("x2.prwm"), tensors);
  CHECK(file_checksum(dir.file("x1.prwm")) == file_checksum(dir.file("x2.prwm")));

  tensors[0].second[3] += 1e-15;
  save_checkpoint(dir.file("x3.prwm"), tensors);
  CHECK(file_checksum(dir.file("x1.prwm")) != file_checksum(dir.file("x3.prwm")));
}

TEST_CASE("load rejects missing, truncated and corrupt files") {
  TempDir dir;
  CHECK_THROWS(load_checkpoint(dir.file("missing.prwm")));

  Rng rng(23);
  std::vector<std::pair<std::string, Tensor>> tensors;
  tensors.emplace_back("t", gradcheck::random_tensor({8, 8}, rng));
  save_checkpoint(dir.file("good.prwm"), tensors);

  // Truncate.
  {
    std::ifstream in(dir.file("good.prwm"), std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), {});
    std::ofstream out(dir.file("trunc.prwm"), std::ios::binary);
    out.write(bytes.data(), std::streamsize(bytes.size() / 2));
  }
  CHECK_THROWS(load_checkpoint(dir.file("trunc.prwm")));

  // Wrong magic.
  {
    std::ifstream in(dir.file("good.prwm"), std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), {});
    bytes[0] = 'X';
    std::ofstream out(dir.file("magic.prwm"), std::ios::binary);
    out.write(bytes.data(), std::streamsize(bytes.size()));
  }
  CHECK_THROWS(load_checkpoint(dir.file("magic.prwm")));
}

TEST_CASE("snapshot and restore copy values through a registry") {
  Rng rng(24);
  nn::Dense d(3, 2, rng);
  nn::Params p;
  d.register_params(p, "dense");
  auto snap = snapshot_params(p);
  REQUIRE(snap.size() == 2);

  // Clobber and restore.
  for (auto& [name, var] : p.items)
    for (auto& v : var.value().data) v = -99.0;
  NamedTensors saved;
  saved.items = snap;
  restore_params(p, saved);
  for (size_t k = 0; k < snap.size(); ++k)
    for (int64_t i = 0; i < snap[k].second.numel(); ++i)
      CHECK(p.items[k].second.value()[i] == snap[k].second[i]);
}

TEST_CASE("restore_params with a prefix selects the matching subset") {
  Rng rng(25);
  nn::Dense d(2, 2, rng);
  nn::Params p;
  d.register_params(p, "m");
  NamedTensors saved;
  for (auto& [name, var] : p.items) {
    Tensor t = var.value();
    for (auto& v : t.data) v += 1.0;
    saved.items.emplace_back("model/" + name, t);
  }
  saved.items.emplace_back("other/garbage", Tensor::scalar(0.0));
  std::vector<Tensor> before;
  for (auto& [name, var] : p.items) before.push_back(var.value());
  restore_params(p, saved, "model/");
  for (size_t k = 0; k < p.items.size(); ++k)
    for (int64_t i = 0; i < before[k].numel(); ++i)
      CHECK(p.items[k].second.value()[i] == before[k][i] + 1.0);
}

TEST_CASE("restore_params throws when a parameter is absent") {
  Rng rng(26);
  nn::Dense d(2, 2, rng);
  nn::Params p;
  d.register_params(p, "m");
  NamedTensors empty;
  CHECK_THROWS(restore_params(p, empty));
}
