#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <set>

#include "ar3d/data.hpp"
#include "doctest.h"
#include "oracles.hpp"
#include "tempdir.hpp"

using namespace ar3d;

namespace {

Clip quantized_clip(std::size_t T, std::size_t H, std::size_t W, std::uint64_t seed, double fps = 12.5) {
  std::mt19937_64 rng(seed);
  Clip c{Tensor({T, H, W}), fps};
  for (auto& v : c.frames.data()) v = static_cast<float>(rng() % 256) / 255.0f;
  return c;
}

std::vector<std::uint8_t> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_bytes(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  out << s;
}

std::string error_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

std::vector<double> centroid_cols(const Clip& c) {
  std::vector<double> out;
  const auto H = c.height(), W = c.width();
  for (std::size_t t = 0; t < c.length(); ++t) {
    double sw = 0, s = 0;
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t w = 0; w < W; ++w) {
        const double v = c.frames[(t * H + h) * W + w];
        sw += v * w;
        s += v;
      }
    out.push_back(sw / s);
  }
  return out;
}

}  // namespace

TEST_CASE("RVID encoding") {
  const Clip one{Tensor({1, 1, 1}, 1.0f), 25.0};
  const auto bytes = encode_rvid(one);
  REQUIRE(bytes.size() == kRvidHeaderSize + 1);
  CHECK(std::memcmp(bytes.data(), "RVID", 4) == 0);
  CHECK(bytes[4] == 1);
  CHECK(bytes.back() == 0xFF);

  const Clip kth{Tensor({35, 120, 160}, 0.5f), 25.0};
  CHECK(encode_rvid(kth).size() - kRvidHeaderSize == 672000);

  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto c = quantized_clip(3 + s, 4, 7, s);
    const auto enc = encode_rvid(c);
    const auto dec = decode_rvid(enc);
    CHECK(dec == Clip{c.frames, static_cast<float>(c.fps)});
    CHECK(encode_rvid(dec) == enc);
  }
}

TEST_CASE("RVID rejects malformed streams with byte offsets") {
  auto bytes = encode_rvid(quantized_clip(2, 3, 3, 1));
  auto bad = bytes;
  bad[0] = 'X';
  CHECK(error_of([&] { decode_rvid(bad); }).find("byte 0") != std::string::npos);
  bad = bytes;
  bad[4] = 2;
  CHECK(error_of([&] { decode_rvid(bad); }).find("byte 4") != std::string::npos);
  bad = bytes;
  bad.pop_back();
  CHECK(error_of([&] { decode_rvid(bad); }).find("truncated payload") != std::string::npos);
  bad = bytes;
  bad.push_back(0);
  CHECK(error_of([&] { decode_rvid(bad); }).find("trailing") != std::string::npos);
  CHECK_THROWS_AS(decode_rvid(std::vector<std::uint8_t>(5, 0)), Error);
  CHECK_THROWS_AS(encode_rvid(Clip{Tensor({70000, 1, 1}, 0.0f), 25.0}), Error);
}

TEST_CASE("PGM folders") {
  TempDir tmp("pgm");
  SUBCASE("single frame, maxval byte maps to 1.0") {
    const auto d = tmp / "one";
    fs::create_directories(d);
    Tensor f({2, 3}, {0.0f, 1.0f, 0.5f, 1.0f, 0.0f, 0.2f});
    write_pgm(d / "f.pgm", f);
    const auto c = load_pgm_dir(d, 30.0);
    CHECK(c.frames.shape() == Shape{1, 2, 3});
    CHECK(c.frames[1] == 1.0f);
    CHECK(c.fps == 30.0);
  }
  SUBCASE("lexicographic order and fps sidecar") {
    const auto d = tmp / "ten";
    fs::create_directories(d);
    for (int i = 9; i >= 0; --i) {
      char name[32];
      std::snprintf(name, sizeof name, "frame_%03d.pgm", i);
      write_pgm(d / name, Tensor({4, 5}, static_cast<float>(i * 20) / 255.0f));
    }
    write_bytes(d / "fps.txt", "15\n");
    const auto c = load_clip(d);
    REQUIRE(c.length() == 10);
    CHECK(c.fps == 15.0);
    for (std::size_t t = 0; t < 10; ++t) CHECK(c.frames[t * 20] == static_cast<float>(t * 20) / 255.0f);
  }
  SUBCASE("mixed sizes and non-P5 files are rejected naming the file") {
    const auto d = tmp / "mixed";
    fs::create_directories(d);
    write_pgm(d / "a.pgm", Tensor({4, 5}, 0.1f));
    write_pgm(d / "b.pgm", Tensor({5, 5}, 0.1f));
    CHECK(error_of([&] { load_pgm_dir(d); }).find("b.pgm") != std::string::npos);
    const auto e = tmp / "ascii";
    fs::create_directories(e);
    write_bytes(e / "x.pgm", "P2\n1 1\n255\n0\n");
    CHECK(error_of([&] { load_pgm_dir(e); }).find("x.pgm") != std::string::npos);
    CHECK_THROWS_AS(load_pgm_dir(tmp / "missing"), Error);
  }
}

TEST_CASE("manifest parsing") {
  TempDir tmp("manifest");
  fs::create_directories(tmp / "clips");
  const auto clip = quantized_clip(3, 4, 4, 2);
  SUBCASE("KTH-sized split counts") {
    std::string text = "classes: boxing,clapping,waving,jogging,running,walking\n";
    const char* splits[] = {"train", "val", "test"};
    const int counts[] = {300, 122, 100};
    int n = 0;
    for (int s = 0; s < 3; ++s)
      for (int i = 0; i < counts[s]; ++i, ++n) {
        const std::string name = "clips/c" + std::to_string(n) + ".rvid";
        write_rvid(tmp / name, clip);
        text += name + "," + std::string(n % 2 ? "boxing" : "walking") + "," + splits[s] + "\n";
      }
    write_bytes(tmp / "m.txt", text);
    const auto m = load_manifest(tmp / "m.txt");
    CHECK(m.classes.size() == 6);
    CHECK(m.count(Split::train) == 300);
    CHECK(m.count(Split::val) == 122);
    CHECK(m.count(Split::test) == 100);
    CHECK(m.entries[0].path == (tmp.path / "clips/c0.rvid").lexically_normal());
    CHECK(m.entries[1].label == m.class_index("boxing"));

    write_manifest(tmp / "copy.txt", m);
    const auto again = load_manifest(tmp / "copy.txt");
    CHECK(again.classes == m.classes);
    CHECK(again.entries.size() == m.entries.size());
    CHECK(again.entries.back().path == m.entries.back().path);
  }
  SUBCASE("errors name the line") {
    write_rvid(tmp / "clips/a.rvid", clip);
    write_bytes(tmp / "bad.txt", "classes: a,b\nclips/a.rvid,a,train\nclips/a.rvid,c,test\n");
    CHECK(error_of([&] { load_manifest(tmp / "bad.txt"); }).find(":3:") != std::string::npos);
    write_bytes(tmp / "dup.txt", "classes: a,b\nclips/a.rvid,a,train\nclips/./a.rvid,b,test\n");
    CHECK(error_of([&] { load_manifest(tmp / "dup.txt"); }).find("duplicate") != std::string::npos);
    write_bytes(tmp / "missing.txt", "classes: a,b\nclips/zzz.rvid,a,train\n");
    CHECK(error_of([&] { load_manifest(tmp / "missing.txt"); }).find(":2:") != std::string::npos);
    write_bytes(tmp / "split.txt", "classes: a,b\nclips/a.rvid,a,holdout\n");
    CHECK_THROWS_AS(load_manifest(tmp / "split.txt"), Error);
    write_bytes(tmp / "nohdr.txt", "clips/a.rvid,a,train\n");
    CHECK_THROWS_AS(load_manifest(tmp / "nohdr.txt"), Error);
  }
  SUBCASE("empty test split is accepted") {
    write_rvid(tmp / "clips/a.rvid", clip);
    write_rvid(tmp / "clips/b.rvid", clip);
    write_bytes(tmp / "m.txt", "classes: a,b\nclips/a.rvid,a,train\nclips/b.rvid,b,val\n");
    CHECK(load_manifest(tmp / "m.txt").count(Split::test) == 0);
  }
}

TEST_CASE("training-set augmentation") {
  std::vector<LabeledClip> train, val;
  for (std::size_t i = 0; i < 46; ++i) train.push_back({quantized_clip(3, 2, 3, i), i % 5, "train/" + std::to_string(i)});
  for (std::size_t i = 0; i < 13; ++i) val.push_back({quantized_clip(3, 2, 3, 100 + i), i % 5, "val/" + std::to_string(i)});

  const auto none = augment_training_set(train, val, AugmentMode::none);
  REQUIRE(none.size() == 46);
  for (std::size_t i = 0; i < 46; ++i) {
    CHECK(none[i].clip == train[i].clip);
    CHECK_FALSE(none[i].flipped);
  }

  const auto aug = augment_training_set(train, val, AugmentMode::model4);
  CHECK(aug.size() == 105);
  std::size_t flipped_val = 0;
  for (const auto& c : aug) {
    if (c.source.rfind("val/", 0) == 0) {
      CHECK(c.flipped);  // never the unflipped validation clip
      ++flipped_val;
      const auto& orig = val[std::stoul(c.source.substr(4))];
      CHECK(c.clip == hflip(orig.clip));
      CHECK(c.label == orig.label);
    }
  }
  CHECK(flipped_val == 13);

  const auto partial = augment_training_set(train, val, AugmentMode::model4, {0, 1});
  std::size_t expect = 46;
  for (const auto& c : train) expect += c.label > 1;
  for (const auto& c : val) expect += c.label > 1;
  CHECK(partial.size() == expect);
  CHECK(augment_from_string("model4") == AugmentMode::model4);
  CHECK_THROWS_AS(augment_from_string("mixup"), Error);
}

TEST_CASE("synthetic generator") {
  TempDir a("synth_a"), b("synth_b");
  SynthConfig cfg;
  cfg.clips_per_class = 10;
  cfg.frames = 8;
  cfg.height = cfg.width = 12;
  const auto ma = synth_generate(cfg, a.path);
  const auto mb = synth_generate(cfg, b.path);
  CHECK(ma.entries.size() == 60);
  CHECK(ma.classes == std::vector<std::string>(synth_class_names().begin(), synth_class_names().end()));
  for (std::size_t i = 0; i < ma.entries.size(); ++i) {
    CHECK(slurp(ma.entries[i].path) == slurp(mb.entries[i].path));
  }
  CHECK(slurp(a / "manifest.txt") == slurp(b / "manifest.txt"));

  const auto loaded = load_manifest(a / "manifest.txt");
  CHECK(loaded.entries.size() == 60);
  std::set<fs::path> seen;
  for (const auto& e : loaded.entries) CHECK(seen.insert(e.path).second);
  for (std::size_t k = 0; k < 6; ++k) {
    std::size_t tr = 0, va = 0, te = 0;
    for (const auto& e : loaded.entries) {
      if (e.label != k) continue;
      tr += e.split == Split::train;
      va += e.split == Split::val;
      te += e.split == Split::test;
    }
    CHECK(tr == 7);
    CHECK(va == 2);
    CHECK(te == 1);
  }

  SynthConfig big;
  CHECK(big.classes * big.clips_per_class == 240);
  cfg.classes = 7;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg.classes = 6;
  cfg.noise_sigma = 0.2;
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("synthetic motion classes") {
  SynthConfig cfg;
  cfg.noise_sigma = 0.0;
  cfg.bg_amplitude = 0.0;
  // flat background: contrast against the corner pixel isolates the square
  auto contrast = [](Clip c) {
    const float bg = c.frames[0];
    for (auto& v : c.frames.data()) v = std::abs(v - bg);
    return c;
  };
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto left = centroid_cols(contrast(synth_clip(cfg, 0, s)));
    for (std::size_t t = 1; t < left.size(); ++t) CHECK(left[t] < left[t - 1]);
    const auto right = centroid_cols(contrast(synth_clip(cfg, 1, s)));
    for (std::size_t t = 1; t < right.size(); ++t) CHECK(right[t] > right[t - 1]);
  }
  // noise-free flat background: pixels the shape never visits subtract to exactly zero
  for (std::size_t label = 0; label < 6; ++label) {
    const auto c = synth_clip(cfg, label, 3);
    const auto sub = background_subtract(c);
    const float bg = c.frames[0];
    const auto HW = c.height() * c.width();
    std::size_t untouched = 0;
    for (std::size_t k = 0; k < HW; ++k) {
      bool visited = false;
      for (std::size_t t = 0; t < c.length(); ++t) visited |= c.frames[t * HW + k] != bg;
      if (visited) continue;
      ++untouched;
      for (std::size_t t = 0; t < c.length(); ++t) CHECK(sub.frames[t * HW + k] == 0.0f);
    }
    CHECK(untouched > HW / 4);
  }
}
