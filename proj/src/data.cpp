#include "ar3d/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

namespace ar3d {

namespace {

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for " + path.string());
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

std::uint16_t get_u16(std::span<const std::uint8_t> b, std::size_t off) {
  return static_cast<std::uint16_t>(b[off] | (b[off + 1] << 8));
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

// ---- RVID ----------------------------------------------------------------

std::vector<std::uint8_t> encode_rvid(const Clip& clip) {
  clip.validate();
  const std::size_t T = clip.length(), H = clip.height(), W = clip.width();
  if (T > 0xffff || H > 0xffff || W > 0xffff) {
    throw Error("clip dims " + shape_str(clip.frames.shape()) + " exceed the RVID u16 limit");
  }
  std::vector<std::uint8_t> out{'R', 'V', 'I', 'D', 1};
  out.reserve(kRvidHeaderSize + clip.frames.size());
  put_u16(out, static_cast<std::uint16_t>(T));
  put_u16(out, static_cast<std::uint16_t>(H));
  put_u16(out, static_cast<std::uint16_t>(W));
  const float fps = static_cast<float>(clip.fps);
  std::uint32_t bits;
  std::memcpy(&bits, &fps, 4);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  for (float p : clip.frames.data()) {
    out.push_back(static_cast<std::uint8_t>(std::lround(static_cast<double>(p) * 255.0)));
  }
  return out;
}

Clip decode_rvid(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kRvidHeaderSize) {
    throw Error("RVID truncated header: " + std::to_string(bytes.size()) + " bytes, need " +
                std::to_string(kRvidHeaderSize));
  }
  if (std::memcmp(bytes.data(), "RVID", 4) != 0) throw Error("RVID bad magic at byte 0");
  if (bytes[4] != 1) throw Error("RVID unsupported version " + std::to_string(bytes[4]) + " at byte 4");
  const std::size_t T = get_u16(bytes, 5), H = get_u16(bytes, 7), W = get_u16(bytes, 9);
  if (T == 0 || H == 0 || W == 0) throw Error("RVID zero dimension in header at byte 5");
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(bytes[11 + i]) << (8 * i);
  float fps;
  std::memcpy(&fps, &bits, 4);
  if (!(fps > 0.0f) || !std::isfinite(fps)) throw Error("RVID invalid fps at byte 11");
  const std::size_t payload = T * H * W;
  const std::size_t have = bytes.size() - kRvidHeaderSize;
  if (have < payload) {
    throw Error("RVID truncated payload: expected " + std::to_string(payload) + " bytes after offset " +
                std::to_string(kRvidHeaderSize) + ", file ends at byte " + std::to_string(bytes.size()));
  }
  if (have > payload) {
    throw Error("RVID trailing data at byte " + std::to_string(kRvidHeaderSize + payload));
  }
  Clip clip{Tensor({T, H, W}), fps};
  for (std::size_t i = 0; i < payload; ++i) {
    clip.frames[i] = static_cast<float>(bytes[kRvidHeaderSize + i] / 255.0);
  }
  return clip;
}

Clip read_rvid(const fs::path& path) {
  try {
    return decode_rvid(read_bytes(path));
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

void write_rvid(const fs::path& path, const Clip& clip) { write_bytes(path, encode_rvid(clip)); }

// ---- PGM -----------------------------------------------------------------

Tensor read_pgm(const fs::path& path) {
  const auto bytes = read_bytes(path);
  std::size_t pos = 0;
  auto fail = [&](const std::string& why) -> Error { return Error(path.string() + ": " + why); };
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&]() -> std::size_t {
    skip_space();
    std::size_t v = 0, digits = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos++] - '0');
      if (++digits > 7) throw fail("PGM header value too large");
    }
    if (digits == 0) throw fail("malformed PGM header");
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw fail("not a binary P5 PGM");
  pos = 2;
  const std::size_t W = read_int(), H = read_int(), maxval = read_int();
  if (maxval != 255) throw fail("PGM maxval " + std::to_string(maxval) + " unsupported (need 255)");
  if (W == 0 || H == 0) throw fail("PGM has zero dimension");
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw fail("malformed PGM header");
  ++pos;
  if (bytes.size() - pos < W * H) throw fail("PGM pixel data truncated");
  Tensor frame({H, W});
  for (std::size_t i = 0; i < W * H; ++i) frame[i] = static_cast<float>(bytes[pos + i] / 255.0);
  return frame;
}

void write_pgm(const fs::path& path, const Tensor& frame) {
  if (frame.rank() != 2) throw Error("PGM frame must be [H,W]");
  const std::string header =
      "P5\n" + std::to_string(frame.dim(1)) + " " + std::to_string(frame.dim(0)) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  for (float p : frame.data()) {
    out.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(p, 0.0f, 1.0f) * 255.0)));
  }
  write_bytes(path, out);
}

Clip load_pgm_dir(const fs::path& dir, double default_fps) {
  if (!fs::is_directory(dir)) throw Error(dir.string() + " is not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".pgm") files.push_back(e.path());
  }
  if (files.empty()) throw Error(dir.string() + " contains no .pgm frames");
  std::sort(files.begin(), files.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });
  double fps = default_fps;
  if (const auto side = dir / "fps.txt"; fs::exists(side)) {
    std::ifstream in(side);
    if (!(in >> fps) || !(fps > 0.0)) throw Error(side.string() + ": invalid fps value");
  }
  const Tensor first = read_pgm(files[0]);
  const std::size_t H = first.dim(0), W = first.dim(1);
  Clip clip{Tensor({files.size(), H, W}), fps};
  for (std::size_t t = 0; t < files.size(); ++t) {
    const Tensor f = t == 0 ? first : read_pgm(files[t]);
    if (f.dim(0) != H || f.dim(1) != W) {
      throw Error(files[t].string() + ": frame is " + std::to_string(f.dim(1)) + "x" +
                  std::to_string(f.dim(0)) + ", expected " + std::to_string(W) + "x" + std::to_string(H));
    }
    std::copy(f.data().begin(), f.data().end(), clip.frames.data().begin() + t * H * W);
  }
  return clip;
}

Clip load_clip(const fs::path& path, double default_fps) {
  if (fs::is_directory(path)) return load_pgm_dir(path, default_fps);
  return read_rvid(path);
}

// ---- Manifest ------------------------------------------------------------

std::string to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

Split split_from_string(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "val" || name == "validation") return Split::val;
  if (name == "test") return Split::test;
  throw Error("unknown split '" + name + "'");
}

std::size_t DatasetManifest::count(Split split) const {
  return static_cast<std::size_t>(
      std::count_if(entries.begin(), entries.end(), [&](const auto& e) { return e.split == split; }));
}

std::vector<ManifestEntry> DatasetManifest::of(Split split) const {
  std::vector<ManifestEntry> out;
  for (const auto& e : entries)
    if (e.split == split) out.push_back(e);
  return out;
}

std::size_t DatasetManifest::class_index(const std::string& name) const {
  const auto it = std::find(classes.begin(), classes.end(), name);
  if (it == classes.end()) throw Error("unknown class '" + name + "'");
  return static_cast<std::size_t>(it - classes.begin());
}

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open manifest " + path.string());
  const fs::path base = path.parent_path();
  DatasetManifest m;
  std::set<fs::path> seen;
  std::string line;
  std::size_t lineno = 0;
  bool have_classes = false;
  auto fail = [&](const std::string& why) {
    return Error(path.string() + ":" + std::to_string(lineno) + ": " + why);
  };
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    if (!have_classes) {
      if (line.rfind("classes:", 0) != 0) throw fail("expected 'classes: a,b,c' header");
      for (auto& name : split_csv(line.substr(8))) {
        if (name.empty()) throw fail("empty class name");
        if (std::find(m.classes.begin(), m.classes.end(), name) != m.classes.end()) {
          throw fail("duplicate class '" + name + "'");
        }
        m.classes.push_back(name);
      }
      if (m.classes.size() < 2) throw fail("need at least 2 classes");
      have_classes = true;
      continue;
    }
    const auto fields = split_csv(line);
    if (fields.size() != 3) throw fail("expected 'path,class_name,split'");
    const auto cls = std::find(m.classes.begin(), m.classes.end(), fields[1]);
    if (cls == m.classes.end()) throw fail("class '" + fields[1] + "' is not declared in the header");
    Split split;
    try {
      split = split_from_string(fields[2]);
    } catch (const Error& e) {
      throw fail(e.what());
    }
    fs::path p = fields[0];
    if (p.is_relative()) p = base / p;
    p = p.lexically_normal();
    if (!fs::exists(p)) throw fail("clip " + p.string() + " does not exist");
    if (!seen.insert(p).second) throw fail("duplicate clip path " + p.string());
    m.entries.push_back({p, static_cast<std::size_t>(cls - m.classes.begin()), split});
  }
  if (!have_classes) throw Error(path.string() + ": missing 'classes:' header");
  return m;
}

void write_manifest(const fs::path& path, const DatasetManifest& manifest) {
  std::ostringstream os;
  os << "classes: ";
  for (std::size_t i = 0; i < manifest.classes.size(); ++i) os << (i ? "," : "") << manifest.classes[i];
  os << '\n';
  const fs::path base = path.parent_path();
  for (const auto& e : manifest.entries) {
    fs::path p = e.path;
    if (!base.empty()) {
      const auto rel = p.lexically_relative(base);
      if (!rel.empty() && *rel.begin() != "..") p = rel;
    }
    os << p.generic_string() << ',' << manifest.classes.at(e.label) << ',' << to_string(e.split) << '\n';
  }
  const auto s = os.str();
  write_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

// ---- Augmentation --------------------------------------------------------

std::string to_string(AugmentMode mode) { return mode == AugmentMode::none ? "none" : "model4"; }

AugmentMode augment_from_string(const std::string& name) {
  if (name == "none") return AugmentMode::none;
  if (name == "model4" || name == "flip") return AugmentMode::model4;
  throw Error("unknown augmentation mode '" + name + "' (expected none or model4)");
}

std::vector<LabeledClip> augment_training_set(const std::vector<LabeledClip>& train,
                                              const std::vector<LabeledClip>& val, AugmentMode mode,
                                              const std::vector<std::size_t>& no_flip_labels) {
  std::vector<LabeledClip> out = train;
  if (mode == AugmentMode::none) return out;
  auto flippable = [&](const LabeledClip& c) {
    return std::find(no_flip_labels.begin(), no_flip_labels.end(), c.label) == no_flip_labels.end();
  };
  for (const auto* set : {&train, &val}) {
    for (const auto& c : *set) {
      if (!flippable(c)) continue;
      out.push_back({hflip(c.clip), c.label, c.source, !c.flipped});
    }
  }
  return out;
}

// ---- Synthetic -----------------------------------------------------------

const std::vector<std::string>& synth_class_names() {
  static const std::vector<std::string> names{"translate-left", "translate-right", "translate-up",
                                              "translate-down", "grow-shrink",     "oscillate"};
  return names;
}

const std::vector<std::string>& lateral_class_names() {
  static const std::vector<std::string> names{"translate-left", "translate-right"};
  return names;
}

void SynthConfig::validate() const {
  if (classes < 2 || classes > synth_class_names().size()) {
    throw Error("synthetic class count must be within 2.." + std::to_string(synth_class_names().size()));
  }
  if (clips_per_class < 3) throw Error("need at least 3 clips per class for train/val/test splits");
  if (frames < 3 || height < 8 || width < 8) throw Error("synthetic clips must be at least 3x8x8");
  if (!(fps > 0.0)) throw Error("synthetic fps must be > 0");
  if (!(bg_amplitude >= 0.0 && bg_amplitude <= 0.45)) throw Error("background amplitude must lie in [0,0.45]");
  if (!(noise_sigma >= 0.0 && noise_sigma < 0.2)) throw Error("noise sigma must lie in [0,0.2)");
}

namespace {

// Area of [a0,a1] x [b0,b1] covered within pixel [x,x+1] x [y,y+1].
double coverage(double x, double y, double a0, double a1, double b0, double b1) {
  const double ox = std::max(0.0, std::min(x + 1.0, a1) - std::max(x, a0));
  const double oy = std::max(0.0, std::min(y + 1.0, b1) - std::max(y, b0));
  return ox * oy;
}

}  // namespace

Clip synth_clip(const SynthConfig& cfg, std::size_t label, std::uint64_t seed) {
  cfg.validate();
  if (label >= cfg.classes) throw Error("synthetic label out of range");
  const std::size_t T = cfg.frames, H = cfg.height, W = cfg.width;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const double pi = std::numbers::pi;

  // static texture: three random plane waves
  std::vector<double> bg(H * W, 0.5);
  if (cfg.bg_amplitude > 0.0) {
    double fx[3], fy[3], ph[3];
    for (int k = 0; k < 3; ++k) {
      const double freq = 1.0 + 3.0 * uni(rng);
      const double angle = 2.0 * pi * uni(rng);
      fx[k] = 2.0 * pi * freq * std::cos(angle) / static_cast<double>(W);
      fy[k] = 2.0 * pi * freq * std::sin(angle) / static_cast<double>(H);
      ph[k] = 2.0 * pi * uni(rng);
    }
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        double s = 0.0;
        for (int k = 0; k < 3; ++k) s += std::sin(fx[k] * x + fy[k] * y + ph[k]);
        bg[y * W + x] = 0.5 + cfg.bg_amplitude * std::clamp(s / 2.0, -1.0, 1.0);
      }
  }

  const double dim = static_cast<double>(std::min(H, W));
  const double side = std::max(3.0, std::round(0.25 * dim)) * (0.9 + 0.2 * uni(rng));
  const double intensity = uni(rng) < 0.5 ? 0.05 : 0.95;
  const double half = side / 2.0;
  const double travel = (0.45 + 0.15 * uni(rng));
  auto jitter = [&](double extent) { return half + (extent - 2.0 * half) * (0.3 + 0.4 * uni(rng)); };
  const double cx0 = jitter(static_cast<double>(W)), cy0 = jitter(static_cast<double>(H));
  const double osc_cycles = 2.0 + uni(rng);
  const double osc_phase = 2.0 * pi * uni(rng);
  const std::string& kind = synth_class_names()[label];

  std::normal_distribution<double> noise(0.0, cfg.noise_sigma > 0.0 ? cfg.noise_sigma : 1.0);
  Clip clip{Tensor({T, H, W}), cfg.fps};
  for (std::size_t t = 0; t < T; ++t) {
    const double u = static_cast<double>(t) / static_cast<double>(T - 1);
    double cx = cx0, cy = cy0, h = half;
    const double span_x = travel * (W - 2.0 * half), span_y = travel * (H - 2.0 * half);
    const double lo_x = half + (W - 2.0 * half - span_x) * 0.5, lo_y = half + (H - 2.0 * half - span_y) * 0.5;
    if (kind == "translate-left") {
      cx = lo_x + span_x * (1.0 - u);
    } else if (kind == "translate-right") {
      cx = lo_x + span_x * u;
    } else if (kind == "translate-up") {
      cy = lo_y + span_y * (1.0 - u);
    } else if (kind == "translate-down") {
      cy = lo_y + span_y * u;
    } else if (kind == "grow-shrink") {
      const double tri = 1.0 - std::abs(2.0 * u - 1.0);
      h = half * (0.5 + 0.9 * tri);
      cx = std::clamp(cx0, h, W - h);
      cy = std::clamp(cy0, h, H - h);
    } else {  // oscillate
      const double amp = std::max(1.0, 0.08 * dim);
      cx = std::clamp(cx0 + amp * std::sin(2.0 * pi * osc_cycles * u + osc_phase), half, W - half);
    }
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        const double cov = coverage(static_cast<double>(x), static_cast<double>(y), cx - h, cx + h, cy - h, cy + h);
        double v = bg[y * W + x] * (1.0 - cov) + intensity * cov;
        if (cfg.noise_sigma > 0.0) v += noise(rng);
        clip.frames[(t * H + y) * W + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
  }
  return clip;
}

DatasetManifest synth_generate(const SynthConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) throw Error("cannot create output directory " + out_dir.string());
  DatasetManifest m;
  m.classes.assign(synth_class_names().begin(), synth_class_names().begin() + cfg.classes);
  const std::size_t n = cfg.clips_per_class;
  const auto n_train = static_cast<std::size_t>(std::lround(0.70 * n));
  const auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(0.15 * n)));
  if (n_train + n_val >= n) throw Error("too few clips per class for a 70/15/15 split");
  for (std::size_t k = 0; k < cfg.classes; ++k) {
    const fs::path cls_dir = out_dir / m.classes[k];
    fs::create_directories(cls_dir, ec);
    if (ec) throw Error("cannot create " + cls_dir.string());
    for (std::size_t i = 0; i < n; ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "clip_%04zu.rvid", i);
      const fs::path p = cls_dir / name;
      write_rvid(p, synth_clip(cfg, k, mix_seed(mix_seed(cfg.seed, k), i)));
      const Split split = i < n_train ? Split::train : i < n_train + n_val ? Split::val : Split::test;
      m.entries.push_back({p.lexically_normal(), k, split});
    }
  }
  write_manifest(out_dir / "manifest.txt", m);
  return m;
}

}  // namespace ar3d
