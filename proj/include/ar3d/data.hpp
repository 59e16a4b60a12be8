#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ar3d/vision.hpp"

namespace ar3d {

namespace fs = std::filesystem;

// ---- RVID container ------------------------------------------------------
// little-endian: "RVID" | u8 version=1 | u16 T | u16 H | u16 W | f32 fps | T*H*W bytes

inline constexpr std::size_t kRvidHeaderSize = 4 + 1 + 2 + 2 + 2 + 4;

std::vector<std::uint8_t> encode_rvid(const Clip& clip);
Clip decode_rvid(std::span<const std::uint8_t> bytes);

Clip read_rvid(const fs::path& path);
void write_rvid(const fs::path& path, const Clip& clip);

// ---- PGM frame folders ---------------------------------------------------

/// Binary P5, maxval 255.
Tensor read_pgm(const fs::path& path);
void write_pgm(const fs::path& path, const Tensor& frame);

/// Frames in lexicographic filename order. fps comes from a sidecar `fps.txt` when present.
Clip load_pgm_dir(const fs::path& dir, double default_fps = 25.0);

/// Dispatches on path kind: `.rvid` file or a directory of PGM frames.
Clip load_clip(const fs::path& path, double default_fps = 25.0);

// ---- Manifests -----------------------------------------------------------

enum class Split { train, val, test };

std::string to_string(Split split);
Split split_from_string(const std::string& name);

struct ManifestEntry {
  fs::path path;  // resolved against the manifest directory
  std::size_t label = 0;
  Split split = Split::train;
};

struct DatasetManifest {
  std::vector<std::string> classes;
  std::vector<ManifestEntry> entries;

  std::size_t count(Split split) const;
  std::vector<ManifestEntry> of(Split split) const;
  std::size_t class_index(const std::string& name) const;
};

/// Parses and validates; every referenced clip must exist.
DatasetManifest load_manifest(const fs::path& path);
/// Paths are written relative to the manifest's directory when possible.
void write_manifest(const fs::path& path, const DatasetManifest& manifest);

// ---- Augmentation --------------------------------------------------------

enum class AugmentMode { none, model4 };

std::string to_string(AugmentMode mode);
AugmentMode augment_from_string(const std::string& name);

struct LabeledClip {
  Clip clip;
  std::size_t label = 0;
  std::string source;  // originating path
  bool flipped = false;
};

/// none: training list unchanged. model4: train + hflip(train) + hflip(val), skipping the flipped
/// copies for any label listed in `no_flip_labels`.
std::vector<LabeledClip> augment_training_set(const std::vector<LabeledClip>& train,
                                              const std::vector<LabeledClip>& val,
                                              AugmentMode mode,
                                              const std::vector<std::size_t>& no_flip_labels = {});

// ---- Synthetic motion dataset --------------------------------------------

/// Class names in generation order; a K-class set uses the first K.
const std::vector<std::string>& synth_class_names();
/// Classes whose label changes meaning under a horizontal flip.
const std::vector<std::string>& lateral_class_names();

struct SynthConfig {
  std::size_t classes = 6;
  std::size_t clips_per_class = 40;
  std::size_t frames = 16;
  std::size_t height = 24;
  std::size_t width = 24;
  double fps = 8.0;
  double bg_amplitude = 0.3;
  double noise_sigma = 0.02;
  std::uint64_t seed = 1;

  void validate() const;
};

/// One clip of class `label` with deterministic randomness from `seed`.
Clip synth_clip(const SynthConfig& cfg, std::size_t label, std::uint64_t seed);

/// Writes `<out>/<class>/clip_NNNN.rvid` and `<out>/manifest.txt` (70/15/15 per class).
DatasetManifest synth_generate(const SynthConfig& cfg, const fs::path& out_dir);

}  // namespace ar3d
