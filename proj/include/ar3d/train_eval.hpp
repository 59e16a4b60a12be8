#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "ar3d/data.hpp"
#include "ar3d/nn.hpp"
#include "ar3d/optim.hpp"
#include "ar3d/vision.hpp"

namespace ar3d {

struct TrainConfig {
  int model_id = 3;
  OptimConfig optim{};
  int epochs = 50;
  std::size_t batch_size = 16;
  std::uint64_t seed = 1;
  AugmentMode augmentation = AugmentMode::none;
  PreprocessConfig preprocess{};
  /// Classes never flip-augmented (flipping would change their meaning).
  std::vector<std::string> no_flip_classes = lateral_class_names();
  /// Validation-loss level used for epochs-to-threshold reporting.
  double loss_threshold = 0.5;

  void validate() const;

  /// Recipe per preset: 1-3 Adam without decay, 4 Nadam + time decay + flip augmentation.
  static TrainConfig for_model(int model_id);
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
  double lr = 0.0;
  double seconds = 0.0;  // wall time, not part of the CSV
};

struct History {
  std::vector<EpochStats> rows;

  /// "epoch,train_loss,val_loss,val_acc,lr" with 6-decimal fixed point.
  std::string to_csv() const;
  /// First epoch (1-based) whose validation loss is <= threshold, or rows.size()+1.
  int epochs_to_threshold(double threshold) const;
};

/// Preprocessed dataset split: inputs [1,N,H,W] with labels.
struct Samples {
  std::vector<Tensor> inputs;
  std::vector<std::size_t> labels;
  std::vector<std::string> sources;
};

struct TrainResult {
  ModelSpec spec;
  ParamSet final_params;
  ParamSet best_params;  // lowest validation loss
  int best_epoch = 0;
  History history;
};

using EpochCallback = std::function<void(const EpochStats&)>;

/// Loads clips for a split and preprocesses them (parallel over clips, order preserved).
Samples prepare_split(const DatasetManifest& manifest, Split split, const PreprocessConfig& cfg);
Samples prepare_clips(const std::vector<LabeledClip>& clips, const PreprocessConfig& cfg);

/// Lower-level loop on already-preprocessed samples.
TrainResult train_on(const Samples& train, const Samples& val, std::size_t num_classes,
                     const TrainConfig& cfg, const EpochCallback& on_epoch = {});

TrainResult train(const DatasetManifest& manifest, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

struct ConfusionMatrix {
  std::vector<std::string> classes;
  std::vector<std::vector<std::size_t>> counts;  // [true][predicted]

  explicit ConfusionMatrix(std::vector<std::string> names = {});
  std::size_t total() const;
  std::size_t trace() const;
  double accuracy() const;
  /// Header row of class names then one integer row per true class.
  std::string to_csv() const;
};

struct EvalResult {
  double accuracy = 0.0;
  double mean_loss = 0.0;
  ConfusionMatrix confusion;
};

/// Index of the largest value; lowest index wins ties.
std::size_t argmax(std::span<const double> values);

EvalResult evaluate_samples(const ModelSpec& spec, const ParamSet& params, const Samples& samples,
                            const std::vector<std::string>& classes);

/// Rejects an empty split.
EvalResult evaluate(const ModelSpec& spec, const ParamSet& params, const DatasetManifest& manifest,
                    const PreprocessConfig& cfg, Split split = Split::test);

struct Prediction {
  std::size_t index = 0;
  std::string name;
  std::vector<double> probs;
};

Prediction predict(const ModelSpec& spec, const ParamSet& params, const Clip& clip,
                   const PreprocessConfig& cfg, const std::vector<std::string>& classes);

struct ResolutionRow {
  std::size_t size = 0;
  double accuracy = 0.0;
  double seconds_per_epoch = 0.0;
  int best_epoch = 0;
};

/// Same split and seed for every size; only the target resolution changes.
std::vector<ResolutionRow> resolution_study(const DatasetManifest& manifest, const TrainConfig& cfg,
                                            const std::vector<std::size_t>& sizes = {20, 40, 60},
                                            const EpochCallback& on_epoch = {});

/// "size,accuracy,seconds_per_epoch,best_epoch".
std::string resolution_csv(const std::vector<ResolutionRow>& rows);

/// Accuracies reported for the public datasets, keyed by dataset / model / bg-sub.
struct ReferenceAccuracy {
  std::string dataset;
  int model_id;
  double without_bg_sub;
  double with_bg_sub;
};
const std::vector<ReferenceAccuracy>& reference_accuracies();

}  // namespace ar3d
