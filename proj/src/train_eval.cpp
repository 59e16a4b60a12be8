#include "ar3d/train_eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "parallel.hpp"

namespace ar3d {

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Tensor stack(const Samples& s, std::span<const std::size_t> idx) {
  const Shape& one = s.inputs.at(idx[0]).shape();
  Shape shape{idx.size()};
  shape.insert(shape.end(), one.begin(), one.end());
  Tensor batch(shape);
  const std::size_t n = shape_numel(one);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto& src = s.inputs[idx[i]];
    if (src.shape() != one) throw Error("inconsistent sample shapes in batch");
    std::copy(src.data().begin(), src.data().end(), batch.data().begin() + i * n);
  }
  return batch;
}

InputShape input_shape_of(const PreprocessConfig& cfg) {
  return InputShape{1, cfg.frames, cfg.height, cfg.width};
}

struct Scored {
  std::vector<std::vector<double>> probs;
  std::vector<double> losses;
};

// Eval-mode forward over all samples in fixed-size chunks.
Scored score(const ModelSpec& spec, const ParamSet& params, const Samples& samples) {
  Scored out;
  constexpr std::size_t chunk = 32;
  std::vector<std::size_t> idx(samples.inputs.size());
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t start = 0; start < idx.size(); start += chunk) {
    const std::size_t n = std::min(chunk, idx.size() - start);
    const Tensor logits = model_logits(spec, params, stack(samples, std::span(idx).subspan(start, n)));
    const std::size_t K = spec.num_classes;
    for (std::size_t b = 0; b < n; ++b) {
      const Tensor row({K}, std::vector<float>(logits.data().begin() + b * K,
                                               logits.data().begin() + (b + 1) * K));
      auto x = softmax_cross_entropy(row, samples.labels[start + b]);
      out.probs.push_back(std::move(x.probs));
      out.losses.push_back(x.loss);
    }
  }
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  if (model_id < 1 || model_id > 4) throw Error("model id must be 1..4");
  if (epochs < 1) throw Error("epochs must be >= 1");
  if (batch_size < 1) throw Error("batch size must be >= 1");
  optim.validate();
  preprocess.validate();
}

TrainConfig TrainConfig::for_model(int model_id) {
  TrainConfig cfg;
  cfg.model_id = model_id;
  if (model_id == 4) {
    cfg.optim.kind = OptimizerKind::nadam;
    cfg.optim.decay = 0.01;
    cfg.augmentation = AugmentMode::model4;
  } else {
    cfg.optim.kind = OptimizerKind::adam;
    cfg.optim.decay = 0.0;
    cfg.augmentation = AugmentMode::none;
  }
  return cfg;
}

std::string History::to_csv() const {
  std::string out = "epoch,train_loss,val_loss,val_acc,lr\n";
  char line[160];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%d,%.6f,%.6f,%.6f,%.6f\n", r.epoch, r.train_loss, r.val_loss,
                  r.val_acc, r.lr);
    out += line;
  }
  return out;
}

int History::epochs_to_threshold(double threshold) const {
  for (const auto& r : rows)
    if (r.val_loss <= threshold) return r.epoch;
  return static_cast<int>(rows.size()) + 1;
}

Samples prepare_clips(const std::vector<LabeledClip>& clips, const PreprocessConfig& cfg) {
  Samples s;
  s.inputs.resize(clips.size());
  s.labels.resize(clips.size());
  s.sources.resize(clips.size());
  detail::parallel_for(clips.size(), [&](std::size_t i) {
    try {
      s.inputs[i] = preprocess(clips[i].clip, cfg);
    } catch (const Error& e) {
      throw Error(clips[i].source + ": " + e.what());
    }
    s.labels[i] = clips[i].label;
    s.sources[i] = clips[i].source + (clips[i].flipped ? " [flipped]" : "");
  });
  return s;
}

namespace {

std::vector<LabeledClip> load_split(const DatasetManifest& manifest, Split split) {
  const auto entries = manifest.of(split);
  std::vector<LabeledClip> clips(entries.size());
  detail::parallel_for(entries.size(), [&](std::size_t i) {
    clips[i] = {load_clip(entries[i].path), entries[i].label, entries[i].path.string(), false};
  });
  return clips;
}

}  // namespace

Samples prepare_split(const DatasetManifest& manifest, Split split, const PreprocessConfig& cfg) {
  return prepare_clips(load_split(manifest, split), cfg);
}

TrainResult train_on(const Samples& train, const Samples& val, std::size_t num_classes,
                     const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (train.inputs.empty()) throw Error("training split is empty");
  if (val.inputs.empty()) throw Error("validation split is empty");
  TrainResult r;
  r.spec = build_preset(cfg.model_id, input_shape_of(cfg.preprocess), num_classes);
  r.final_params = init_params(r.spec, cfg.seed);
  r.best_params = r.final_params;
  OptimState state;
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<std::string> names(num_classes);

  const std::size_t n = train.inputs.size();
  std::vector<std::size_t> order(n);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = decayed_lr(cfg.optim, epoch);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(mix(cfg.seed, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0.0;
    std::size_t batch_no = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size, ++batch_no) {
      const auto idx = std::span(order).subspan(start, std::min(cfg.batch_size, n - start));
      std::vector<std::size_t> targets;
      for (auto i : idx) targets.push_back(train.labels[i]);
      const auto fwd = model_forward(r.spec, r.final_params, stack(train, idx), Mode::train,
                                     mix(mix(cfg.seed, epoch + 1), batch_no));
      auto bwd = model_backward(r.spec, r.final_params, fwd.cache, targets);
      if (!std::isfinite(bwd.loss)) {
        throw Error("non-finite training loss at epoch " + std::to_string(epoch + 1) + ", batch " +
                    std::to_string(batch_no));
      }
      try {
        optimizer_step(r.final_params, bwd.grads, state, cfg.optim, lr);
      } catch (const Error& e) {
        throw Error("epoch " + std::to_string(epoch + 1) + ", batch " + std::to_string(batch_no) + ": " +
                    e.what());
      }
      loss_sum += bwd.loss * static_cast<double>(idx.size());
    }

    const auto ev = evaluate_samples(r.spec, r.final_params, val, names);
    EpochStats row;
    row.epoch = epoch + 1;
    row.train_loss = loss_sum / static_cast<double>(n);
    row.val_loss = ev.mean_loss;
    row.val_acc = ev.accuracy;
    row.lr = lr;
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!std::isfinite(row.val_loss)) {
      throw Error("non-finite validation loss at epoch " + std::to_string(row.epoch));
    }
    if (row.val_loss < best_val) {
      best_val = row.val_loss;
      r.best_params = r.final_params;
      r.best_epoch = row.epoch;
    }
    r.history.rows.push_back(row);
    if (on_epoch) on_epoch(row);
  }
  return r;
}

TrainResult train(const DatasetManifest& manifest, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (manifest.count(Split::train) == 0) throw Error("manifest has an empty train split");
  if (manifest.count(Split::val) == 0) throw Error("manifest has an empty validation split");
  const auto train_clips = load_split(manifest, Split::train);
  const auto val_clips = load_split(manifest, Split::val);

  std::vector<std::size_t> no_flip;
  if (cfg.augmentation != AugmentMode::none) {
    for (const auto& name : cfg.no_flip_classes) {
      const auto it = std::find(manifest.classes.begin(), manifest.classes.end(), name);
      if (it == manifest.classes.end()) continue;
      no_flip.push_back(static_cast<std::size_t>(it - manifest.classes.begin()));
      std::clog << "[train] class '" << name << "' excluded from flip augmentation\n";
    }
  }
  const auto augmented = augment_training_set(train_clips, val_clips, cfg.augmentation, no_flip);
  const Samples train_s = prepare_clips(augmented, cfg.preprocess);
  const Samples val_s = prepare_clips(val_clips, cfg.preprocess);
  return train_on(train_s, val_s, manifest.classes.size(), cfg, on_epoch);
}

ConfusionMatrix::ConfusionMatrix(std::vector<std::string> names)
    : classes(std::move(names)), counts(classes.size(), std::vector<std::size_t>(classes.size(), 0)) {}

std::size_t ConfusionMatrix::total() const {
  std::size_t s = 0;
  for (const auto& row : counts) s += std::accumulate(row.begin(), row.end(), std::size_t{0});
  return s;
}

std::size_t ConfusionMatrix::trace() const {
  std::size_t s = 0;
  for (std::size_t k = 0; k < counts.size(); ++k) s += counts[k][k];
  return s;
}

double ConfusionMatrix::accuracy() const {
  const auto t = total();
  return t == 0 ? 0.0 : static_cast<double>(trace()) / static_cast<double>(t);
}

std::string ConfusionMatrix::to_csv() const {
  std::ostringstream os;
  os << "true\\pred";
  for (const auto& c : classes) os << ',' << c;
  os << '\n';
  for (std::size_t i = 0; i < counts.size(); ++i) {
    os << classes[i];
    for (auto v : counts[i]) os << ',' << v;
    os << '\n';
  }
  return os.str();
}

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw Error("argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

EvalResult evaluate_samples(const ModelSpec& spec, const ParamSet& params, const Samples& samples,
                            const std::vector<std::string>& classes) {
  if (samples.inputs.empty()) throw Error("cannot evaluate an empty split");
  if (classes.size() != spec.num_classes) throw Error("class name count does not match the model");
  EvalResult r{0.0, 0.0, ConfusionMatrix(classes)};
  const auto scored = score(spec, params, samples);
  for (std::size_t i = 0; i < samples.inputs.size(); ++i) {
    r.confusion.counts.at(samples.labels[i])[argmax(scored.probs[i])] += 1;
    r.mean_loss += scored.losses[i];
  }
  r.mean_loss /= static_cast<double>(samples.inputs.size());
  r.accuracy = r.confusion.accuracy();
  return r;
}

EvalResult evaluate(const ModelSpec& spec, const ParamSet& params, const DatasetManifest& manifest,
                    const PreprocessConfig& cfg, Split split) {
  if (manifest.count(split) == 0) {
    throw Error("cannot evaluate: the " + to_string(split) + " split is empty");
  }
  return evaluate_samples(spec, params, prepare_split(manifest, split, cfg), manifest.classes);
}

Prediction predict(const ModelSpec& spec, const ParamSet& params, const Clip& clip,
                   const PreprocessConfig& cfg, const std::vector<std::string>& classes) {
  if (classes.size() != spec.num_classes) throw Error("class name count does not match the model");
  Samples one;
  one.inputs.push_back(preprocess(clip, cfg));
  one.labels.push_back(0);
  const auto scored = score(spec, params, one);
  Prediction p;
  p.probs = scored.probs[0];
  p.index = argmax(p.probs);
  p.name = classes[p.index];
  return p;
}

std::vector<ResolutionRow> resolution_study(const DatasetManifest& manifest, const TrainConfig& cfg,
                                            const std::vector<std::size_t>& sizes,
                                            const EpochCallback& on_epoch) {
  std::vector<ResolutionRow> rows;
  for (const auto size : sizes) {
    TrainConfig c = cfg;
    c.preprocess.height = size;
    c.preprocess.width = size;
    const auto result = train(manifest, c, on_epoch);
    ResolutionRow row;
    row.size = size;
    row.best_epoch = result.best_epoch;
    double secs = 0.0;
    for (const auto& e : result.history.rows) secs += e.seconds;
    row.seconds_per_epoch = secs / static_cast<double>(result.history.rows.size());
    row.accuracy = evaluate(result.spec, result.best_params, manifest, c.preprocess).accuracy;
    rows.push_back(row);
  }
  return rows;
}

std::string resolution_csv(const std::vector<ResolutionRow>& rows) {
  std::string out = "size,accuracy,seconds_per_epoch,best_epoch\n";
  char line[128];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%zu,%.6f,%.6f,%d\n", r.size, r.accuracy, r.seconds_per_epoch,
                  r.best_epoch);
    out += line;
  }
  return out;
}

const std::vector<ReferenceAccuracy>& reference_accuracies() {
  static const std::vector<ReferenceAccuracy> table{
      {"kth", 1, 0.3200, 0.6700},      {"kth", 2, 0.5700, 0.6400},      {"kth", 3, 0.6200, 0.8400},
      {"kth", 4, 0.7300, 0.9600},      {"weizmann", 1, 0.2600, 0.8333}, {"weizmann", 2, 0.6333, 0.8667},
      {"weizmann", 3, 0.6333, 0.9333}, {"weizmann", 4, 0.8000, 1.0000}, {"ut", 1, 0.4500, 0.7000},
      {"ut", 2, 0.5000, 0.7500},       {"ut", 3, 0.6000, 0.7000},       {"ut", 4, 0.6000, 0.8000},
  };
  return table;
}

}  // namespace ar3d
