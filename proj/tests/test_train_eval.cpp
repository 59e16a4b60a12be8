#include <cmath>
#include <iostream>
#include <numeric>
#include <sstream>

#include "ar3d/model_io.hpp"
#include "ar3d/train_eval.hpp"
#include "doctest.h"
#include "tempdir.hpp"

using namespace ar3d;

namespace {

struct TinySet {
  TempDir dir{"train_eval"};
  DatasetManifest manifest;
  TrainConfig cfg;

  TinySet() {
    SynthConfig s;
    s.classes = 3;
    s.clips_per_class = 7;
    s.frames = 8;
    s.height = s.width = 12;
    s.fps = 8.0;
    manifest = synth_generate(s, dir.path);
    cfg = TrainConfig::for_model(1);
    cfg.epochs = 3;
    cfg.batch_size = 4;
    cfg.preprocess.seconds = 1.0;
    cfg.preprocess.frames = 8;
    cfg.preprocess.height = cfg.preprocess.width = 8;
  }
};

// Every sample predicted as class `k` by a zero model with a biased output layer.
ParamSet constant_predictor(const ModelSpec& spec, std::size_t k) {
  auto p = init_params(spec, 1).zeros_like();
  p.tensors.back().value[k] = 5.0f;
  return p;
}

}  // namespace

TEST_CASE("training is deterministic and logs one row per epoch") {
  TinySet t;
  std::vector<EpochStats> seen;
  const auto a = train(t.manifest, t.cfg, [&](const EpochStats& e) { seen.push_back(e); });
  const auto b = train(t.manifest, t.cfg);
  CHECK(a.history.rows.size() == 3);
  CHECK(seen.size() == 3);
  CHECK(a.history.to_csv() == b.history.to_csv());
  CHECK(a.final_params == b.final_params);
  CHECK(a.best_params == b.best_params);
  CHECK(a.history.to_csv().rfind("epoch,train_loss,val_loss,val_acc,lr\n", 0) == 0);
  for (const auto& r : a.history.rows) {
    CHECK(std::isfinite(r.train_loss));
    CHECK(r.lr == t.cfg.optim.lr0);
  }
  // best checkpoint is the lowest validation loss
  int best = 1;
  for (const auto& r : a.history.rows)
    if (r.val_loss < a.history.rows[best - 1].val_loss) best = r.epoch;
  CHECK(a.best_epoch == best);

  auto other = t.cfg;
  other.seed = 2;
  CHECK(train(t.manifest, other).history.to_csv() != a.history.to_csv());
}

TEST_CASE("validation loss in the history is reproducible with dropout disabled") {
  TinySet t;
  t.cfg = TrainConfig::for_model(3);
  t.cfg.epochs = 1;
  t.cfg.batch_size = 4;
  t.cfg.preprocess.seconds = 1.0;
  t.cfg.preprocess.frames = 8;
  t.cfg.preprocess.height = t.cfg.preprocess.width = 8;
  const auto r = train(t.manifest, t.cfg);
  const auto ev = evaluate(r.spec, r.final_params, t.manifest, t.cfg.preprocess, Split::val);
  CHECK(std::abs(ev.mean_loss - r.history.rows[0].val_loss) < 1e-6);
  CHECK(ev.accuracy == r.history.rows[0].val_acc);
}

TEST_CASE("one epoch with a batch covering the dataset takes exactly one step") {
  TinySet t;
  t.cfg.epochs = 1;
  t.cfg.batch_size = 1000;
  const auto r = train(t.manifest, t.cfg);
  REQUIRE(r.history.rows.size() == 1);
  // replay the single step by hand
  const auto train_s = prepare_split(t.manifest, Split::train, t.cfg.preprocess);
  auto params = init_params(r.spec, t.cfg.seed);
  std::vector<std::size_t> order(train_s.inputs.size());
  std::iota(order.begin(), order.end(), 0);
  // one step with the full batch; the mean gradient does not depend on sample order up to rounding
  Shape bs{order.size(), 1, 8, 8, 8};
  Tensor batch(bs);
  for (std::size_t i = 0; i < order.size(); ++i)
    std::copy(train_s.inputs[i].data().begin(), train_s.inputs[i].data().end(), batch.data().begin() + i * 512);
  const auto fwd = model_forward(r.spec, params, batch, Mode::train, 0);
  const auto g = model_backward(r.spec, params, fwd.cache, train_s.labels);
  OptimState st;
  optimizer_step(params, g.grads, st, t.cfg.optim, t.cfg.optim.lr0);
  CHECK(st.step == 1);
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    const auto& a = params.tensors[i].value;
    const auto& b = r.final_params.tensors[i].value;
    for (std::size_t j = 0; j < a.size(); ++j) CHECK(std::abs(a[j] - b[j]) < 1e-5f);
  }
}

TEST_CASE("evaluation, confusion matrix and prediction share one path") {
  TinySet t;
  const auto spec = build_preset(1, {1, 8, 8, 8}, 3);
  SUBCASE("constant predictor fills one column") {
    const auto ev = evaluate(spec, constant_predictor(spec, 0), t.manifest, t.cfg.preprocess);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(ev.confusion.counts[i][0] == 1);
      CHECK(ev.confusion.counts[i][1] == 0);
      CHECK(ev.confusion.counts[i][2] == 0);
    }
    CHECK(ev.accuracy == doctest::Approx(1.0 / 3.0));
    CHECK(ev.confusion.to_csv() ==
          "true\\pred,translate-left,translate-right,translate-up\n"
          "translate-left,1,0,0\ntranslate-right,1,0,0\ntranslate-up,1,0,0\n");
  }
  SUBCASE("uniform logits give uniform probabilities and the lowest index") {
    const auto params = init_params(spec, 1).zeros_like();
    const auto p = predict(spec, params, load_clip(t.manifest.entries[0].path), t.cfg.preprocess, t.manifest.classes);
    for (double v : p.probs) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(p.index == 0);
  }
  SUBCASE("predict agrees with evaluate per clip") {
    const auto r = train(t.manifest, t.cfg);
    const auto tests = t.manifest.of(Split::test);
    ConfusionMatrix manual(t.manifest.classes);
    for (const auto& e : tests) {
      const auto p = predict(r.spec, r.best_params, load_clip(e.path), t.cfg.preprocess, t.manifest.classes);
      double sum = 0;
      for (double v : p.probs) sum += v;
      CHECK(std::abs(sum - 1.0) < 1e-12);
      manual.counts[e.label][p.index] += 1;
    }
    const auto ev = evaluate(r.spec, r.best_params, t.manifest, t.cfg.preprocess);
    CHECK(ev.confusion.counts == manual.counts);
    CHECK(ev.accuracy == static_cast<double>(ev.confusion.trace()) / ev.confusion.total());
    for (std::size_t k = 0; k < 3; ++k) {
      std::size_t row = 0;
      for (auto v : ev.confusion.counts[k]) row += v;
      CHECK(row == 1);
    }
  }
  SUBCASE("RVID quantization barely moves predictions") {
    const auto r = train(t.manifest, t.cfg);
    SynthConfig s;
    s.frames = 8;
    s.height = s.width = 12;
    const auto c = synth_clip(s, 2, 99);  // unquantized floats
    const auto q = decode_rvid(encode_rvid(c));
    const auto a = predict(r.spec, r.final_params, c, t.cfg.preprocess, t.manifest.classes);
    const auto b = predict(r.spec, r.final_params, q, t.cfg.preprocess, t.manifest.classes);
    for (std::size_t k = 0; k < 3; ++k) CHECK(std::abs(a.probs[k] - b.probs[k]) < 1e-4);
  }
  SUBCASE("empty split is rejected") {
    DatasetManifest m = t.manifest;
    std::erase_if(m.entries, [](const ManifestEntry& e) { return e.split == Split::test; });
    CHECK_THROWS_AS(evaluate(spec, init_params(spec, 1), m, t.cfg.preprocess), Error);
  }
}

TEST_CASE("argmax ties go to the lowest index") {
  CHECK(argmax(std::vector<double>{0.2, 0.4, 0.4}) == 1);
  CHECK(argmax(std::vector<double>{1.0, 1.0}) == 0);
  CHECK_THROWS_AS(argmax(std::vector<double>{}), Error);
}

TEST_CASE("epochs to threshold") {
  History h;
  for (int e = 1; e <= 4; ++e) h.rows.push_back({e, 1.0, 1.0 / e, 0.5, 1e-3});
  CHECK(h.epochs_to_threshold(0.5) == 2);
  CHECK(h.epochs_to_threshold(0.26) == 4);
  CHECK(h.epochs_to_threshold(0.1) == 5);
}

TEST_CASE("model 4 recipe") {
  const auto c = TrainConfig::for_model(4);
  CHECK(c.optim.kind == OptimizerKind::nadam);
  CHECK(c.optim.decay == 0.01);
  CHECK(c.augmentation == AugmentMode::model4);
  const auto c3 = TrainConfig::for_model(3);
  CHECK(c3.optim.kind == OptimizerKind::adam);
  CHECK(c3.augmentation == AugmentMode::none);
  CHECK(c.no_flip_classes == lateral_class_names());

  TinySet t;
  auto cfg = c;
  cfg.epochs = 2;
  cfg.batch_size = 8;
  cfg.preprocess = t.cfg.preprocess;
  std::ostringstream log;
  auto* old = std::clog.rdbuf(log.rdbuf());
  const auto r = train(t.manifest, cfg);
  std::clog.rdbuf(old);
  CHECK(log.str().find("translate-left") != std::string::npos);
  CHECK(r.history.rows[1].lr == doctest::Approx(1e-3 / 1.01));
}

TEST_CASE("resolution study keeps the split and varies only the size") {
  TinySet t;
  t.cfg.epochs = 1;
  const auto rows = resolution_study(t.manifest, t.cfg, {8, 16});
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].size == 8);
  CHECK(rows[1].size == 16);
  CHECK(rows[1].seconds_per_epoch > rows[0].seconds_per_epoch);
  const auto csv = resolution_csv(rows);
  CHECK(csv.rfind("size,accuracy,seconds_per_epoch,best_epoch\n8,", 0) == 0);
}

TEST_CASE("reference accuracies") {
  bool found = false;
  for (const auto& r : reference_accuracies()) {
    if (r.dataset == "kth" && r.model_id == 3) {
      CHECK(r.with_bg_sub == 0.84);
      found = true;
    }
    if (r.dataset == "weizmann" && r.model_id == 4) CHECK(r.with_bg_sub == 1.0);
  }
  CHECK(found);
  CHECK(reference_accuracies().size() == 12);
}

TEST_CASE("bad configurations are rejected") {
  TinySet t;
  auto c = t.cfg;
  c.epochs = 0;
  CHECK_THROWS_AS(train(t.manifest, c), Error);
  c = t.cfg;
  c.batch_size = 0;
  CHECK_THROWS_AS(train(t.manifest, c), Error);
  c = t.cfg;
  c.optim.lr0 = 1e30;
  try {
    train(t.manifest, c);
    FAIL("expected divergence");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("epoch") != std::string::npos);
  }
}
