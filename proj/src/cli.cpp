#include "ar3d/cli.hpp"

#include <atomic>
#include <csignal>
#include <fstream>
#include <iomanip>

#include "CLI11.hpp"
#include "ar3d/data.hpp"
#include "ar3d/edge.hpp"
#include "ar3d/model_io.hpp"
#include "ar3d/train_eval.hpp"

namespace ar3d {

namespace {

using nlohmann::json;

std::atomic<bool> g_stop{false};

extern "C" void handle_stop_signal(int) { g_stop.store(true); }

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed for " + path.string());
}

/// Tracks files produced under --out and writes artifacts.txt listing them.
class Artifacts {
 public:
  explicit Artifacts(fs::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec || !fs::is_directory(dir_)) throw Error("cannot create output directory " + dir_.string());
  }
  fs::path add(const std::string& name) {
    files_.push_back(name);
    return dir_ / name;
  }
  void finish() const {
    std::string list;
    for (const auto& f : files_) list += f + "\n";
    write_text(dir_ / "artifacts.txt", list);
  }

 private:
  fs::path dir_;
  std::vector<std::string> files_;
};

// Preprocess flags shared by several subcommands.
struct PreprocessFlags {
  double seconds = 0, threshold = 0;
  std::size_t frames = 0, size = 0, height = 0, width = 0;
  bool bg_sub = true;
  CLI::Option *o_seconds{}, *o_frames{}, *o_size{}, *o_height{}, *o_width{}, *o_bg{}, *o_thr{};

  void attach(CLI::App* app) {
    o_seconds = app->add_option("--seconds", seconds, "S: leading seconds considered (default 7)");
    o_frames = app->add_option("--frames", frames, "N: frames sampled from the first S seconds (default 35)");
    o_size = app->add_option("--size", size, "square target resolution (default 20)");
    o_height = app->add_option("--height", height, "target height");
    o_width = app->add_option("--width", width, "target width");
    o_bg = app->add_flag("--bg-sub,!--no-bg-sub", bg_sub, "median-reference background subtraction (default on)");
    o_thr = app->add_option("--bg-threshold", threshold, "binarize the subtracted frames at this level (default off)");
  }

  PreprocessConfig apply(PreprocessConfig cfg) const {
    if (o_seconds->count()) cfg.seconds = seconds;
    if (o_frames->count()) cfg.frames = frames;
    if (o_size->count()) cfg.height = cfg.width = size;
    if (o_height->count()) cfg.height = height;
    if (o_width->count()) cfg.width = width;
    if (o_bg->count()) cfg.bg_sub = bg_sub;
    if (o_thr->count()) cfg.bg_threshold = threshold;
    cfg.validate();
    return cfg;
  }
};

struct TrainFlags {
  int model = 3;
  std::string optimizer, augment;
  double lr = 0, decay = 0, loss_threshold = 0;
  int epochs = 0;
  std::size_t batch = 0;
  std::uint64_t seed = 0;
  std::string config;
  CLI::Option *o_model{}, *o_opt{}, *o_aug{}, *o_lr{}, *o_decay{}, *o_epochs{}, *o_batch{}, *o_seed{}, *o_thr{};
  PreprocessFlags pre;

  void attach(CLI::App* app) {
    o_model = app->add_option("--model", model, "preset 1-4 (default 3)")->check(CLI::Range(1, 4));
    o_opt = app->add_option("--optimizer", optimizer, "adam | nadam (default adam; nadam for model 4)");
    o_lr = app->add_option("--lr", lr, "initial learning rate (default 1e-3)");
    o_decay = app->add_option("--decay", decay, "time-based decay k in lr0/(1+k*epoch) (default 0; 0.01 for model 4)");
    o_epochs = app->add_option("--epochs", epochs, "epochs (default 50)");
    o_batch = app->add_option("--batch", batch, "mini-batch size (default 16)");
    o_seed = app->add_option("--seed", seed, "seed for init, shuffling and dropout (default 1)");
    o_aug = app->add_option("--augment", augment, "none | model4 (default none; model4 for model 4)");
    o_thr = app->add_option("--loss-threshold", loss_threshold, "validation loss for epochs-to-threshold (default 0.5)");
    app->add_option("--config", config, "JSON config with \"preprocess\" and \"train\" sections; flags win");
    pre.attach(app);
  }

  std::pair<TrainConfig, PreprocessConfig> resolve() const {
    json file = config.empty() ? json::object() : read_json_file(config);
    int id = 3;
    if (file.contains("train") && file["train"].contains("model")) id = file["train"]["model"].get<int>();
    if (o_model->count()) id = model;
    TrainConfig cfg = TrainConfig::for_model(id);
    if (file.contains("train")) cfg = train_config_from_json(file["train"], cfg);
    cfg.model_id = id;
    if (o_opt->count()) cfg.optim.kind = optimizer_from_string(optimizer);
    if (o_lr->count()) cfg.optim.lr0 = lr;
    if (o_decay->count()) cfg.optim.decay = decay;
    if (o_epochs->count()) cfg.epochs = epochs;
    if (o_batch->count()) cfg.batch_size = batch;
    if (o_seed->count()) cfg.seed = seed;
    if (o_aug->count()) cfg.augmentation = augment_from_string(augment);
    if (o_thr->count()) cfg.loss_threshold = loss_threshold;
    PreprocessConfig p;
    if (file.contains("preprocess")) p = preprocess_from_json(file["preprocess"], p);
    cfg.preprocess = pre.apply(p);
    cfg.validate();
    return {cfg, cfg.preprocess};
  }
};

json resolved_train_json(const TrainConfig& cfg) {
  return {{"train", to_json(cfg)}, {"preprocess", to_json(cfg.preprocess)}};
}

void print_config(std::ostream& out, const std::string& command, json cfg) {
  cfg["command"] = command;
  out << "config " << cfg.dump() << '\n';
}

std::string pct(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << 100.0 * v << '%';
  return os.str();
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"3D-CNN activity recognition: preprocessing, training, evaluation and edge inference", "ar3d"};
  app.require_subcommand(1);

  // synth-data
  auto* synth = app.add_subcommand("synth-data", "generate the synthetic moving-shape dataset");
  SynthConfig sc;
  std::string synth_out;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--classes", sc.classes, "class count, 2-6 (default 6)");
  synth->add_option("--clips-per-class", sc.clips_per_class, "clips per class (default 40)");
  synth->add_option("--frames", sc.frames, "frames per clip (default 16)");
  synth->add_option("--height", sc.height, "frame height (default 24)");
  synth->add_option("--width", sc.width, "frame width (default 24)");
  synth->add_option("--fps", sc.fps, "frame rate tag (default 8)");
  synth->add_option("--bg-amplitude", sc.bg_amplitude, "static texture amplitude (default 0.3)");
  synth->add_option("--noise", sc.noise_sigma, "per-pixel Gaussian noise sigma (default 0.02)");
  synth->add_option("--seed", sc.seed, "seed (default 1)");

  // preprocess
  auto* prep = app.add_subcommand("preprocess", "run the preprocessing chain on one clip");
  std::string prep_clip, prep_out, prep_archive;
  double prep_fps = 25.0;
  PreprocessFlags prep_flags;
  prep->add_option("--clip", prep_clip, "RVID file or PGM folder")->required();
  prep->add_option("--archive", prep_archive, "take the preprocess config from this archive");
  prep->add_option("--fps", prep_fps, "fps for PGM folders without fps.txt (default 25)");
  prep->add_option("--out", prep_out, "output directory")->required();
  prep_flags.attach(prep);

  // train
  auto* tr = app.add_subcommand("train", "train a preset on a manifest");
  std::string tr_manifest, tr_out = "run";
  TrainFlags tr_flags;
  tr->add_option("--manifest", tr_manifest, "dataset manifest")->required();
  tr->add_option("--out", tr_out, "output directory (default run)");
  tr_flags.attach(tr);

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate an archive on a manifest split");
  std::string ev_manifest, ev_archive, ev_out = "eval", ev_split = "test", ev_reference;
  ev->add_option("--manifest", ev_manifest, "dataset manifest")->required();
  ev->add_option("--archive", ev_archive, "weight archive")->required();
  ev->add_option("--split", ev_split, "train | val | test (default test)");
  ev->add_option("--out", ev_out, "output directory (default eval)");
  ev->add_option("--reference", ev_reference, "print published accuracies for kth | weizmann | ut alongside");

  // predict
  auto* pr = app.add_subcommand("predict", "classify one clip");
  std::string pr_archive, pr_clip, pr_out;
  double pr_fps = 25.0;
  pr->add_option("--archive", pr_archive, "weight archive")->required();
  pr->add_option("--clip", pr_clip, "RVID file or PGM folder")->required();
  pr->add_option("--fps", pr_fps, "fps for PGM folders without fps.txt (default 25)");
  pr->add_option("--out", pr_out, "also write prediction.json here");

  // resolution-study
  auto* rs = app.add_subcommand("resolution-study", "train model 3 at several square resolutions");
  std::string rs_manifest, rs_out = "resolution";
  std::vector<std::size_t> rs_sizes{20, 40, 60};
  TrainFlags rs_flags;
  rs->add_option("--manifest", rs_manifest, "dataset manifest")->required();
  rs->add_option("--sizes", rs_sizes, "square sizes (default 20,40,60)")->delimiter(',');
  rs->add_option("--out", rs_out, "output directory (default resolution)");
  rs_flags.attach(rs);

  // watch
  auto* wa = app.add_subcommand("watch", "edge runner: classify clips dropped into a directory");
  std::string wa_input, wa_archive, wa_webhook;
  int wa_poll = 500, wa_max_polls = 0;
  wa->add_option("--input", wa_input, "drop directory")->required();
  wa->add_option("--archive", wa_archive, "weight archive")->required();
  wa->add_option("--webhook", wa_webhook, "POST events to this http URL instead of stdout");
  wa->add_option("--poll-ms", wa_poll, "poll interval in ms (default 500)")->check(CLI::PositiveNumber);
  wa->add_option("--max-polls", wa_max_polls, "stop after this many polls (default: run until signalled)");

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*synth) {
      print_config(out, "synth-data",
                   {{"classes", sc.classes}, {"clips_per_class", sc.clips_per_class}, {"frames", sc.frames},
                    {"height", sc.height}, {"width", sc.width}, {"fps", sc.fps},
                    {"bg_amplitude", sc.bg_amplitude}, {"noise", sc.noise_sigma}, {"seed", sc.seed}});
      Artifacts art(synth_out);
      const auto m = synth_generate(sc, synth_out);
      art.add("manifest.txt");
      for (const auto& e : m.entries) art.add(e.path.lexically_relative(synth_out).generic_string());
      PreprocessConfig suggested;
      suggested.frames = sc.frames;
      suggested.seconds = static_cast<double>(sc.frames) / sc.fps;
      suggested.height = sc.height;
      suggested.width = sc.width;
      write_text(art.add("config.json"), json{{"preprocess", to_json(suggested)}}.dump(2) + "\n");
      art.finish();
      out << "wrote " << m.entries.size() << " clips (train " << m.count(Split::train) << ", val "
          << m.count(Split::val) << ", test " << m.count(Split::test) << ") to " << synth_out << '\n';
      return 0;
    }

    if (*prep) {
      PreprocessConfig base;
      if (!prep_archive.empty()) base = load_archive(prep_archive).preprocess;
      const auto cfg = prep_flags.apply(base);
      print_config(out, "preprocess", {{"preprocess", to_json(cfg)}, {"clip", prep_clip}});
      const Clip clip = load_clip(prep_clip, prep_fps);
      const Tensor t = preprocess(clip, cfg);
      Artifacts art(prep_out);
      Clip result{t.reshaped({cfg.frames, cfg.height, cfg.width}), clip.fps};
      write_rvid(art.add("preprocessed.rvid"), result);
      art.finish();
      out << "shape " << shape_str(t.shape()) << '\n';
      return 0;
    }

    if (*tr) {
      const auto [cfg, pcfg] = tr_flags.resolve();
      print_config(out, "train", resolved_train_json(cfg));
      const auto manifest = load_manifest(tr_manifest);
      out << "manifest: train " << manifest.count(Split::train) << ", val " << manifest.count(Split::val)
          << ", test " << manifest.count(Split::test) << '\n';
      const auto result = train(manifest, cfg, [&](const EpochStats& e) {
        out << "epoch " << e.epoch << " train_loss " << std::fixed << std::setprecision(6) << e.train_loss
            << " val_loss " << e.val_loss << " val_acc " << e.val_acc << " lr " << e.lr << std::defaultfloat
            << '\n';
      });
      Artifacts art(tr_out);
      write_text(art.add("history.csv"), result.history.to_csv());
      const auto train_json = to_json(cfg);
      save_archive(art.add("model.ar3d"), result.spec, result.best_params, pcfg, manifest.classes, train_json);
      save_archive(art.add("final.ar3d"), result.spec, result.final_params, pcfg, manifest.classes, train_json);
      write_text(art.add("config.json"), resolved_train_json(cfg).dump(2) + "\n");
      art.finish();
      out << "best epoch " << result.best_epoch << ", epochs to val_loss<=" << cfg.loss_threshold << ": "
          << result.history.epochs_to_threshold(cfg.loss_threshold) << '\n';
      return 0;
    }

    if (*ev) {
      const auto a = load_archive(ev_archive);
      print_config(out, "eval", {{"archive", ev_archive}, {"manifest", ev_manifest}, {"split", ev_split},
                                 {"preprocess", to_json(a.preprocess)}});
      const auto manifest = load_manifest(ev_manifest);
      if (manifest.classes != a.classes) throw Error("manifest classes differ from the archive's classes");
      const auto r = evaluate(a.spec, a.params, manifest, a.preprocess, split_from_string(ev_split));
      Artifacts art(ev_out);
      write_text(art.add("confusion.csv"), r.confusion.to_csv());
      art.finish();
      out << "accuracy " << std::fixed << std::setprecision(6) << r.accuracy << " (" << r.confusion.trace() << "/"
          << r.confusion.total() << ")\n"
          << std::defaultfloat << r.confusion.to_csv();
      if (!ev_reference.empty()) {
        bool found = false;
        for (const auto& ref : reference_accuracies()) {
          if (ref.dataset != ev_reference || ref.model_id != a.spec.preset) continue;
          found = true;
          const double target = a.preprocess.bg_sub ? ref.with_bg_sub : ref.without_bg_sub;
          out << "reference " << ref.dataset << " model " << ref.model_id
              << (a.preprocess.bg_sub ? " with" : " without") << " bg-sub: published " << pct(target)
              << ", measured " << pct(r.accuracy) << '\n';
        }
        if (!found) out << "no published reference for " << ev_reference << " model " << a.spec.preset << '\n';
      }
      return 0;
    }

    if (*pr) {
      const auto a = load_archive(pr_archive);
      print_config(out, "predict", {{"archive", pr_archive}, {"clip", pr_clip}, {"preprocess", to_json(a.preprocess)}});
      const auto p = predict(a.spec, a.params, load_clip(pr_clip, pr_fps), a.preprocess, a.classes);
      const json result{{"clip", pr_clip}, {"class", p.name}, {"class_index", p.index}, {"probs", p.probs}};
      out << result.dump() << '\n';
      if (!pr_out.empty()) {
        Artifacts art(pr_out);
        write_text(art.add("prediction.json"), result.dump(2) + "\n");
        art.finish();
      }
      return 0;
    }

    if (*rs) {
      auto [cfg, pcfg] = rs_flags.resolve();
      print_config(out, "resolution-study", {{"sizes", rs_sizes}, {"train", to_json(cfg)}, {"preprocess", to_json(pcfg)}});
      const auto manifest = load_manifest(rs_manifest);
      const auto rows = resolution_study(manifest, cfg, rs_sizes, [&](const EpochStats& e) {
        out << "epoch " << e.epoch << " val_loss " << e.val_loss << " val_acc " << e.val_acc << '\n';
      });
      Artifacts art(rs_out);
      write_text(art.add("resolution.csv"), resolution_csv(rows));
      art.finish();
      out << resolution_csv(rows);
      return 0;
    }

    if (*wa) {
      print_config(out, "watch", {{"input", wa_input}, {"archive", wa_archive}, {"webhook", wa_webhook},
                                  {"poll_ms", wa_poll}});
      std::shared_ptr<EventSink> sink;
      if (wa_webhook.empty()) {
        sink = std::make_shared<StdoutSink>(out);
      } else {
        sink = std::make_shared<WebhookSink>(wa_webhook);
      }
      WatchOptions opts;
      opts.input_dir = wa_input;
      opts.archive = wa_archive;
      opts.poll_interval = std::chrono::milliseconds(wa_poll);
      EdgeRunner runner(opts, sink, err);
      g_stop.store(false);
      if (wa_max_polls > 0) {
        for (int i = 0; i < wa_max_polls && !g_stop.load(); ++i) {
          runner.poll_once();
          if (i + 1 < wa_max_polls) std::this_thread::sleep_for(opts.poll_interval);
        }
        runner.flush();
      } else {
        std::signal(SIGINT, handle_stop_signal);
        std::signal(SIGTERM, handle_stop_signal);
        runner.run(g_stop);
      }
      return runner.undelivered() == 0 ? 0 : 2;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}

}  // namespace ar3d
