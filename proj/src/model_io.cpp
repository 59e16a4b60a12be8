#include "ar3d/model_io.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace ar3d {

using nlohmann::json;

namespace {

std::string activation_str(Activation a) { return a == Activation::relu ? "relu" : "none"; }

Activation activation_from(const std::string& s, const std::string& where) {
  if (s == "relu") return Activation::relu;
  if (s == "none") return Activation::none;
  throw Error(where + ": unknown activation '" + s + "'");
}

template <class T>
T field(const json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw Error(where + "." + key + ": missing field");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(where + "." + key + ": " + e.what());
  }
}

template <class T>
void maybe(const json& j, const char* key, T& out, const std::string& where) {
  if (j.is_object() && j.contains(key)) out = field<T>(j, key, where);
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[off + i]) << (8 * i);
  return v;
}

char hex_digit(unsigned v) { return "0123456789abcdef"[v & 0xf]; }

std::string u64_hex(std::uint64_t h) {
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) s[i] = hex_digit(static_cast<unsigned>(h));
  return s;
}

}  // namespace

std::string fnv1a_hex(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return u64_hex(h);
}

json to_json(const ModelSpec& spec) {
  json layers = json::array();
  for (const auto& layer : spec.layers) {
    if (const auto* c = std::get_if<Conv3dLayer>(&layer)) {
      layers.push_back({{"type", "conv3d"},
                        {"out_channels", c->out_channels},
                        {"kernel", c->geom.kernel},
                        {"activation", activation_str(c->activation)}});
    } else if (std::holds_alternative<MaxPool3dLayer>(layer)) {
      layers.push_back({{"type", "maxpool3d"}});
    } else if (std::holds_alternative<FlattenLayer>(layer)) {
      layers.push_back({{"type", "flatten"}});
    } else if (const auto* d = std::get_if<DenseLayer>(&layer)) {
      layers.push_back({{"type", "dense"}, {"units", d->units}, {"activation", activation_str(d->activation)}});
    } else if (const auto* dr = std::get_if<DropoutLayer>(&layer)) {
      layers.push_back({{"type", "dropout"}, {"p", dr->p}});
    }
  }
  return {{"input_shape", spec.input.as_shape()},
          {"num_classes", spec.num_classes},
          {"preset", spec.preset},
          {"layers", layers}};
}

ModelSpec model_spec_from_json(const json& j) {
  const std::string where = "model";
  ModelSpec spec;
  const auto shape = field<std::vector<std::size_t>>(j, "input_shape", where);
  if (shape.size() != 4) throw Error("model.input_shape: expected [C,T,H,W]");
  spec.input = InputShape{shape[0], shape[1], shape[2], shape[3]};
  spec.num_classes = field<std::size_t>(j, "num_classes", where);
  maybe(j, "preset", spec.preset, where);
  const auto layers = field<json>(j, "layers", where);
  if (!layers.is_array()) throw Error("model.layers: expected an array");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string w = "model.layers[" + std::to_string(i) + "]";
    const auto& l = layers[i];
    const auto type = field<std::string>(l, "type", w);
    if (type == "conv3d") {
      Conv3dLayer c;
      c.out_channels = field<std::size_t>(l, "out_channels", w);
      c.geom.kernel = field<std::array<std::size_t, 3>>(l, "kernel", w);
      c.activation = activation_from(field<std::string>(l, "activation", w), w + ".activation");
      spec.layers.emplace_back(c);
    } else if (type == "maxpool3d") {
      spec.layers.emplace_back(MaxPool3dLayer{});
    } else if (type == "flatten") {
      spec.layers.emplace_back(FlattenLayer{});
    } else if (type == "dense") {
      DenseLayer d;
      d.units = field<std::size_t>(l, "units", w);
      d.activation = activation_from(field<std::string>(l, "activation", w), w + ".activation");
      spec.layers.emplace_back(d);
    } else if (type == "dropout") {
      spec.layers.emplace_back(DropoutLayer{field<double>(l, "p", w)});
    } else {
      throw Error(w + ".type: unknown layer type '" + type + "'");
    }
  }
  try {
    spec.validate();
  } catch (const Error& e) {
    throw Error(std::string("model: ") + e.what());
  }
  return spec;
}

json to_json(const PreprocessConfig& cfg) {
  return {{"seconds", cfg.seconds},
          {"frames", cfg.frames},
          {"height", cfg.height},
          {"width", cfg.width},
          {"bg_sub", cfg.bg_sub},
          {"bg_threshold", cfg.bg_threshold ? json(*cfg.bg_threshold) : json(nullptr)}};
}

PreprocessConfig preprocess_from_json(const json& j, PreprocessConfig cfg) {
  const std::string where = "preprocess";
  if (!j.is_object()) throw Error("preprocess: expected an object");
  maybe(j, "seconds", cfg.seconds, where);
  maybe(j, "frames", cfg.frames, where);
  maybe(j, "height", cfg.height, where);
  maybe(j, "width", cfg.width, where);
  maybe(j, "bg_sub", cfg.bg_sub, where);
  if (j.contains("bg_threshold")) {
    if (j["bg_threshold"].is_null()) {
      cfg.bg_threshold.reset();
    } else {
      cfg.bg_threshold = field<double>(j, "bg_threshold", where);
    }
  }
  try {
    cfg.validate();
  } catch (const Error& e) {
    throw Error(std::string("preprocess: ") + e.what());
  }
  return cfg;
}

json to_json(const TrainConfig& cfg) {
  return {{"model", cfg.model_id},
          {"optimizer", to_string(cfg.optim.kind)},
          {"lr", cfg.optim.lr0},
          {"beta1", cfg.optim.beta1},
          {"beta2", cfg.optim.beta2},
          {"eps", cfg.optim.eps},
          {"decay", cfg.optim.decay},
          {"epochs", cfg.epochs},
          {"batch_size", cfg.batch_size},
          {"seed", cfg.seed},
          {"augmentation", to_string(cfg.augmentation)},
          {"no_flip_classes", cfg.no_flip_classes},
          {"loss_threshold", cfg.loss_threshold}};
}

TrainConfig train_config_from_json(const json& j, TrainConfig cfg) {
  const std::string where = "train";
  if (!j.is_object()) throw Error("train: expected an object");
  maybe(j, "model", cfg.model_id, where);
  if (j.contains("optimizer")) cfg.optim.kind = optimizer_from_string(field<std::string>(j, "optimizer", where));
  maybe(j, "lr", cfg.optim.lr0, where);
  maybe(j, "beta1", cfg.optim.beta1, where);
  maybe(j, "beta2", cfg.optim.beta2, where);
  maybe(j, "eps", cfg.optim.eps, where);
  maybe(j, "decay", cfg.optim.decay, where);
  maybe(j, "epochs", cfg.epochs, where);
  maybe(j, "batch_size", cfg.batch_size, where);
  maybe(j, "seed", cfg.seed, where);
  if (j.contains("augmentation")) {
    cfg.augmentation = augment_from_string(field<std::string>(j, "augmentation", where));
  }
  maybe(j, "no_flip_classes", cfg.no_flip_classes, where);
  maybe(j, "loss_threshold", cfg.loss_threshold, where);
  return cfg;
}

std::vector<std::uint8_t> encode_archive(const ModelSpec& spec, const ParamSet& params,
                                         const PreprocessConfig& preprocess,
                                         const std::vector<std::string>& classes,
                                         const std::optional<json>& training) {
  spec.validate();
  check_params(spec, params);
  preprocess.validate();
  if (classes.size() != spec.num_classes) {
    throw Error("archive: " + std::to_string(classes.size()) + " class names for a " +
                std::to_string(spec.num_classes) + "-class model");
  }
  if (spec.input.frames != preprocess.frames || spec.input.height != preprocess.height ||
      spec.input.width != preprocess.width) {
    throw Error("archive: model input " + shape_str(spec.input.as_shape()) +
                " disagrees with the preprocess output size");
  }
  json header{{"format_version", kArchiveVersion},
              {"model", to_json(spec)},
              {"preprocess", to_json(preprocess)},
              {"classes", classes},
              {"params_digest", u64_hex(params.fingerprint())}};
  json tensors = json::array();
  for (const auto& t : params.tensors) tensors.push_back({{"name", t.name}, {"shape", t.value.shape()}});
  header["tensors"] = tensors;
  if (training) header["train"] = *training;
  const std::string text = header.dump();

  std::vector<std::uint8_t> out{'A', 'R', '3', 'D'};
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& t : params.tensors) {
    out.push_back(static_cast<std::uint8_t>(t.value.rank()));
    for (auto d : t.value.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : t.value.data()) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, 4);
      put_u32(out, bits);
    }
  }
  return out;
}

WeightArchive decode_archive(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8) throw Error("archive truncated: " + std::to_string(bytes.size()) + " bytes");
  if (std::memcmp(bytes.data(), "AR3D", 4) != 0) throw Error("archive: bad magic");
  const std::size_t hlen = get_u32(bytes, 4);
  if (bytes.size() - 8 < hlen) throw Error("archive truncated inside the JSON header");
  const auto header_bytes = bytes.subspan(8, hlen);
  json header;
  try {
    header = json::parse(header_bytes.begin(), header_bytes.end());
  } catch (const json::exception& e) {
    throw Error(std::string("archive: corrupt header JSON: ") + e.what());
  }
  const auto version = field<std::uint32_t>(header, "format_version", "header");
  if (version != kArchiveVersion) {
    throw Error("header.format_version: unsupported version " + std::to_string(version));
  }
  WeightArchive a;
  a.spec = model_spec_from_json(field<json>(header, "model", "header"));
  a.preprocess = preprocess_from_json(field<json>(header, "preprocess", "header"));
  a.classes = field<std::vector<std::string>>(header, "classes", "header");
  if (a.classes.size() != a.spec.num_classes) {
    throw Error("header.classes: " + std::to_string(a.classes.size()) + " names for " +
                std::to_string(a.spec.num_classes) + " model classes");
  }
  if (header.contains("train")) a.training = header["train"];
  a.fingerprint = fnv1a_hex(header_bytes);

  std::size_t off = 8 + hlen;
  a.params.tensors = param_layout(a.spec);
  for (auto& t : a.params.tensors) {
    const Shape& want = t.value.shape();
    if (off + 1 > bytes.size()) throw Error("tensor " + t.name + ": record truncated at byte " + std::to_string(off));
    const std::size_t ndim = bytes[off++];
    if (off + 4 * ndim > bytes.size()) {
      throw Error("tensor " + t.name + ": dims truncated at byte " + std::to_string(off));
    }
    Shape got(ndim);
    for (auto& d : got) {
      d = get_u32(bytes, off);
      off += 4;
    }
    if (got != want) {
      throw Error("tensor " + t.name + ": shape " + shape_str(got) + " does not match model " + shape_str(want));
    }
    const std::size_t n = t.value.size();
    if ((bytes.size() - off) / 4 < n) {
      throw Error("tensor " + t.name + ": payload truncated at byte " + std::to_string(off) + " (need " +
                  std::to_string(4 * n) + " bytes)");
    }
    for (std::size_t i = 0; i < n; ++i, off += 4) {
      const std::uint32_t bits = get_u32(bytes, off);
      float v;
      std::memcpy(&v, &bits, 4);
      if (!std::isfinite(v)) throw Error("tensor " + t.name + ": non-finite value at element " + std::to_string(i));
      t.value[i] = v;
    }
  }
  if (off != bytes.size()) throw Error("archive has " + std::to_string(bytes.size() - off) + " trailing bytes");
  if (header.contains("params_digest") && header["params_digest"] != u64_hex(a.params.fingerprint())) {
    throw Error("header.params_digest: does not match the tensor payload");
  }
  return a;
}

void save_archive(const std::filesystem::path& path, const ModelSpec& spec, const ParamSet& params,
                  const PreprocessConfig& preprocess, const std::vector<std::string>& classes,
                  const std::optional<json>& training) {
  const auto bytes = encode_archive(spec, params, preprocess, classes, training);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write archive " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for archive " + path.string());
}

WeightArchive load_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open archive " + path.string());
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  try {
    return decode_archive(bytes);
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

}  // namespace ar3d
