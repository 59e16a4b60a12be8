#include "ar3d/edge.hpp"

#include <algorithm>
#include <ctime>

#include "ar3d/data.hpp"
#include "ar3d/train_eval.hpp"
#include "httplib.h"

namespace ar3d {

namespace fs = std::filesystem;
using nlohmann::json;

json ClassificationEvent::to_json() const {
  json j{{"id", id}, {"clip", clip}, {"ts", ts}, {"model_fingerprint", model_fingerprint}};
  if (error) {
    j["error"] = *error;
  } else {
    j["class"] = class_name;
    j["class_index"] = class_index.value_or(0);
    j["probs"] = probs;
  }
  return j;
}

ClassificationEvent ClassificationEvent::from_json(const json& j) {
  ClassificationEvent e;
  try {
    e.id = j.at("id").get<std::string>();
    e.clip = j.value("clip", "");
    e.ts = j.at("ts").get<std::string>();
    e.model_fingerprint = j.at("model_fingerprint").get<std::string>();
    if (j.contains("error")) {
      e.error = j["error"].get<std::string>();
    } else {
      e.class_name = j.at("class").get<std::string>();
      e.class_index = j.at("class_index").get<std::size_t>();
      e.probs = j.at("probs").get<std::vector<double>>();
    }
  } catch (const json::exception& ex) {
    throw Error(std::string("malformed event JSON: ") + ex.what());
  }
  return e;
}

std::string utc_timestamp(std::chrono::system_clock::time_point t) {
  const auto secs = std::chrono::time_point_cast<std::chrono::seconds>(t);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(t - secs).count();
  const std::time_t tt = std::chrono::system_clock::to_time_t(secs);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[40];
  const auto n = std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  std::snprintf(buf + n, sizeof buf - n, ".%03dZ", static_cast<int>(ms));
  return buf;
}

DeliveryResult StdoutSink::deliver(const ClassificationEvent& event) {
  out_ << event.to_json().dump() << '\n';
  out_.flush();
  return {static_cast<bool>(out_), 1, out_ ? "" : "stream error"};
}

WebhookSink::WebhookSink(std::string url, RetryPolicy policy) : policy_(policy) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw Error("webhook URL needs a scheme: " + url);
  const auto scheme = url.substr(0, scheme_end);
  if (scheme != "http") throw Error("webhook scheme '" + scheme + "' not supported (http only)");
  const auto path_start = url.find('/', scheme_end + 3);
  origin_ = url.substr(0, path_start);
  path_ = path_start == std::string::npos ? "/" : url.substr(path_start);
  if (origin_.size() <= scheme_end + 3) throw Error("webhook URL has no host: " + url);
  if (policy_.max_attempts < 1) throw Error("webhook retry policy needs at least one attempt");
}

DeliveryResult WebhookSink::deliver(const ClassificationEvent& event) {
  const std::string body = event.to_json().dump();
  httplib::Client client(origin_);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(policy_.timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(policy_.timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());

  DeliveryResult r;
  auto backoff = policy_.initial_backoff;
  for (int attempt = 1; attempt <= policy_.max_attempts; ++attempt) {
    r.attempts = attempt;
    const auto res = client.Post(path_, body, "application/json");
    if (res && res->status >= 200 && res->status < 300) {
      r.delivered = true;
      r.detail = "HTTP " + std::to_string(res->status);
      return r;
    }
    r.detail = res ? "HTTP " + std::to_string(res->status) : "transport error: " + httplib::to_string(res.error());
    if (attempt < policy_.max_attempts) {
      std::this_thread::sleep_for(backoff);
      backoff = std::min(backoff * 2, policy_.max_backoff);
    }
  }
  return r;
}

DeliveryResult dispatch_event(const ClassificationEvent& event, EventSink& sink) {
  if (event.ok()) {
    double sum = 0.0;
    for (double p : event.probs) sum += p;
    if (!event.class_index || *event.class_index >= event.probs.size() || std::abs(sum - 1.0) > 1e-9) {
      throw Error("refusing to dispatch inconsistent event " + event.id);
    }
  }
  return sink.deliver(event);
}

namespace {

struct Candidate {
  fs::path path;
  std::uintmax_t signature;
  fs::file_time_type mtime;
};

void mix(std::uintmax_t& h, std::uintmax_t v) {
  h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
}

// Size/mtime digest of a clip file or PGM folder; nullopt when not a clip candidate.
std::optional<Candidate> inspect(const fs::path& p) {
  std::error_code ec;
  const auto name = p.filename().string();
  if (name.empty() || name[0] == '.' || name == "done") return std::nullopt;
  if (fs::is_regular_file(p, ec)) {
    if (p.extension() != ".rvid") return std::nullopt;
    const auto size = fs::file_size(p, ec);
    const auto mtime = fs::last_write_time(p, ec);
    if (ec) return std::nullopt;
    std::uintmax_t h = size;
    mix(h, static_cast<std::uintmax_t>(mtime.time_since_epoch().count()));
    return Candidate{p, h, mtime};
  }
  if (fs::is_directory(p, ec)) {
    std::uintmax_t h = 0, frames = 0;
    fs::file_time_type latest{};
    for (const auto& e : fs::directory_iterator(p, ec)) {
      if (!e.is_regular_file(ec)) continue;
      const auto size = e.file_size(ec);
      const auto mtime = e.last_write_time(ec);
      if (ec) return std::nullopt;
      frames += e.path().extension() == ".pgm";
      mix(h, std::hash<std::string>{}(e.path().filename().string()));
      mix(h, size);
      latest = std::max(latest, mtime);
    }
    if (frames == 0) return std::nullopt;
    mix(h, frames);
    return Candidate{p, h, latest};
  }
  return std::nullopt;
}

}  // namespace

EdgeRunner::EdgeRunner(WatchOptions options, std::shared_ptr<EventSink> sink, std::ostream& log)
    : options_(std::move(options)), sink_(std::move(sink)), log_(log) {
  if (!sink_) throw Error("edge runner needs an event sink");
  if (options_.queue_capacity == 0) throw Error("event queue capacity must be >= 1");
  archive_ = load_archive(options_.archive);
  if (!fs::is_directory(options_.input_dir)) {
    throw Error("input directory " + options_.input_dir.string() + " is not readable");
  }
  fs::create_directories(options_.input_dir / "done");
  worker_ = std::thread([this] { deliver_loop(); });
}

EdgeRunner::~EdgeRunner() {
  {
    std::lock_guard lock(mu_);
    closing_ = true;
  }
  not_empty_.notify_all();
  not_full_.notify_all();
  if (worker_.joinable()) worker_.join();
}

ClassificationEvent EdgeRunner::classify(const fs::path& clip_path) const {
  ClassificationEvent e;
  e.clip = clip_path.filename().string();
  e.model_fingerprint = archive_.fingerprint;
  e.ts = utc_timestamp();
  std::uintmax_t h = std::hash<std::string>{}(archive_.fingerprint);
  mix(h, std::hash<std::string>{}(e.clip));
  if (auto c = inspect(clip_path)) mix(h, c->signature);
  char id[24];
  std::snprintf(id, sizeof id, "%016jx", h);
  e.id = id;
  try {
    const Clip clip = load_clip(clip_path, options_.default_fps);
    const auto p = predict(archive_.spec, archive_.params, clip, archive_.preprocess, archive_.classes);
    e.class_index = p.index;
    e.class_name = p.name;
    e.probs = p.probs;
  } catch (const std::exception& ex) {
    e.error = ex.what();
  }
  return e;
}

fs::path EdgeRunner::move_to_done(const fs::path& p) {
  const fs::path done = options_.input_dir / "done";
  fs::path target = done / p.filename();
  for (int n = 1; fs::exists(target); ++n) {
    target = done / (p.stem().string() + "." + std::to_string(n) + p.extension().string());
  }
  std::error_code ec;
  fs::rename(p, target, ec);
  if (ec) {
    std::lock_guard lock(log_mu_);
    log_ << "[watch] could not move " << p << " to done/: " << ec.message() << '\n';
  }
  return target;
}

std::size_t EdgeRunner::poll_once() {
  ++poll_count_;
  std::vector<std::pair<Seen, fs::path>> ready;
  std::map<fs::path, Seen> next;
  std::error_code ec;
  for (const auto& entry : fs::directory_iterator(options_.input_dir, ec)) {
    const auto c = inspect(entry.path());
    if (!c) continue;
    Seen s{c->signature, poll_count_, c->mtime, false};
    if (const auto it = seen_.find(c->path); it != seen_.end()) {
      s.first_poll = it->second.first_poll;
      s.stable = it->second.signature == c->signature;
    }
    if (s.stable) {
      ready.emplace_back(s, c->path);
    } else {
      next.emplace(c->path, s);
    }
  }
  if (ec) {
    std::lock_guard lock(log_mu_);
    log_ << "[watch] cannot scan " << options_.input_dir << ": " << ec.message() << '\n';
  }
  seen_ = std::move(next);
  std::sort(ready.begin(), ready.end(), [](const auto& a, const auto& b) {
    if (a.first.first_poll != b.first.first_poll) return a.first.first_poll < b.first.first_poll;
    if (a.first.mtime != b.first.mtime) return a.first.mtime < b.first.mtime;
    return a.second.filename().string() < b.second.filename().string();
  });
  for (const auto& [seen, path] : ready) {
    auto event = classify(path);
    if (!event.ok()) {
      std::lock_guard lock(log_mu_);
      log_ << "[watch] " << path.filename().string() << ": " << *event.error << '\n';
    }
    move_to_done(path);
    enqueue(std::move(event));
  }
  return ready.size();
}

void EdgeRunner::enqueue(ClassificationEvent event) {
  std::unique_lock lock(mu_);
  not_full_.wait(lock, [&] { return queue_.size() < options_.queue_capacity || closing_; });
  queue_.push_back(std::move(event));
  not_empty_.notify_one();
}

void EdgeRunner::deliver_loop() {
  for (;;) {
    ClassificationEvent event;
    {
      std::unique_lock lock(mu_);
      not_empty_.wait(lock, [&] { return !queue_.empty() || closing_; });
      if (queue_.empty()) return;
      event = std::move(queue_.front());
      queue_.pop_front();
      in_flight_ = true;
      not_full_.notify_one();
    }
    DeliveryResult r;
    try {
      r = dispatch_event(event, *sink_);
    } catch (const std::exception& ex) {
      r.detail = ex.what();
    }
    if (!r.delivered) {
      ++undelivered_;
      std::lock_guard lock(log_mu_);
      log_ << "[watch] event " << event.id << " undelivered after " << r.attempts << " attempt(s): " << r.detail
           << '\n';
    }
    {
      std::lock_guard lock(mu_);
      in_flight_ = false;
    }
    drained_.notify_all();
  }
}

void EdgeRunner::flush() {
  std::unique_lock lock(mu_);
  drained_.wait(lock, [&] { return queue_.empty() && !in_flight_; });
}

void EdgeRunner::run(const std::atomic<bool>& stop) {
  while (!stop.load()) {
    poll_once();
    const auto until = std::chrono::steady_clock::now() + options_.poll_interval;
    while (!stop.load() && std::chrono::steady_clock::now() < until) {
      std::this_thread::sleep_for(std::min(options_.poll_interval, std::chrono::milliseconds(50)));
    }
  }
  flush();
}

}  // namespace ar3d
