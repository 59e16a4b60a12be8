#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "ar3d/model_io.hpp"
#include "json.hpp"

namespace ar3d {

/// One classification outcome (or failure) for an incoming clip.
struct ClassificationEvent {
  std::string id;  // stable per (model, clip) so receivers can deduplicate retries
  std::string clip;
  std::string class_name;
  std::optional<std::size_t> class_index;
  std::vector<double> probs;
  std::string ts;  // RFC 3339 UTC
  std::string model_fingerprint;
  std::optional<std::string> error;

  bool ok() const { return !error.has_value(); }
  nlohmann::json to_json() const;
  static ClassificationEvent from_json(const nlohmann::json& j);
  bool operator==(const ClassificationEvent&) const = default;
};

std::string utc_timestamp(std::chrono::system_clock::time_point t = std::chrono::system_clock::now());

struct DeliveryResult {
  bool delivered = false;
  int attempts = 0;
  std::string detail;
};

class EventSink {
 public:
  virtual ~EventSink() = default;
  virtual DeliveryResult deliver(const ClassificationEvent& event) = 0;
};

/// One JSON object per line.
class StdoutSink : public EventSink {
 public:
  explicit StdoutSink(std::ostream& out) : out_(out) {}
  DeliveryResult deliver(const ClassificationEvent& event) override;

 private:
  std::ostream& out_;
};

struct RetryPolicy {
  int max_attempts = 5;
  std::chrono::milliseconds initial_backoff{100};
  std::chrono::milliseconds max_backoff{2000};
  std::chrono::milliseconds timeout{3000};
};

/// POSTs the event JSON; 2xx counts as delivered, anything else is retried with exponential backoff.
class WebhookSink : public EventSink {
 public:
  explicit WebhookSink(std::string url, RetryPolicy policy = {});
  DeliveryResult deliver(const ClassificationEvent& event) override;

 private:
  std::string origin_;  // scheme://host:port
  std::string path_;
  RetryPolicy policy_;
};

DeliveryResult dispatch_event(const ClassificationEvent& event, EventSink& sink);

struct WatchOptions {
  std::filesystem::path input_dir;
  std::filesystem::path archive;
  std::chrono::milliseconds poll_interval{500};
  std::size_t queue_capacity = 16;
  double default_fps = 25.0;  // PGM folders without an fps.txt sidecar
};

/// Watches a drop directory, classifies every completed clip with the archived model and
/// hands events to a sink on a background delivery thread.
class EdgeRunner {
 public:
  EdgeRunner(WatchOptions options, std::shared_ptr<EventSink> sink, std::ostream& log);
  ~EdgeRunner();
  EdgeRunner(const EdgeRunner&) = delete;
  EdgeRunner& operator=(const EdgeRunner&) = delete;

  /// One scan: clips whose size was stable since the previous scan are classified in arrival
  /// order, queued for delivery and moved to done/. Returns the number handled.
  std::size_t poll_once();

  /// Polls until `stop` becomes true, then drains the delivery queue.
  void run(const std::atomic<bool>& stop);

  /// Blocks until every queued event has been delivered or given up on.
  void flush();

  /// Classification path shared with offline prediction; never throws for bad clips.
  ClassificationEvent classify(const std::filesystem::path& clip_path) const;

  const WeightArchive& archive() const { return archive_; }
  std::size_t undelivered() const { return undelivered_.load(); }

 private:
  struct Seen {
    std::uintmax_t signature = 0;
    std::uint64_t first_poll = 0;
    std::filesystem::file_time_type mtime{};
    bool stable = false;
  };

  void enqueue(ClassificationEvent event);
  void deliver_loop();
  std::filesystem::path move_to_done(const std::filesystem::path& p);

  WatchOptions options_;
  WeightArchive archive_;
  std::shared_ptr<EventSink> sink_;
  std::ostream& log_;
  mutable std::mutex log_mu_;
  std::map<std::filesystem::path, Seen> seen_;
  std::uint64_t poll_count_ = 0;

  std::mutex mu_;
  std::condition_variable not_empty_, not_full_, drained_;
  std::deque<ClassificationEvent> queue_;
  bool in_flight_ = false;
  bool closing_ = false;
  std::atomic<std::size_t> undelivered_{0};
  std::thread worker_;
};

}  // namespace ar3d
