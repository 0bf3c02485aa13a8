#pragma once

#include "masred/detection.hpp"
#include "masred/image.hpp"
#include "masred/toydet.hpp"

#include <atomic>
#include <chrono>
#include <iosfwd>
#include <map>
#include <set>
#include <memory>
#include <string>
#include <vector>

namespace masred {

inline constexpr double kDefaultThreshold = 0.3;
inline constexpr std::chrono::milliseconds kDefaultOracleTimeout{10'000};

// Closed-box detector interface. detect() counts every call that reaches
// the backend, including calls that then fail, and filters the backend's
// answer to confidence >= threshold with an exact comparison.
class Oracle {
 public:
  enum class Kind { toy, external };

  explicit Oracle(double threshold);
  virtual ~Oracle() = default;
  Oracle(const Oracle&) = delete;
  Oracle& operator=(const Oracle&) = delete;

  DetectionSet detect(const Image& image);

  virtual Kind kind() const noexcept = 0;
  virtual const std::vector<std::string>& class_names() const = 0;

  double threshold() const noexcept { return threshold_; }
  std::uint64_t query_count() const noexcept { return queries_.load(); }

 protected:
  virtual DetectionSet query(const Image& image) = 0;

 private:
  double threshold_;
  std::atomic<std::uint64_t> queries_{0};
};

// In-process oracle over a shared, immutable toy model. Reentrant.
class ToyOracle final : public Oracle {
 public:
  explicit ToyOracle(std::shared_ptr<const ToyDetectorModel> model, double threshold = kDefaultThreshold);

  Kind kind() const noexcept override { return Kind::toy; }
  const std::vector<std::string>& class_names() const override { return model_->config.class_names; }
  const ToyDetectorModel& model() const noexcept { return *model_; }

 protected:
  DetectionSet query(const Image& image) override;

 private:
  std::shared_ptr<const ToyDetectorModel> model_;
};

// Oracle served by a child process speaking the line protocol on its
// standard streams. One request in flight per handle.
class ExternalOracle final : public Oracle {
 public:
  // Runs `command` through /bin/sh and performs the handshake.
  ExternalOracle(const std::string& command, double threshold = kDefaultThreshold,
                 std::chrono::milliseconds timeout = kDefaultOracleTimeout);
  ~ExternalOracle() override;

  Kind kind() const noexcept override { return Kind::external; }
  const std::vector<std::string>& class_names() const override { return classes_; }

  // Pipelining primitives behind detect(): send a request and return its
  // id; wait for the response to a given id, buffering any others.
  std::int64_t send_request(const Image& image);
  DetectionSet await_response(std::int64_t id);

  bool alive();

 protected:
  DetectionSet query(const Image& image) override;

 private:
  void write_line(const std::string& line);
  std::string read_line();

  int fd_ = -1;
  int pid_ = -1;
  std::chrono::milliseconds timeout_;
  std::vector<std::string> classes_;
  std::string buffer_;
  std::int64_t next_id_ = 1;
  std::int64_t lines_read_ = 0;
  std::set<std::int64_t> outstanding_;
  std::map<std::int64_t, DetectionSet> pending_;
  bool terminated_ = false;
};

// ---- wire format -----------------------------------------------------------

std::string encode_handshake_request();
std::string encode_handshake_reply(const std::vector<std::string>& classes);
std::string encode_request(std::int64_t id, const Image& image, double threshold);
std::string encode_response(std::int64_t id, const DetectionSet& detections);
std::string encode_error(std::int64_t id, const std::string& message);

// Request/response loop for a backend oracle: one reply line per input
// line, until the input ends. Malformed lines get an error reply (id -1
// when no id can be read) and the session continues. The backend's own
// threshold is ignored; each request carries its threshold.
void serve_oracle(std::istream& in, std::ostream& out, const ToyDetectorModel& model);

}  // namespace masred
