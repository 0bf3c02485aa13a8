#include "masred/oracle.hpp"

#include "masred/digest.hpp"
#include "masred/error.hpp"

#include "json.hpp"

#include <cerrno>
#include <csignal>
#include <cstring>
#include <istream>
#include <ostream>
#include <spawn.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <poll.h>
#include <thread>
#include <unistd.h>

extern char** environ;

namespace masred {

using json = nlohmann::json;

Oracle::Oracle(double threshold) : threshold_(threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0))
    throw Error(ErrorKind::range, "oracle threshold must lie in [0, 1]");
}

DetectionSet Oracle::detect(const Image& image) {
  ++queries_;
  DetectionSet raw = query(image);
  return filter_by_confidence(raw, threshold_);
}

ToyOracle::ToyOracle(std::shared_ptr<const ToyDetectorModel> model, double threshold)
    : Oracle(threshold), model_(std::move(model)) {
  if (!model_) throw Error(ErrorKind::invalid_argument, "toy oracle requires a model");
}

DetectionSet ToyOracle::query(const Image& image) { return forward(*model_, image, threshold()); }

// ---- wire format -----------------------------------------------------------

std::string encode_handshake_request() { return json{{"hello", 1}}.dump(); }

std::string encode_handshake_reply(const std::vector<std::string>& classes) {
  return json{{"hello", 1}, {"classes", classes}}.dump();
}

std::string encode_request(std::int64_t id, const Image& image, double threshold) {
  return json{{"id", id}, {"image", base64_encode(encode_ppm(image))}, {"threshold", threshold}}.dump();
}

std::string encode_response(std::int64_t id, const DetectionSet& detections) {
  json list = json::array();
  for (const auto& d : detections.detections)
    list.push_back({{"class_id", d.class_id}, {"box", {d.box.x, d.box.y, d.box.w, d.box.h}}, {"confidence", d.confidence}});
  return json{{"id", id}, {"detections", std::move(list)}}.dump();
}

std::string encode_error(std::int64_t id, const std::string& message) {
  return json{{"id", id}, {"error", message}}.dump();
}

namespace {

DetectionSet parse_detections(const json& list) {
  if (!list.is_array()) throw std::invalid_argument("detections is not an array");
  DetectionSet set;
  for (const auto& d : list) {
    if (!d.is_object()) throw std::invalid_argument("detection is not an object");
    const auto& box = d.at("box");
    if (!box.is_array() || box.size() != 4) throw std::invalid_argument("box must have 4 numbers");
    for (const auto& v : box)
      if (!v.is_number()) throw std::invalid_argument("box must have 4 numbers");
    if (!d.at("class_id").is_number_integer()) throw std::invalid_argument("class_id is not an integer");
    if (!d.at("confidence").is_number()) throw std::invalid_argument("confidence is not a number");
    Detection det;
    det.class_id = d.at("class_id").get<int>();
    det.box = {box[0].get<double>(), box[1].get<double>(), box[2].get<double>(), box[3].get<double>()};
    det.confidence = d.at("confidence").get<double>();
    if (!(det.confidence >= 0.0 && det.confidence <= 1.0)) throw std::invalid_argument("confidence outside [0, 1]");
    set.detections.push_back(det);
  }
  return set;
}

}  // namespace

// ---- external process ------------------------------------------------------

ExternalOracle::ExternalOracle(const std::string& command, double threshold, std::chrono::milliseconds timeout)
    : Oracle(threshold), timeout_(timeout) {
  int fds[2];
  if (::socketpair(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0, fds) != 0)
    throw Error(ErrorKind::io, std::string("oracle: socketpair failed: ") + std::strerror(errno));
  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_adddup2(&actions, fds[1], STDIN_FILENO);
  posix_spawn_file_actions_adddup2(&actions, fds[1], STDOUT_FILENO);
  std::string shell = "/bin/sh", flag = "-c", cmd = command;
  char* argv[] = {shell.data(), flag.data(), cmd.data(), nullptr};
  pid_t pid = -1;
  const int rc = posix_spawn(&pid, "/bin/sh", &actions, nullptr, argv, environ);
  posix_spawn_file_actions_destroy(&actions);
  ::close(fds[1]);
  if (rc != 0) {
    ::close(fds[0]);
    throw Error(ErrorKind::io, "oracle: cannot spawn '" + command + "': " + std::strerror(rc));
  }
  fd_ = fds[0];
  pid_ = pid;

  try {
    write_line(encode_handshake_request());
    const std::string line = read_line();
    ++lines_read_;
    json reply;
    try {
      reply = json::parse(line);
    } catch (const json::exception&) {
      throw Error(ErrorKind::protocol, "oracle protocol error at line 1: handshake reply is not valid JSON");
    }
    if (!reply.is_object() || !reply.contains("hello") || !reply["hello"].is_number_integer())
      throw Error(ErrorKind::protocol, "oracle protocol error at line 1: handshake reply lacks \"hello\"");
    if (reply["hello"].get<std::int64_t>() != 1)
      throw Error(ErrorKind::protocol, "oracle protocol version mismatch: expected 1, got " + reply["hello"].dump());
    const auto it = reply.find("classes");
    if (it == reply.end() || !it->is_array() || it->empty())
      throw Error(ErrorKind::protocol, "oracle protocol error at line 1: handshake reply lacks a class list");
    for (const auto& c : *it) {
      if (!c.is_string()) throw Error(ErrorKind::protocol, "oracle protocol error at line 1: class names must be strings");
      classes_.push_back(c.get<std::string>());
    }
  } catch (...) {
    ::shutdown(fd_, SHUT_RDWR);
    ::close(fd_);
    fd_ = -1;
    ::kill(pid_, SIGKILL);
    ::waitpid(pid_, nullptr, 0);
    pid_ = -1;
    throw;
  }
}

ExternalOracle::~ExternalOracle() {
  if (fd_ >= 0) {
    ::shutdown(fd_, SHUT_WR);
  }
  if (pid_ > 0) {
    // Closing the request stream asks the sidecar to exit; give it a moment.
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(1000);
    int status = 0;
    while (::waitpid(pid_, &status, WNOHANG) == 0) {
      if (std::chrono::steady_clock::now() > deadline) {
        ::kill(pid_, SIGKILL);
        ::waitpid(pid_, &status, 0);
        break;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
  }
  if (fd_ >= 0) ::close(fd_);
}

bool ExternalOracle::alive() {
  if (terminated_ || pid_ <= 0) return false;
  int status = 0;
  if (::waitpid(pid_, &status, WNOHANG) == pid_) {
    terminated_ = true;
    pid_ = -1;
  }
  return !terminated_;
}

void ExternalOracle::write_line(const std::string& line) {
  std::string data = line + "\n";
  std::size_t sent = 0;
  while (sent < data.size()) {
    const ssize_t n = ::send(fd_, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      terminated_ = true;
      throw Error(ErrorKind::oracle_terminated, "oracle terminated");
    }
    sent += static_cast<std::size_t>(n);
  }
}

std::string ExternalOracle::read_line() {
  const auto deadline = std::chrono::steady_clock::now() + timeout_;
  for (;;) {
    const auto nl = buffer_.find('\n');
    if (nl != std::string::npos) {
      std::string line = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      return line;
    }
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0)
      throw Error(ErrorKind::timeout, "oracle timed out after " + std::to_string(timeout_.count()) + " ms");
    pollfd p{fd_, POLLIN, 0};
    const int ready = ::poll(&p, 1, static_cast<int>(left.count()));
    if (ready < 0) {
      if (errno == EINTR) continue;
      throw Error(ErrorKind::io, std::string("oracle: poll failed: ") + std::strerror(errno));
    }
    if (ready == 0) continue;
    char chunk[65536];
    const ssize_t n = ::recv(fd_, chunk, sizeof chunk, 0);
    if (n < 0) {
      if (errno == EINTR) continue;
      terminated_ = true;
      throw Error(ErrorKind::oracle_terminated, "oracle terminated");
    }
    if (n == 0) {
      terminated_ = true;
      throw Error(ErrorKind::oracle_terminated, "oracle terminated");
    }
    buffer_.append(chunk, static_cast<std::size_t>(n));
  }
}

std::int64_t ExternalOracle::send_request(const Image& image) {
  if (terminated_ || !alive()) throw Error(ErrorKind::oracle_terminated, "oracle terminated");
  const std::int64_t id = next_id_++;
  write_line(encode_request(id, image, threshold()));
  outstanding_.insert(id);
  return id;
}

DetectionSet ExternalOracle::await_response(std::int64_t id) {
  if (auto it = pending_.find(id); it != pending_.end()) {
    DetectionSet set = std::move(it->second);
    pending_.erase(it);
    return set;
  }
  if (!outstanding_.count(id)) throw Error(ErrorKind::invalid_argument, "oracle: no request with id " + std::to_string(id));
  for (;;) {
    if (terminated_) throw Error(ErrorKind::oracle_terminated, "oracle terminated");
    const std::string line = read_line();
    const std::int64_t line_no = ++lines_read_;
    const std::string where = "oracle protocol error at line " + std::to_string(line_no) + ": ";
    json reply;
    try {
      reply = json::parse(line);
    } catch (const json::exception&) {
      throw Error(ErrorKind::protocol, where + "not valid JSON");
    }
    if (!reply.is_object() || !reply.contains("id") || !reply["id"].is_number_integer())
      throw Error(ErrorKind::protocol, where + "reply lacks an integer id");
    const auto rid = reply["id"].get<std::int64_t>();
    if (reply.contains("error")) {
      const std::string msg = reply["error"].is_string() ? reply["error"].get<std::string>() : reply["error"].dump();
      if (rid == id || rid == -1) {
        outstanding_.erase(id);
        throw Error(ErrorKind::protocol, where + "oracle reported error for request " + std::to_string(id) + ": " + msg);
      }
    }
    if (!outstanding_.count(rid)) throw Error(ErrorKind::protocol, where + "unexpected response id " + std::to_string(rid));
    DetectionSet set;
    try {
      set = parse_detections(reply.at("detections"));
    } catch (const std::exception& e) {
      throw Error(ErrorKind::protocol, where + e.what());
    }
    outstanding_.erase(rid);
    if (rid == id) return set;
    pending_.emplace(rid, std::move(set));
  }
}

DetectionSet ExternalOracle::query(const Image& image) { return await_response(send_request(image)); }

// ---- server ----------------------------------------------------------------

void serve_oracle(std::istream& in, std::ostream& out, const ToyDetectorModel& model) {
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::int64_t id = -1;
    std::string reply;
    try {
      const json request = json::parse(line);
      if (!request.is_object()) throw std::invalid_argument("request is not an object");
      if (request.contains("hello")) {
        if (!request["hello"].is_number_integer() || request["hello"].get<std::int64_t>() != 1)
          throw std::invalid_argument("unsupported protocol version");
        reply = encode_handshake_reply(model.config.class_names);
      } else {
        if (!request.contains("id") || !request["id"].is_number_integer())
          throw std::invalid_argument("request lacks an integer id");
        id = request["id"].get<std::int64_t>();
        if (!request.contains("image") || !request["image"].is_string())
          throw std::invalid_argument("request lacks an image");
        double threshold = 0.0;
        if (request.contains("threshold")) {
          if (!request["threshold"].is_number()) throw std::invalid_argument("threshold is not a number");
          threshold = request["threshold"].get<double>();
        }
        const Image image = decode_ppm(base64_decode(request["image"].get<std::string>()));
        reply = encode_response(id, forward(model, image, threshold));
      }
    } catch (const json::exception&) {
      reply = encode_error(id, "malformed request line");
    } catch (const std::exception& e) {
      reply = encode_error(id, e.what());
    }
    out << reply << '\n' << std::flush;
  }
}

}  // namespace masred
