// SPDX-License-Identifier: Apache-2.0
#include "fake_oracle.hpp"

#include <unistd.h>

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <mutex>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>

#include "bdmae/oracles.hpp"
#include "bdmae/wire.hpp"

namespace bdmae::testing {

namespace {

bool write_all(int fd, const std::string& data) {
  std::size_t off = 0;
  while (off < data.size()) {
    const ssize_t n = ::write(fd, data.data() + off, data.size() - off);
    if (n <= 0) return false;
    off += static_cast<std::size_t>(n);
  }
  return true;
}

class LineReader {
 public:
  explicit LineReader(int fd) : fd_(fd) {}
  std::optional<std::string> next() {
    for (;;) {
      const auto nl = buffer_.find('\n', scanned_);
      if (nl != std::string::npos) {
        std::string line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        scanned_ = 0;
        return line;
      }
      scanned_ = buffer_.size();
      char chunk[65536];
      const ssize_t n = ::read(fd_, chunk, sizeof chunk);
      if (n <= 0) return std::nullopt;
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

 private:
  int fd_;
  std::string buffer_;
  std::size_t scanned_ = 0;
};

std::string respond(const FakeOracleOptions& opt, std::uint64_t id, const wire::Request& req) {
  const std::string& mode = opt.mode;
  if (mode == "error") return wire::encode_error(id, "model exploded");
  if (mode == "malformed") return "{this is not json";
  if (mode == "bad-label") return wire::encode_label(id, Label{opt.num_classes});
  if (mode == "wrong-id") return wire::encode_label(id + 1000, Label{0});
  if (mode == "extra-field") {
    return "{\"id\":" + std::to_string(id) + ",\"label\":0,\"confidence\":0.9}";
  }
  if (req.op == wire::Op::kRestore) return wire::encode_pixels(id, req.image);
  if (mode.rfind("label:", 0) == 0) return wire::encode_label(id, Label{std::stoi(mode.substr(6))});
  if (mode == "pixel-label") {
    const auto bytes = wire::quantize(req.image);
    return wire::encode_label(id, Label{bytes.front() % opt.num_classes});
  }
  return wire::encode_label(id, Label{0});
}

}  // namespace

FakeOracleOptions parse_fake_oracle_args(int argc, char** argv) {
  FakeOracleOptions opt;
  for (int i = 1; i + 1 < argc; i += 2) {
    const std::string key = argv[i], value = argv[i + 1];
    if (key == "--mode") {
      opt.mode = value;
    } else if (key == "--ops") {
      opt.ops.clear();
      std::stringstream ss(value);
      for (std::string op; std::getline(ss, op, ',');) opt.ops.push_back(op);
    } else if (key == "--num-classes") {
      opt.num_classes = std::stoi(value);
    } else if (key == "--max-in-flight") {
      opt.max_in_flight = std::stoi(value);
    } else if (key == "--jitter-ms") {
      opt.jitter_ms = std::stoi(value);
    } else {
      throw std::invalid_argument("unknown option " + key);
    }
  }
  return opt;
}

long serve_fake_oracle(int in_fd, int out_fd, const FakeOracleOptions& opt) {
  std::mutex out_mutex;
  auto send = [&](const std::string& line) {
    std::lock_guard lock(out_mutex);
    return write_all(out_fd, line + "\n");
  };
  if (opt.mode == "silent") {
    LineReader drain(in_fd);
    while (drain.next()) {
    }
    return 0;
  }
  if (opt.mode == "bad-handshake") {
    send(R"({"proto":"something-else/9","ops":["classify"],"num_classes":5,"max_in_flight":1})");
  } else {
    send(wire::encode_handshake({opt.ops, opt.num_classes, opt.max_in_flight}));
  }

  long limit = -1;
  if (opt.mode.rfind("exit-after:", 0) == 0) limit = std::stol(opt.mode.substr(11));

  LineReader reader(in_fd);
  std::atomic<long> answered{0};
  std::vector<std::thread> workers;
  long received = 0;
  while (auto line = reader.next()) {
    if (limit >= 0 && received >= limit) break;
    ++received;
    if (opt.mode == "hang") continue;
    std::optional<std::uint64_t> id;
    std::string reply;
    wire::Request req;
    try {
      req = wire::parse_request(*line, &id);
      reply = respond(opt, req.id, req);
    } catch (const std::exception& e) {
      reply = wire::encode_error(id.value_or(0), e.what());
    }
    const int delay = opt.jitter_ms > 0 ? static_cast<int>((received * 7919) % (opt.jitter_ms + 1)) : 0;
    if (delay == 0) {
      if (send(reply)) ++answered;
    } else {
      workers.emplace_back([&, reply, delay] {
        std::this_thread::sleep_for(std::chrono::milliseconds(delay));
        if (send(reply)) ++answered;
      });
    }
  }
  for (auto& t : workers) t.join();
  return answered.load();
}

}  // namespace bdmae::testing
