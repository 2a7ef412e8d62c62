// SPDX-License-Identifier: Apache-2.0
#include "bdmae/external_oracle.hpp"

#include <fcntl.h>
#include <netdb.h>
#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <charconv>
#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <cstring>
#include <exception>
#include <functional>
#include <optional>
#include <utility>
#include <vector>
#include <map>
#include <mutex>
#include <thread>

extern char** environ;

namespace bdmae {

namespace {

using Clock = std::chrono::steady_clock;

std::string errno_text(const char* what) {
  return std::string(what) + ": " + std::strerror(errno);
}

int parse_positive(std::string_view text, const char* what) {
  int value = 0;
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || end != text.data() + text.size() || value <= 0) {
    throw InvalidArgument(std::string(what) + " must be a positive integer, got '" +
                          std::string(text) + "'");
  }
  return value;
}

void ignore_sigpipe() {
  static std::once_flag once;
  std::call_once(once, [] {
    struct sigaction sa {};
    sa.sa_handler = SIG_IGN;
    sigaction(SIGPIPE, &sa, nullptr);
  });
}

int remaining_ms(Clock::time_point deadline) {
  const auto left =
      std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now()).count();
  return left <= 0 ? 0 : static_cast<int>(std::min<long long>(left, 1 << 30));
}

class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  Fd(Fd&& o) noexcept : fd_(o.release()) {}
  Fd& operator=(Fd&& o) noexcept {
    reset(o.release());
    return *this;
  }
  ~Fd() { reset(); }
  int get() const { return fd_; }
  int release() { return std::exchange(fd_, -1); }
  void reset(int fd = -1) {
    if (fd_ >= 0) ::close(fd_);
    fd_ = fd;
  }

 private:
  int fd_ = -1;
};

std::pair<Fd, Fd> make_pipe() {
  int fds[2];
  if (::pipe2(fds, O_CLOEXEC) != 0) throw OracleError(errno_text("pipe"));
  return {Fd(fds[0]), Fd(fds[1])};
}

// Line-oriented transport over a read fd and a write fd (the same socket for
// TCP, two pipes for a child process).
class StreamConnection : public OracleConnection {
 public:
  StreamConnection(Fd read_fd, Fd write_fd, pid_t child, int timeout_ms)
      : read_fd_(std::move(read_fd)),
        write_fd_(std::move(write_fd)),
        child_(child),
        timeout_(timeout_ms) {
    auto [wake_read, wake_write] = make_pipe();
    wake_read_ = std::move(wake_read);
    wake_write_ = std::move(wake_write);
    const int target = write_fd_.get() >= 0 ? write_fd_.get() : read_fd_.get();
    ::fcntl(target, F_SETFL, ::fcntl(target, F_GETFL) | O_NONBLOCK);
    reader_ = std::thread([this] { read_loop(); });
  }

  ~StreamConnection() override {
    // Closing the write side lets a well-behaved server exit on EOF.
    if (write_fd_.get() >= 0) {
      write_fd_.reset();
    } else {
      ::shutdown(read_fd_.get(), SHUT_WR);
    }
    const char byte = 0;
    [[maybe_unused]] auto n = ::write(wake_write_.get(), &byte, 1);
    reader_.join();
    if (child_ > 0) reap_child();
  }

  void await_handshake() {
    std::unique_lock lock(mutex_);
    const auto deadline = Clock::now() + timeout_;
    if (!cv_.wait_until(lock, deadline, [&] { return handshake_.has_value() || failure_; })) {
      throw OracleTimeout("oracle sent no handshake within " +
                          std::to_string(timeout_.count()) + " ms");
    }
    if (failure_) std::rethrow_exception(failure_);
  }

  const wire::Handshake& handshake() const override { return *handshake_; }

  wire::Response call(const std::function<std::string(std::uint64_t)>& encode) override {
    const auto deadline = Clock::now() + timeout_;
    std::unique_lock lock(mutex_);
    if (!cv_.wait_until(lock, deadline, [&] {
          return failure_ || in_flight_ < handshake_->max_in_flight;
        })) {
      throw OracleTimeout("no free request slot within " + std::to_string(timeout_.count()) +
                          " ms");
    }
    if (failure_) std::rethrow_exception(failure_);
    const std::uint64_t id = next_id_++;
    auto slot = std::make_shared<Slot>();
    pending_[id] = slot;
    ++in_flight_;
    lock.unlock();

    auto release = [&] {
      pending_.erase(id);
      --in_flight_;
      cv_.notify_all();
    };
    try {
      send_line(encode(id), deadline);
    } catch (...) {
      lock.lock();
      release();
      throw;
    }

    lock.lock();
    const bool answered =
        cv_.wait_until(lock, deadline, [&] { return slot->done || failure_; });
    release();
    if (slot->done) {
      if (slot->response.error) {
        throw OracleError("oracle reported an error: " + *slot->response.error);
      }
      return std::move(slot->response);
    }
    if (failure_) std::rethrow_exception(failure_);
    if (!answered) {
      throw OracleTimeout("oracle did not answer request " + std::to_string(id) + " within " +
                          std::to_string(timeout_.count()) + " ms");
    }
    throw OracleError("request abandoned");
  }

 private:
  struct Slot {
    bool done = false;
    wire::Response response;
  };

  int out_fd() const { return write_fd_.get() >= 0 ? write_fd_.get() : read_fd_.get(); }

  void send_line(std::string line, Clock::time_point deadline) {
    line.push_back('\n');
    std::lock_guard lock(write_mutex_);
    std::size_t sent = 0;
    while (sent < line.size()) {
      const ssize_t n = ::write(out_fd(), line.data() + sent, line.size() - sent);
      if (n > 0) {
        sent += static_cast<std::size_t>(n);
        continue;
      }
      if (n < 0 && errno == EINTR) continue;
      if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK)) {
        pollfd p{out_fd(), POLLOUT, 0};
        const int wait = remaining_ms(deadline);
        if (wait == 0 || ::poll(&p, 1, wait) == 0) {
          // A partial line would corrupt the stream for every later request.
          if (sent > 0) poison(std::make_exception_ptr(
                            OracleError("oracle connection broken by a stalled write")));
          throw OracleTimeout("oracle did not accept a request within " +
                              std::to_string(timeout_.count()) + " ms");
        }
        continue;
      }
      const auto error = std::make_exception_ptr(OracleError(errno_text("oracle write")));
      poison(error);
      std::rethrow_exception(error);
    }
  }

  void poison(std::exception_ptr error) {
    std::lock_guard lock(mutex_);
    if (!failure_) failure_ = error;
    cv_.notify_all();
  }

  void handle_line(std::string_view line) {
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) return;
    try {
      if (!handshake_) {
        auto h = wire::parse_handshake(line);
        std::lock_guard lock(mutex_);
        handshake_ = std::move(h);
        cv_.notify_all();
        return;
      }
      wire::Response response = wire::parse_response(line);
      std::unique_lock lock(mutex_);
      const auto it = pending_.find(response.id);
      if (it == pending_.end()) {
        if (response.id < next_id_) return;  // answer to an abandoned request
        lock.unlock();
        throw ProtocolError("response for unknown request id " + std::to_string(response.id));
      }
      it->second->response = std::move(response);
      it->second->done = true;
      cv_.notify_all();
    } catch (const ProtocolError& e) {
      poison(std::make_exception_ptr(ProtocolError(e.what())));
    }
  }

  void read_loop() {
    std::string buffer;
    std::size_t scanned = 0;
    std::vector<char> chunk(1 << 16);
    for (;;) {
      pollfd fds[2] = {{read_fd_.get(), POLLIN, 0}, {wake_read_.get(), POLLIN, 0}};
      if (::poll(fds, 2, -1) < 0) {
        if (errno == EINTR) continue;
        poison(std::make_exception_ptr(OracleError(errno_text("oracle poll"))));
        return;
      }
      if (fds[1].revents != 0) return;
      const ssize_t n = ::read(read_fd_.get(), chunk.data(), chunk.size());
      if (n < 0 && (errno == EINTR || errno == EAGAIN)) continue;
      if (n <= 0) {
        poison(std::make_exception_ptr(OracleError(
            n == 0 ? "oracle closed the connection" : errno_text("oracle read"))));
        return;
      }
      buffer.append(chunk.data(), static_cast<std::size_t>(n));
      std::size_t start = 0;
      for (std::size_t nl; (nl = buffer.find('\n', scanned)) != std::string::npos;) {
        handle_line(std::string_view(buffer).substr(start, nl - start));
        start = nl + 1;
        scanned = start;
      }
      buffer.erase(0, start);
      scanned = buffer.size();
    }
  }

  void reap_child() {
    const auto deadline = Clock::now() + std::chrono::seconds(2);
    int status = 0;
    while (Clock::now() < deadline) {
      const pid_t r = ::waitpid(child_, &status, WNOHANG);
      if (r == child_ || (r < 0 && errno != EINTR)) return;
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    ::kill(child_, SIGKILL);
    ::waitpid(child_, &status, 0);
  }

  Fd read_fd_;
  Fd write_fd_;  // -1 when read_fd_ is a socket used both ways
  pid_t child_;
  std::chrono::milliseconds timeout_;
  Fd wake_read_, wake_write_;
  std::thread reader_;

  std::mutex mutex_;
  std::condition_variable cv_;
  std::optional<wire::Handshake> handshake_;
  std::exception_ptr failure_;
  std::map<std::uint64_t, std::shared_ptr<Slot>> pending_;
  std::uint64_t next_id_ = 1;
  int in_flight_ = 0;
  std::mutex write_mutex_;
};

std::shared_ptr<StreamConnection> spawn(const OracleEndpoint& endpoint) {
  auto [child_in_read, child_in_write] = make_pipe();
  auto [child_out_read, child_out_write] = make_pipe();

  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_adddup2(&actions, child_in_read.get(), STDIN_FILENO);
  posix_spawn_file_actions_adddup2(&actions, child_out_write.get(), STDOUT_FILENO);
  std::string sh = "/bin/sh";
  std::string dash_c = "-c";
  std::string command = endpoint.command;
  char* argv[] = {sh.data(), dash_c.data(), command.data(), nullptr};
  pid_t pid = -1;
  const int rc = ::posix_spawn(&pid, "/bin/sh", &actions, nullptr, argv, environ);
  posix_spawn_file_actions_destroy(&actions);
  if (rc != 0) {
    throw OracleError("cannot start oracle '" + endpoint.command + "': " + std::strerror(rc));
  }
  return std::make_shared<StreamConnection>(std::move(child_out_read), std::move(child_in_write),
                                            pid, endpoint.timeout_ms);
}

std::shared_ptr<StreamConnection> dial(const OracleEndpoint& endpoint) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* found = nullptr;
  const std::string port = std::to_string(endpoint.port);
  if (const int rc = ::getaddrinfo(endpoint.host.c_str(), port.c_str(), &hints, &found); rc != 0) {
    throw OracleError("cannot resolve oracle host '" + endpoint.host + "': " + gai_strerror(rc));
  }
  std::unique_ptr<addrinfo, decltype(&::freeaddrinfo)> list(found, ::freeaddrinfo);
  const auto deadline = Clock::now() + std::chrono::milliseconds(endpoint.timeout_ms);
  std::string last_error = "no addresses";
  for (addrinfo* ai = found; ai != nullptr; ai = ai->ai_next) {
    Fd sock(::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC | SOCK_NONBLOCK,
                     ai->ai_protocol));
    if (sock.get() < 0) {
      last_error = errno_text("socket");
      continue;
    }
    if (::connect(sock.get(), ai->ai_addr, ai->ai_addrlen) != 0) {
      if (errno != EINPROGRESS) {
        last_error = errno_text("connect");
        continue;
      }
      pollfd p{sock.get(), POLLOUT, 0};
      if (::poll(&p, 1, remaining_ms(deadline)) <= 0) {
        throw OracleTimeout("connecting to " + endpoint.host + ":" + port + " timed out");
      }
      int err = 0;
      socklen_t len = sizeof err;
      ::getsockopt(sock.get(), SOL_SOCKET, SO_ERROR, &err, &len);
      if (err != 0) {
        last_error = std::string("connect: ") + std::strerror(err);
        continue;
      }
    }
    return std::make_shared<StreamConnection>(std::move(sock), Fd(), -1, endpoint.timeout_ms);
  }
  throw OracleError("cannot connect to oracle " + endpoint.host + ":" + port + " (" +
                    last_error + ")");
}

}  // namespace

OracleEndpoint OracleEndpoint::parse(std::string_view spec, int timeout_ms) {
  OracleEndpoint e;
  e.timeout_ms = timeout_ms;
  if (spec.starts_with("exec:")) {
    e.transport = Transport::kStdio;
    e.command = std::string(spec.substr(5));
  } else if (spec.starts_with("tcp:")) {
    e.transport = Transport::kTcp;
    const std::string_view rest = spec.substr(4);
    const auto colon = rest.rfind(':');
    if (colon == std::string_view::npos) {
      throw InvalidArgument("tcp endpoint must be tcp:<host>:<port>");
    }
    e.host = std::string(rest.substr(0, colon));
    if (e.host.size() >= 2 && e.host.front() == '[' && e.host.back() == ']') {
      e.host = e.host.substr(1, e.host.size() - 2);
    }
    e.port = parse_positive(rest.substr(colon + 1), "tcp port");
  } else {
    throw InvalidArgument("oracle endpoint must start with exec: or tcp:, got '" +
                          std::string(spec) + "'");
  }
  e.validate();
  return e;
}

void OracleEndpoint::validate() const {
  if (timeout_ms <= 0) throw InvalidArgument("oracle timeout must be positive");
  if (transport == Transport::kStdio && command.empty()) {
    throw InvalidArgument("exec endpoint needs a command");
  }
  if (transport == Transport::kTcp && (host.empty() || port <= 0 || port > 65535)) {
    throw InvalidArgument("tcp endpoint needs a host and a port in 1..65535");
  }
}

int oracle_timeout_from_env() {
  const char* value = std::getenv("BDMAE_ORACLE_TIMEOUT_MS");
  if (value == nullptr || *value == '\0') return 30000;
  return parse_positive(value, "BDMAE_ORACLE_TIMEOUT_MS");
}

std::shared_ptr<OracleConnection> OracleConnection::open(const OracleEndpoint& endpoint) {
  endpoint.validate();
  ignore_sigpipe();
  auto connection = endpoint.transport == OracleEndpoint::Transport::kStdio ? spawn(endpoint)
                                                                            : dial(endpoint);
  connection->await_handshake();
  return connection;
}

ExternalClassifier::ExternalClassifier(std::shared_ptr<OracleConnection> connection)
    : connection_(std::move(connection)) {
  if (!connection_->handshake().supports("classify")) {
    throw OracleError("oracle does not offer classify");
  }
}

int ExternalClassifier::num_classes() const { return connection_->handshake().num_classes; }

Label ExternalClassifier::classify(const Image& image) const {
  const wire::Response r =
      connection_->call([&](std::uint64_t id) { return wire::encode_classify(id, image); });
  if (!r.label) throw ProtocolError("classify response carries no label");
  if (*r.label < 0 || *r.label >= num_classes()) {
    throw ProtocolError("label " + std::to_string(*r.label) + " outside [0, " +
                        std::to_string(num_classes()) + ")");
  }
  return Label{*r.label};
}

ExternalRestorer::ExternalRestorer(std::shared_ptr<OracleConnection> connection)
    : connection_(std::move(connection)) {
  if (!connection_->handshake().supports("restore")) {
    throw OracleError("oracle does not offer restore");
  }
}

Image ExternalRestorer::restore(const Image& image224, const TokenMask& mask) const {
  const wire::Response r = connection_->call(
      [&](std::uint64_t id) { return wire::encode_restore(id, image224, mask); });
  if (!r.pixels) throw ProtocolError("restore response carries no pixels");
  Image out = wire::dequantize(wire::base64_decode(*r.pixels), kRestorerSize, kRestorerSize);
  validate_restoration(out);
  return out;
}

}  // namespace bdmae
