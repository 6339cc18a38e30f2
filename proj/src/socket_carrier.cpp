#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <array>
#include <cerrno>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <mutex>
#include <thread>

#include <fmt/format.h>

#include "fedsim/error.hpp"
#include "fedsim/transport.hpp"

namespace fedsim {
namespace {

using Clock = std::chrono::steady_clock;

class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  ~Socket() { close(); }
  Socket(Socket&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Socket& operator=(Socket&& o) noexcept {
    if (this != &o) {
      close();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }

  int fd() const noexcept { return fd_; }
  void shutdown() const noexcept {
    if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
  }
  void close() noexcept {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_ = -1;
};

void send_all(int fd, std::span<const std::uint8_t> bytes) {
  std::size_t sent = 0;
  while (sent < bytes.size()) {
    const ssize_t n = ::send(fd, bytes.data() + sent, bytes.size() - sent, MSG_NOSIGNAL);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) throw ProtocolError(fmt::format("send failed: {}", std::strerror(errno)));
    sent += static_cast<std::size_t>(n);
  }
}

// false on clean EOF before the first byte.
bool recv_exact(int fd, std::uint8_t* out, std::size_t size) {
  std::size_t got = 0;
  while (got < size) {
    const ssize_t n = ::recv(fd, out + got, size - got, 0);
    if (n < 0 && errno == EINTR) continue;
    if (n == 0 && got == 0) return false;
    if (n <= 0) throw ProtocolError("connection closed mid-frame");
    got += static_cast<std::size_t>(n);
  }
  return true;
}

std::optional<std::vector<std::uint8_t>> recv_frame(int fd) {
  std::array<std::uint8_t, 4> prefix{};
  if (!recv_exact(fd, prefix.data(), prefix.size())) return std::nullopt;
  const std::uint32_t length = frame_length(prefix);
  if (length > kMaxFrameLength || length < kHeaderBytes - 4) {
    throw ProtocolError(fmt::format("malformed frame: length field {}", length));
  }
  std::vector<std::uint8_t> frame(4 + std::size_t{length});
  std::copy(prefix.begin(), prefix.end(), frame.begin());
  if (!recv_exact(fd, frame.data() + 4, length)) throw ProtocolError("connection closed mid-frame");
  return frame;
}

sockaddr_in resolve(const std::string& host, std::uint16_t port) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (int rc = ::getaddrinfo(host.c_str(), nullptr, &hints, &res); rc != 0 || res == nullptr) {
    throw StartupError(fmt::format("cannot resolve host '{}': {}", host, gai_strerror(rc)));
  }
  sockaddr_in addr{};
  std::memcpy(&addr, res->ai_addr, sizeof(addr));
  ::freeaddrinfo(res);
  addr.sin_port = htons(port);
  return addr;
}

void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

int remaining_ms(Clock::time_point deadline) {
  const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now()).count();
  return left > 0 ? static_cast<int>(left) : 0;
}

struct Inbound {
  std::size_t link;
  std::vector<std::uint8_t> frame;
  bool closed = false;
  std::exception_ptr error;
};

class InboundQueue {
 public:
  void push(Inbound item) {
    {
      std::lock_guard lock(mu_);
      items_.push_back(std::move(item));
    }
    cv_.notify_one();
  }

  std::optional<Inbound> pop_until(Clock::time_point deadline) {
    std::unique_lock lock(mu_);
    if (!cv_.wait_until(lock, deadline, [&] { return !items_.empty(); })) return std::nullopt;
    Inbound item = std::move(items_.front());
    items_.pop_front();
    return item;
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Inbound> items_;
};

}  // namespace

Listener::Listener(const std::string& host, std::uint16_t port) {
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) throw StartupError(fmt::format("socket() failed: {}", std::strerror(errno)));
  int one = 1;
  ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr = resolve(host, port);
  if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 || ::listen(fd_, 64) != 0) {
    const std::string reason = std::strerror(errno);
    ::close(fd_);
    throw StartupError(fmt::format("cannot listen on {}:{}: {}", host, port, reason));
  }
  socklen_t len = sizeof(addr);
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

Listener::~Listener() {
  if (fd_ >= 0) ::close(fd_);
}

void serve_federation(ServerSession& session, Listener& listener, std::chrono::milliseconds handshake_timeout,
                      const FrameObserver& observer) {
  const auto deadline = Clock::now() + handshake_timeout;
  std::vector<Socket> conns;
  while (conns.size() < session.expected_clients()) {
    pollfd pfd{listener.fd(), POLLIN, 0};
    const int rc = ::poll(&pfd, 1, remaining_ms(deadline));
    if (rc < 0 && errno == EINTR) continue;
    if (rc <= 0) {
      throw StartupError(fmt::format("handshake timeout: {} of {} clients connected", conns.size(),
                                     session.expected_clients()));
    }
    const int fd = ::accept(listener.fd(), nullptr, nullptr);
    if (fd < 0) continue;
    set_nodelay(fd);
    conns.emplace_back(fd);
  }

  InboundQueue inbox;
  std::vector<std::thread> readers;
  for (std::size_t link = 0; link < conns.size(); ++link) {
    readers.emplace_back([&inbox, &conns, link] {
      try {
        while (true) {
          auto frame = recv_frame(conns[link].fd());
          if (!frame) {
            inbox.push({link, {}, true, nullptr});
            return;
          }
          inbox.push({link, std::move(*frame), false, nullptr});
        }
      } catch (...) {
        inbox.push({link, {}, true, std::current_exception()});
      }
    });
  }

  // Closing every connection unblocks the readers on all exit paths.
  struct Teardown {
    std::vector<Socket>& conns;
    std::vector<std::thread>& readers;
    ~Teardown() {
      for (auto& c : conns) c.shutdown();
      for (auto& t : readers) t.join();
    }
  } teardown{conns, readers};

  auto send_to = [&](const Outgoing& out) {
    const auto bytes = encode(out.message);
    if (observer) observer(bytes);
    send_all(conns[out.link].fd(), bytes);
  };

  while (!session.finished()) {
    // Until everyone has joined the handshake deadline applies.
    const auto wait_until = session.all_joined() ? Clock::time_point::max() : deadline;
    auto item = inbox.pop_until(wait_until);
    if (!item) throw StartupError("handshake timeout: not every client sent JOIN");
    if (item->error) {
      conns[item->link].shutdown();
      std::rethrow_exception(item->error);
    }
    if (item->closed) {
      throw ProtocolError(fmt::format("link {} closed before the federation finished", item->link));
    }
    if (observer) observer(item->frame);
    Message msg;
    try {
      msg = decode(item->frame);
    } catch (const ProtocolError&) {
      conns[item->link].shutdown();
      throw;
    }
    for (const auto& out : session.on_message(item->link, msg)) {
      send_to(out);
    }
  }
}

void run_socket_client(ClientSession& session, const std::string& host, std::uint16_t port,
                       std::chrono::milliseconds connect_timeout) {
  const auto deadline = Clock::now() + connect_timeout;
  const sockaddr_in addr = resolve(host, port);
  Socket sock;
  while (true) {
    sock = Socket(::socket(AF_INET, SOCK_STREAM, 0));
    if (sock.fd() < 0) throw StartupError(fmt::format("socket() failed: {}", std::strerror(errno)));
    if (::connect(sock.fd(), reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) == 0) break;
    if (Clock::now() >= deadline) {
      throw StartupError(fmt::format("could not connect to {}:{} within the handshake timeout", host, port));
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
  set_nodelay(sock.fd());

  send_all(sock.fd(), encode(session.hello()));
  while (!session.finished()) {
    auto frame = recv_frame(sock.fd());
    if (!frame) throw ProtocolError(fmt::format("client {}: server closed the connection", session.client_id()));
    if (auto reply = session.on_message(decode(*frame))) {
      send_all(sock.fd(), encode(*reply));
    }
  }
}

}  // namespace fedsim
