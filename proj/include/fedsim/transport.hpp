#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedsim/client.hpp"
#include "fedsim/server.hpp"
#include "fedsim/wire.hpp"

namespace fedsim {

enum class Carrier { loopback, socket };

std::string_view to_string(Carrier c);
Carrier parse_carrier(std::string_view text);

struct ClientSetup {
  ClientConfig config;
  const ClientDataset* dataset = nullptr;
};

// Sees every frame the server sends or receives. Called from the server's
// thread only.
using FrameObserver = std::function<void(std::span<const std::uint8_t>)>;

struct FederationOptions {
  Carrier carrier = Carrier::loopback;
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;  // 0 picks an ephemeral port
  std::chrono::milliseconds handshake_timeout{30000};
  FrameObserver observer;
};

struct FederationResult {
  ParamVector initial_params;
  ParamVector final_params;
  std::optional<Checkpoint> best;
  std::vector<RoundRecord> trace;
  // GLOBAL_MODEL rounds as observed by each client, keyed by client id.
  std::map<std::uint32_t, std::vector<std::uint32_t>> rounds_seen;

  bool operator==(const FederationResult&) const = default;
};

std::uint64_t config_digest(const AggregationConfig& cfg, const ModelSpec& spec);

struct Outgoing {
  std::size_t link;
  Message message;
};

// Server half of the protocol as a message-driven state machine:
// JOIN handshake, then per round GLOBAL_MODEL -> CLIENT_UPDATE x min_clients ->
// aggregate -> ROUND_DONE, and finally SHUTDOWN.
class ServerSession {
 public:
  ServerSession(AggregationConfig cfg, ParamVector initial, std::size_t expected_clients, std::uint64_t digest);

  std::vector<Outgoing> on_message(std::size_t link, const Message& msg);

  bool finished() const noexcept { return finished_; }
  bool all_joined() const noexcept { return link_to_client_.size() == expected_; }
  std::size_t expected_clients() const noexcept { return expected_; }

  FederationResult result() const;

 private:
  std::vector<Outgoing> broadcast(const Message& msg) const;
  std::vector<Outgoing> next_round_messages();

  AggregationConfig cfg_;
  ParamVector initial_;
  std::size_t expected_;
  std::uint64_t digest_;
  std::map<std::size_t, std::uint32_t> link_to_client_;
  std::optional<Server> server_;
  bool finished_ = false;
};

// Client half: answers GLOBAL_MODEL with a locally trained CLIENT_UPDATE.
class ClientSession {
 public:
  ClientSession(ClientSetup setup, ModelSpec spec, std::optional<std::uint64_t> expected_digest = std::nullopt);

  Message hello() const;
  std::optional<Message> on_message(const Message& msg);

  bool finished() const noexcept { return finished_; }
  std::uint32_t client_id() const noexcept { return setup_.config.client_id; }
  const std::vector<std::uint32_t>& rounds_seen() const noexcept { return rounds_seen_; }

 private:
  ClientSetup setup_;
  ModelSpec spec_;
  std::optional<std::uint64_t> expected_digest_;
  std::unique_ptr<Client> trainer_;
  std::vector<std::uint32_t> rounds_seen_;
  bool finished_ = false;
};

FederationResult run_federation(const AggregationConfig& cfg, const ModelSpec& spec, const ParamVector& initial,
                                std::span<const ClientSetup> clients, const FederationOptions& options = {});

// Socket carrier pieces, also used by the multi-process CLI.
class Listener {
 public:
  Listener(const std::string& host, std::uint16_t port);
  ~Listener();
  Listener(const Listener&) = delete;
  Listener& operator=(const Listener&) = delete;

  std::uint16_t port() const noexcept { return port_; }
  int fd() const noexcept { return fd_; }

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
};

void serve_federation(ServerSession& session, Listener& listener, std::chrono::milliseconds handshake_timeout,
                      const FrameObserver& observer = {});

void run_socket_client(ClientSession& session, const std::string& host, std::uint16_t port,
                       std::chrono::milliseconds connect_timeout);

}  // namespace fedsim
