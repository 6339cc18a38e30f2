#include "fedsim/transport.hpp"

#include <deque>
#include <exception>
#include <set>
#include <thread>

#include <fmt/format.h>

#include "fedsim/error.hpp"

namespace fedsim {

std::string_view to_string(Carrier c) {
  return c == Carrier::loopback ? "loopback" : "socket";
}

Carrier parse_carrier(std::string_view text) {
  if (text == "loopback") return Carrier::loopback;
  if (text == "socket") return Carrier::socket;
  throw UsageError(fmt::format("unknown carrier '{}'", text));
}

std::uint64_t config_digest(const AggregationConfig& cfg, const ModelSpec& spec) {
  const std::string canonical =
      fmt::format("v{}|{}|T={:a}|xi={}|norm={}|min={}|rounds={}|patch={}|hidden={}|classes={}", kProtocolVersion,
                  to_string(cfg.strategy), cfg.temperature, cfg.xi, cfg.normalize_xi, cfg.min_clients, cfg.rounds,
                  spec.patch_radius, spec.hidden_units, spec.num_classes);
  std::uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a
  for (unsigned char ch : canonical) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

// --- server session -------------------------------------------------------

ServerSession::ServerSession(AggregationConfig cfg, ParamVector initial, std::size_t expected_clients,
                             std::uint64_t digest)
    : cfg_(cfg), initial_(std::move(initial)), expected_(expected_clients), digest_(digest) {
  cfg_.validate();
  if (expected_ < cfg_.min_clients) {
    throw UsageError(fmt::format("{} clients cannot satisfy min_clients = {}", expected_, cfg_.min_clients));
  }
}

std::vector<Outgoing> ServerSession::broadcast(const Message& msg) const {
  std::vector<Outgoing> out;
  for (const auto& [link, id] : link_to_client_) {
    out.push_back({link, msg});
  }
  return out;
}

std::vector<Outgoing> ServerSession::next_round_messages() {
  if (server_->finished()) {
    finished_ = true;
    return broadcast(make_control(MessageKind::shutdown, server_->state().round, kServerId));
  }
  return broadcast(make_global_model(server_->state().round, server_->state().global_params));
}

std::vector<Outgoing> ServerSession::on_message(std::size_t link, const Message& msg) {
  if (finished_) {
    return {};
  }
  switch (msg.kind) {
    case MessageKind::join: {
      const auto& join = std::get<JoinRequest>(msg.payload);
      if (join.protocol_version != kProtocolVersion) {
        throw ProtocolError(fmt::format("JOIN rejected: protocol version {} (expected {})",
                                        join.protocol_version, kProtocolVersion));
      }
      if (link_to_client_.contains(link)) throw ProtocolError("JOIN rejected: link already joined");
      if (all_joined()) throw ProtocolError("JOIN rejected: federation is full");
      std::set<std::uint32_t> taken;
      for (const auto& [l, id] : link_to_client_) taken.insert(id);
      std::uint32_t id = msg.sender_id;
      if (id == kUnassignedId) {
        id = 0;
        while (taken.contains(id)) ++id;
      } else if (taken.contains(id) || id == kServerId) {
        throw ProtocolError(fmt::format("JOIN rejected: client id {} already in use", id));
      }
      link_to_client_[link] = id;

      std::vector<Outgoing> out;
      out.push_back({link, Message{MessageKind::join_ack, 0, kServerId, JoinAck{digest_, id}}});
      if (all_joined()) {
        std::vector<std::uint32_t> ids;
        for (const auto& [l, cid] : link_to_client_) ids.push_back(cid);
        server_.emplace(cfg_, initial_, ids);
        auto first = next_round_messages();
        out.insert(out.end(), first.begin(), first.end());
      }
      return out;
    }
    case MessageKind::client_update: {
      if (!server_) throw ProtocolError("CLIENT_UPDATE before the handshake completed");
      auto it = link_to_client_.find(link);
      if (it == link_to_client_.end() || it->second != msg.sender_id) {
        throw ProtocolError(fmt::format("CLIENT_UPDATE from link {} claims client {}", link, msg.sender_id));
      }
      if (!server_->submit(std::get<RoundReport>(msg.payload))) {
        return {};
      }
      auto out = broadcast(make_control(MessageKind::round_done, server_->state().completed_rounds(), kServerId));
      auto next = next_round_messages();
      out.insert(out.end(), next.begin(), next.end());
      return out;
    }
    default:
      throw ProtocolError(fmt::format("server cannot accept {} from a client", to_string(msg.kind)));
  }
}

FederationResult ServerSession::result() const {
  FederationResult r;
  r.initial_params = initial_;
  if (server_) {
    r.final_params = server_->state().global_params;
    r.best = server_->state().best;
    r.trace = server_->state().trace;
  } else {
    r.final_params = initial_;
  }
  return r;
}

// --- client session -------------------------------------------------------

ClientSession::ClientSession(ClientSetup setup, ModelSpec spec, std::optional<std::uint64_t> expected_digest)
    : setup_(std::move(setup)), spec_(spec), expected_digest_(expected_digest) {
  if (setup_.dataset == nullptr) throw UsageError("client session without a dataset");
  setup_.config.validate();
}

Message ClientSession::hello() const {
  return Message{MessageKind::join, 0, setup_.config.client_id, JoinRequest{}};
}

std::optional<Message> ClientSession::on_message(const Message& msg) {
  switch (msg.kind) {
    case MessageKind::join_ack: {
      const auto& ack = std::get<JoinAck>(msg.payload);
      if (expected_digest_ && *expected_digest_ != ack.config_digest) {
        throw StartupError(fmt::format("client {}: server config digest {:016x} does not match ours {:016x}",
                                       setup_.config.client_id, ack.config_digest, *expected_digest_));
      }
      setup_.config.client_id = ack.assigned_id;
      trainer_ = std::make_unique<Client>(setup_.config, spec_, *setup_.dataset);
      return std::nullopt;
    }
    case MessageKind::global_model: {
      if (!trainer_) throw ProtocolError("GLOBAL_MODEL before JOIN_ACK");
      const std::uint32_t expected = rounds_seen_.empty() ? 1 : rounds_seen_.back() + 1;
      if (msg.round != expected) {
        throw ProtocolError(fmt::format("client {}: GLOBAL_MODEL for round {}, expected {}", client_id(),
                                        msg.round, expected));
      }
      rounds_seen_.push_back(msg.round);
      return make_client_update(trainer_->local_train(std::get<ParamVector>(msg.payload), msg.round));
    }
    case MessageKind::round_done:
      return std::nullopt;
    case MessageKind::shutdown:
      finished_ = true;
      return std::nullopt;
    default:
      throw ProtocolError(fmt::format("client cannot accept {} from the server", to_string(msg.kind)));
  }
}

// --- loopback carrier -----------------------------------------------------

namespace {

// Everything runs on the calling thread; frames are queued FIFO, so clients
// always act in link order.
FederationResult run_loopback(ServerSession& server, std::vector<ClientSession>& clients,
                              const FrameObserver& observer) {
  struct Frame {
    bool to_server;
    std::size_t link;
    std::vector<std::uint8_t> bytes;
  };
  std::deque<Frame> queue;
  for (std::size_t i = 0; i < clients.size(); ++i) {
    queue.push_back({true, i, encode(clients[i].hello())});
  }
  while (!queue.empty()) {
    Frame frame = std::move(queue.front());
    queue.pop_front();
    if (observer) observer(frame.bytes);
    const Message msg = decode(frame.bytes);
    if (frame.to_server) {
      for (auto& out : server.on_message(frame.link, msg)) {
        queue.push_back({false, out.link, encode(out.message)});
      }
    } else if (auto reply = clients[frame.link].on_message(msg)) {
      queue.push_back({true, frame.link, encode(*reply)});
    }
  }
  if (!server.finished()) throw ProtocolError("loopback federation stalled before SHUTDOWN");
  FederationResult result = server.result();
  for (const auto& c : clients) result.rounds_seen[c.client_id()] = c.rounds_seen();
  return result;
}

}  // namespace

FederationResult run_federation(const AggregationConfig& cfg, const ModelSpec& spec, const ParamVector& initial,
                                std::span<const ClientSetup> clients, const FederationOptions& options) {
  if (initial.size() != spec.param_count()) {
    throw UsageError("initial model does not match the model spec");
  }
  if (clients.size() < cfg.min_clients) {
    throw UsageError(fmt::format("{} clients configured, min_clients is {}", clients.size(), cfg.min_clients));
  }
  const std::uint64_t digest = config_digest(cfg, spec);
  ServerSession server(cfg, initial, clients.size(), digest);
  std::vector<ClientSession> sessions;
  sessions.reserve(clients.size());
  for (const auto& c : clients) sessions.emplace_back(c, spec, digest);

  if (options.carrier == Carrier::loopback) {
    return run_loopback(server, sessions, options.observer);
  }

  Listener listener(options.host, options.port);
  std::vector<std::exception_ptr> errors(sessions.size());
  std::vector<std::thread> threads;
  for (std::size_t i = 0; i < sessions.size(); ++i) {
    threads.emplace_back([&, i] {
      try {
        run_socket_client(sessions[i], options.host, listener.port(), options.handshake_timeout);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    });
  }
  std::exception_ptr server_error;
  try {
    serve_federation(server, listener, options.handshake_timeout, options.observer);
  } catch (...) {
    server_error = std::current_exception();
  }
  for (auto& t : threads) t.join();
  if (server_error) std::rethrow_exception(server_error);
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  FederationResult result = server.result();
  for (const auto& c : sessions) result.rounds_seen[c.client_id()] = c.rounds_seen();
  return result;
}

}  // namespace fedsim
