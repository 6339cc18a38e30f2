#include "fedsim/wire.hpp"

#include <bit>
#include <cmath>

#include <fmt/format.h>

#include "fedsim/error.hpp"

namespace fedsim {
namespace {

class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int shift = 24; shift >= 0; shift -= 8) buf_.push_back(static_cast<std::uint8_t>(v >> shift));
  }
  void u64(std::uint64_t v) {
    u32(static_cast<std::uint32_t>(v >> 32));
    u32(static_cast<std::uint32_t>(v));
  }
  void f64(double d) { u64(std::bit_cast<std::uint64_t>(d)); }

  std::vector<std::uint8_t>& bytes() { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> data) : data_(data) {}

  std::uint8_t u8() {
    need(1);
    return data_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | data_[pos_++];
    return v;
  }
  std::uint64_t u64() {
    const std::uint64_t hi = u32();
    return (hi << 32) | u32();
  }
  double f64() {
    const double d = std::bit_cast<double>(u64());
    if (!std::isfinite(d)) throw ProtocolError("malformed frame: non-finite real");
    return d;
  }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw ProtocolError("malformed frame: payload truncated");
  }

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

void write_payload(Writer& w, const Message& msg) {
  switch (msg.kind) {
    case MessageKind::join: {
      const auto* join = std::get_if<JoinRequest>(&msg.payload);
      if (!join) throw EncodingError("JOIN needs a JoinRequest payload");
      w.u8(join->protocol_version);
      break;
    }
    case MessageKind::join_ack: {
      const auto* ack = std::get_if<JoinAck>(&msg.payload);
      if (!ack) throw EncodingError("JOIN_ACK needs a JoinAck payload");
      w.u64(ack->config_digest);
      w.u32(ack->assigned_id);
      break;
    }
    case MessageKind::global_model: {
      const auto* params = std::get_if<ParamVector>(&msg.payload);
      if (!params) throw EncodingError("GLOBAL_MODEL needs a ParamVector payload");
      if (params->size() > (kMaxFrameLength - kHeaderBytes) / 8) throw EncodingError("model too large for one frame");
      w.u32(static_cast<std::uint32_t>(params->size()));
      for (double v : *params) w.f64(v);
      break;
    }
    case MessageKind::client_update: {
      const auto* r = std::get_if<RoundReport>(&msg.payload);
      if (!r) throw EncodingError("CLIENT_UPDATE needs a RoundReport payload");
      if (r->client_id != msg.sender_id || r->round != msg.round || r->update.round != msg.round) {
        throw EncodingError("CLIENT_UPDATE header disagrees with its report");
      }
      if (r->update.entries.size() > (kMaxFrameLength - kHeaderBytes) / 12) {
        throw EncodingError("sparse update too large for one frame");
      }
      w.u32(static_cast<std::uint32_t>(r->update.entries.size()));
      for (const auto& e : r->update.entries) {
        w.u32(e.index);
        w.f64(e.delta);
      }
      w.u32(r->update.dim);
      w.f64(r->avg_loss);
      w.u32(r->n_samples);
      w.u32(r->iterations);
      w.f64(r->mean_loss_scale);
      w.u32(static_cast<std::uint32_t>(r->val_dice.size()));
      for (const auto& [cls, d] : r->val_dice) {
        w.u32(static_cast<std::uint32_t>(cls));
        w.f64(d);
      }
      break;
    }
    case MessageKind::round_done:
    case MessageKind::shutdown:
      if (!std::holds_alternative<std::monostate>(msg.payload)) {
        throw EncodingError(fmt::format("{} carries no payload", to_string(msg.kind)));
      }
      break;
  }
}

}  // namespace

std::string_view to_string(MessageKind kind) {
  switch (kind) {
    case MessageKind::join: return "JOIN";
    case MessageKind::join_ack: return "JOIN_ACK";
    case MessageKind::global_model: return "GLOBAL_MODEL";
    case MessageKind::client_update: return "CLIENT_UPDATE";
    case MessageKind::round_done: return "ROUND_DONE";
    case MessageKind::shutdown: return "SHUTDOWN";
  }
  return "?";
}

bool is_known_kind(std::uint8_t tag) noexcept {
  return tag >= static_cast<std::uint8_t>(MessageKind::join) && tag <= static_cast<std::uint8_t>(MessageKind::shutdown);
}

std::vector<std::uint8_t> encode(const Message& msg) {
  Writer w;
  w.u32(0);  // patched below
  w.u8(static_cast<std::uint8_t>(msg.kind));
  w.u32(msg.round);
  w.u32(msg.sender_id);
  write_payload(w, msg);
  auto& bytes = w.bytes();
  const std::size_t length = bytes.size() - 4;
  if (length > kMaxFrameLength) {
    throw EncodingError(fmt::format("frame of {} bytes exceeds the 2^31-1 limit", length));
  }
  for (int i = 0; i < 4; ++i) {
    bytes[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(length >> (24 - 8 * i));
  }
  return std::move(bytes);
}

std::uint32_t frame_length(std::span<const std::uint8_t, 4> prefix) {
  return (std::uint32_t{prefix[0]} << 24) | (std::uint32_t{prefix[1]} << 16) | (std::uint32_t{prefix[2]} << 8) |
         prefix[3];
}

Message decode(std::span<const std::uint8_t> frame) {
  if (frame.size() < kHeaderBytes) throw ProtocolError("malformed frame: shorter than a header");
  const std::uint32_t length = frame_length(frame.first<4>());
  if (length > kMaxFrameLength || std::size_t{length} + 4 != frame.size()) {
    throw ProtocolError(fmt::format("malformed frame: length field {} but {} bytes follow", length, frame.size() - 4));
  }
  Reader r(frame.subspan(4));
  const std::uint8_t tag = r.u8();
  if (!is_known_kind(tag)) throw ProtocolError(fmt::format("malformed frame: unknown kind tag {}", tag));

  Message msg;
  msg.kind = static_cast<MessageKind>(tag);
  msg.round = r.u32();
  msg.sender_id = r.u32();

  switch (msg.kind) {
    case MessageKind::join:
      msg.payload = JoinRequest{r.u8()};
      break;
    case MessageKind::join_ack: {
      JoinAck ack;
      ack.config_digest = r.u64();
      ack.assigned_id = r.u32();
      msg.payload = ack;
      break;
    }
    case MessageKind::global_model: {
      const std::uint32_t count = r.u32();
      if (std::size_t{count} * 8 != r.remaining()) throw ProtocolError("malformed frame: model length mismatch");
      std::vector<double> values(count);
      for (auto& v : values) v = r.f64();
      msg.payload = ParamVector(std::move(values));
      break;
    }
    case MessageKind::client_update: {
      RoundReport rep;
      rep.client_id = msg.sender_id;
      rep.round = msg.round;
      rep.update.round = msg.round;
      const std::uint32_t count = r.u32();
      if (std::size_t{count} * 12 > r.remaining()) throw ProtocolError("malformed frame: sparse entries truncated");
      rep.update.entries.resize(count);
      for (auto& e : rep.update.entries) {
        e.index = r.u32();
        e.delta = r.f64();
      }
      rep.update.dim = r.u32();
      rep.avg_loss = r.f64();
      rep.n_samples = r.u32();
      rep.iterations = r.u32();
      rep.mean_loss_scale = r.f64();
      const std::uint32_t classes = r.u32();
      if (std::size_t{classes} * 12 != r.remaining()) throw ProtocolError("malformed frame: class block mismatch");
      for (std::uint32_t i = 0; i < classes; ++i) {
        const auto cls = static_cast<int>(r.u32());
        if (rep.val_dice.contains(cls)) throw ProtocolError("malformed frame: repeated validation class");
        rep.val_dice[cls] = r.f64();
      }
      try {
        validate(rep.update);
      } catch (const UsageError& e) {
        throw ProtocolError(fmt::format("malformed frame: {}", e.what()));
      }
      msg.payload = std::move(rep);
      break;
    }
    case MessageKind::round_done:
    case MessageKind::shutdown:
      break;
  }
  if (r.remaining() != 0) throw ProtocolError("malformed frame: trailing bytes");
  return msg;
}

Message make_global_model(std::uint32_t round, const ParamVector& params) {
  return Message{MessageKind::global_model, round, kServerId, params};
}

Message make_client_update(const RoundReport& report) {
  return Message{MessageKind::client_update, report.round, report.client_id, report};
}

Message make_control(MessageKind kind, std::uint32_t round, std::uint32_t sender) {
  return Message{kind, round, sender, std::monostate{}};
}

}  // namespace fedsim
