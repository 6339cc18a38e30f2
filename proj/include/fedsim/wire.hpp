#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <variant>
#include <vector>

#include "fedsim/client.hpp"
#include "fedsim/param_math.hpp"

namespace fedsim {

inline constexpr std::uint8_t kProtocolVersion = 1;

// Sender id used by the server.
inline constexpr std::uint32_t kServerId = 0xFFFFFFFFu;
// JOIN sender id asking the server to assign one in connection order.
inline constexpr std::uint32_t kUnassignedId = 0xFFFFFFFEu;

enum class MessageKind : std::uint8_t {
  join = 1,
  join_ack = 2,
  global_model = 3,
  client_update = 4,
  round_done = 5,
  shutdown = 6,
};

std::string_view to_string(MessageKind kind);
bool is_known_kind(std::uint8_t tag) noexcept;

struct JoinRequest {
  std::uint8_t protocol_version = kProtocolVersion;
  bool operator==(const JoinRequest&) const = default;
};

struct JoinAck {
  std::uint64_t config_digest = 0;
  std::uint32_t assigned_id = 0;
  bool operator==(const JoinAck&) const = default;
};

using Payload = std::variant<std::monostate, JoinRequest, JoinAck, ParamVector, RoundReport>;

struct Message {
  MessageKind kind = MessageKind::shutdown;
  std::uint32_t round = 0;
  std::uint32_t sender_id = 0;
  Payload payload;

  bool operator==(const Message&) const = default;
};

// Frame layout, all integers and IEEE-754 doubles big-endian:
//   u32 length (bytes after this field) | u8 kind | u32 round | u32 sender | payload
//
// Payloads:
//   JOIN          u8 protocol version
//   JOIN_ACK      u64 config digest | u32 assigned client id
//   GLOBAL_MODEL  u32 count | count x f64
//   CLIENT_UPDATE u32 entry count | entries (u32 index, f64 delta) |
//                 u32 dim | f64 avg_loss | u32 n_samples | u32 iterations |
//                 f64 mean_loss_scale | u32 class count | (u32 class, f64 dice)...
//   ROUND_DONE, SHUTDOWN: empty
//
// The client id and round of a CLIENT_UPDATE travel in the header.
inline constexpr std::size_t kHeaderBytes = 13;
inline constexpr std::size_t kMaxFrameLength = 0x7FFFFFFFu;

std::vector<std::uint8_t> encode(const Message& msg);

// Decodes one complete frame (including its length prefix). Throws
// ProtocolError on anything malformed.
Message decode(std::span<const std::uint8_t> frame);

// Reads the length prefix of a frame header.
std::uint32_t frame_length(std::span<const std::uint8_t, 4> prefix);

Message make_global_model(std::uint32_t round, const ParamVector& params);
Message make_client_update(const RoundReport& report);
Message make_control(MessageKind kind, std::uint32_t round, std::uint32_t sender);

}  // namespace fedsim
