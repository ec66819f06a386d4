#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "qfed/fed.hpp"

namespace qfed {

/*
 * Frame: u32 big-endian length L, then L bytes = 1 type byte + payload.
 * Payload fields are little-endian:
 *
 *   JOIN          u32 client_id
 *   GLOBAL_MODEL  u32 round, u64 n, n x f64 params
 *   LOCAL_UPDATE  u32 client_id, u64 n_samples, <metrics>, u64 n, n x f64 params
 *   METRICS       u32 round, <metrics>
 *   SHUTDOWN      (empty)
 *
 *   <metrics> = u64 confusion[0][0], [0][1], [1][0], [1][1], f64 mean_loss
 */
enum class MessageType : std::uint8_t {
    join = 0x01,
    global_model = 0x02,
    local_update = 0x03,
    metrics = 0x04,
    shutdown = 0x05,
};

struct JoinMsg {
    std::uint32_t client_id = 0;
    friend bool operator==(const JoinMsg &, const JoinMsg &) = default;
};

struct GlobalModelMsg {
    std::uint32_t round = 0;
    std::vector<double> params;
    friend bool operator==(const GlobalModelMsg &, const GlobalModelMsg &) = default;
};

struct LocalUpdateMsg {
    RoundUpdate update;
    friend bool operator==(const LocalUpdateMsg &, const LocalUpdateMsg &) = default;
};

struct MetricsMsg {
    std::uint32_t round = 0;
    Metrics metrics;
    friend bool operator==(const MetricsMsg &, const MetricsMsg &) = default;
};

struct ShutdownMsg {
    friend bool operator==(const ShutdownMsg &, const ShutdownMsg &) = default;
};

using Message = std::variant<JoinMsg, GlobalModelMsg, LocalUpdateMsg, MetricsMsg, ShutdownMsg>;

MessageType message_type(const Message &msg);

inline constexpr std::size_t default_max_frame = 64u << 20;

class CodecError : public std::runtime_error {
  public:
    enum class Kind { unknown_type, truncated, too_large, malformed };

    CodecError(Kind kind, const std::string &what) : std::runtime_error(what), kind_(kind) {}
    [[nodiscard]] Kind kind() const noexcept { return kind_; }

  private:
    Kind kind_;
};

std::vector<std::uint8_t> encode_message(const Message &msg);

/// Decodes exactly one frame occupying all of `bytes`.
Message decode_message(std::span<const std::uint8_t> bytes,
                       std::size_t max_frame = default_max_frame);

/// Frame length L from a 4-byte header, checked against `max_frame`.
std::uint32_t frame_length(std::span<const std::uint8_t, 4> header, std::size_t max_frame);

} // namespace qfed
