#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace hpipe::wire {

/// Fixed header layout, all multi-byte integers big-endian:
///
///   offset  size  field
///   0       4     magic "HPIP"
///   4       1     version (1)
///   5       1     msg type
///   6       8     frame id
///   14      2     stage id
///   16      8     sender monotonic timestamp, ns
///   24      4     payload length
///
/// FRAME messages carry a 2-byte routed-leaf id immediately before the
/// payload bytes; every other type goes straight to payload.
constexpr char kMagic[4] = {'H', 'P', 'I', 'P'};
constexpr uint8_t kVersion = 1;
constexpr size_t kHeaderSize = 28;

enum class MsgType : uint8_t {
    frame = 1,
    result = 2,
    profile_ping = 3,
    profile_pong = 4,
    shutdown = 5,
    metrics = 6,
};

struct Message {
    MsgType type = MsgType::frame;
    uint64_t frame_id = 0;
    uint16_t stage_id = 0;
    uint64_t timestamp_ns = 0;
    uint16_t routed_leaf = 0;  // meaningful for frame messages only
    std::vector<uint8_t> payload;
};

std::vector<uint8_t> encode(const Message& msg);

/// Parsed fixed header. Throws NetError on bad magic, unknown version, or
/// unknown message type.
struct Header {
    MsgType type;
    uint64_t frame_id;
    uint16_t stage_id;
    uint64_t timestamp_ns;
    uint32_t payload_len;
};

Header decode_header(const uint8_t* bytes, size_t len);

/// Decodes a complete message from a contiguous buffer (header + body).
/// Returns the message and the number of bytes consumed; nullopt if the
/// buffer does not yet hold a complete message.
std::optional<std::pair<Message, size_t>> decode(const uint8_t* bytes, size_t len);

// big-endian primitives, shared with tests
void put_u16(std::vector<uint8_t>& out, uint16_t v);
void put_u32(std::vector<uint8_t>& out, uint32_t v);
void put_u64(std::vector<uint8_t>& out, uint64_t v);
uint16_t get_u16(const uint8_t* p);
uint32_t get_u32(const uint8_t* p);
uint64_t get_u64(const uint8_t* p);

}  // namespace hpipe::wire
