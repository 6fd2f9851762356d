#include "hpipe/wire.hpp"

#include <cstring>

#include "hpipe/error.hpp"

namespace hpipe::wire {

void put_u16(std::vector<uint8_t>& out, uint16_t v) {
    out.push_back(static_cast<uint8_t>(v >> 8));
    out.push_back(static_cast<uint8_t>(v));
}

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    for (int shift = 24; shift >= 0; shift -= 8) {
        out.push_back(static_cast<uint8_t>(v >> shift));
    }
}

void put_u64(std::vector<uint8_t>& out, uint64_t v) {
    for (int shift = 56; shift >= 0; shift -= 8) {
        out.push_back(static_cast<uint8_t>(v >> shift));
    }
}

uint16_t get_u16(const uint8_t* p) {
    return static_cast<uint16_t>((static_cast<uint16_t>(p[0]) << 8) | p[1]);
}

uint32_t get_u32(const uint8_t* p) {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | p[i];
    return v;
}

uint64_t get_u64(const uint8_t* p) {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v = (v << 8) | p[i];
    return v;
}

std::vector<uint8_t> encode(const Message& msg) {
    std::vector<uint8_t> out;
    const bool is_frame = msg.type == MsgType::frame;
    out.reserve(kHeaderSize + (is_frame ? 2 : 0) + msg.payload.size());
    out.insert(out.end(), kMagic, kMagic + 4);
    out.push_back(kVersion);
    out.push_back(static_cast<uint8_t>(msg.type));
    put_u64(out, msg.frame_id);
    put_u16(out, msg.stage_id);
    put_u64(out, msg.timestamp_ns);
    put_u32(out, static_cast<uint32_t>(msg.payload.size()));
    if (is_frame) {
        put_u16(out, msg.routed_leaf);
    }
    out.insert(out.end(), msg.payload.begin(), msg.payload.end());
    return out;
}

Header decode_header(const uint8_t* p, size_t len) {
    if (len < kHeaderSize) {
        throw NetError("truncated message header");
    }
    if (std::memcmp(p, kMagic, 4) != 0) {
        throw NetError("bad magic in message header");
    }
    if (p[4] != kVersion) {
        throw NetError("unsupported protocol version " + std::to_string(p[4]));
    }
    const uint8_t t = p[5];
    if (t < 1 || t > 6) {
        throw NetError("unknown message type " + std::to_string(t));
    }
    Header h;
    h.type = static_cast<MsgType>(t);
    h.frame_id = get_u64(p + 6);
    h.stage_id = get_u16(p + 14);
    h.timestamp_ns = get_u64(p + 16);
    h.payload_len = get_u32(p + 24);
    return h;
}

std::optional<std::pair<Message, size_t>> decode(const uint8_t* bytes, size_t len) {
    if (len < kHeaderSize) return std::nullopt;
    const Header h = decode_header(bytes, len);
    const bool is_frame = h.type == MsgType::frame;
    const size_t body = (is_frame ? 2 : 0) + h.payload_len;
    if (len < kHeaderSize + body) return std::nullopt;

    Message msg;
    msg.type = h.type;
    msg.frame_id = h.frame_id;
    msg.stage_id = h.stage_id;
    msg.timestamp_ns = h.timestamp_ns;
    const uint8_t* cursor = bytes + kHeaderSize;
    if (is_frame) {
        msg.routed_leaf = get_u16(cursor);
        cursor += 2;
    }
    msg.payload.assign(cursor, cursor + h.payload_len);
    return std::make_pair(std::move(msg), kHeaderSize + body);
}

}  // namespace hpipe::wire
