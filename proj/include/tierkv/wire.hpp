#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tierkv/hash.hpp"
#include "tierkv/store.hpp"

namespace tierkv {

// Frame layout, little-endian throughout:
//   offset 0   magic "LMWP" (4 bytes)
//   offset 4   version u16 (= 1)
//   offset 6   opcode u8
//   offset 7   request id u64
//   offset 15  payload length u32
//   offset 19  payload bytes
inline constexpr char kWireMagic[4] = {'L', 'M', 'W', 'P'};
inline constexpr uint16_t kWireVersion = 1;
inline constexpr size_t kWireHeaderBytes = 19;
inline constexpr uint32_t kDefaultMaxPayload = 64u << 20;

enum class Opcode : uint8_t {
    put = 1,
    get = 2,
    exists = 3,
    clear = 4,
    pin = 5,
    move = 6,
    compress = 7,
    lookup = 8,
    pd_push = 9,
    event = 10,
    ok = 0x80,
    err = 0x81,
};

bool opcode_known(uint8_t raw);
const char* opcode_name(Opcode op);

struct Frame {
    uint8_t opcode = 0;       // raw; may be outside Opcode if peer misbehaves
    uint64_t request_id = 0;
    std::vector<uint8_t> payload;
    bool oversized = false;   // header valid but payload exceeded the cap; body discarded
    uint32_t announced_len = 0;

    Opcode op() const { return Opcode(opcode); }
};

std::vector<uint8_t> encode_frame(Opcode op, uint64_t request_id, ByteSpan payload);

// Incremental stream decoder. Bad magic or version poisons the stream at a
// deterministic absolute byte offset; an oversized announced length is
// survivable (the frame is surfaced with oversized=true and its body
// discarded as it streams through).
class FrameDecoder {
public:
    explicit FrameDecoder(uint32_t max_payload = kDefaultMaxPayload)
        : max_payload_(max_payload) {}

    // Consumes bytes, appends completed frames to out. Returns false once the
    // stream is poisoned (error() describes it); further feeds stay false.
    bool feed(ByteSpan bytes, std::vector<Frame>& out);

    bool failed() const { return failed_; }
    uint64_t error_offset() const { return error_offset_; }
    const std::string& error() const { return error_; }
    uint64_t consumed() const { return consumed_; }

private:
    void poison(uint64_t offset, std::string why);

    uint32_t max_payload_;
    std::vector<uint8_t> header_;
    Frame current_;
    size_t body_remaining_ = 0;
    bool in_body_ = false;
    uint64_t consumed_ = 0;
    bool failed_ = false;
    uint64_t error_offset_ = 0;
    std::string error_;
};

// --- Payload schemas ---------------------------------------------------
// Every parse_* returns invalid_argument/protocol_error on malformed input
// and never throws.

void put_tier(std::vector<uint8_t>& out, const TierId& tier);
Status read_tier(ByteReader& r, TierId& out);

// PUT: flags u8 (bit0 pin) + tier count u8 + tiers + chunk count u16 +
// per chunk (record length u32 + record). Empty tier list = receiver's
// default placement. Reply: chunk count u16 + per-chunk status u16.
struct PutRequest {
    bool pin = false;
    std::vector<TierId> tiers;
    std::vector<std::vector<uint8_t>> records;
};
std::vector<uint8_t> encode_put_request(const PutRequest& req);
Result<PutRequest> parse_put_request(ByteSpan payload);
std::vector<uint8_t> encode_put_reply(const std::vector<Errc>& statuses);
Result<std::vector<Errc>> parse_put_reply(ByteSpan payload);

// GET: digest count u16 + digests; optional preferred tier (u8 flag + tier).
// Reply: count u16 + per entry (status u16 + record length u32 + record,
// length 0 when status != ok).
struct GetRequest {
    std::vector<Digest> digests;
    std::optional<TierId> prefer;
};
std::vector<uint8_t> encode_get_request(const GetRequest& req);
Result<GetRequest> parse_get_request(ByteSpan payload);
std::vector<uint8_t> encode_get_reply(
    const std::vector<std::pair<Errc, std::vector<uint8_t>>>& entries);
Result<std::vector<std::pair<Errc, std::vector<uint8_t>>>> parse_get_reply(ByteSpan payload);

// EXISTS: digest count u16 + digests. Reply: count u16 + u8 per digest.
std::vector<uint8_t> encode_exists_request(const std::vector<Digest>& digests);
Result<std::vector<Digest>> parse_exists_request(ByteSpan payload);
std::vector<uint8_t> encode_exists_reply(const std::vector<uint8_t>& hits);
Result<std::vector<uint8_t>> parse_exists_reply(ByteSpan payload);

// CLEAR: digest count u16 + digests + tier flag u8 + tier. Reply: removed
// u32 + refused u32.
struct ClearRequest {
    std::vector<Digest> digests;
    std::optional<TierId> tier;
};
std::vector<uint8_t> encode_clear_request(const ClearRequest& req);
Result<ClearRequest> parse_clear_request(ByteSpan payload);
std::vector<uint8_t> encode_clear_reply(const ClearResult& result);
Result<ClearResult> parse_clear_reply(ByteSpan payload);

// PIN: digest + on u8 + tier flag u8 + tier. Reply: empty.
struct PinRequest {
    Digest digest{};
    bool on = true;
    std::optional<TierId> tier;
};
std::vector<uint8_t> encode_pin_request(const PinRequest& req);
Result<PinRequest> parse_pin_request(ByteSpan payload);

// COMPRESS: digest + codec string16 + tier flag u8 + tier. Reply: stored
// size u64.
struct CompressRequest {
    Digest digest{};
    std::string codec;
    std::optional<TierId> tier;
};
std::vector<uint8_t> encode_compress_request(const CompressRequest& req);
Result<CompressRequest> parse_compress_request(ByteSpan payload);

// MOVE: destination endpoint string16 + clear_source u8 + digest count u16 +
// digests. Reply: moved u32 + missed u32.
struct MoveRequest {
    std::string dest_endpoint;
    bool clear_source = true;
    std::vector<Digest> digests;
};
std::vector<uint8_t> encode_move_request(const MoveRequest& req);
Result<MoveRequest> parse_move_request(ByteSpan payload);
struct MoveReply {
    uint32_t moved = 0;
    uint32_t missed = 0;
};
std::vector<uint8_t> encode_move_reply(const MoveReply& reply);
Result<MoveReply> parse_move_reply(ByteSpan payload);

// LOOKUP carries the registry read plane, discriminated by kind u8:
//   0 tokens:    model_tag string16 + token count u32 + tokens u32 each
//                reply: entry count u16 + per entry (instance string16 + hits u64)
//   1 query_ip:  id count u16 + ids string16 each
//                reply: count u16 + per id (found u8 + endpoint string16)
//   2 instances: empty
//                reply: count u16 + per instance (id + endpoint string16 + chunks u64)
struct LookupTokensRequest {
    std::string model_tag;
    std::vector<TokenId> tokens;
};
struct LookupQuery {
    uint8_t kind = 0;
    LookupTokensRequest tokens;          // kind 0
    std::vector<std::string> instance_ids;  // kind 1
};
std::vector<uint8_t> encode_lookup_query(const LookupQuery& q);
Result<LookupQuery> parse_lookup_query(ByteSpan payload);
std::vector<uint8_t> encode_lookup_hits(const std::map<std::string, uint64_t>& hits);
Result<std::map<std::string, uint64_t>> parse_lookup_hits(ByteSpan payload);
std::vector<uint8_t> encode_endpoint_map(
    const std::vector<std::pair<bool, std::string>>& endpoints);
Result<std::vector<std::pair<bool, std::string>>> parse_endpoint_map(ByteSpan payload);
struct InstanceRow {
    std::string id;
    std::string endpoint;
    uint64_t chunk_count = 0;
};
std::vector<uint8_t> encode_instance_rows(const std::vector<InstanceRow>& rows);
Result<std::vector<InstanceRow>> parse_instance_rows(ByteSpan payload);

// PD_PUSH: query id u64 + ordinal u32 + last u8 + record length u32 + record.
struct PdPushRequest {
    QueryId query_id = 0;
    uint32_t ordinal = 0;
    bool last = false;
    std::vector<uint8_t> record;
};
std::vector<uint8_t> encode_pd_push(const PdPushRequest& req);
Result<PdPushRequest> parse_pd_push(ByteSpan payload);

// EVENT, worker → manager, discriminated by kind u8:
//   0 hello:   instance string16 + endpoint string16 + entry count u32 +
//              per entry (digest + token_count u16 + pinned u8 + tier)
//              (one entry per (chunk, tier) copy)
//   1 stored:  instance string16 + digest + token_count u16 + pinned u8 + tier
//   2 evicted: instance string16 + digest + last_copy u8 + tier
struct EventRecord {
    uint8_t kind = 0;
    std::string instance_id;
    std::string endpoint;  // hello only
    struct Entry {
        Digest digest{};
        uint16_t token_count = 0;
        bool flag = false;  // pinned for hello/stored, last_copy for evicted
        TierId tier = TierId::ram();
    };
    std::vector<Entry> entries;  // hello: snapshot; stored/evicted: exactly one
};
std::vector<uint8_t> encode_event(const EventRecord& event);
Result<EventRecord> parse_event(ByteSpan payload);

// ERR: code u16 + detail string16.
std::vector<uint8_t> encode_err(Errc code, const std::string& detail);
Status parse_err(ByteSpan payload);  // always returns a non-ok Status

}  // namespace tierkv
