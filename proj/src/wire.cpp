#include "tierkv/wire.hpp"

#include <cstring>

namespace tierkv {

namespace {

Status malformed(const char* what) {
    return Status{Errc::protocol_error, std::string("malformed payload: ") + what};
}

void put_digest(std::vector<uint8_t>& out, const Digest& d) {
    out.insert(out.end(), d.begin(), d.end());
}

Digest read_digest(ByteReader& r) {
    auto bytes = r.read_bytes(32);
    Digest d;
    std::memcpy(d.data(), bytes.data(), 32);
    return d;
}

}  // namespace

bool opcode_known(uint8_t raw) {
    return (raw >= 1 && raw <= 10) || raw == 0x80 || raw == 0x81;
}

const char* opcode_name(Opcode op) {
    switch (op) {
        case Opcode::put: return "PUT";
        case Opcode::get: return "GET";
        case Opcode::exists: return "EXISTS";
        case Opcode::clear: return "CLEAR";
        case Opcode::pin: return "PIN";
        case Opcode::move: return "MOVE";
        case Opcode::compress: return "COMPRESS";
        case Opcode::lookup: return "LOOKUP";
        case Opcode::pd_push: return "PD_PUSH";
        case Opcode::event: return "EVENT";
        case Opcode::ok: return "OK";
        case Opcode::err: return "ERR";
    }
    return "?";
}

std::vector<uint8_t> encode_frame(Opcode op, uint64_t request_id, ByteSpan payload) {
    std::vector<uint8_t> out;
    out.reserve(kWireHeaderBytes + payload.size());
    out.insert(out.end(), kWireMagic, kWireMagic + 4);
    put_le<uint16_t>(out, kWireVersion);
    out.push_back(uint8_t(op));
    put_le<uint64_t>(out, request_id);
    put_le<uint32_t>(out, uint32_t(payload.size()));
    out.insert(out.end(), payload.begin(), payload.end());
    return out;
}

void FrameDecoder::poison(uint64_t offset, std::string why) {
    failed_ = true;
    error_offset_ = offset;
    error_ = std::move(why);
}

bool FrameDecoder::feed(ByteSpan bytes, std::vector<Frame>& out) {
    size_t i = 0;
    while (i < bytes.size()) {
        if (failed_) return false;
        if (!in_body_) {
            size_t need = kWireHeaderBytes - header_.size();
            size_t take = std::min(need, bytes.size() - i);
            header_.insert(header_.end(), bytes.begin() + i, bytes.begin() + i + take);
            i += take;
            consumed_ += take;
            if (header_.size() < kWireHeaderBytes) break;

            uint64_t frame_start = consumed_ - kWireHeaderBytes;
            for (size_t m = 0; m < 4; ++m) {
                if (header_[m] != uint8_t(kWireMagic[m])) {
                    poison(frame_start + m, "bad magic");
                    return false;
                }
            }
            uint16_t version = get_le<uint16_t>(header_.data() + 4);
            if (version != kWireVersion) {
                poison(frame_start + 4, "unsupported version " + std::to_string(version));
                return false;
            }
            current_ = Frame{};
            current_.opcode = header_[6];
            current_.request_id = get_le<uint64_t>(header_.data() + 7);
            current_.announced_len = get_le<uint32_t>(header_.data() + 15);
            header_.clear();
            if (current_.announced_len > max_payload_) {
                current_.oversized = true;
                body_remaining_ = current_.announced_len;
            } else {
                current_.payload.reserve(current_.announced_len);
                body_remaining_ = current_.announced_len;
            }
            in_body_ = true;
        }
        if (in_body_) {
            size_t take = std::min<size_t>(body_remaining_, bytes.size() - i);
            if (!current_.oversized && take) {
                current_.payload.insert(current_.payload.end(), bytes.begin() + i,
                                        bytes.begin() + i + take);
            }
            i += take;
            consumed_ += take;
            body_remaining_ -= take;
            if (body_remaining_ == 0) {
                in_body_ = false;
                out.push_back(std::move(current_));
                current_ = Frame{};
            }
        }
    }
    return !failed_;
}

void put_tier(std::vector<uint8_t>& out, const TierId& tier) {
    out.push_back(uint8_t(tier.kind));
    put_string16(out, tier.name);
}

Status read_tier(ByteReader& r, TierId& out) {
    uint8_t kind = r.read<uint8_t>();
    if (kind > uint8_t(TierKind::remote)) return malformed("tier kind");
    out.kind = TierKind(kind);
    out.name = r.read_string16();
    if (out.kind != TierKind::remote && !out.name.empty()) return malformed("named local tier");
    if (out.kind == TierKind::remote && out.name.empty()) return malformed("unnamed remote tier");
    return Status::success();
}

std::vector<uint8_t> encode_put_request(const PutRequest& req) {
    std::vector<uint8_t> out;
    out.push_back(req.pin ? 1 : 0);
    out.push_back(uint8_t(req.tiers.size()));
    for (const auto& t : req.tiers) put_tier(out, t);
    put_le<uint16_t>(out, uint16_t(req.records.size()));
    for (const auto& rec : req.records) {
        put_le<uint32_t>(out, uint32_t(rec.size()));
        out.insert(out.end(), rec.begin(), rec.end());
    }
    return out;
}

Result<PutRequest> parse_put_request(ByteSpan payload) {
    try {
        ByteReader r(payload);
        PutRequest req;
        req.pin = r.read<uint8_t>() & 1;
        uint8_t tiers = r.read<uint8_t>();
        for (uint8_t i = 0; i < tiers; ++i) {
            TierId tier = TierId::ram();
            auto st = read_tier(r, tier);
            if (!st.ok()) return st;
            req.tiers.push_back(tier);
        }
        uint16_t chunks = r.read<uint16_t>();
        for (uint16_t i = 0; i < chunks; ++i) {
            uint32_t len = r.read<uint32_t>();
            auto bytes = r.read_bytes(len);
            req.records.emplace_back(bytes.begin(), bytes.end());
        }
        if (!r.at_end()) return malformed("trailing bytes");
        return req;
    } catch (const std::out_of_range&) {
        return malformed("truncated PUT");
    }
}

std::vector<uint8_t> encode_put_reply(const std::vector<Errc>& statuses) {
    std::vector<uint8_t> out;
    put_le<uint16_t>(out, uint16_t(statuses.size()));
    for (Errc e : statuses) put_le<uint16_t>(out, uint16_t(e));
    return out;
}

Result<std::vector<Errc>> parse_put_reply(ByteSpan payload) {
    try {
        ByteReader r(payload);
        uint16_t n = r.read<uint16_t>();
        std::vector<Errc> out;
        for (uint16_t i = 0; i < n; ++i) out.push_back(Errc(r.read<uint16_t>()));
        if (!r.at_end()) return malformed("trailing bytes");
        return out;
    } catch (const std::out_of_range&) {
        return malformed("truncated PUT reply");
    }
}

std::vector<uint8_t> encode_get_request(const GetRequest& req) {
    std::vector<uint8_t> out;
    put_le<uint16_t>(out, uint16_t(req.digests.size()));
    for (const auto& d : req.digests) put_digest(out, d);
    out.push_back(req.prefer ? 1 : 0);
    if (req.prefer) put_tier(out, *req.prefer);
    return out;
}

Result<GetRequest> parse_get_request(ByteSpan payload) {
    try {
        ByteReader r(payload);
        GetRequest req;
        uint16_t n = r.read<uint16_t>();
        for (uint16_t i = 0; i < n; ++i) req.digests.push_back(read_digest(r));
        if (r.read<uint8_t>() & 1) {
            TierId tier = TierId::ram();
            auto st = read_tier(r, tier);
            if (!st.ok()) return st;
            req.prefer = tier;
        }
        if (!r.at_end()) return malformed("trailing bytes");
        return req;
    } catch (const std::out_of_range&) {
        return malformed("truncated GET");
    }
}

std::vector<uint8_t> encode_get_reply(
    const std::vector<std::pair<Errc, std::vector<uint8_t>>>& entries) {
    std::vector<uint8_t> out;
    put_le<uint16_t>(out, uint16_t(entries.size()));
    for (const auto& [code, record] : entries) {
        put_le<uint16_t>(out, uint16_t(code));
        put_le<uint32_t>(out, uint32_t(record.size()));
        out.insert(out.end(), record.begin(), record.end());
    }
    return out;
}

Result<std::vector<std::pair<Errc, std::vector<uint8_t>>>> parse_get_reply(ByteSpan payload) {
    try {
        ByteReader r(payload);
        uint16_t n = r.read<uint16_t>();
        std::vector<std::pair<Errc, std::vector<uint8_t>>> out;
        for (uint16_t i = 0; i < n; ++i) {
            Errc code = Errc(r.read<uint16_t>());
            uint32_t len = r.read<uint32_t>();
            auto bytes = r.read_bytes(len);
            out.emplace_back(code, std::vector<uint8_t>(bytes.begin(), bytes.end()));
        }
        if (!r.at_end()) return malformed("trailing bytes");
        return out;
    } catch (const std::out_of_range&) {
        return malformed("truncated GET reply");
    }
}

std::vector<uint8_t> encode_exists_request(const std::vector<Digest>& digests) {
    std::vector<uint8_t> out;
    put_le<uint16_t>(out, uint16_t(digests.size()));
    for (const auto& d : digests) put_digest(out, d);
    return out;
}

Result<std::vector<Digest>> parse_exists_request(ByteSpan payload) {
    try {
        ByteReader r(payload);
        uint16_t n = r.read<uint16_t>();
        std::vector<Digest> out;
        for (uint16_t i = 0; i < n; ++i) out.push_back(read_digest(r));
        if (!r.at_end()) return malformed("trailing bytes");
        return out;
    } catch (const std::out_of_range&) {
        return malformed("truncated EXISTS");
    }
}

std::vector<uint8_t> encode_exists_reply(const std::vector<uint8_t>& hits) {
    std::vector<uint8_t> out;
    put_le<uint16_t>(out, uint16_t(hits.size()));
    out.insert(out.end(), hits.begin(), hits.end());
    return out;
}

Result<std::vector<uint8_t>> parse_exists_reply(ByteSpan payload) {
    try {
        ByteReader r(payload);
        uint16_t n = r.read<uint16_t>();
        auto bytes = r.read_bytes(n);
        if (!r.at_end()) return malformed("trailing bytes");
        return std::vector<uint8_t>(bytes.begin(), bytes.end());
    } catch (const std::out_of_range&) {
        return malformed("truncated EXISTS reply");
    }
}

std::vector<uint8_t> encode_clear_request(const ClearRequest& req) {
    std::vector<uint8_t> out;
    put_le<uint16_t>(out, uint16_t(req.digests.size()));
    for (const auto& d : req.digests) put_digest(out, d);
    out.push_back(req.tier ? 1 : 0);
    if (req.tier) put_tier(out, *req.tier);
    return out;
}

Result<ClearRequest> parse_clear_request(ByteSpan payload) {
    try {
        ByteReader r(payload);
        ClearRequest req;
        uint16_t n = r.read<uint16_t>();
        for (uint16_t i = 0; i < n; ++i) req.digests.push_back(read_digest(r));
        if (r.read<uint8_t>() & 1) {
            TierId tier = TierId::ram();
            auto st = read_tier(r, tier);
            if (!st.ok()) return st;
            req.tier = tier;
        }
        if (!r.at_end()) return malformed("trailing bytes");
        return req;
    } catch (const std::out_of_range&) {
        return malformed("truncated CLEAR");
    }
}

std::vector<uint8_t> encode_clear_reply(const ClearResult& result) {
    std::vector<uint8_t> out;
    put_le<uint32_t>(out, uint32_t(result.removed));
    put_le<uint32_t>(out, uint32_t(result.refused));
    return out;
}

Result<ClearResult> parse_clear_reply(ByteSpan payload) {
    try {
        ByteReader r(payload);
        ClearResult res;
        res.removed = r.read<uint32_t>();
        res.refused = r.read<uint32_t>();
        if (!r.at_end()) return malformed("trailing bytes");
        return res;
    } catch (const std::out_of_range&) {
        return malformed("truncated CLEAR reply");
    }
}

std::vector<uint8_t> encode_pin_request(const PinRequest& req) {
    std::vector<uint8_t> out;
    put_digest(out, req.digest);
    out.push_back(req.on ? 1 : 0);
    out.push_back(req.tier ? 1 : 0);
    if (req.tier) put_tier(out, *req.tier);
    return out;
}

Result<PinRequest> parse_pin_request(ByteSpan payload) {
    try {
        ByteReader r(payload);
        PinRequest req;
        req.digest = read_digest(r);
        req.on = r.read<uint8_t>() & 1;
        if (r.read<uint8_t>() & 1) {
            TierId tier = TierId::ram();
            auto st = read_tier(r, tier);
            if (!st.ok()) return st;
            req.tier = tier;
        }
        if (!r.at_end()) return malformed("trailing bytes");
        return req;
    } catch (const std::out_of_range&) {
        return malformed("truncated PIN");
    }
}

std::vector<uint8_t> encode_compress_request(const CompressRequest& req) {
    std::vector<uint8_t> out;
    put_digest(out, req.digest);
    put_string16(out, req.codec);
    out.push_back(req.tier ? 1 : 0);
    if (req.tier) put_tier(out, *req.tier);
    return out;
}

Result<CompressRequest> parse_compress_request(ByteSpan payload) {
    try {
        ByteReader r(payload);
        CompressRequest req;
        req.digest = read_digest(r);
        req.codec = r.read_string16();
        if (r.read<uint8_t>() & 1) {
            TierId tier = TierId::ram();
            auto st = read_tier(r, tier);
            if (!st.ok()) return st;
            req.tier = tier;
        }
        if (!r.at_end()) return malformed("trailing bytes");
        return req;
    } catch (const std::out_of_range&) {
        return malformed("truncated COMPRESS");
    }
}

std::vector<uint8_t> encode_move_request(const MoveRequest& req) {
    std::vector<uint8_t> out;
    put_string16(out, req.dest_endpoint);
    out.push_back(req.clear_source ? 1 : 0);
    put_le<uint16_t>(out, uint16_t(req.digests.size()));
    for (const auto& d : req.digests) put_digest(out, d);
    return out;
}

Result<MoveRequest> parse_move_request(ByteSpan payload) {
    try {
        ByteReader r(payload);
        MoveRequest req;
        req.dest_endpoint = r.read_string16();
        req.clear_source = r.read<uint8_t>() & 1;
        uint16_t n = r.read<uint16_t>();
        for (uint16_t i = 0; i < n; ++i) req.digests.push_back(read_digest(r));
        if (!r.at_end()) return malformed("trailing bytes");
        return req;
    } catch (const std::out_of_range&) {
        return malformed("truncated MOVE");
    }
}

std::vector<uint8_t> encode_move_reply(const MoveReply& reply) {
    std::vector<uint8_t> out;
    put_le<uint32_t>(out, reply.moved);
    put_le<uint32_t>(out, reply.missed);
    return out;
}

Result<MoveReply> parse_move_reply(ByteSpan payload) {
    try {
        ByteReader r(payload);
        MoveReply reply;
        reply.moved = r.read<uint32_t>();
        reply.missed = r.read<uint32_t>();
        if (!r.at_end()) return malformed("trailing bytes");
        return reply;
    } catch (const std::out_of_range&) {
        return malformed("truncated MOVE reply");
    }
}

std::vector<uint8_t> encode_lookup_query(const LookupQuery& q) {
    std::vector<uint8_t> out;
    out.push_back(q.kind);
    if (q.kind == 0) {
        put_string16(out, q.tokens.model_tag);
        put_le<uint32_t>(out, uint32_t(q.tokens.tokens.size()));
        for (TokenId t : q.tokens.tokens) put_le<uint32_t>(out, t);
    } else if (q.kind == 1) {
        put_le<uint16_t>(out, uint16_t(q.instance_ids.size()));
        for (const auto& id : q.instance_ids) put_string16(out, id);
    }
    return out;
}

Result<LookupQuery> parse_lookup_query(ByteSpan payload) {
    try {
        ByteReader r(payload);
        LookupQuery q;
        q.kind = r.read<uint8_t>();
        if (q.kind == 0) {
            q.tokens.model_tag = r.read_string16();
            uint32_t n = r.read<uint32_t>();
            q.tokens.tokens.reserve(n);
            for (uint32_t i = 0; i < n; ++i) q.tokens.tokens.push_back(r.read<uint32_t>());
        } else if (q.kind == 1) {
            uint16_t n = r.read<uint16_t>();
            for (uint16_t i = 0; i < n; ++i) q.instance_ids.push_back(r.read_string16());
        } else if (q.kind != 2) {
            return Status{Errc::unknown_query, "lookup kind " + std::to_string(q.kind)};
        }
        if (!r.at_end()) return malformed("trailing bytes");
        return q;
    } catch (const std::out_of_range&) {
        return malformed("truncated LOOKUP");
    }
}

std::vector<uint8_t> encode_lookup_hits(const std::map<std::string, uint64_t>& hits) {
    std::vector<uint8_t> out;
    put_le<uint16_t>(out, uint16_t(hits.size()));
    for (const auto& [id, n] : hits) {
        put_string16(out, id);
        put_le<uint64_t>(out, n);
    }
    return out;
}

Result<std::map<std::string, uint64_t>> parse_lookup_hits(ByteSpan payload) {
    try {
        ByteReader r(payload);
        uint16_t n = r.read<uint16_t>();
        std::map<std::string, uint64_t> out;
        for (uint16_t i = 0; i < n; ++i) {
            std::string id = r.read_string16();
            out[id] = r.read<uint64_t>();
        }
        if (!r.at_end()) return malformed("trailing bytes");
        return out;
    } catch (const std::out_of_range&) {
        return malformed("truncated LOOKUP reply");
    }
}

std::vector<uint8_t> encode_endpoint_map(
    const std::vector<std::pair<bool, std::string>>& endpoints) {
    std::vector<uint8_t> out;
    put_le<uint16_t>(out, uint16_t(endpoints.size()));
    for (const auto& [found, ep] : endpoints) {
        out.push_back(found ? 1 : 0);
        put_string16(out, ep);
    }
    return out;
}

Result<std::vector<std::pair<bool, std::string>>> parse_endpoint_map(ByteSpan payload) {
    try {
        ByteReader r(payload);
        uint16_t n = r.read<uint16_t>();
        std::vector<std::pair<bool, std::string>> out;
        for (uint16_t i = 0; i < n; ++i) {
            bool found = r.read<uint8_t>() & 1;
            out.emplace_back(found, r.read_string16());
        }
        if (!r.at_end()) return malformed("trailing bytes");
        return out;
    } catch (const std::out_of_range&) {
        return malformed("truncated endpoint map");
    }
}

std::vector<uint8_t> encode_instance_rows(const std::vector<InstanceRow>& rows) {
    std::vector<uint8_t> out;
    put_le<uint16_t>(out, uint16_t(rows.size()));
    for (const auto& row : rows) {
        put_string16(out, row.id);
        put_string16(out, row.endpoint);
        put_le<uint64_t>(out, row.chunk_count);
    }
    return out;
}

Result<std::vector<InstanceRow>> parse_instance_rows(ByteSpan payload) {
    try {
        ByteReader r(payload);
        uint16_t n = r.read<uint16_t>();
        std::vector<InstanceRow> out;
        for (uint16_t i = 0; i < n; ++i) {
            InstanceRow row;
            row.id = r.read_string16();
            row.endpoint = r.read_string16();
            row.chunk_count = r.read<uint64_t>();
            out.push_back(std::move(row));
        }
        if (!r.at_end()) return malformed("trailing bytes");
        return out;
    } catch (const std::out_of_range&) {
        return malformed("truncated instance rows");
    }
}

std::vector<uint8_t> encode_pd_push(const PdPushRequest& req) {
    std::vector<uint8_t> out;
    put_le<uint64_t>(out, req.query_id);
    put_le<uint32_t>(out, req.ordinal);
    out.push_back(req.last ? 1 : 0);
    put_le<uint32_t>(out, uint32_t(req.record.size()));
    out.insert(out.end(), req.record.begin(), req.record.end());
    return out;
}

Result<PdPushRequest> parse_pd_push(ByteSpan payload) {
    try {
        ByteReader r(payload);
        PdPushRequest req;
        req.query_id = r.read<uint64_t>();
        req.ordinal = r.read<uint32_t>();
        req.last = r.read<uint8_t>() & 1;
        uint32_t len = r.read<uint32_t>();
        auto bytes = r.read_bytes(len);
        req.record.assign(bytes.begin(), bytes.end());
        if (!r.at_end()) return malformed("trailing bytes");
        return req;
    } catch (const std::out_of_range&) {
        return malformed("truncated PD_PUSH");
    }
}

std::vector<uint8_t> encode_event(const EventRecord& event) {
    std::vector<uint8_t> out;
    out.push_back(event.kind);
    put_string16(out, event.instance_id);
    auto put_entry_common = [&](const EventRecord::Entry& e) {
        put_digest(out, e.digest);
        if (event.kind != 2) put_le<uint16_t>(out, e.token_count);
        out.push_back(e.flag ? 1 : 0);
        put_tier(out, e.tier);
    };
    if (event.kind == 0) {
        put_string16(out, event.endpoint);
        put_le<uint32_t>(out, uint32_t(event.entries.size()));
        for (const auto& e : event.entries) put_entry_common(e);
    } else {
        put_entry_common(event.entries.empty() ? EventRecord::Entry{} : event.entries[0]);
    }
    return out;
}

Result<EventRecord> parse_event(ByteSpan payload) {
    try {
        ByteReader r(payload);
        EventRecord event;
        event.kind = r.read<uint8_t>();
        if (event.kind > 2) return malformed("event kind");
        event.instance_id = r.read_string16();
        auto read_entry = [&]() -> Result<EventRecord::Entry> {
            EventRecord::Entry e;
            e.digest = read_digest(r);
            if (event.kind != 2) e.token_count = r.read<uint16_t>();
            e.flag = r.read<uint8_t>() & 1;
            auto st = read_tier(r, e.tier);
            if (!st.ok()) return st;
            return e;
        };
        if (event.kind == 0) {
            event.endpoint = r.read_string16();
            uint32_t n = r.read<uint32_t>();
            for (uint32_t i = 0; i < n; ++i) {
                auto e = read_entry();
                if (!e.ok()) return e.status();
                event.entries.push_back(e.value());
            }
        } else {
            auto e = read_entry();
            if (!e.ok()) return e.status();
            event.entries.push_back(e.value());
        }
        if (!r.at_end()) return malformed("trailing bytes");
        return event;
    } catch (const std::out_of_range&) {
        return malformed("truncated EVENT");
    }
}

std::vector<uint8_t> encode_err(Errc code, const std::string& detail) {
    std::vector<uint8_t> out;
    put_le<uint16_t>(out, uint16_t(code));
    put_string16(out, detail);
    return out;
}

Status parse_err(ByteSpan payload) {
    try {
        ByteReader r(payload);
        Errc code = Errc(r.read<uint16_t>());
        std::string detail = r.read_string16();
        if (code == Errc::ok) code = Errc::protocol_error;
        return Status{code, std::move(detail)};
    } catch (const std::out_of_range&) {
        return Status{Errc::protocol_error, "malformed ERR payload"};
    }
}

}  // namespace tierkv
