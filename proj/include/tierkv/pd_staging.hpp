#pragma once

#include <condition_variable>
#include <map>
#include <mutex>
#include <vector>

#include "tierkv/common.hpp"

namespace tierkv {

// Decoder-side landing area for chunks pushed by a prefiller. Queries are
// registered (slots allocated) before any push arrives; pushes fill ordinal
// slots exactly once, duplicates ack idempotently; await consumes the query
// once the ordinal marked last and everything before it have landed.
class PdStaging {
public:
    Status register_query(QueryId id);
    Status push(QueryId id, uint32_t ordinal, bool last, std::vector<uint8_t> record);
    // Blocks until complete, returns records in ordinal order, forgets the query.
    Result<std::vector<std::vector<uint8_t>>> await(QueryId id);
    Status cancel(QueryId id);
    size_t registered() const;

private:
    struct Query {
        std::map<uint32_t, std::vector<uint8_t>> slots;
        uint32_t last_ordinal = 0;
        bool last_seen = false;
        bool cancelled = false;
    };
    bool complete(const Query& q) const {
        return q.last_seen && q.slots.size() == size_t(q.last_ordinal) + 1;
    }

    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::map<QueryId, Query> queries_;
};

}  // namespace tierkv
