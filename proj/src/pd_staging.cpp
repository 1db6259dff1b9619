#include "tierkv/pd_staging.hpp"

namespace tierkv {

Status PdStaging::register_query(QueryId id) {
    std::lock_guard lock(mu_);
    auto [it, inserted] = queries_.try_emplace(id);
    if (!inserted) return Status{Errc::duplicate_key, "query already registered"};
    return Status::success();
}

Status PdStaging::push(QueryId id, uint32_t ordinal, bool last, std::vector<uint8_t> record) {
    std::lock_guard lock(mu_);
    auto it = queries_.find(id);
    if (it == queries_.end())
        return Status{Errc::unknown_query, "query " + std::to_string(id) + " not registered"};
    Query& q = it->second;
    if (q.last_seen && ordinal > q.last_ordinal)
        return Status{Errc::protocol_error, "ordinal beyond the final chunk"};
    if (last && !q.slots.empty() && q.slots.rbegin()->first > ordinal)
        return Status{Errc::protocol_error, "final ordinal below an already filled slot"};
    if (last) {
        q.last_seen = true;
        q.last_ordinal = ordinal;
    }
    // Filled exactly once; a retransmit acks without overwriting.
    q.slots.try_emplace(ordinal, std::move(record));
    if (complete(q)) cv_.notify_all();
    return Status::success();
}

Result<std::vector<std::vector<uint8_t>>> PdStaging::await(QueryId id) {
    std::unique_lock lock(mu_);
    auto it = queries_.find(id);
    if (it == queries_.end())
        return Status{Errc::unknown_query, "query " + std::to_string(id) + " not registered"};
    cv_.wait(lock, [&] { return complete(it->second) || it->second.cancelled; });
    if (it->second.cancelled) {
        queries_.erase(it);
        return Status{Errc::io_error, "query cancelled"};
    }
    std::vector<std::vector<uint8_t>> out;
    out.reserve(it->second.slots.size());
    for (auto& [ordinal, record] : it->second.slots) out.push_back(std::move(record));
    queries_.erase(it);
    return out;
}

Status PdStaging::cancel(QueryId id) {
    std::lock_guard lock(mu_);
    auto it = queries_.find(id);
    if (it == queries_.end()) return Status{Errc::unknown_query, "not registered"};
    it->second.cancelled = true;
    cv_.notify_all();
    return Status::success();
}

size_t PdStaging::registered() const {
    std::lock_guard lock(mu_);
    return queries_.size();
}

}  // namespace tierkv
