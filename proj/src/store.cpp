#include "tierkv/store.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>

#include <fcntl.h>
#include <unistd.h>

namespace tierkv {

namespace fs = std::filesystem;

std::string TierId::to_string() const {
    switch (kind) {
        case TierKind::ram:
            return "ram";
        case TierKind::disk:
            return "disk";
        case TierKind::remote:
            return "remote:" + name;
    }
    return "?";
}

const PutResult& PutHandle::wait() const {
    std::unique_lock lock(st_->m);
    st_->cv.wait(lock, [&] { return st_->done; });
    return st_->result;
}

bool PutHandle::done() const {
    std::lock_guard lock(st_->m);
    return st_->done;
}

PutHandle PutHandle::immediate(PutResult result) {
    auto st = std::make_shared<detail::PutState>();
    st->done = true;
    st->result = std::move(result);
    return PutHandle(st);
}

namespace {

Status write_file_atomic(const fs::path& target, ByteSpan bytes, bool do_fsync) {
    fs::path tmp = target;
    tmp += ".tmp";
    int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    if (fd < 0) return Status{Errc::io_error, "open " + tmp.string()};
    size_t off = 0;
    while (off < bytes.size()) {
        ssize_t n = ::write(fd, bytes.data() + off, bytes.size() - off);
        if (n < 0) {
            ::close(fd);
            ::unlink(tmp.c_str());
            return Status{Errc::io_error, "write " + tmp.string()};
        }
        off += size_t(n);
    }
    if (do_fsync) ::fsync(fd);
    ::close(fd);
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) {
        ::unlink(tmp.c_str());
        return Status{Errc::io_error, "rename " + target.string()};
    }
    return Status::success();
}

Result<std::vector<uint8_t>> read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return Status{Errc::io_error, "open " + path.string()};
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
    if (in.bad()) return Status{Errc::io_error, "read " + path.string()};
    return bytes;
}

Result<std::vector<uint8_t>> read_file_slice(const fs::path& path, size_t offset, size_t len) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return Status{Errc::io_error, "open " + path.string()};
    in.seekg(std::streamoff(offset));
    std::vector<uint8_t> bytes(len);
    in.read(reinterpret_cast<char*>(bytes.data()), std::streamsize(len));
    if (in.gcount() != std::streamsize(len))
        return Status{Errc::corrupt_chunk, "short read " + path.string()};
    return bytes;
}

}  // namespace

TieredStore::TieredStore(StoreConfig cfg) : cfg_(std::move(cfg)), pool_(cfg_.io_threads) {
    cfg_.model.validate(cfg_.chunk_size);
    slot_bytes_ = cfg_.model.chunk_bytes(cfg_.chunk_size);
    size_t slots = cfg_.ram_pool_bytes / slot_bytes_;
    ram_slab_.resize(slots * slot_bytes_);
    free_slots_.reserve(slots);
    for (size_t i = slots; i > 0; --i) free_slots_.push_back(uint32_t(i - 1));
    if (!cfg_.disk_path.empty()) fs::create_directories(cfg_.disk_path);
    pump_ = std::thread([this] { pump_loop(); });
}

TieredStore::~TieredStore() {
    pool_.drain();
    flush_events();
    {
        std::lock_guard lock(event_mu_);
        event_stop_ = true;
    }
    event_cv_.notify_all();
    pump_.join();
}

void TieredStore::add_remote(const std::string& name, std::shared_ptr<RemoteBackend> backend) {
    std::lock_guard lock(mu_);
    remotes_.emplace_back(name, std::move(backend));
}

void TieredStore::set_event_sink(EventSink sink) {
    std::lock_guard lock(event_mu_);
    sink_ = std::move(sink);
}

void TieredStore::emit(StoreEvent event) {
    std::lock_guard lock(event_mu_);
    if (!sink_) return;
    event_queue_.push_back(std::move(event));
    ++events_in_flight_;
    event_cv_.notify_all();
}

void TieredStore::pump_loop() {
    for (;;) {
        StoreEvent event;
        {
            std::unique_lock lock(event_mu_);
            event_cv_.wait(lock, [this] { return event_stop_ || !event_queue_.empty(); });
            if (event_queue_.empty()) return;
            event = std::move(event_queue_.front());
            event_queue_.pop_front();
        }
        {
            std::unique_lock lock(event_mu_);
            if (sink_) {
                EventSink sink = sink_;
                lock.unlock();
                sink(event);
                lock.lock();
            }
            --events_in_flight_;
        }
        event_cv_.notify_all();
    }
}

void TieredStore::flush_events() {
    std::unique_lock lock(event_mu_);
    event_cv_.wait(lock, [this] { return events_in_flight_ == 0; });
}

void TieredStore::touch(Entry& entry) { entry.last_touch = ++clock_; }

fs::path TieredStore::disk_file(const Digest& digest) const {
    std::string hex = digest_hex(digest);
    return fs::path(cfg_.disk_path) / hex.substr(0, 2) / hex.substr(2, 2) / hex;
}

std::vector<TierId> TieredStore::known_tiers() const {
    std::vector<TierId> out{TierId::ram()};
    if (!cfg_.disk_path.empty()) out.push_back(TierId::disk());
    std::lock_guard lock(mu_);
    for (const auto& [name, _] : remotes_) out.push_back(TierId::remote(name));
    return out;
}

bool TieredStore::reserve_ram_slot_locked(std::unique_lock<std::mutex>& lock, uint32_t& slot_out) {
    if (free_slots_.empty()) evict_until_locked(lock, TierId::ram(), slot_bytes_);
    if (free_slots_.empty()) return false;
    slot_out = free_slots_.back();
    free_slots_.pop_back();
    return true;
}

bool TieredStore::reserve_disk_locked(std::unique_lock<std::mutex>& lock, size_t bytes) {
    if (disk_used_ + bytes > cfg_.disk_quota_bytes) {
        size_t need = disk_used_ + bytes - cfg_.disk_quota_bytes;
        evict_until_locked(lock, TierId::disk(), need);
    }
    if (disk_used_ + bytes > cfg_.disk_quota_bytes) return false;
    disk_used_ += bytes;
    return true;
}

size_t TieredStore::evict_until_locked(std::unique_lock<std::mutex>& lock, const TierId& tier,
                                       size_t bytes_needed) {
    if (tier.kind == TierKind::remote) return 0;
    size_t freed = 0;
    while (freed < bytes_needed) {
        const Digest* victim = nullptr;
        uint64_t oldest = ~uint64_t(0);
        for (const auto& [digest, entry] : index_) {
            if (entry.share_count > 0) continue;
            auto it = entry.tiers.find(tier);
            if (it == entry.tiers.end()) continue;
            const Loc& loc = it->second;
            if (loc.state != Loc::State::present || loc.pinned) continue;
            if (entry.last_touch < oldest) {
                oldest = entry.last_touch;
                victim = &digest;
            }
        }
        if (!victim) break;
        Digest digest = *victim;
        Entry& entry = index_.at(digest);
        Loc loc = entry.tiers.at(tier);

        if (tier.kind == TierKind::ram) {
            if (cfg_.demote_ram_to_disk && !cfg_.disk_path.empty() &&
                !entry.tiers.count(TierId::disk())) {
                ChunkRecordInfo info;
                info.digest = digest;
                info.model_tag_hash = model_tag_hash(cfg_.model.model_tag);
                info.token_count = entry.token_count;
                info.num_layers = entry.num_layers;
                info.bytes_per_token = entry.bytes_per_token;
                ByteSpan body{ram_slab_.data() + size_t(loc.ram_slot) * slot_bytes_,
                              loc.stored_bytes};
                auto record = encode_chunk_container(info, body);
                if (reserve_disk_locked(lock, record.size())) {
                    fs::path path = disk_file(digest);
                    std::error_code ec;
                    fs::create_directories(path.parent_path(), ec);
                    Status st = write_file_atomic(path, ByteSpan(record.data(), record.size()),
                                                  cfg_.fsync_on_write);
                    if (st.ok()) {
                        Loc disk_loc;
                        disk_loc.state = Loc::State::present;
                        disk_loc.stored_bytes = record.size();
                        disk_loc.codec = loc.codec;
                        entry.tiers[TierId::disk()] = disk_loc;
                        emit({StoreEvent::Kind::stored, digest, TierId::disk(),
                              entry.token_count, false});
                    } else {
                        disk_used_ -= record.size();
                    }
                }
            }
            free_slots_.push_back(loc.ram_slot);
            freed += slot_bytes_;
        } else {
            std::error_code ec;
            fs::remove(disk_file(digest), ec);
            disk_used_ -= loc.stored_bytes;
            freed += loc.stored_bytes;
        }
        drop_loc_locked(digest, entry, tier);
    }
    return freed;
}

// Removes the tier location and, when that was the last copy, un-indexes the
// entry. Emits the eviction event.
void TieredStore::drop_loc_locked(const Digest& digest, Entry& entry, const TierId& tier) {
    entry.tiers.erase(tier);
    bool last = entry.tiers.empty();
    emit({StoreEvent::Kind::evicted, digest, tier, entry.token_count, last});
    if (last && entry.share_count == 0) index_.erase(digest);
    write_cv_.notify_all();
}

void TieredStore::finish_tier(const std::shared_ptr<detail::PutState>& state, size_t result_slot,
                              Status status) {
    bool last = false;
    {
        std::lock_guard lock(state->m);
        state->result.tiers[result_slot].status = std::move(status);
        last = (--state->pending == 0);
    }
    if (last) {
        // Release the put's share before the handle resolves, so a caller
        // returning from wait() sees the entry clearable.
        {
            std::unique_lock lock(mu_);
            auto it = index_.find(state->result.digest);
            if (it != index_.end()) {
                Entry& entry = it->second;
                if (entry.share_count > 0) --entry.share_count;
                if (entry.tiers.empty() && entry.share_count == 0) index_.erase(it);
            }
        }
        write_cv_.notify_all();
        {
            std::lock_guard lock(state->m);
            state->done = true;
        }
    }
    state->cv.notify_all();
}

void TieredStore::write_tier(const Digest& digest, const TierId& tier, bool pin,
                             SharedBufferRef buf, std::shared_ptr<detail::PutState> state,
                             size_t result_slot) {
    ByteSpan record = buf.bytes();
    ByteSpan payload = record.subspan(kChunkHeaderBytes, record.size() - kChunkHeaderBytes - 8);

    std::unique_lock lock(mu_);
    auto it = index_.find(digest);
    if (it == index_.end()) {
        lock.unlock();
        finish_tier(state, result_slot, Status{Errc::not_found, "entry vanished"});
        return;
    }
    Entry& entry = it->second;

    for (;;) {
        auto loc_it = entry.tiers.find(tier);
        if (loc_it == entry.tiers.end()) break;  // claim below
        if (loc_it->second.state == Loc::State::present) {
            // Idempotent: already stored, no new bytes written.
            if (pin) loc_it->second.pinned = true;
            touch(entry);
            lock.unlock();
            finish_tier(state, result_slot, Status::success());
            return;
        }
        write_cv_.wait(lock);
    }

    if (tier.kind == TierKind::ram) {
        uint32_t slot = 0;
        if (!reserve_ram_slot_locked(lock, slot)) {
            lock.unlock();
            finish_tier(state, result_slot, Status{Errc::tier_full, "ram pool exhausted"});
            return;
        }
        Loc loc;
        loc.ram_slot = slot;
        entry.tiers[tier] = loc;
        uint8_t* dst = ram_slab_.data() + size_t(slot) * slot_bytes_;
        lock.unlock();
        std::memcpy(dst, payload.data(), payload.size());
        lock.lock();
        Loc& final_loc = entry.tiers.at(tier);
        final_loc.state = Loc::State::present;
        final_loc.stored_bytes = payload.size();
        final_loc.pinned = final_loc.pinned || pin;
        touch(entry);
        emit({StoreEvent::Kind::stored, digest, tier, entry.token_count, false});
        lock.unlock();
        write_cv_.notify_all();
        finish_tier(state, result_slot, Status::success());
        return;
    }

    if (tier.kind == TierKind::disk) {
        if (!reserve_disk_locked(lock, record.size())) {
            lock.unlock();
            finish_tier(state, result_slot, Status{Errc::tier_full, "disk quota exhausted"});
            return;
        }
        entry.tiers[tier] = Loc{};
        lock.unlock();
        fs::path path = disk_file(digest);
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
        Status st = write_file_atomic(path, record, cfg_.fsync_on_write);
        lock.lock();
        if (!st.ok()) {
            disk_used_ -= record.size();
            drop_loc_locked(digest, entry, tier);
            lock.unlock();
            finish_tier(state, result_slot, std::move(st));
            return;
        }
        Loc& final_loc = entry.tiers.at(tier);
        final_loc.state = Loc::State::present;
        final_loc.stored_bytes = record.size();
        final_loc.pinned = final_loc.pinned || pin;
        touch(entry);
        emit({StoreEvent::Kind::stored, digest, tier, entry.token_count, false});
        lock.unlock();
        write_cv_.notify_all();
        finish_tier(state, result_slot, Status::success());
        return;
    }

    // Remote.
    std::shared_ptr<RemoteBackend> backend;
    for (const auto& [name, b] : remotes_) {
        if (name == tier.name) backend = b;
    }
    if (!backend) {
        lock.unlock();
        finish_tier(state, result_slot, Status{Errc::invalid_argument, "unknown remote"});
        return;
    }
    entry.tiers[tier] = Loc{};
    lock.unlock();
    Status st = backend->put_record(record);
    lock.lock();
    if (!st.ok()) {
        drop_loc_locked(digest, entry, tier);
        lock.unlock();
        finish_tier(state, result_slot, std::move(st));
        return;
    }
    Loc& final_loc = entry.tiers.at(tier);
    final_loc.state = Loc::State::present;
    final_loc.stored_bytes = record.size();
    final_loc.pinned = final_loc.pinned || pin;
    touch(entry);
    emit({StoreEvent::Kind::stored, digest, tier, entry.token_count, false});
    lock.unlock();
    write_cv_.notify_all();
    finish_tier(state, result_slot, Status::success());
}

PutHandle TieredStore::put(const KVChunk& chunk, const std::vector<TierId>& tiers, bool pin) {
    std::vector<TierId> unique;
    for (const auto& t : tiers) {
        if (std::find(unique.begin(), unique.end(), t) == unique.end()) unique.push_back(t);
    }

    PutResult blueprint;
    blueprint.digest = chunk.key().digest;
    for (const auto& t : unique) blueprint.tiers.push_back({t, Status{Errc::io_error, "pending"}});

    auto fail_all = [&](Errc code, const std::string& detail) {
        for (auto& t : blueprint.tiers) t.status = Status{code, detail};
        return PutHandle::immediate(std::move(blueprint));
    };

    if (unique.empty()) return PutHandle::immediate(std::move(blueprint));
    if (chunk.empty() || chunk.token_count() == 0) return fail_all(Errc::invalid_argument, "empty chunk");
    if (chunk.num_layers() != cfg_.model.num_layers ||
        chunk.bytes_per_token() != cfg_.model.bytes_per_token_per_layer ||
        chunk.token_count() > cfg_.chunk_size) {
        return fail_all(Errc::invalid_argument, "chunk geometry does not match store");
    }

    auto state = std::make_shared<detail::PutState>();
    state->result = std::move(blueprint);
    state->pending = unique.size();

    auto record = encode_chunk_record(chunk);
    auto refs = buffers_.create_shared(std::move(record), uint32_t(unique.size()));

    {
        std::unique_lock lock(mu_);
        auto [it, inserted] = index_.try_emplace(chunk.key().digest);
        Entry& entry = it->second;
        if (inserted) {
            entry.token_count = uint16_t(chunk.token_count());
            entry.num_layers = uint16_t(chunk.num_layers());
            entry.bytes_per_token = chunk.bytes_per_token();
        } else if (entry.token_count != chunk.token_count() ||
                   entry.num_layers != chunk.num_layers() ||
                   entry.bytes_per_token != chunk.bytes_per_token()) {
            if (entry.tiers.empty() && entry.share_count == 0) index_.erase(it);
            lock.unlock();
            for (auto& t : state->result.tiers) {
                t.status = Status{Errc::invalid_argument, "digest indexed with other geometry"};
            }
            std::lock_guard state_lock(state->m);
            state->pending = 0;
            state->done = true;
            return PutHandle(state);
        }
        entry.share_count++;
    }

    for (size_t i = 0; i < unique.size(); ++i) {
        TierId tier = unique[i];
        bool known = true;
        if (tier.kind == TierKind::disk && cfg_.disk_path.empty()) known = false;
        if (tier.kind == TierKind::remote) {
            std::lock_guard lock(mu_);
            known = false;
            for (const auto& [name, _] : remotes_) {
                if (name == tier.name) known = true;
            }
        }
        if (!known) {
            refs[i].reset();
            finish_tier(state, i, Status{Errc::invalid_argument, "unknown tier " + tier.to_string()});
            continue;
        }
        Digest digest = chunk.key().digest;
        SharedBufferRef ref = std::move(refs[i]);
        pool_.submit([this, digest, tier, pin, ref = std::move(ref), state, i]() mutable {
            write_tier(digest, tier, pin, std::move(ref), state, i);
        });
    }
    return PutHandle(state);
}

std::vector<PutHandle> TieredStore::batch_put(const std::vector<PutSpec>& specs) {
    std::vector<PutHandle> handles;
    handles.reserve(specs.size());
    for (const auto& spec : specs) handles.push_back(put(spec.chunk, spec.tiers, spec.pin));
    return handles;
}

Result<KVChunk> TieredStore::get(const Digest& digest, const std::vector<TierId>& prefer) {
    std::set<TierId> failed;
    for (;;) {
        TierId tier;
        std::string codec;
        uint32_t ram_slot = 0;
        size_t stored_bytes = 0;
        uint16_t token_count = 0, num_layers = 0;
        uint32_t bytes_per_token = 0;
        std::shared_ptr<RemoteBackend> backend;
        {
            std::unique_lock lock(mu_);
            auto it = index_.find(digest);
            if (it == index_.end()) return Status{Errc::not_found, "no such chunk"};
            Entry& entry = it->second;

            std::vector<TierId> order = prefer;
            order.push_back(TierId::ram());
            order.push_back(TierId::disk());
            for (const auto& [name, _] : remotes_) order.push_back(TierId::remote(name));

            bool found = false;
            for (const auto& cand : order) {
                if (failed.count(cand)) continue;
                auto loc_it = entry.tiers.find(cand);
                if (loc_it == entry.tiers.end()) continue;
                if (loc_it->second.state != Loc::State::present) continue;
                tier = cand;
                codec = loc_it->second.codec;
                ram_slot = loc_it->second.ram_slot;
                stored_bytes = loc_it->second.stored_bytes;
                found = true;
                break;
            }
            if (!found) return Status{Errc::not_found, "no readable tier"};
            token_count = entry.token_count;
            num_layers = entry.num_layers;
            bytes_per_token = entry.bytes_per_token;
            entry.share_count++;
            touch(entry);
            if (tier.kind == TierKind::remote) {
                for (const auto& [name, b] : remotes_) {
                    if (name == tier.name) backend = b;
                }
            }
        }

        auto release = [&] {
            {
                std::lock_guard lock(mu_);
                auto it = index_.find(digest);
                if (it != index_.end() && it->second.share_count > 0) it->second.share_count--;
            }
            write_cv_.notify_all();
        };
        auto fail_tier = [&](const Status&) {
            {
                std::unique_lock lock(mu_);
                auto it = index_.find(digest);
                if (it != index_.end()) {
                    if (it->second.share_count > 0) it->second.share_count--;
                    if (it->second.tiers.count(tier)) {
                        if (tier.kind == TierKind::ram) {
                            free_slots_.push_back(it->second.tiers.at(tier).ram_slot);
                        } else if (tier.kind == TierKind::disk) {
                            std::error_code ec;
                            fs::remove(disk_file(digest), ec);
                            disk_used_ -= it->second.tiers.at(tier).stored_bytes;
                        }
                        drop_loc_locked(digest, it->second, tier);
                    }
                }
            }
            write_cv_.notify_all();
            failed.insert(tier);
        };

        size_t expect = size_t(token_count) * num_layers * bytes_per_token;
        std::vector<uint8_t> body;
        if (tier.kind == TierKind::ram) {
            const uint8_t* src = ram_slab_.data() + size_t(ram_slot) * slot_bytes_;
            body.assign(src, src + stored_bytes);
        } else {
            if (tier.kind == TierKind::remote && !backend) {
                fail_tier(Status{Errc::invalid_argument, "unknown remote"});
                continue;
            }
            Result<std::vector<uint8_t>> raw =
                tier.kind == TierKind::disk ? read_file(disk_file(digest))
                                            : backend->get_record(digest);
            if (!raw.ok()) {
                fail_tier(raw.status());
                continue;
            }
            auto container = parse_chunk_container(ByteSpan(raw.value().data(), raw.value().size()));
            if (!container.ok() || container.value().info.digest != digest) {
                fail_tier(container.ok() ? Status{Errc::corrupt_chunk, "digest mismatch"}
                                         : container.status());
                continue;
            }
            body.assign(container.value().body.begin(), container.value().body.end());
        }

        std::vector<uint8_t> payload;
        if (codec.empty()) {
            payload = std::move(body);
        } else {
            const Codec* c = find_codec(codec);
            if (!c) {
                fail_tier(Status{Errc::unknown_codec, codec});
                continue;
            }
            auto decoded = c->decode(ByteSpan(body.data(), body.size()));
            if (!decoded.ok()) {
                fail_tier(decoded.status());
                continue;
            }
            payload = std::move(decoded.value());
        }
        if (payload.size() != expect) {
            fail_tier(Status{Errc::corrupt_chunk, "payload size mismatch"});
            continue;
        }

        release();
        ChunkKey key;
        key.digest = digest;
        key.model_tag = cfg_.model.model_tag;
        return KVChunk::from_payload(key, token_count, num_layers, bytes_per_token,
                                     std::move(payload));
    }
}

Result<std::vector<uint8_t>> TieredStore::get_layer(const Digest& digest, uint32_t layer,
                                                    const std::vector<TierId>& prefer) {
    std::set<TierId> failed;
    for (;;) {
        TierId tier;
        std::string codec;
        uint32_t ram_slot = 0;
        size_t stored_bytes = 0;
        uint16_t token_count = 0, num_layers = 0;
        uint32_t bytes_per_token = 0;
        std::shared_ptr<RemoteBackend> backend;
        {
            std::unique_lock lock(mu_);
            auto it = index_.find(digest);
            if (it == index_.end()) return Status{Errc::not_found, "no such chunk"};
            Entry& entry = it->second;

            std::vector<TierId> order = prefer;
            order.push_back(TierId::ram());
            order.push_back(TierId::disk());
            for (const auto& [name, _] : remotes_) order.push_back(TierId::remote(name));

            bool found = false;
            for (const auto& cand : order) {
                if (failed.count(cand)) continue;
                auto loc_it = entry.tiers.find(cand);
                if (loc_it == entry.tiers.end()) continue;
                if (loc_it->second.state != Loc::State::present) continue;
                tier = cand;
                codec = loc_it->second.codec;
                ram_slot = loc_it->second.ram_slot;
                stored_bytes = loc_it->second.stored_bytes;
                found = true;
                break;
            }
            if (!found) return Status{Errc::not_found, "no readable tier"};
            token_count = entry.token_count;
            num_layers = entry.num_layers;
            bytes_per_token = entry.bytes_per_token;
            if (layer >= num_layers) return Status{Errc::invalid_argument, "layer out of range"};
            entry.share_count++;
            touch(entry);
            if (tier.kind == TierKind::remote) {
                for (const auto& [name, b] : remotes_) {
                    if (name == tier.name) backend = b;
                }
            }
        }

        auto release = [&] {
            {
                std::lock_guard lock(mu_);
                auto it = index_.find(digest);
                if (it != index_.end() && it->second.share_count > 0) it->second.share_count--;
            }
            write_cv_.notify_all();
        };

        size_t layer_bytes = size_t(token_count) * bytes_per_token;
        size_t offset = size_t(layer) * layer_bytes;

        // Raw entries are layer-addressable in place; codec blobs are not.
        if (codec.empty()) {
            if (tier.kind == TierKind::ram) {
                const uint8_t* src = ram_slab_.data() + size_t(ram_slot) * slot_bytes_ + offset;
                std::vector<uint8_t> out(src, src + layer_bytes);
                release();
                return out;
            }
            if (tier.kind == TierKind::disk) {
                auto slice = read_file_slice(disk_file(digest), kChunkHeaderBytes + offset,
                                             layer_bytes);
                release();
                if (slice.ok()) return slice;
                failed.insert(tier);
                continue;
            }
        }

        std::vector<uint8_t> body;
        if (tier.kind == TierKind::ram) {
            const uint8_t* src = ram_slab_.data() + size_t(ram_slot) * slot_bytes_;
            body.assign(src, src + stored_bytes);
        } else {
            if (tier.kind == TierKind::remote && !backend) {
                release();
                failed.insert(tier);
                continue;
            }
            Result<std::vector<uint8_t>> raw =
                tier.kind == TierKind::disk ? read_file(disk_file(digest))
                                            : backend->get_record(digest);
            if (!raw.ok()) {
                release();
                failed.insert(tier);
                continue;
            }
            auto container = parse_chunk_container(ByteSpan(raw.value().data(), raw.value().size()));
            if (!container.ok() || container.value().info.digest != digest) {
                release();
                failed.insert(tier);
                continue;
            }
            body.assign(container.value().body.begin(), container.value().body.end());
        }

        std::vector<uint8_t> payload;
        if (codec.empty()) {
            payload = std::move(body);
        } else {
            const Codec* c = find_codec(codec);
            if (!c) {
                release();
                failed.insert(tier);
                continue;
            }
            auto decoded = c->decode(ByteSpan(body.data(), body.size()));
            if (!decoded.ok()) {
                release();
                failed.insert(tier);
                continue;
            }
            payload = std::move(decoded.value());
        }
        if (payload.size() != size_t(token_count) * num_layers * bytes_per_token) {
            release();
            failed.insert(tier);
            continue;
        }
        release();
        return std::vector<uint8_t>(payload.begin() + offset,
                                    payload.begin() + offset + layer_bytes);
    }
}

std::vector<Result<KVChunk>> TieredStore::batch_get(const std::vector<Digest>& digests,
                                                    const std::vector<TierId>& prefer) {
    std::vector<Result<KVChunk>> out(digests.size(),
                                     Result<KVChunk>(Status{Errc::io_error, "pending"}));
    if (digests.empty()) return out;
    std::mutex m;
    std::condition_variable cv;
    size_t remaining = digests.size();
    for (size_t i = 0; i < digests.size(); ++i) {
        pool_.submit([&, i] {
            auto r = get(digests[i], prefer);
            std::lock_guard lock(m);
            out[i] = std::move(r);
            if (--remaining == 0) cv.notify_all();
        });
    }
    std::unique_lock lock(m);
    cv.wait(lock, [&] { return remaining == 0; });
    return out;
}

std::vector<TierId> TieredStore::contains(const Digest& digest) const {
    std::lock_guard lock(mu_);
    auto it = index_.find(digest);
    if (it == index_.end()) return {};
    std::vector<TierId> out;
    for (const auto& [tier, loc] : it->second.tiers) {
        if (loc.state == Loc::State::present) out.push_back(tier);
    }
    return out;
}

Status TieredStore::pin(const Digest& digest, const TierId& tier, bool on) {
    std::lock_guard lock(mu_);
    auto it = index_.find(digest);
    if (it == index_.end()) return Status{Errc::not_found, "no such chunk"};
    auto loc_it = it->second.tiers.find(tier);
    if (loc_it == it->second.tiers.end()) {
        return Status{Errc::not_found, "not on tier " + tier.to_string()};
    }
    loc_it->second.pinned = on;
    return Status::success();
}

ClearResult TieredStore::clear(const std::vector<Digest>& digests,
                               const std::optional<TierId>& tier) {
    ClearResult result;
    std::vector<std::pair<std::shared_ptr<RemoteBackend>, Digest>> remote_clears;
    {
        std::unique_lock lock(mu_);
        for (const auto& digest : digests) {
            auto it = index_.find(digest);
            if (it == index_.end()) continue;
            Entry& entry = it->second;
            std::vector<TierId> targets;
            for (const auto& [t, _] : entry.tiers) {
                if (!tier || *tier == t) targets.push_back(t);
            }
            for (const auto& t : targets) {
                Loc& loc = entry.tiers.at(t);
                if (loc.state != Loc::State::present || loc.pinned || entry.share_count > 0) {
                    result.refused++;
                    continue;
                }
                if (t.kind == TierKind::ram) {
                    free_slots_.push_back(loc.ram_slot);
                } else if (t.kind == TierKind::disk) {
                    std::error_code ec;
                    fs::remove(disk_file(digest), ec);
                    disk_used_ -= loc.stored_bytes;
                } else {
                    for (const auto& [name, b] : remotes_) {
                        if (name == t.name) remote_clears.emplace_back(b, digest);
                    }
                }
                // `it` stays valid: drop_loc_locked erases only when no tiers
                // remain, and then we stop touching the entry.
                bool last = entry.tiers.size() == 1;
                drop_loc_locked(digest, entry, t);
                result.removed++;
                if (last) break;
            }
        }
    }
    for (auto& [backend, digest] : remote_clears) backend->clear({digest});
    return result;
}

size_t TieredStore::evict_until(const TierId& tier, size_t bytes_needed) {
    std::unique_lock lock(mu_);
    return evict_until_locked(lock, tier, bytes_needed);
}

Result<size_t> TieredStore::compress_entry(const Digest& digest, const TierId& tier,
                                           const std::string& codec_name) {
    const Codec* codec = find_codec(codec_name);
    if (!codec) return Status{Errc::unknown_codec, codec_name};

    std::unique_lock lock(mu_);
    auto it = index_.find(digest);
    if (it == index_.end()) return Status{Errc::not_found, "no such chunk"};
    Entry& entry = it->second;
    auto loc_it = entry.tiers.find(tier);
    if (loc_it == entry.tiers.end() || loc_it->second.state != Loc::State::present) {
        return Status{Errc::not_found, "not on tier " + tier.to_string()};
    }

    if (tier.kind == TierKind::remote) {
        std::shared_ptr<RemoteBackend> backend;
        for (const auto& [name, b] : remotes_) {
            if (name == tier.name) backend = b;
        }
        if (!backend) return Status{Errc::invalid_argument, "unknown remote"};
        entry.share_count++;
        lock.unlock();
        auto r = backend->compress(digest, codec_name);
        lock.lock();
        auto it2 = index_.find(digest);
        if (it2 != index_.end() && it2->second.share_count > 0) it2->second.share_count--;
        return r;
    }

    // Readers copy tier bytes outside the lock under a share guard; rewrite
    // only once no reader holds this entry.
    while (entry.share_count > 0) {
        write_cv_.wait(lock);
        it = index_.find(digest);
        if (it == index_.end()) return Status{Errc::not_found, "no such chunk"};
        loc_it = it->second.tiers.find(tier);
        if (loc_it == it->second.tiers.end() ||
            loc_it->second.state != Loc::State::present) {
            return Status{Errc::not_found, "not on tier " + tier.to_string()};
        }
    }
    Loc& loc = loc_it->second;
    if (loc.codec == codec_name) return loc.stored_bytes;

    // Current body -> raw payload.
    std::vector<uint8_t> body;
    if (tier.kind == TierKind::ram) {
        const uint8_t* src = ram_slab_.data() + size_t(loc.ram_slot) * slot_bytes_;
        body.assign(src, src + loc.stored_bytes);
    } else {
        auto raw = read_file(disk_file(digest));
        if (!raw.ok()) return raw.status();
        auto container = parse_chunk_container(ByteSpan(raw.value().data(), raw.value().size()));
        if (!container.ok()) return container.status();
        body.assign(container.value().body.begin(), container.value().body.end());
    }
    std::vector<uint8_t> payload;
    if (loc.codec.empty()) {
        payload = std::move(body);
    } else {
        const Codec* old_codec = find_codec(loc.codec);
        if (!old_codec) return Status{Errc::unknown_codec, loc.codec};
        auto decoded = old_codec->decode(ByteSpan(body.data(), body.size()));
        if (!decoded.ok()) return decoded.status();
        payload = std::move(decoded.value());
    }

    std::vector<uint8_t> blob = codec->encode(ByteSpan(payload.data(), payload.size()));
    if (tier.kind == TierKind::ram) {
        if (blob.size() > slot_bytes_) return Status{Errc::invalid_argument, "blob exceeds slot"};
        std::memcpy(ram_slab_.data() + size_t(loc.ram_slot) * slot_bytes_, blob.data(),
                    blob.size());
        loc.stored_bytes = blob.size();
        loc.codec = codec_name;
        touch(entry);
        return loc.stored_bytes;
    }

    ChunkRecordInfo info;
    info.digest = digest;
    info.model_tag_hash = model_tag_hash(cfg_.model.model_tag);
    info.token_count = entry.token_count;
    info.num_layers = entry.num_layers;
    info.bytes_per_token = entry.bytes_per_token;
    auto record = encode_chunk_container(info, ByteSpan(blob.data(), blob.size()));
    Status st = write_file_atomic(disk_file(digest), ByteSpan(record.data(), record.size()),
                                  cfg_.fsync_on_write);
    if (!st.ok()) return st;
    disk_used_ = disk_used_ - loc.stored_bytes + record.size();
    loc.stored_bytes = record.size();
    loc.codec = codec_name;
    touch(entry);
    return loc.stored_bytes;
}

Status TieredStore::decode_open(QueryId query, KeyChain chain,
                                const std::vector<TokenId>& preload_tokens,
                                const std::vector<ByteSpan>& preload_layers,
                                const std::vector<TierId>& tiers, bool pin) {
    if (preload_tokens.size() >= cfg_.chunk_size) {
        return Status{Errc::invalid_argument, "preload must be a partial chunk"};
    }
    if (!preload_tokens.empty() && preload_layers.size() != cfg_.model.num_layers) {
        return Status{Errc::invalid_argument, "preload layer count"};
    }
    size_t expect = preload_tokens.size() * cfg_.model.bytes_per_token_per_layer;
    for (const auto& span : preload_layers) {
        if (span.size() != expect) return Status{Errc::invalid_argument, "preload layer bytes"};
    }

    std::lock_guard lock(decode_mu_);
    if (decode_.count(query)) return Status{Errc::duplicate_key, "decode already open"};
    DecodeState state{std::move(chain), preload_tokens, {}, tiers, pin, {}, {}};
    state.layers.resize(cfg_.model.num_layers);
    for (auto& l : state.layers) l.reserve(cfg_.model.chunk_layer_bytes(cfg_.chunk_size));
    for (size_t i = 0; i < preload_layers.size(); ++i) {
        state.layers[i].assign(preload_layers[i].begin(), preload_layers[i].end());
    }
    decode_.emplace(query, std::move(state));
    return Status::success();
}

std::optional<ChunkKey> TieredStore::decode_flush(DecodeState& state) {
    if (state.tokens.empty()) return std::nullopt;
    ChunkKey key = state.chain.next(state.tokens);
    KVChunkBuilder builder(key, uint32_t(state.tokens.size()), cfg_.model.num_layers,
                           cfg_.model.bytes_per_token_per_layer);
    for (uint32_t l = 0; l < cfg_.model.num_layers; ++l) {
        builder.set_layer(l, ByteSpan(state.layers[l].data(), state.layers[l].size()));
    }
    state.puts.push_back(put(std::move(builder).seal(), state.tiers, state.pin));
    state.flushed.push_back(key);
    state.tokens.clear();
    for (auto& l : state.layers) l.clear();
    return key;
}

Result<std::optional<ChunkKey>> TieredStore::decode_append(QueryId query, TokenId token,
                                                           const std::vector<ByteSpan>& per_layer) {
    std::lock_guard lock(decode_mu_);
    auto it = decode_.find(query);
    if (it == decode_.end()) return Status{Errc::unknown_query, "decode not open"};
    if (per_layer.size() != cfg_.model.num_layers) {
        return Status{Errc::invalid_argument, "layer count"};
    }
    for (const auto& span : per_layer) {
        if (span.size() != cfg_.model.bytes_per_token_per_layer) {
            return Status{Errc::invalid_argument, "token bytes"};
        }
    }
    DecodeState& state = it->second;
    state.tokens.push_back(token);
    for (uint32_t l = 0; l < cfg_.model.num_layers; ++l) {
        state.layers[l].insert(state.layers[l].end(), per_layer[l].begin(), per_layer[l].end());
    }
    std::optional<ChunkKey> flushed;
    if (state.tokens.size() == cfg_.chunk_size) flushed = decode_flush(state);
    return flushed;
}

Result<std::vector<ChunkKey>> TieredStore::decode_finish(QueryId query) {
    std::unique_lock lock(decode_mu_);
    auto it = decode_.find(query);
    if (it == decode_.end()) return Status{Errc::unknown_query, "decode not open"};
    decode_flush(it->second);
    DecodeState state = std::move(it->second);
    decode_.erase(it);
    lock.unlock();
    for (const auto& handle : state.puts) handle.wait();
    return state.flushed;
}

StoreStats TieredStore::stats() const {
    std::lock_guard lock(mu_);
    StoreStats s;
    s.entries = index_.size();
    s.ram_slots_total = ram_slab_.size() / (slot_bytes_ ? slot_bytes_ : 1);
    s.ram_slots_used = s.ram_slots_total - free_slots_.size();
    s.disk_used_bytes = disk_used_;
    for (const auto& [_, entry] : index_) {
        for (const auto& [tier, loc] : entry.tiers) {
            if (loc.state != Loc::State::present) continue;
            switch (tier.kind) {
                case TierKind::ram:
                    s.ram_entries++;
                    break;
                case TierKind::disk:
                    s.disk_entries++;
                    break;
                case TierKind::remote:
                    s.remote_entries++;
                    break;
            }
        }
    }
    return s;
}

}  // namespace tierkv
