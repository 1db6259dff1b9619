#include "tierkv/connector.hpp"

#include <algorithm>
#include <chrono>
#include <cstring>
#include <thread>

namespace tierkv {

namespace detail {

struct LayerGate {
    bool launched = false;
    bool done = false;
};

struct PerQueryState {
    size_t loaded = 0;
    std::vector<std::vector<uint8_t>> assemblies;  // store-plan payloads, layer-major
    std::vector<PutHandle> put_handles;
    std::vector<std::pair<ChunkKey, Status>> store_results;
};

struct BatchState {
    TransferMode mode = TransferMode::layerwise;
    uint32_t num_layers = 0;
    std::vector<QueryPlan> plans;
    std::unordered_map<QueryId, PerQueryState> per_query;

    std::mutex mu;
    std::condition_variable cv;
    std::vector<LayerGate> load_gates;
    std::vector<bool> store_done;
    uint32_t next_store_layer = 0;
    bool stores_sealed = false;
    bool stores_waited = false;
};

}  // namespace detail

using detail::BatchState;

TransferMode ConnectorMetadata::mode() const {
    std::lock_guard lock(state_->mu);
    return state_->mode;
}

const std::vector<QueryPlan>& ConnectorMetadata::plans() const { return state_->plans; }

size_t ConnectorMetadata::loaded_tokens(QueryId id) const {
    std::lock_guard lock(state_->mu);
    auto it = state_->per_query.find(id);
    return it == state_->per_query.end() ? 0 : it->second.loaded;
}

std::vector<std::pair<ChunkKey, Status>> ConnectorMetadata::store_results(QueryId id) const {
    std::lock_guard lock(state_->mu);
    auto it = state_->per_query.find(id);
    if (it == state_->per_query.end()) return {};
    return it->second.store_results;
}

Connector::Connector(TieredStore& store, PagedKVStore& pages, Config cfg)
    : store_(store), pages_(pages), cfg_(std::move(cfg)), pool_(cfg_.io_threads) {}

Connector::Connector(TieredStore& store, PagedKVStore& pages)
    : Connector(store, pages, Config{}) {}

Connector::~Connector() { drain_prefetch(); }

size_t Connector::get_num_new_matched_tokens(QueryId id, TokenSpanView prompt) {
    const auto& cfg = store_.config();
    KeyIndex index = [this](const ChunkKey& key) { return !store_.contains(key.digest).empty(); };
    size_t lpm = longest_prefix_match(prompt, cfg.chunk_size, cfg.model.model_tag, index);
    size_t cap = prompt.empty() ? 0 : prompt.size() - 1;
    size_t matched = std::min(lpm, cap);

    std::lock_guard lock(mu_);
    QueryState& qs = queries_[id];
    qs.prompt.assign(prompt.begin(), prompt.end());
    qs.lpm = lpm;
    qs.matched = matched;
    return matched;
}

Status Connector::update_state_after_alloc(QueryId id, size_t blocks,
                                           size_t num_external_blocks) {
    std::lock_guard lock(mu_);
    auto it = queries_.find(id);
    if (it == queries_.end()) return Status{Errc::invalid_argument, "unknown query"};
    size_t page_tokens = store_.config().model.page_tokens;
    size_t needed = (it->second.matched + page_tokens - 1) / page_tokens;
    if (num_external_blocks != needed)
        return Status{Errc::invalid_argument, "external block count mismatch"};
    if (blocks < needed) return Status{Errc::invalid_argument, "inconsistent alloc"};
    it->second.blocks = blocks;
    return Status::success();
}

std::vector<ChunkDescriptor> Connector::plan_stores(TokenSpanView prompt) const {
    const auto& cfg = store_.config();
    std::vector<ChunkDescriptor> out;
    auto keys = chunk_keys(prompt, cfg.chunk_size, cfg.model.model_tag);
    auto spans = chunk_tokens(prompt, cfg.chunk_size);
    for (size_t i = 0; i < keys.size(); ++i) {
        if (!store_.contains(keys[i].digest).empty()) continue;
        out.push_back({keys[i], spans[i], uint32_t(spans[i].length())});
    }
    return out;
}

ConnectorMetadata Connector::build_connector_meta(const SchedulerOutput& out) {
    const auto& cfg = store_.config();
    auto batch = std::make_shared<BatchState>();
    batch->mode = cfg_.mode;
    batch->num_layers = cfg.model.num_layers;
    batch->load_gates.resize(cfg.model.num_layers);
    batch->store_done.assign(cfg.model.num_layers, false);

    for (const auto& sq : out.queries) {
        size_t lpm = 0, matched = 0;
        {
            std::lock_guard lock(mu_);
            QueryState& qs = queries_[sq.id];
            qs.prompt = sq.prompt;
            qs.batch = batch;
            lpm = qs.lpm;
            matched = qs.matched;
        }

        QueryPlan plan;
        plan.id = sq.id;
        plan.prompt_tokens = sq.prompt.size();
        plan.matched_tokens = matched;

        // Load descriptors: stored chunking of the uncapped match, spans
        // clipped to the capped match.
        TokenSpanView prompt(sq.prompt);
        auto stored_keys = chunk_keys(prompt.first(lpm), cfg.chunk_size, cfg.model.model_tag);
        auto stored_spans = chunk_tokens(prompt.first(lpm), cfg.chunk_size);
        for (size_t i = 0; i < stored_keys.size(); ++i) {
            ChunkSpan span = stored_spans[i];
            uint32_t record_tokens = uint32_t(span.length());
            if (span.start >= matched) break;
            span.end = std::min(span.end, matched);
            plan.load_plan.push_back({stored_keys[i], span, record_tokens});
        }
        plan.store_plan = plan_stores(prompt);

        detail::PerQueryState pq;
        pq.loaded = matched;
        pq.assemblies.resize(plan.store_plan.size());
        for (size_t i = 0; i < plan.store_plan.size(); ++i) {
            pq.assemblies[i].resize(plan.store_plan[i].span.length() * size_t(cfg.model.num_layers) *
                                    cfg.model.bytes_per_token_per_layer);
        }
        batch->per_query.emplace(sq.id, std::move(pq));
        batch->plans.push_back(std::move(plan));
    }

    ConnectorMetadata meta;
    meta.state_ = std::move(batch);
    return meta;
}

namespace {

// Pages covering tokens [span.start, span.end) of one layer.
std::vector<PageId> span_pages(const std::vector<PageId>& layer_pages, ChunkSpan span,
                               size_t page_tokens) {
    size_t first = span.start / page_tokens;
    size_t last = (span.end + page_tokens - 1) / page_tokens;
    return std::vector<PageId>(layer_pages.begin() + std::min(first, layer_pages.size()),
                               layer_pages.begin() + std::min(last, layer_pages.size()));
}

}  // namespace

Status Connector::run_load_layer(BatchState& batch, uint32_t layer) {
    const auto& model = store_.config().model;
    if (cfg_.load_delay_per_layer > 0)
        std::this_thread::sleep_for(std::chrono::duration<double>(cfg_.load_delay_per_layer));

    for (const auto& plan : batch.plans) {
        if (plan.load_plan.empty()) continue;
        size_t total = 0;
        for (const auto& desc : plan.load_plan)
            total += desc.span.length() * model.bytes_per_token_per_layer;
        auto buf = staging_.create(std::vector<uint8_t>(total));
        auto region = buf.bytes();

        size_t safe = plan.matched_tokens;
        size_t offset = 0;
        auto layer_page_list = pages_.layer_pages(plan.id, layer);
        for (const auto& desc : plan.load_plan) {
            auto slice = store_.get_layer(desc.key.digest, layer);
            size_t want = desc.span.length() * model.bytes_per_token_per_layer;
            if (!slice.ok() ||
                slice.value().size() != size_t(desc.record_tokens) * model.bytes_per_token_per_layer) {
                safe = desc.span.start;
                break;
            }
            std::memcpy(const_cast<uint8_t*>(region.data()) + offset, slice.value().data(), want);
            auto pages = span_pages(layer_page_list, desc.span, model.page_tokens);
            Status st = pages_.scatter_tokens(ByteSpan(region.data() + offset, want), pages, layer,
                                              desc.span.length());
            if (!st.ok()) {
                safe = desc.span.start;
                break;
            }
            offset += want;
        }

        std::lock_guard lock(batch.mu);
        auto& pq = batch.per_query.at(plan.id);
        pq.loaded = std::min(pq.loaded, safe);
    }
    return Status::success();
}

void Connector::launch_load_layer(std::shared_ptr<BatchState> batch, uint32_t layer) {
    if (layer >= batch->num_layers) return;
    {
        std::lock_guard lock(batch->mu);
        auto& gate = batch->load_gates[layer];
        if (gate.launched) return;
        gate.launched = true;
    }
    pool_.submit([this, batch, layer] {
        run_load_layer(*batch, layer);
        {
            std::lock_guard lock(batch->mu);
            batch->load_gates[layer].done = true;
        }
        batch->cv.notify_all();
    });
}

Status Connector::start_load_kv(ConnectorMetadata& meta) {
    if (!meta) return Status{Errc::invalid_argument, "empty metadata"};
    auto batch = meta.state_;
    const auto& model = store_.config().model;

    // A batch whose single-layer staging cannot be reserved degrades to
    // blocking mode rather than failing.
    size_t layer_bytes = 0;
    for (const auto& plan : batch->plans)
        for (const auto& desc : plan.load_plan)
            layer_bytes += desc.span.length() * model.bytes_per_token_per_layer;
    bool degrade = false;
    if (size_t(staging_.live_bytes()) + layer_bytes > cfg_.staging_budget_bytes) degrade = true;

    {
        std::lock_guard lock(batch->mu);
        if (degrade) batch->mode = TransferMode::blocking;
    }

    if (batch->mode == TransferMode::blocking) {
        for (uint32_t l = 0; l < batch->num_layers; ++l) run_load_layer(*batch, l);
        std::lock_guard lock(batch->mu);
        for (auto& gate : batch->load_gates) gate.launched = gate.done = true;
        return Status::success();
    }
    launch_load_layer(batch, 0);
    return Status::success();
}

Status Connector::wait_load_kv(ConnectorMetadata& meta, uint32_t layer) {
    if (!meta) return Status{Errc::invalid_argument, "empty metadata"};
    auto batch = meta.state_;
    if (layer >= batch->num_layers) return Status{Errc::invalid_argument, "layer out of range"};
    launch_load_layer(batch, layer);
    {
        std::unique_lock lock(batch->mu);
        batch->cv.wait(lock, [&] { return batch->load_gates[layer].done; });
    }
    launch_load_layer(batch, layer + 1);
    return Status::success();
}

Status Connector::start_store_kv(ConnectorMetadata& meta) {
    if (!meta) return Status{Errc::invalid_argument, "empty metadata"};
    auto batch = meta.state_;
    const auto& model = store_.config().model;

    uint32_t first_layer = 0, last_layer = 0;
    {
        std::lock_guard lock(batch->mu);
        if (batch->mode == TransferMode::blocking) {
            first_layer = 0;
            last_layer = batch->num_layers;
            batch->next_store_layer = batch->num_layers;
        } else {
            if (batch->next_store_layer >= batch->num_layers) return Status::success();
            first_layer = batch->next_store_layer;
            last_layer = ++batch->next_store_layer;
        }
    }

    for (uint32_t layer = first_layer; layer < last_layer; ++layer) {
        for (const auto& plan : batch->plans) {
            if (plan.store_plan.empty()) continue;
            size_t total = 0;
            for (const auto& desc : plan.store_plan)
                total += desc.span.length() * model.bytes_per_token_per_layer;
            auto buf = staging_.create(std::vector<uint8_t>(total));
            auto region = buf.bytes();
            auto layer_page_list = pages_.layer_pages(plan.id, layer);

            // per_query's shape is frozen at build; assemblies are only
            // touched from this (serial) store path.
            size_t offset = 0;
            auto& pq = batch->per_query.at(plan.id);
            for (size_t i = 0; i < plan.store_plan.size(); ++i) {
                const auto& desc = plan.store_plan[i];
                size_t want = desc.span.length() * model.bytes_per_token_per_layer;
                auto pages = span_pages(layer_page_list, desc.span, model.page_tokens);
                MutByteSpan out(const_cast<uint8_t*>(region.data()) + offset, want);
                Status st = pages_.gather_tokens_into(pages, layer, desc.span.length(), out);
                if (!st.ok()) return st;
                std::memcpy(pq.assemblies[i].data() + size_t(layer) * want, out.data(), want);
                offset += want;
            }
        }
        std::lock_guard lock(batch->mu);
        batch->store_done[layer] = true;
    }

    bool seal = false;
    {
        std::lock_guard lock(batch->mu);
        if (batch->next_store_layer >= batch->num_layers && !batch->stores_sealed) {
            batch->stores_sealed = true;
            seal = true;
        }
    }
    if (seal) {
        for (const auto& plan : batch->plans) {
            if (plan.store_plan.empty()) continue;
            auto& pq = batch->per_query.at(plan.id);
            std::vector<PutSpec> specs;
            for (size_t i = 0; i < plan.store_plan.size(); ++i) {
                const auto& desc = plan.store_plan[i];
                KVChunk chunk = KVChunk::from_payload(
                    desc.key, desc.record_tokens, model.num_layers,
                    model.bytes_per_token_per_layer, std::move(pq.assemblies[i]));
                specs.push_back({std::move(chunk), cfg_.store_tiers, cfg_.pin_stores});
            }
            pq.put_handles = store_.batch_put(specs);
        }
    }

    if (batch->mode == TransferMode::blocking) {
        // Synchronous: the store completes before control returns.
        return wait_store_kv(meta, batch->num_layers - 1);
    }
    return Status::success();
}

Status Connector::wait_store_kv(ConnectorMetadata& meta, uint32_t layer) {
    if (!meta) return Status{Errc::invalid_argument, "empty metadata"};
    auto batch = meta.state_;
    if (layer >= batch->num_layers) return Status{Errc::invalid_argument, "layer out of range"};
    {
        std::lock_guard lock(batch->mu);
        if (!batch->store_done[layer])
            return Status{Errc::invalid_argument, "store for layer not started"};
        if (layer + 1 < batch->num_layers || batch->stores_waited) return Status::success();
    }

    // Final wait: collect per-chunk tier statuses.
    for (const auto& plan : batch->plans) {
        auto& pq = batch->per_query.at(plan.id);
        std::vector<std::pair<ChunkKey, Status>> results;
        for (size_t i = 0; i < pq.put_handles.size(); ++i) {
            const PutResult& r = pq.put_handles[i].wait();
            Status st = Status::success();
            for (const auto& tier : r.tiers) {
                if (!tier.status.ok()) {
                    st = tier.status;
                    break;
                }
            }
            results.emplace_back(plan.store_plan[i].key, st);
        }
        std::lock_guard lock(batch->mu);
        pq.store_results = std::move(results);
    }
    std::lock_guard lock(batch->mu);
    batch->stores_waited = true;
    return Status::success();
}

void Connector::prefetch(TokenSpanView prompt) {
    const auto& cfg = store_.config();
    KeyIndex index = [this](const ChunkKey& key) { return !store_.contains(key.digest).empty(); };
    size_t lpm = longest_prefix_match(prompt, cfg.chunk_size, cfg.model.model_tag, index);
    if (lpm == 0) return;
    auto keys = chunk_keys(prompt.first(lpm), cfg.chunk_size, cfg.model.model_tag);

    for (const auto& key : keys) {
        auto tiers = store_.contains(key.digest);
        bool already_fast = false;
        for (const auto& t : tiers)
            for (const auto& want : cfg_.prefetch_tiers)
                if (t == want) already_fast = true;
        if (tiers.empty() || already_fast) continue;

        Digest digest = key.digest;
        {
            std::lock_guard lock(prefetch_mu_);
            if (prefetch_seen_.count(digest)) continue;
            prefetch_seen_[digest] = true;
            prefetch_inflight_++;
        }
        pool_.submit([this, digest] {
            auto chunk = store_.get(digest);
            if (chunk.ok()) store_.put(chunk.value(), cfg_.prefetch_tiers).wait();
            {
                std::lock_guard lock(prefetch_mu_);
                prefetch_inflight_--;
                prefetch_seen_.erase(digest);
            }
            prefetch_cv_.notify_all();
        });
    }
}

void Connector::drain_prefetch() {
    std::unique_lock lock(prefetch_mu_);
    prefetch_cv_.wait(lock, [this] { return prefetch_inflight_ == 0; });
}

Status Connector::begin_decode(QueryId id) {
    const auto& cfg = store_.config();
    std::vector<TokenId> prompt;
    {
        std::lock_guard lock(mu_);
        auto it = queries_.find(id);
        if (it == queries_.end() || it->second.prompt.empty())
            return Status{Errc::invalid_argument, "no planned query"};
        if (it->second.decode_opened) return Status{Errc::duplicate_key, "decode already open"};
        prompt = it->second.prompt;
    }

    size_t cs = cfg.chunk_size;
    size_t full = prompt.size() / cs;
    KeyChain chain(cfg.model.model_tag, cs);
    TokenSpanView view(prompt);
    for (size_t i = 0; i < full; ++i) chain.next(view.subspan(i * cs, cs));

    std::vector<TokenId> tail(prompt.begin() + full * cs, prompt.end());
    std::vector<std::vector<uint8_t>> tail_layers;
    std::vector<ByteSpan> tail_spans;
    if (!tail.empty()) {
        tail_layers.resize(cfg.model.num_layers);
        for (uint32_t l = 0; l < cfg.model.num_layers; ++l) {
            auto layer_list = pages_.layer_pages(id, l);
            auto pages = span_pages(layer_list, {full * cs, prompt.size()}, cfg.model.page_tokens);
            auto bytes = pages_.gather_tokens(pages, l, tail.size());
            if (!bytes.ok()) return bytes.status();
            tail_layers[l] = std::move(bytes.value());
            tail_spans.emplace_back(tail_layers[l].data(), tail_layers[l].size());
        }
    }

    Status st = store_.decode_open(id, std::move(chain), tail, tail_spans, cfg_.store_tiers,
                                   cfg_.pin_stores);
    if (!st.ok()) return st;
    std::lock_guard lock(mu_);
    queries_[id].decode_opened = true;
    return Status::success();
}

Status Connector::append_decode(QueryId id, TokenId token,
                                const std::vector<ByteSpan>& per_layer) {
    auto flushed = store_.decode_append(id, token, per_layer);
    return flushed.ok() ? Status::success() : flushed.status();
}

Result<std::vector<ChunkKey>> Connector::finish_query(QueryId id) {
    bool opened = false;
    {
        std::lock_guard lock(mu_);
        auto it = queries_.find(id);
        if (it != queries_.end()) opened = it->second.decode_opened;
    }
    std::vector<ChunkKey> keys;
    if (opened) {
        auto flushed = store_.decode_finish(id);
        if (!flushed.ok()) return flushed.status();
        keys = std::move(flushed.value());
    }
    std::lock_guard lock(mu_);
    queries_.erase(id);
    return keys;
}

}  // namespace tierkv
