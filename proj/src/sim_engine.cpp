#include "tierkv/sim_engine.hpp"

#include <algorithm>
#include <cstring>
#include <deque>

#include "tierkv/cache_service.hpp"
#include "tierkv/chunk_file.hpp"
#include "tierkv/pd_staging.hpp"
#include "tierkv/wire_client.hpp"

namespace tierkv {

const char* event_kind_name(EngineEvent::Kind kind) {
    switch (kind) {
        case EngineEvent::Kind::admitted: return "admitted";
        case EngineEvent::Kind::matched: return "matched";
        case EngineEvent::Kind::update_state: return "update_state";
        case EngineEvent::Kind::build_meta: return "build_meta";
        case EngineEvent::Kind::start_load: return "start_load";
        case EngineEvent::Kind::wait_load: return "wait_load";
        case EngineEvent::Kind::compute_begin: return "compute_begin";
        case EngineEvent::Kind::compute_end: return "compute_end";
        case EngineEvent::Kind::start_store: return "start_store";
        case EngineEvent::Kind::wait_store: return "wait_store";
        case EngineEvent::Kind::decode_token: return "decode_token";
        case EngineEvent::Kind::finished: return "finished";
    }
    return "?";
}

SimEngine::SimEngine(PagedKVStore& pages, Clock& clock, EngineConfig cfg)
    : pages_(pages), clock_(clock), cfg_(cfg), seed_(model_seed_of(pages.spec())) {}

SimEngine::SimEngine(PagedKVStore& pages, Connector& connector, Clock& clock, EngineConfig cfg)
    : pages_(pages), conn_(&connector), clock_(clock), cfg_(cfg),
      seed_(model_seed_of(pages.spec())) {}

void SimEngine::emit(EngineEvent::Kind kind, QueryId query, uint32_t layer) {
    events_.push_back({kind, query, layer, clock_.now()});
}

void SimEngine::write_tokens(QueryId id, uint32_t layer, TokenSpanView tokens, size_t first_pos) {
    if (tokens.empty()) return;
    const auto& sp = pages_.spec();
    const size_t pt = sp.page_tokens;
    const size_t bpt = sp.bytes_per_token_per_layer;
    auto layer_list = pages_.layer_pages(id, layer);
    std::vector<uint8_t> buf;
    size_t pos = first_pos;
    const size_t end = first_pos + tokens.size();
    while (pos < end) {
        size_t page_idx = pos / pt;
        size_t seg_end = std::min(end, (page_idx + 1) * pt);
        size_t n = seg_end - pos;
        buf.resize(n * bpt);
        synth_layer_kv(seed_, tokens.subspan(pos - first_pos, n), layer, pos, uint32_t(bpt),
                       MutByteSpan(buf.data(), buf.size()));
        auto dst = pages_.page_data(layer_list[page_idx]);
        std::memcpy(dst.data() + (pos - page_idx * pt) * bpt, buf.data(), n * bpt);
        pages_.mark_populated(layer_list[page_idx], layer);
        pos = seg_end;
    }
}

Status SimEngine::verify_loaded(const Running& r, uint32_t layer, size_t loaded) {
    if (loaded == 0) return Status::success();
    const auto& sp = pages_.spec();
    auto layer_list = pages_.layer_pages(r.query.id, layer);
    size_t covered = (loaded + sp.page_tokens - 1) / sp.page_tokens;
    layer_list.resize(std::min(covered, layer_list.size()));
    auto got = pages_.gather_tokens(layer_list, layer, loaded);
    if (!got.ok()) return got.status();
    std::vector<uint8_t> want(loaded * sp.bytes_per_token_per_layer);
    synth_layer_kv(seed_, TokenSpanView(r.query.prompt).first(loaded), layer, 0,
                   sp.bytes_per_token_per_layer, MutByteSpan(want.data(), want.size()));
    if (!std::equal(want.begin(), want.end(), got.value().begin()))
        return Status{Errc::corrupt_chunk,
                      "loaded kv differs from recomputation at layer " + std::to_string(layer)};
    return Status::success();
}

bool SimEngine::admit(Running& r) {
    const auto& sp = pages_.spec();
    size_t need_tokens = r.query.prompt.size() + r.query.max_output;
    r.blocks = (need_tokens + sp.page_tokens - 1) / sp.page_tokens;
    auto alloc = pages_.alloc_pages(r.query.id, r.blocks * sp.num_layers);
    if (!alloc.ok()) return false;
    for (uint32_t l = 0; l < sp.num_layers; ++l) {
        std::vector<PageId> slice(alloc.value().begin() + size_t(l) * r.blocks,
                                  alloc.value().begin() + size_t(l + 1) * r.blocks);
        pages_.bind_layer(r.query.id, l, slice);
    }
    return true;
}

void SimEngine::prefill_batch(std::vector<Running>& batch, ConnectorMetadata& meta) {
    const auto& sp = pages_.spec();
    const uint32_t NL = sp.num_layers;
    QueryId tag = batch.size() == 1 ? batch[0].query.id : kBatchEvent;

    if (!conn_) {
        for (uint32_t l = 0; l < NL; ++l) {
            emit(EngineEvent::Kind::compute_begin, tag, l);
            size_t total_new = 0;
            for (auto& r : batch) {
                write_tokens(r.query.id, l, TokenSpanView(r.query.prompt), 0);
                total_new += r.query.prompt.size();
            }
            clock_.sleep_for(cfg_.cost.layer_cost(total_new, NL));
            emit(EngineEvent::Kind::compute_end, tag, l);
        }
        return;
    }

    conn_->start_load_kv(meta);
    emit(EngineEvent::Kind::start_load, tag);
    const bool layerwise = meta.mode() == TransferMode::layerwise;

    for (uint32_t l = 0; l < NL; ++l) {
        if (layerwise) {
            double t0 = clock_.now();
            conn_->wait_load_kv(meta, l);
            double waited = clock_.now() - t0;
            for (auto& r : batch) r.rec.load_stall += waited;
            emit(EngineEvent::Kind::wait_load, tag, l);
        }

        emit(EngineEvent::Kind::compute_begin, tag, l);
        size_t total_new = 0;
        for (auto& r : batch) {
            size_t loaded = meta.loaded_tokens(r.query.id);
            if (cfg_.verify_pages && r.rec.status.ok()) {
                Status v = verify_loaded(r, l, loaded);
                if (!v.ok()) r.rec.status = v;
            }
            TokenSpanView prompt(r.query.prompt);
            write_tokens(r.query.id, l, prompt.subspan(loaded), loaded);
            total_new += prompt.size() - loaded;
        }
        clock_.sleep_for(cfg_.cost.layer_cost(total_new, NL));
        emit(EngineEvent::Kind::compute_end, tag, l);

        if (layerwise) {
            if (l > 0) {
                conn_->wait_store_kv(meta, l - 1);
                emit(EngineEvent::Kind::wait_store, tag, l - 1);
            }
            conn_->start_store_kv(meta);
            emit(EngineEvent::Kind::start_store, tag, l);
        }
    }

    if (layerwise) {
        conn_->wait_store_kv(meta, NL - 1);
        emit(EngineEvent::Kind::wait_store, tag, NL - 1);
    } else {
        // Synchronous store of all layers after the full forward pass.
        conn_->start_store_kv(meta);
        emit(EngineEvent::Kind::start_store, tag, 0);
    }
}

void SimEngine::decode_query(Running& r) {
    const size_t n = r.query.max_output;
    const size_t len = r.query.prompt.size();
    const auto& sp = pages_.spec();

    r.rec.first_token = clock_.now();
    if (n == 0) return;
    uint64_t fp = prompt_fingerprint(seed_, TokenSpanView(r.query.prompt));
    r.rec.output.push_back(synth_output_token(fp, 0, sp.vocab_size));

    if (conn_ && r.rec.status.ok()) {
        Status st = conn_->begin_decode(r.query.id);
        if (!st.ok()) r.rec.status = st;
    }

    double last_emit = r.rec.first_token;
    std::vector<std::vector<uint8_t>> layer_bytes(sp.num_layers);
    for (auto& b : layer_bytes) b.resize(sp.bytes_per_token_per_layer);

    for (size_t i = 0; i < n; ++i) {
        clock_.sleep_for(cfg_.cost.decode_cost());
        TokenId tok = r.rec.output[i];
        std::vector<ByteSpan> spans;
        spans.reserve(sp.num_layers);
        for (uint32_t l = 0; l < sp.num_layers; ++l) {
            TokenId one[1] = {tok};
            write_tokens(r.query.id, l, TokenSpanView(one, 1), len + i);
            synth_token_kv(seed_, tok, l, len + i,
                           MutByteSpan(layer_bytes[l].data(), layer_bytes[l].size()));
            spans.emplace_back(layer_bytes[l].data(), layer_bytes[l].size());
        }
        if (conn_ && r.rec.status.ok()) {
            Status st = conn_->append_decode(r.query.id, tok, spans);
            if (!st.ok()) r.rec.status = st;
        }
        emit(EngineEvent::Kind::decode_token, r.query.id, uint32_t(i));
        if (i + 1 < n) {
            r.rec.output.push_back(synth_output_token(fp, i + 1, sp.vocab_size));
            double now = clock_.now();
            r.rec.itl.push_back(now - last_emit);
            last_emit = now;
        }
    }
}

void SimEngine::run_batch(std::vector<Running>& batch) {
    QueryId tag = batch.size() == 1 ? batch[0].query.id : kBatchEvent;
    ConnectorMetadata meta;
    if (conn_) {
        SchedulerOutput out;
        for (auto& r : batch) out.queries.push_back({r.query.id, r.query.prompt});
        meta = conn_->build_connector_meta(out);
        emit(EngineEvent::Kind::build_meta, tag);
    }

    prefill_batch(batch, meta);

    for (auto& r : batch) {
        if (conn_) r.rec.loaded_tokens = meta.loaded_tokens(r.query.id);
        decode_query(r);
        if (conn_) {
            auto keys = conn_->finish_query(r.query.id);
            if (!keys.ok() && r.rec.status.ok()) r.rec.status = keys.status();
        }
        pages_.release_query(r.query.id);
        r.rec.finished = clock_.now();
        emit(EngineEvent::Kind::finished, r.query.id);
    }
}

std::vector<QueryRecord> SimEngine::run_schedule(const std::vector<SimQuery>& queries) {
    struct Pending {
        SimQuery query;
        size_t slot;
    };
    std::deque<Pending> fifo;
    {
        std::vector<Pending> sorted;
        sorted.reserve(queries.size());
        for (size_t i = 0; i < queries.size(); ++i) sorted.push_back({queries[i], i});
        std::stable_sort(sorted.begin(), sorted.end(),
                         [](const Pending& a, const Pending& b) {
                             return a.query.arrival < b.query.arrival;
                         });
        fifo.assign(sorted.begin(), sorted.end());
    }

    std::vector<QueryRecord> out(queries.size());
    const auto& sp = pages_.spec();

    while (!fifo.empty()) {
        double now = clock_.now();
        if (fifo.front().query.arrival > now) {
            clock_.sleep_for(fifo.front().query.arrival - now);
            continue;
        }

        std::vector<Running> batch;
        std::vector<size_t> slots;
        while (!fifo.empty() && batch.size() < std::max<size_t>(1, cfg_.max_concurrent) &&
               fifo.front().query.arrival <= clock_.now()) {
            Pending p = fifo.front();
            QueryRecord rec;
            rec.id = p.query.id;
            rec.arrival = p.query.arrival;
            rec.admitted = clock_.now();

            if (p.query.prompt.empty()) {
                rec.status = Status{Errc::invalid_argument, "empty prompt"};
                out[p.slot] = std::move(rec);
                fifo.pop_front();
                continue;
            }

            size_t need = p.query.prompt.size() + p.query.max_output;
            size_t blocks = (need + sp.page_tokens - 1) / sp.page_tokens;
            if (blocks * sp.num_layers > pages_.pool_pages()) {
                rec.status = Status{Errc::out_of_pages, "query exceeds page pool"};
                out[p.slot] = std::move(rec);
                fifo.pop_front();
                continue;
            }

            Running r{p.query, std::move(rec), 0};
            emit(EngineEvent::Kind::admitted, p.query.id);
            if (conn_) {
                r.rec.matched_tokens =
                    conn_->get_num_new_matched_tokens(p.query.id, TokenSpanView(p.query.prompt));
                emit(EngineEvent::Kind::matched, p.query.id);
            }
            if (!admit(r)) {
                if (batch.empty()) {
                    // Serial model: nothing in flight holds pages, so a
                    // failed head admission cannot resolve by waiting.
                    r.rec.status = Status{Errc::out_of_pages, "page pool exhausted"};
                    if (conn_) conn_->finish_query(p.query.id);
                    out[p.slot] = std::move(r.rec);
                    fifo.pop_front();
                    continue;
                }
                break;  // retried after the running batch completes
            }
            if (conn_) {
                size_t external =
                    (r.rec.matched_tokens + sp.page_tokens - 1) / sp.page_tokens;
                conn_->update_state_after_alloc(p.query.id, r.blocks, external);
                emit(EngineEvent::Kind::update_state, p.query.id);
            }
            batch.push_back(std::move(r));
            slots.push_back(p.slot);
            fifo.pop_front();
        }

        if (batch.empty()) continue;

        if (cfg_.prefetch_queued && conn_) {
            for (const auto& p : fifo) conn_->prefetch(TokenSpanView(p.query.prompt));
        }

        run_batch(batch);
        for (size_t i = 0; i < batch.size(); ++i) out[slots[i]] = std::move(batch[i].rec);
    }
    return out;
}

QueryRecord SimEngine::run_query(const SimQuery& query) {
    return run_schedule({query})[0];
}

// --- prefill/decode disaggregation ------------------------------------------

namespace {

std::vector<PageId> window_pages(const std::vector<PageId>& layer_pages, size_t start, size_t end,
                                 size_t page_tokens) {
    size_t first = start / page_tokens;
    size_t last = (end + page_tokens - 1) / page_tokens;
    return std::vector<PageId>(layer_pages.begin() + std::min(first, layer_pages.size()),
                               layer_pages.begin() + std::min(last, layer_pages.size()));
}

}  // namespace

Result<PdResult> run_pd(const SimQuery& query, SimEngine& prefiller, SimEngine& decoder,
                        WireClient& push, PdStaging& staging, PdGranularity granularity) {
    if (!prefiller.connector() || !decoder.connector())
        return Status{Errc::invalid_argument, "both engines need a connector"};
    const ModelSpec& sp = prefiller.spec();
    if (decoder.spec().model_tag != sp.model_tag)
        return Status{Errc::invalid_argument, "engines disagree on model"};

    Clock& clk = prefiller.clock();
    const auto& prompt = query.prompt;
    const size_t len = prompt.size();
    const size_t pt = sp.page_tokens;
    const size_t bpt = sp.bytes_per_token_per_layer;

    PdResult result;
    double t0 = clk.now();
    Status st = staging.register_query(query.id);
    if (!st.ok()) return st;

    SimQuery pq = query;
    pq.max_output = 0;
    pq.arrival = t0;
    QueryRecord prec = prefiller.run_query(pq);
    if (!prec.status.ok())
        return Status{prec.status.code, "prefill failed: " + prec.status.detail};
    double t1 = clk.now();

    // Push the prefiller's KV from its chunk store.
    TieredStore& pstore = prefiller.connector()->store();
    const size_t cs = pstore.config().chunk_size;
    auto keys = chunk_keys(TokenSpanView(prompt), cs, sp.model_tag);

    auto push_one = [&](uint32_t ordinal, bool last, std::vector<uint8_t> record) -> Status {
        result.payload_bytes += record.size();
        result.messages += 1;
        PdPushRequest req{query.id, ordinal, last, std::move(record)};
        auto reply = push.call_ok(Opcode::pd_push, encode_pd_push(req));
        if (!reply.ok())
            return Status{reply.status().code, "pd push rejected: " + reply.status().detail};
        return Status::success();
    };

    if (granularity == PdGranularity::chunk) {
        for (size_t i = 0; i < keys.size(); ++i) {
            auto got = pstore.get(keys[i].digest);
            if (!got.ok())
                return Status{Errc::chunk_missing,
                              "prefilled chunk absent: " + got.status().to_string()};
            st = push_one(uint32_t(i), i + 1 == keys.size(), encode_chunk_record(got.value()));
            if (!st.ok()) return st;
        }
    } else {
        size_t windows = (len + pt - 1) / pt;
        KVChunk cur;
        size_t cur_idx = size_t(-1);
        for (size_t w = 0; w < windows; ++w) {
            size_t wstart = w * pt;
            size_t wend = std::min(len, wstart + pt);
            size_t ci = wstart / cs;
            if (ci != cur_idx) {
                auto got = pstore.get(keys[ci].digest);
                if (!got.ok())
                    return Status{Errc::chunk_missing,
                                  "prefilled chunk absent: " + got.status().to_string()};
                cur = std::move(got.value());
                cur_idx = ci;
            }
            size_t in_chunk = wstart - ci * cs;
            std::vector<uint8_t> record;
            record.reserve((wend - wstart) * bpt * sp.num_layers);
            for (uint32_t l = 0; l < sp.num_layers; ++l) {
                ByteSpan slice = cur.layer(l).subspan(in_chunk * bpt, (wend - wstart) * bpt);
                record.insert(record.end(), slice.begin(), slice.end());
            }
            st = push_one(uint32_t(w), w + 1 == windows, std::move(record));
            if (!st.ok()) return st;
        }
    }
    double t2 = clk.now();

    // Decoder side: land, scatter, verify, decode.
    auto landed = staging.await(query.id);
    if (!landed.ok()) return landed.status();

    PagedKVStore& dpages = decoder.pages();
    size_t blocks = (len + query.max_output + pt - 1) / pt;
    auto alloc = dpages.alloc_pages(query.id, blocks * sp.num_layers);
    if (!alloc.ok()) return alloc.status();
    for (uint32_t l = 0; l < sp.num_layers; ++l) {
        std::vector<PageId> slice(alloc.value().begin() + size_t(l) * blocks,
                                  alloc.value().begin() + size_t(l + 1) * blocks);
        dpages.bind_layer(query.id, l, slice);
    }

    const auto& records = landed.value();
    if (granularity == PdGranularity::chunk) {
        for (size_t i = 0; i < records.size(); ++i) {
            auto parsed = parse_chunk_record(ByteSpan(records[i].data(), records[i].size()),
                                             sp.model_tag);
            if (!parsed.ok())
                return Status{parsed.status().code,
                              "pushed record unreadable: " + parsed.status().detail};
            const KVChunk& chunk = parsed.value();
            size_t start = i * cs;
            for (uint32_t l = 0; l < sp.num_layers; ++l) {
                auto plist = window_pages(dpages.layer_pages(query.id, l), start,
                                          start + chunk.token_count(), pt);
                st = dpages.scatter_tokens(chunk.layer(l), plist, l, chunk.token_count());
                if (!st.ok()) return st;
            }
        }
    } else {
        for (size_t w = 0; w < records.size(); ++w) {
            size_t wstart = w * pt;
            size_t wend = std::min(len, wstart + pt);
            size_t wtokens = wend - wstart;
            if (records[w].size() != wtokens * bpt * sp.num_layers)
                return Status{Errc::size_mismatch, "pushed window size"};
            for (uint32_t l = 0; l < sp.num_layers; ++l) {
                ByteSpan slice(records[w].data() + size_t(l) * wtokens * bpt, wtokens * bpt);
                auto plist = window_pages(dpages.layer_pages(query.id, l), wstart, wend, pt);
                st = dpages.scatter_tokens(slice, plist, l, wtokens);
                if (!st.ok()) return st;
            }
        }
    }

    // Byte oracle over the transferred prefix; outputs alone cannot catch a
    // corrupted transfer because they are prompt-pure.
    uint64_t seed = decoder.model_seed();
    for (uint32_t l = 0; l < sp.num_layers; ++l) {
        auto plist = window_pages(dpages.layer_pages(query.id, l), 0, len, pt);
        auto got = dpages.gather_tokens(plist, l, len);
        if (!got.ok()) return got.status();
        std::vector<uint8_t> want(len * bpt);
        synth_layer_kv(seed, TokenSpanView(prompt), l, 0, uint32_t(bpt),
                       MutByteSpan(want.data(), want.size()));
        if (want != got.value()) {
            dpages.release_query(query.id);
            return Status{Errc::corrupt_chunk,
                          "transferred kv differs from recomputation at layer " +
                              std::to_string(l)};
        }
    }

    uint64_t fp = prompt_fingerprint(seed, TokenSpanView(prompt));
    Connector* dconn = decoder.connector();
    if (query.max_output > 0) {
        result.output.push_back(synth_output_token(fp, 0, sp.vocab_size));
        dconn->get_num_new_matched_tokens(query.id, TokenSpanView(prompt));
        st = dconn->begin_decode(query.id);
        if (!st.ok()) {
            dpages.release_query(query.id);
            return st;
        }
        double last_emit = clk.now();
        std::vector<std::vector<uint8_t>> layer_bytes(sp.num_layers);
        for (auto& b : layer_bytes) b.resize(bpt);
        for (size_t i = 0; i < query.max_output; ++i) {
            clk.sleep_for(decoder.config().cost.decode_cost());
            TokenId tok = result.output[i];
            std::vector<ByteSpan> spans;
            spans.reserve(sp.num_layers);
            for (uint32_t l = 0; l < sp.num_layers; ++l) {
                TokenId one[1] = {tok};
                decoder.write_tokens(query.id, l, TokenSpanView(one, 1), len + i);
                synth_token_kv(seed, tok, l, len + i,
                               MutByteSpan(layer_bytes[l].data(), layer_bytes[l].size()));
                spans.emplace_back(layer_bytes[l].data(), layer_bytes[l].size());
            }
            st = dconn->append_decode(query.id, tok, spans);
            if (!st.ok()) {
                dpages.release_query(query.id);
                return st;
            }
            if (i + 1 < query.max_output) {
                result.output.push_back(synth_output_token(fp, i + 1, sp.vocab_size));
                double now = clk.now();
                result.itl.push_back(now - last_emit);
                last_emit = now;
            }
        }
        auto flushed = dconn->finish_query(query.id);
        if (!flushed.ok()) {
            dpages.release_query(query.id);
            return flushed.status();
        }
    }
    dpages.release_query(query.id);
    double t3 = clk.now();

    result.prefill = prec.finished - prec.admitted;
    result.transfer = t2 - t1;
    result.decode = t3 - t2;
    result.total = t3 - t0;
    return result;
}

}  // namespace tierkv
