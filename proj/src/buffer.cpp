#include "tierkv/buffer.hpp"

namespace tierkv {

void SharedBufferRef::retain() {
    if (!buf_) return;
    buf_->count_.fetch_add(1, std::memory_order_relaxed);
    buf_->pool_->outstanding_refs_.fetch_add(1, std::memory_order_relaxed);
}

void SharedBufferRef::release() {
    if (!buf_) return;
    SharedBuffer* buf = buf_;
    buf->pool_->outstanding_refs_.fetch_sub(1, std::memory_order_relaxed);
    if (buf->count_.fetch_sub(1, std::memory_order_acq_rel) == 1) {
        buf->pool_->on_release(buf);
    }
}

std::vector<SharedBufferRef> BufferPool::create_shared(std::vector<uint8_t> data, uint32_t n) {
    if (n == 0) return {};
    auto* buf = new SharedBuffer(this, std::move(data), n);
    live_regions_.fetch_add(1, std::memory_order_relaxed);
    int64_t now = live_bytes_.fetch_add(int64_t(buf->bytes().size()), std::memory_order_relaxed) +
                  int64_t(buf->bytes().size());
    int64_t peak = peak_bytes_.load(std::memory_order_relaxed);
    while (now > peak && !peak_bytes_.compare_exchange_weak(peak, now)) {
    }
    outstanding_refs_.fetch_add(n, std::memory_order_relaxed);
    std::vector<SharedBufferRef> refs;
    refs.reserve(n);
    for (uint32_t i = 0; i < n; ++i) refs.push_back(SharedBufferRef(buf));
    return refs;
}

void BufferPool::on_release(SharedBuffer* buf) {
    live_regions_.fetch_sub(1, std::memory_order_relaxed);
    live_bytes_.fetch_sub(int64_t(buf->bytes().size()), std::memory_order_relaxed);
    delete buf;
}

}  // namespace tierkv
