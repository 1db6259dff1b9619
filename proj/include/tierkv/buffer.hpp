#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <utility>
#include <vector>

#include "tierkv/common.hpp"

namespace tierkv {

class BufferPool;

// One byte region shared by concurrent tier writers. The region is freed
// exactly when the reference count reaches zero.
class SharedBuffer {
public:
    ByteSpan bytes() const { return ByteSpan(data_.data(), data_.size()); }
    uint32_t count() const { return count_.load(std::memory_order_acquire); }

private:
    friend class BufferPool;
    friend class SharedBufferRef;

    SharedBuffer(BufferPool* pool, std::vector<uint8_t> data, uint32_t initial)
        : pool_(pool), data_(std::move(data)), count_(initial) {}

    BufferPool* pool_;
    std::vector<uint8_t> data_;
    std::atomic<uint32_t> count_;
};

// RAII holder of one reference.
class SharedBufferRef {
public:
    SharedBufferRef() = default;
    SharedBufferRef(const SharedBufferRef& o) : buf_(o.buf_) { retain(); }
    SharedBufferRef(SharedBufferRef&& o) noexcept : buf_(std::exchange(o.buf_, nullptr)) {}
    SharedBufferRef& operator=(SharedBufferRef o) noexcept {
        std::swap(buf_, o.buf_);
        return *this;
    }
    ~SharedBufferRef() { release(); }

    explicit operator bool() const { return buf_ != nullptr; }
    ByteSpan bytes() const { return buf_ ? buf_->bytes() : ByteSpan{}; }
    SharedBuffer* get() const { return buf_; }

    void reset() {
        release();
        buf_ = nullptr;
    }

private:
    friend class BufferPool;
    explicit SharedBufferRef(SharedBuffer* buf) : buf_(buf) {}

    void retain();
    void release();

    SharedBuffer* buf_ = nullptr;
};

// Allocates shared write buffers and tracks occupancy. The gauges let tests
// prove that every reference taken was eventually dropped.
class BufferPool {
public:
    // One region, exactly n references out.
    std::vector<SharedBufferRef> create_shared(std::vector<uint8_t> data, uint32_t n);
    SharedBufferRef create(std::vector<uint8_t> data) {
        auto refs = create_shared(std::move(data), 1);
        return std::move(refs[0]);
    }

    int64_t live_regions() const { return live_regions_.load(); }
    int64_t live_bytes() const { return live_bytes_.load(); }
    int64_t outstanding_refs() const { return outstanding_refs_.load(); }
    int64_t peak_bytes() const { return peak_bytes_.load(); }

private:
    friend class SharedBufferRef;
    void on_release(SharedBuffer* buf);

    std::atomic<int64_t> live_regions_{0};
    std::atomic<int64_t> live_bytes_{0};
    std::atomic<int64_t> outstanding_refs_{0};
    std::atomic<int64_t> peak_bytes_{0};
};

}  // namespace tierkv
