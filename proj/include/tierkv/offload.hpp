#pragma once

#include <functional>
#include <vector>

#include "tierkv/paged_store.hpp"

namespace tierkv {

// query_arrival is the transient phase inside on_alloc while the end cursor
// moves; at rest the window is always in one of the other three states.
enum class OffloadState { init, in_progress, query_arrival, steady };

const char* offload_state_name(OffloadState s);

struct AllocOutcome {
    std::vector<PageId> pages;  // granted ids, empty on stall
    size_t shortfall = 0;       // pages still awaiting duplication, 0 on grant
    bool granted() const { return shortfall == 0; }
};

// Three-cursor duplication window over an ordered free-page list. Pages at
// [0, consumed) have been granted away, [consumed, current) are duplicated
// and grantable, [current, end) are scheduled. Allocation never hands out a
// page whose duplication callback has not completed. Single-owner: callers
// serialize all calls.
class OffloadWindow {
public:
    // Invoked once per page, before the cursor moves past it.
    using DuplicateFn = std::function<void(PageId)>;

    OffloadWindow(std::vector<PageId> free_pages, size_t window_size, DuplicateFn duplicate);

    // Duplicates up to `batch` scheduled pages and returns their ids.
    // No-op at steady state.
    std::vector<PageId> advance(size_t batch);

    // Grants the n lowest-index duplicated pages and extends the window by n,
    // or stalls reporting how many pages duplication still owes the request.
    // A stall schedules exactly enough pages that repeated advance resolves
    // it; retrying does not schedule more. Callers never request more pages
    // than the pool holds unconsumed.
    AllocOutcome on_alloc(size_t n);

    // Adds newly freed pages to the tail of the list. The window does not
    // auto-extend; future on_alloc calls see the larger pool.
    void append_free_pages(const std::vector<PageId>& pages);

    OffloadState state() const;

    size_t consumed() const { return consumed_; }
    size_t current() const { return current_; }
    size_t end_index() const { return end_; }
    size_t pool_size() const { return free_pages_.size(); }
    // Duplicated pages not yet granted away.
    size_t grantable() const { return current_ - consumed_; }

private:
    std::vector<PageId> free_pages_;
    size_t window_size_;
    DuplicateFn duplicate_;
    size_t consumed_ = 0;
    size_t current_ = 0;
    size_t end_ = 0;
};

}  // namespace tierkv
