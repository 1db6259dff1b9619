#include "tierkv/offload.hpp"

#include <algorithm>

namespace tierkv {

const char* offload_state_name(OffloadState s) {
    switch (s) {
        case OffloadState::init: return "init";
        case OffloadState::in_progress: return "in_progress";
        case OffloadState::query_arrival: return "query_arrival";
        case OffloadState::steady: return "steady";
    }
    return "?";
}

OffloadWindow::OffloadWindow(std::vector<PageId> free_pages, size_t window_size,
                             DuplicateFn duplicate)
    : free_pages_(std::move(free_pages)),
      window_size_(window_size),
      duplicate_(std::move(duplicate)) {
    end_ = std::min(window_size_, free_pages_.size());
}

std::vector<PageId> OffloadWindow::advance(size_t batch) {
    std::vector<PageId> done;
    size_t target = std::min(current_ + batch, end_);
    done.reserve(target - current_);
    while (current_ < target) {
        duplicate_(free_pages_[current_]);
        done.push_back(free_pages_[current_]);
        ++current_;
    }
    return done;
}

AllocOutcome OffloadWindow::on_alloc(size_t n) {
    AllocOutcome out;
    if (grantable() >= n) {
        out.pages.assign(free_pages_.begin() + consumed_, free_pages_.begin() + consumed_ + n);
        consumed_ += n;
        end_ = std::min(end_ + n, free_pages_.size());
        return out;
    }
    out.shortfall = n - grantable();
    end_ = std::min(std::max(end_, consumed_ + n), free_pages_.size());
    return out;
}

void OffloadWindow::append_free_pages(const std::vector<PageId>& pages) {
    free_pages_.insert(free_pages_.end(), pages.begin(), pages.end());
}

OffloadState OffloadWindow::state() const {
    if (current_ == end_) return OffloadState::steady;
    if (current_ == 0) return OffloadState::init;
    return OffloadState::in_progress;
}

}  // namespace tierkv
