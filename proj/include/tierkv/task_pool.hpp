#pragma once

#include <condition_variable>
#include <deque>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace tierkv {

// Bounded worker pool for background tier I/O.
class TaskPool {
public:
    explicit TaskPool(size_t threads) {
        for (size_t i = 0; i < threads; ++i) {
            workers_.emplace_back([this] { worker_loop(); });
        }
    }

    ~TaskPool() {
        {
            std::lock_guard lock(mu_);
            stopping_ = true;
        }
        cv_.notify_all();
        for (auto& w : workers_) w.join();
    }

    void submit(std::function<void()> fn) {
        {
            std::lock_guard lock(mu_);
            queue_.push_back(std::move(fn));
        }
        cv_.notify_one();
    }

    // Blocks until the queue is empty and all workers are idle.
    void drain() {
        std::unique_lock lock(mu_);
        idle_cv_.wait(lock, [this] { return queue_.empty() && active_ == 0; });
    }

    size_t threads() const { return workers_.size(); }

private:
    void worker_loop() {
        for (;;) {
            std::function<void()> fn;
            {
                std::unique_lock lock(mu_);
                cv_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
                if (queue_.empty()) return;  // stopping and drained
                fn = std::move(queue_.front());
                queue_.pop_front();
                ++active_;
            }
            fn();
            {
                std::lock_guard lock(mu_);
                --active_;
            }
            idle_cv_.notify_all();
        }
    }

    std::vector<std::thread> workers_;
    std::deque<std::function<void()>> queue_;
    size_t active_ = 0;
    bool stopping_ = false;
    std::mutex mu_;
    std::condition_variable cv_;
    std::condition_variable idle_cv_;
};

}  // namespace tierkv
