#include "tierkv/clock.hpp"

#include <algorithm>
#include <chrono>
#include <thread>

namespace tierkv {

namespace {

double steady_seconds() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

}  // namespace

WallClock::WallClock() : origin_(steady_seconds()) {}

double WallClock::now() { return steady_seconds() - origin_; }

void WallClock::sleep_for(double seconds) {
    if (seconds <= 0) return;
    std::this_thread::sleep_for(std::chrono::duration<double>(seconds));
}

double VirtualClock::now() {
    std::lock_guard lock(mu_);
    return now_;
}

void VirtualClock::sleep_for(double seconds) {
    if (seconds <= 0) return;
    std::lock_guard lock(mu_);
    now_ += seconds;
}

void VirtualClock::advance_to(double t) {
    std::lock_guard lock(mu_);
    now_ = std::max(now_, t);
}

}  // namespace tierkv
