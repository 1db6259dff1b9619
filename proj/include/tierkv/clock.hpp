#pragma once

#include <mutex>

namespace tierkv {

// Time source for the simulated engine. Wall mode makes overlap physically
// real (sleeps in separate threads run concurrently); virtual mode makes
// timing records bit-reproducible by charging costs to a logical counter.
class Clock {
public:
    virtual ~Clock() = default;
    virtual double now() = 0;
    virtual void sleep_for(double seconds) = 0;
};

class WallClock : public Clock {
public:
    WallClock();
    double now() override;
    void sleep_for(double seconds) override;

private:
    double origin_;
};

class VirtualClock : public Clock {
public:
    double now() override;
    void sleep_for(double seconds) override;
    // Jumps forward; never moves time backwards.
    void advance_to(double t);

private:
    std::mutex mu_;
    double now_ = 0;
};

}  // namespace tierkv
