#include "tierkv/offload.hpp"

#include <algorithm>
#include <map>
#include <random>
#include <set>
#include <vector>

#include "doctest.h"

using namespace tierkv;

namespace {

std::vector<PageId> iota_pages(size_t n, PageId base = 0) {
    std::vector<PageId> out(n);
    for (size_t i = 0; i < n; ++i) out[i] = base + PageId(i);
    return out;
}

OffloadWindow::DuplicateFn record_into(std::vector<PageId>* log) {
    return [log](PageId p) { log->push_back(p); };
}

}  // namespace

TEST_CASE("window opens at the configured size") {
    std::vector<PageId> dups;

    OffloadWindow full(iota_pages(8), 8, record_into(&dups));
    CHECK(full.consumed() == 0);
    CHECK(full.current() == 0);
    CHECK(full.end_index() == 8);
    CHECK(full.state() == OffloadState::init);

    OffloadWindow narrow(iota_pages(8), 3, record_into(&dups));
    CHECK(narrow.end_index() == 3);
    CHECK(narrow.state() == OffloadState::init);

    OffloadWindow empty({}, 4, record_into(&dups));
    CHECK(empty.end_index() == 0);
    CHECK(empty.state() == OffloadState::steady);
}

TEST_CASE("advance duplicates in order and stops at the end cursor") {
    std::vector<PageId> dups;
    OffloadWindow w(iota_pages(8, 100), 8, record_into(&dups));

    auto got = w.advance(3);
    CHECK(got == std::vector<PageId>{100, 101, 102});
    CHECK(dups == got);
    CHECK(w.current() == 3);
    CHECK(w.state() == OffloadState::in_progress);

    got = w.advance(100);
    CHECK(got.size() == 5);
    CHECK(w.current() == 8);
    CHECK(w.state() == OffloadState::steady);

    got = w.advance(3);
    CHECK(got.empty());
    CHECK(dups.size() == 8);
    CHECK(w.current() == 8);
    CHECK(w.end_index() == 8);
}

TEST_CASE("grants come from the duplicated prefix and extend the window") {
    std::vector<PageId> dups;

    SUBCASE("room to extend") {
        OffloadWindow w(iota_pages(12), 8, record_into(&dups));
        w.advance(3);
        auto out = w.on_alloc(2);
        REQUIRE(out.granted());
        CHECK(out.pages == std::vector<PageId>{0, 1});
        CHECK(w.consumed() == 2);
        CHECK(w.end_index() == 10);
    }

    SUBCASE("extension clamps at the pool") {
        OffloadWindow w(iota_pages(8), 8, record_into(&dups));
        w.advance(3);
        auto out = w.on_alloc(2);
        REQUIRE(out.granted());
        CHECK(w.end_index() == 8);
    }

    SUBCASE("alloc zero grants nothing and moves nothing") {
        OffloadWindow w(iota_pages(8), 3, record_into(&dups));
        w.advance(2);
        auto out = w.on_alloc(0);
        CHECK(out.granted());
        CHECK(out.pages.empty());
        CHECK(w.consumed() == 0);
        CHECK(w.end_index() == 3);
    }
}

TEST_CASE("undersupplied alloc stalls and schedules exactly the need") {
    // One page duplicated, query wants three: stall owing two, and the end
    // cursor moves just far enough that two more advances resolve it.
    std::vector<PageId> dups;
    OffloadWindow w(iota_pages(8), 1, record_into(&dups));
    w.advance(1);
    CHECK(w.state() == OffloadState::steady);

    auto out = w.on_alloc(3);
    CHECK(!out.granted());
    CHECK(out.shortfall == 2);
    CHECK(w.end_index() == 3);
    CHECK(w.consumed() == 0);

    // Retry without progress changes nothing.
    out = w.on_alloc(3);
    CHECK(out.shortfall == 2);
    CHECK(w.end_index() == 3);

    w.advance(1);
    out = w.on_alloc(3);
    CHECK(out.shortfall == 1);

    w.advance(1);
    out = w.on_alloc(3);
    REQUIRE(out.granted());
    CHECK(out.pages == std::vector<PageId>{0, 1, 2});
    CHECK(w.consumed() == 3);
    CHECK(w.end_index() == 6);
    CHECK(dups.size() == 3);
}

TEST_CASE("duplicated bytes match the source pages") {
    // Fake device memory: the duplicate callback snapshots a page, a grant
    // lets the engine rewrite it. Snapshots must preserve original content.
    const size_t page_bytes = 64;
    std::mt19937_64 rng(11);
    std::vector<std::vector<uint8_t>> device(16);
    std::vector<std::vector<uint8_t>> original(16);
    for (size_t i = 0; i < device.size(); ++i) {
        device[i].resize(page_bytes);
        for (auto& b : device[i]) b = uint8_t(rng());
        original[i] = device[i];
    }

    std::map<PageId, std::vector<uint8_t>> shadow;
    OffloadWindow w(iota_pages(16), 6, [&](PageId p) { shadow[p] = device[p]; });

    std::vector<PageId> granted;
    for (int step = 0; step < 20; ++step) {
        w.advance(1 + step % 2);
        auto out = w.on_alloc(step % 3);
        if (!out.granted()) continue;
        for (PageId p : out.pages) {
            REQUIRE(shadow.count(p) == 1);
            for (auto& b : device[p]) b = uint8_t(rng());
            granted.push_back(p);
        }
    }
    REQUIRE(granted.size() > 4);
    for (PageId p : granted) CHECK(shadow.at(p) == original[p]);
}

namespace {

// Reachable-state exploration standing in for all op interleavings: every
// property checked is a predicate on a single transition, so visiting each
// reachable state and applying every op from it covers every sequence.
struct Explorer {
    size_t pool;
    size_t window;
    size_t max_alloc_seen = 0;
    size_t states_visited = 0;
    size_t transitions = 0;

    struct Key {
        size_t consumed, current, end;
        bool operator<(const Key& o) const {
            return std::tie(consumed, current, end) < std::tie(o.consumed, o.current, o.end);
        }
    };

    struct Node {
        OffloadWindow w;
        std::set<PageId> duplicated;
    };

    // Every window copy shares this sink; it is pointed at the set of the
    // node whose turn it is before each transition.
    std::set<PageId>* dup_sink = nullptr;

    void check_invariants(const OffloadWindow& w) {
        REQUIRE(w.consumed() <= w.current());
        REQUIRE(w.current() <= w.end_index());
        REQUIRE(w.end_index() <= w.pool_size());
        // Duplication stays bounded by the window unless a single request
        // legitimately needed more.
        REQUIRE(w.grantable() <= std::max(window, max_alloc_seen));
        OffloadState expect = w.current() == w.end_index() ? OffloadState::steady
                              : w.current() == 0           ? OffloadState::init
                                                           : OffloadState::in_progress;
        REQUIRE(w.state() == expect);
    }

    void require_resolvable(const Node& n, size_t want) {
        // After a stall, advancing alone must produce a grant.
        std::set<PageId> scratch;
        std::set<PageId>* saved = dup_sink;
        dup_sink = &scratch;
        OffloadWindow probe = n.w;
        for (size_t i = 0; i < pool + 1; ++i) probe.advance(1);
        REQUIRE(probe.on_alloc(want).granted());
        dup_sink = saved;
    }

    void run() {
        auto dup = [this](PageId p) {
            REQUIRE(dup_sink != nullptr);
            dup_sink->insert(p);
        };

        std::map<Key, Node> frontier;
        std::set<Key> visited;
        {
            Node root{OffloadWindow(iota_pages(pool), window, dup), {}};
            check_invariants(root.w);
            frontier.emplace(Key{0, 0, root.w.end_index()}, std::move(root));
        }

        for (int depth = 0; depth < 12 && !frontier.empty(); ++depth) {
            std::map<Key, Node> next;
            for (auto& [key, node] : frontier) {
                if (!visited.insert(key).second) continue;
                ++states_visited;
                for (size_t batch = 1; batch <= 4; ++batch) {
                    Node child = node;
                    dup_sink = &child.duplicated;
                    child.w.advance(batch);
                    ++transitions;
                    check_invariants(child.w);
                    Key k{child.w.consumed(), child.w.current(), child.w.end_index()};
                    if (!visited.count(k)) next.emplace(k, std::move(child));
                }
                for (size_t n = 0; n + node.w.consumed() <= pool; ++n) {
                    Node child = node;
                    dup_sink = &child.duplicated;
                    max_alloc_seen = std::max(max_alloc_seen, n);
                    auto out = child.w.on_alloc(n);
                    ++transitions;
                    check_invariants(child.w);
                    if (out.granted()) {
                        // Safety: every granted page was duplicated first.
                        for (PageId p : out.pages) REQUIRE(child.duplicated.count(p) == 1);
                    } else {
                        REQUIRE(out.shortfall == n - node.w.grantable());
                        require_resolvable(child, n);
                    }
                    Key k{child.w.consumed(), child.w.current(), child.w.end_index()};
                    if (!visited.count(k)) next.emplace(k, std::move(child));
                }
            }
            frontier = std::move(next);
        }
        dup_sink = nullptr;
    }
};

}  // namespace

TEST_CASE("exhaustive small-state exploration finds no violation") {
    size_t total_states = 0;
    size_t total_transitions = 0;
    for (size_t pool = 0; pool <= 6; ++pool) {
        for (size_t window = 1; window <= 4; ++window) {
            Explorer ex{pool, window};
            ex.run();
            total_states += ex.states_visited;
            total_transitions += ex.transitions;
        }
    }
    CHECK(total_states > 100);
    CHECK(total_transitions > 1000);
}

TEST_CASE("randomized soup keeps every invariant") {
    std::mt19937_64 rng(77);
    for (int run = 0; run < 2000; ++run) {
        size_t pool = 1 + rng() % 32;
        size_t window = 1 + rng() % 8;
        PageId next_page = PageId(pool);

        std::set<PageId> duplicated;
        std::set<PageId> granted;
        size_t max_alloc = 0;
        OffloadWindow w(iota_pages(pool), window, [&](PageId p) {
            CHECK(duplicated.insert(p).second);
            CHECK(granted.count(p) == 0);
        });

        for (int op = 0; op < 40; ++op) {
            switch (rng() % 4) {
                case 0:
                case 1:
                    w.advance(1 + rng() % 3);
                    break;
                case 2: {
                    size_t avail = w.pool_size() - w.consumed();
                    if (avail == 0) break;
                    size_t n = 1 + rng() % std::min<size_t>(avail, 4);
                    max_alloc = std::max(max_alloc, n);
                    auto out = w.on_alloc(n);
                    for (PageId p : out.pages) {
                        CHECK(duplicated.count(p) == 1);
                        CHECK(granted.insert(p).second);
                    }
                    break;
                }
                case 3: {
                    size_t add = 1 + rng() % 4;
                    std::vector<PageId> fresh;
                    for (size_t i = 0; i < add; ++i) fresh.push_back(next_page++);
                    size_t end_before = w.end_index();
                    w.append_free_pages(fresh);
                    CHECK(w.end_index() == end_before);
                    break;
                }
            }
            CHECK(w.consumed() <= w.current());
            CHECK(w.current() <= w.end_index());
            CHECK(w.end_index() <= w.pool_size());
            CHECK(w.grantable() <= std::max(window, max_alloc));
        }
    }
}

TEST_CASE("appended pages resolve a pool-exhausted stall") {
    std::vector<PageId> dups;
    OffloadWindow w(iota_pages(2), 4, record_into(&dups));
    w.advance(4);
    auto out = w.on_alloc(2);
    REQUIRE(out.granted());

    // Pool is spent: nothing left to schedule, so the stall cannot move end.
    out = w.on_alloc(2);
    CHECK(!out.granted());
    CHECK(out.shortfall == 2);
    CHECK(w.end_index() == 2);

    w.append_free_pages({10, 11, 12});
    out = w.on_alloc(2);
    CHECK(!out.granted());
    CHECK(w.end_index() == 4);
    w.advance(2);
    out = w.on_alloc(2);
    REQUIRE(out.granted());
    CHECK(out.pages == std::vector<PageId>{10, 11});
}

TEST_CASE("grants never outrun duplication under adversarial interleaving") {
    // Scheduler that races minimal advances against greedy allocation.
    std::mt19937_64 rng(5);
    for (int run = 0; run < 200; ++run) {
        size_t pool = 4 + rng() % 12;
        std::set<PageId> duplicated;
        OffloadWindow w(iota_pages(pool), 1, [&](PageId p) { duplicated.insert(p); });
        size_t want = 1 + rng() % 3;
        size_t granted_total = 0;
        int fuel = 200;
        while (granted_total + want <= pool && fuel-- > 0) {
            auto out = w.on_alloc(want);
            if (out.granted()) {
                for (PageId p : out.pages) REQUIRE(duplicated.count(p) == 1);
                granted_total += want;
                want = 1 + rng() % 3;
            } else {
                w.advance(1);
            }
        }
        CHECK(fuel > 0);
    }
}
