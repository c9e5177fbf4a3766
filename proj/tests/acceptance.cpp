// Acceptance checks for the adaptive priority queue. Each criterion prints
// exactly one PASS/FAIL line. Criterion 7 depends on host timing and is
// non-gating for the exit code; everything else gates.

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <queue>
#include <random>
#include <sstream>
#include <thread>
#include <unordered_map>
#include <vector>

#include "smartpq/workload.hpp"

using namespace smartpq;
using clock_t_ = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(int idx, const char* name, bool ok, const std::string& detail = "",
            bool gating = true) {
    std::printf("C%d %s: %s%s%s\n", idx, name, ok ? "PASS" : "FAIL",
                detail.empty() ? "" : " - ", detail.c_str());
    std::fflush(stdout);
    if (!ok && gating)
        ++g_failures;
}

double seconds_since(clock_t_::time_point t0) {
    return std::chrono::duration<double>(clock_t_::now() - t0).count();
}

// --- C1: single-threaded oracle equivalence -------------------------------

bool c1_oracle() {
    auto t0 = clock_t_::now();
    SkipListPQ q(20, 1);
    using HeapEntry = std::pair<uint64_t, uint64_t>;
    std::priority_queue<HeapEntry, std::vector<HeapEntry>, std::greater<>> heap;
    std::unordered_map<uint64_t, uint64_t> live;  // key set with values
    std::mt19937_64 rng(2024);
    for (int i = 0; i < 100000; ++i) {
        if (rng() % 2 == 0) {
            uint64_t key = 1 + rng() % 2000;
            uint64_t val = rng();
            bool expect = live.emplace(key, val).second;
            if (q.insert(key, val) != expect)
                return false;
            if (expect)
                heap.push({key, val});
        } else {
            auto r = q.delete_min_exact();
            if (live.empty()) {
                if (r)
                    return false;
            } else {
                // Heap top is always live: deletions only happen via deleteMin.
                auto [k, v] = heap.top();
                heap.pop();
                if (!r || r->first != k || r->second != v)
                    return false;
                live.erase(k);
            }
        }
    }
    EpochDomain::instance().drain_unsafe();
    return seconds_since(t0) < 5.0;
}

// --- C2: no lost updates ---------------------------------------------------

bool conserved(const std::vector<std::vector<uint64_t>>& ins,
               const std::vector<std::vector<uint64_t>>& del, SkipListPQ& q) {
    std::unordered_map<uint64_t, int64_t> balance;
    for (const auto& v : ins)
        for (uint64_t k : v)
            ++balance[k];
    for (const auto& v : del)
        for (uint64_t k : v)
            --balance[k];
    while (auto r = q.delete_min_exact())
        --balance[r->first];
    for (const auto& [k, v] : balance)
        if (v != 0)
            return false;
    return true;
}

bool c2_direct() {
    const int n_threads = 8;
    const int ops = 100000;
    SkipListPQ q(20, 77);
    std::vector<std::vector<uint64_t>> ins(n_threads), del(n_threads);
    std::vector<std::thread> threads;
    for (int t = 0; t < n_threads; ++t) {
        threads.emplace_back([&, t] {
            std::mt19937_64 rng(500 + t);
            SprayParams sp{n_threads};
            for (int i = 0; i < ops; ++i) {
                uint64_t key = 1 + rng() % 8192;
                if (rng() % 2 == 0) {
                    if (q.insert(key, key))
                        ins[t].push_back(key);
                } else {
                    auto r = q.delete_min_spray(sp);
                    if (r)
                        del[t].push_back(r->first);
                }
            }
        });
    }
    for (auto& t : threads)
        t.join();
    bool ok = conserved(ins, del, q) && q.audit();
    EpochDomain::instance().drain_unsafe();
    return ok;
}

bool c2_delegated() {
    const int n_clients = 14;
    const int ops = 800000 / n_clients;  // same total volume as the direct run
    SkipListPQ q(20, 78);
    NuddlePQ pq(q, 2, n_clients, 64);
    auto s0 = pq.init_server(-1);
    auto s1 = pq.init_server(-1);
    std::vector<ClientHandle> clients;
    for (int i = 0; i < n_clients; ++i)
        clients.push_back(pq.init_client());

    std::atomic<int> remaining{n_clients};
    std::atomic<bool> done{false};
    std::vector<std::vector<uint64_t>> ins(n_clients), del(n_clients);
    std::vector<std::thread> threads;
    for (int i = 0; i < n_clients; ++i) {
        threads.emplace_back([&, i] {
            std::mt19937_64 rng(900 + i);
            auto& c = clients[static_cast<size_t>(i)];
            for (int op = 0; op < ops; ++op) {
                uint64_t key = 1 + rng() % 8192;
                if (rng() % 2 == 0) {
                    if (c.insert(key, key))
                        ins[static_cast<size_t>(i)].push_back(key);
                } else {
                    auto r = c.delete_min();
                    if (r)
                        del[static_cast<size_t>(i)].push_back(r->first);
                }
            }
            if (remaining.fetch_sub(1) == 1)
                done.store(true, std::memory_order_release);
        });
    }
    auto serve = [&done](ServerHandle& s) {
        while (!done.load(std::memory_order_acquire)) {
            if (s.serve_requests() == 0)
                std::this_thread::yield();
        }
        s.serve_requests();
    };
    std::thread st0(serve, std::ref(s0));
    std::thread st1(serve, std::ref(s1));
    for (auto& t : threads)
        t.join();
    st0.join();
    st1.join();
    bool ok = conserved(ins, del, q) && q.audit();
    EpochDomain::instance().drain_unsafe();
    return ok;
}

// --- C3: delegation exactly-once -------------------------------------------

bool c3_exactly_once(std::string& detail) {
    const int n_clients = 7;
    const uint64_t total = 1000000;
    const uint64_t ops = total / n_clients + 1;
    SkipListPQ q(20, 31);
    NuddlePQ pq(q, 1, n_clients, 64);
    auto server = pq.init_server(-1);
    std::vector<ClientHandle> clients;
    for (int i = 0; i < n_clients; ++i)
        clients.push_back(pq.init_client());

    std::atomic<int> remaining{n_clients};
    std::atomic<bool> done{false};
    std::atomic<uint64_t> issued{0};
    std::atomic<uint64_t> answered{0};
    std::vector<std::thread> threads;
    for (int i = 0; i < n_clients; ++i) {
        threads.emplace_back([&, i] {
            std::mt19937_64 rng(1234 + i);
            auto& c = clients[static_cast<size_t>(i)];
            for (uint64_t op = 0; op < ops; ++op) {
                uint64_t key = 1 + rng() % 65536;
                issued.fetch_add(1, std::memory_order_relaxed);
                if (rng() % 2 == 0)
                    c.insert(key, key);
                else
                    c.delete_min();
                // The round trip blocked until the response toggled.
                answered.fetch_add(1, std::memory_order_relaxed);
            }
            if (remaining.fetch_sub(1) == 1)
                done.store(true, std::memory_order_release);
        });
    }
    uint64_t served = 0;
    while (!done.load(std::memory_order_acquire)) {
        int n = server.serve_requests();
        served += static_cast<uint64_t>(n);
        if (n == 0)
            std::this_thread::yield();
    }
    served += static_cast<uint64_t>(server.serve_requests());
    for (auto& t : threads)
        t.join();

    std::ostringstream d;
    d << "issued=" << issued.load() << " served=" << served << " answered=" << answered.load()
      << " publishes=" << server.response_publishes()
      << " passes_with_pending=" << server.passes_with_pending();
    detail = d.str();
    bool ok = issued.load() == served && served == answered.load() &&
              server.response_publishes() == server.passes_with_pending();
    EpochDomain::instance().drain_unsafe();
    return ok;
}

// --- C4: spray rank bound ---------------------------------------------------

bool c4_spray(std::string& detail) {
    const uint64_t n = 100000;
    SkipListPQ q(20, 99);
    for (uint64_t k = 1; k <= n; ++k)
        q.insert(k, k);
    uint64_t worst = 0;
    for (unsigned p : {2u, 8u}) {
        SprayParams sp{p};
        for (int trial = 0; trial < 1000; ++trial) {
            auto r = q.delete_min_spray(sp);
            if (!r)
                return false;
            uint64_t rank = r->first - 1;  // queue holds exactly 1..n
            worst = std::max(worst, rank);
            if (rank > sp.rank_bound())
                return false;
            q.insert(r->first, r->first);
        }
    }
    SprayParams p1{1};
    for (uint64_t k = 1; k <= 1000; ++k) {
        auto r = q.delete_min_spray(p1);
        if (!r || r->first != k)
            return false;  // p=1 must be the exact minimum
    }
    std::ostringstream d;
    d << "worst rank " << worst << " vs bounds R(2)=512 R(8)=8192";
    detail = d.str();
    EpochDomain::instance().drain_unsafe();
    return true;
}

// --- C5: mode-switch safety -------------------------------------------------

bool c5_flips(std::string& detail) {
    SkipListPQ q(20, 45);
    SmartPQ pq(q, 1, 7);
    auto server = pq.init_server(-1);
    std::vector<SmartClientHandle> clients;
    for (int i = 0; i < 7; ++i)
        clients.push_back(pq.init_client());

    std::atomic<bool> stop{false};
    std::atomic<bool> clients_done{false};
    std::atomic<int> running{7};
    std::atomic<uint64_t> completed{0};
    std::vector<std::vector<uint64_t>> ins(7), del(7);
    std::vector<std::thread> threads;
    for (int i = 0; i < 7; ++i) {
        threads.emplace_back([&, i] {
            std::mt19937_64 rng(321 + i);
            auto& c = clients[static_cast<size_t>(i)];
            while (!stop.load(std::memory_order_acquire)) {
                uint64_t key = 1 + rng() % 4096;
                if (rng() % 2 == 0) {
                    if (c.insert(key, key))
                        ins[static_cast<size_t>(i)].push_back(key);
                } else {
                    auto r = c.delete_min();
                    if (r)
                        del[static_cast<size_t>(i)].push_back(r->first);
                }
                completed.fetch_add(1, std::memory_order_relaxed);
            }
            if (running.fetch_sub(1) == 1)
                clients_done.store(true, std::memory_order_release);
        });
    }
    std::thread st([&] {
        while (!clients_done.load(std::memory_order_acquire)) {
            if (server.serve() == 0)
                std::this_thread::yield();
        }
        server.delegated().serve_requests();
    });
    int flips = 0;
    int m = kModeAware;
    for (int tick = 0; tick < 100; ++tick) {  // 100 x 100 ms = 10 s
        std::this_thread::sleep_for(std::chrono::milliseconds(100));
        pq.force_mode(m);
        m = (m == kModeAware) ? kModeOblivious : kModeAware;
        ++flips;
    }
    stop.store(true, std::memory_order_release);
    for (auto& t : threads)
        t.join();
    st.join();

    bool ok = conserved(ins, del, q) && q.audit();
    std::ostringstream d;
    d << flips << " forced flips, " << completed.load() << " ops completed, conservation "
      << (ok ? "exact" : "VIOLATED");
    detail = d.str();
    EpochDomain::instance().drain_unsafe();
    return ok;
}

// --- C6: classifier ---------------------------------------------------------

bool planted_rules_ok() {
    std::mt19937_64 rng(17);
    std::vector<LabeledSample> s;
    for (int i = 0; i < 1000; ++i) {
        double ins = (i % 2 == 0) ? 0.45 * (static_cast<double>(rng() % 1000) / 1000.0)
                                  : 0.55 + 0.45 * (static_cast<double>(rng() % 1000) / 1000.0);
        LabeledSample x;
        x.features = {static_cast<double>(rng() % 64), static_cast<double>(rng() % 100000),
                      static_cast<double>(rng() % 1000000), ins};
        x.label = ins <= 0.5 ? 2 : 1;
        s.push_back(x);
    }
    auto t = train(s);
    for (const auto& x : s)
        if (t.predict(x.features) != x.label)
            return false;

    std::vector<LabeledSample> xs;
    for (int i = 0; i < 400; ++i) {
        bool hi_t = (i & 1) != 0;
        bool hi_i = (i & 2) != 0;
        LabeledSample x;
        x.features = {hi_t ? 50.0 : 5.0, 1000, 1000, hi_i ? 0.9 : 0.1};
        x.label = (hi_t != hi_i) ? 2 : 1;
        xs.push_back(x);
    }
    auto xt = train(xs, {8, 1});
    if (xt.depth() < 2)
        return false;
    for (const auto& x : xs)
        if (xt.predict(x.features) != x.label)
            return false;
    return true;
}

bool label_grid_ok() {
    for (int i = 0; i < 100; ++i) {
        for (int j = 0; j < 100; ++j) {
            double x = i * 0.5e6, y = j * 0.5e6;
            bool neutral = std::abs(x - y) < 1.5e6;
            if ((label(x, y, 1.5e6) == ModeClass::neutral) != neutral)
                return false;
        }
    }
    return true;
}

bool c6_classifier(std::string& detail) {
    if (!planted_rules_ok()) {
        detail = "planted-rule recovery failed";
        return false;
    }
    if (!label_grid_ok()) {
        detail = "threshold grid mismatch";
        return false;
    }

    // Desk-generated training data: a grid contrasting contention regimes.
    // No delay loop, so per-mode throughputs separate even on small hosts.
    GridSpec grid = parse_grid(
        "threads=1,2,4,8;size=64,4096,262144;range=128,16384,1M;insert=0.1,0.5,0.9");
    TrainingConfig tc;
    tc.duration_s = 0.15;
    tc.servers = 1;
    tc.seed = 7;
    tc.pause_iters = 0;
    std::ostringstream csv;
    gen_training(grid, csv, tc);
    std::istringstream in(csv.str());
    auto samples = load_samples_csv(in);

    std::vector<LabeledSample> train_set, hold_set;
    for (size_t i = 0; i < samples.size(); ++i)
        (i % 4 == 3 ? hold_set : train_set).push_back(samples[i]);
    auto tree = train(train_set, {8, 2});
    int correct = 0;
    std::array<int, 3> counts{};
    for (const auto& s : hold_set) {
        if (tree.predict(s.features) == s.label)
            ++correct;
        ++counts[static_cast<size_t>(s.label)];
    }
    double acc = static_cast<double>(correct) / hold_set.size();
    double base = static_cast<double>(std::max({counts[0], counts[1], counts[2]})) /
                  hold_set.size();
    std::ostringstream d;
    d << "holdout acc " << acc << " vs majority baseline " << base << " (n=" << hold_set.size()
      << ")";
    detail = d.str();
    EpochDomain::instance().drain_unsafe();
    return acc >= base + 0.10;
}

// --- C7: adaptivity smoke (non-gating) ---------------------------------------

bool c7_adaptivity(std::string& detail) {
    // Two contention regimes with a large per-mode gap on most hosts:
    // A) many threads, delete-heavy, wide range; B) few threads, tiny queue.
    WorkloadPhase a;
    a.duration_s = 3.0;
    a.n_threads = 8;
    a.key_range = 1u << 20;
    a.insert_pct = 0.1;
    a.initial_size = 4096;
    WorkloadPhase b;
    b.duration_s = 3.0;
    b.n_threads = 2;
    b.key_range = 128;
    b.insert_pct = 0.5;

    RunConfig mcfg;
    mcfg.servers = 1;
    mcfg.pause_iters = 0;
    // Median of three short runs per mode: single samples on a busy host are
    // noisy enough to swamp the 0.85 factor under test.
    auto measure = [&](Impl impl, WorkloadPhase p) {
        p.duration_s = 0.5;
        p.initial_size = std::max<uint64_t>(p.initial_size, 64);
        std::array<double, 3> t{};
        for (auto& x : t)
            x = run_workload(impl, {p}, mcfg).phase_means[0];
        std::sort(t.begin(), t.end());
        return t[1];
    };
    double obl_a = measure(Impl::oblivious, a);
    double nud_a = measure(Impl::nuddle, a);
    double obl_b = measure(Impl::oblivious, b);
    double nud_b = measure(Impl::nuddle, b);

    auto ratio = [](double x, double y) { return std::max(x, y) / std::max(std::min(x, y), 1.0); };
    std::ostringstream d;
    d << "phase A obl/nud " << obl_a << "/" << nud_a << ", phase B " << obl_b << "/" << nud_b;
    if (ratio(obl_a, nud_a) < 2.0 || ratio(obl_b, nud_b) < 2.0) {
        detail = "precondition unmet (modes differ < 2x on this host): " + d.str();
        return false;
    }
    int win_a = obl_a > nud_a ? kModeOblivious : kModeAware;
    int win_b = obl_b > nud_b ? kModeOblivious : kModeAware;

    // Planted tree keyed on insert_pct: phase A draws 0.1, phase B 0.5.
    std::vector<DecisionTree::Node> nodes(3);
    nodes[0] = {false, 3, 0.3, 1, 2, 0};
    nodes[1] = {true, 0, 0, -1, -1, win_a};
    nodes[2] = {true, 0, 0, -1, -1, win_b};

    RunConfig cfg;
    cfg.servers = 1;
    cfg.pause_iters = 0;
    cfg.decision_interval_s = 0.1;
    cfg.tree = std::make_shared<DecisionTree>(std::move(nodes));
    cfg.initial_mode = (win_a == kModeOblivious) ? kModeAware : kModeOblivious;  // force a switch
    auto r = run_workload(Impl::smartpq, {a, b}, cfg);

    double best_a = std::max(obl_a, nud_a);
    double best_b = std::max(obl_b, nud_b);
    bool thr_ok = r.phase_means[0] >= 0.85 * best_a && r.phase_means[1] >= 0.85 * best_b;

    // Switch latency: first transition to the phase-A winner after run start
    // must land within 2 decision ticks (plus scheduling slack).
    double latency = -1;
    for (const auto& tr : r.transitions) {
        if (tr.to == win_a && tr.at >= r.run_start) {
            latency = std::chrono::duration<double>(tr.at - r.run_start).count();
            break;
        }
    }
    bool latency_ok = latency >= 0 && latency <= 2 * cfg.decision_interval_s + 0.1;

    d << "; smartpq means " << r.phase_means[0] << "/" << r.phase_means[1] << " vs best "
      << best_a << "/" << best_b << "; switch latency " << latency << "s";
    detail = d.str();
    EpochDomain::instance().drain_unsafe();
    return thr_ok && latency_ok;
}

// --- C8: decision overhead ----------------------------------------------------

bool c8_overhead(std::string& detail) {
    std::mt19937_64 rng(71);
    std::vector<LabeledSample> s;
    for (int i = 0; i < 6000; ++i) {
        LabeledSample x;
        x.features = {static_cast<double>(rng() % 64), static_cast<double>(rng() % 100000),
                      static_cast<double>(rng() % 1000000),
                      static_cast<double>(rng() % 100) / 100.0};
        x.label = static_cast<int>(rng() % 3);
        s.push_back(x);
    }
    auto t = train(s, {8, 5});
    FeatureVector f{57, 1000000, 10000000, 0.5};
    volatile int sink = 0;
    const int reps = 200000;
    auto t0 = clock_t_::now();
    for (int i = 0; i < reps; ++i)
        sink = sink + t.predict(f);
    double per_call = seconds_since(t0) / reps;
    std::ostringstream d;
    d << "tree nodes=" << t.node_count() << " depth=" << t.depth() << ", "
      << per_call * 1e9 << " ns/predict";
    detail = d.str();
    return t.depth() <= 8 && per_call < 10e-6;
}

// --- C9: serialization round trip ---------------------------------------------

bool c9_roundtrip() {
    std::mt19937_64 rng(61);
    for (int round = 0; round < 100; ++round) {
        std::vector<LabeledSample> s;
        int n = 50 + static_cast<int>(rng() % 300);
        for (int i = 0; i < n; ++i) {
            LabeledSample x;
            x.features = {static_cast<double>(rng() % 64), static_cast<double>(rng() % 100000),
                          static_cast<double>(rng() % 1000000),
                          static_cast<double>(rng() % 1000) / 1000.0};
            x.label = static_cast<int>(rng() % 3);
            s.push_back(x);
        }
        auto t = train(s, {static_cast<int>(2 + rng() % 7), static_cast<int>(1 + rng() % 5)});
        auto u = DecisionTree::deserialize(t.serialize());
        if (!(u == t) || u.serialize() != t.serialize())
            return false;
    }
    return true;
}

}  // namespace

int main() {
    std::string detail;

    report(1, "single-threaded-oracle-equivalence", c1_oracle());
    report(2, "no-lost-updates", c2_direct() && c2_delegated(),
           "8x100k direct + 800k delegated (2 servers, 14 clients), multiset exact");

    detail.clear();
    bool c3 = c3_exactly_once(detail);
    report(3, "delegation-exactly-once", c3, detail);

    detail.clear();
    bool c4 = c4_spray(detail);
    report(4, "spray-rank-bound", c4, detail);

    detail.clear();
    bool c5 = c5_flips(detail);
    report(5, "mode-switch-safety", c5, detail);

    detail.clear();
    bool c6 = c6_classifier(detail);
    report(6, "classifier-quality", c6, detail);

    detail.clear();
    // Timing smoke on a shared host: allow one retry to ride out noise bursts.
    bool c7 = c7_adaptivity(detail);
    if (!c7)
        c7 = c7_adaptivity(detail);
    report(7, "adaptivity-smoke (non-gating)", c7, detail, /*gating=*/false);

    detail.clear();
    bool c8 = c8_overhead(detail);
    report(8, "decision-overhead", c8, detail);

    report(9, "tree-serialization-roundtrip", c9_roundtrip());

    if (g_failures > 0) {
        std::printf("%d gating criterion(s) failed\n", g_failures);
        return 1;
    }
    std::printf("all gating criteria passed\n");
    return 0;
}
