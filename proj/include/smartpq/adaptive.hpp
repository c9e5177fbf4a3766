#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <thread>
#include <utility>
#include <vector>

#include "smartpq/decision_tree.hpp"
#include "smartpq/delegation.hpp"
#include "smartpq/skiplist_pq.hpp"

namespace smartpq {

// Shared algorithmic mode. Only kModeOblivious and kModeAware are ever
// stored; a neutral prediction leaves the mode untouched.
inline constexpr int kModeOblivious = 1;
inline constexpr int kModeAware = 2;

// Relaxed counters updated by operating threads, sampled by the decision
// loop to build a FeatureVector on the fly.
struct WorkloadStats {
    std::atomic<uint64_t> inserts_ok{0};
    std::atomic<uint64_t> deletes_ok{0};
    std::atomic<uint64_t> inserts_total{0};
    std::atomic<uint64_t> deletes_total{0};
    std::atomic<int> active_threads{0};
    std::atomic<uint64_t> min_key{~0ull};
    std::atomic<uint64_t> max_key{0};

    int64_t size_estimate() const {
        return static_cast<int64_t>(inserts_ok.load(std::memory_order_relaxed)) -
               static_cast<int64_t>(deletes_ok.load(std::memory_order_relaxed));
    }

    void observe_key(uint64_t key) {
        uint64_t mn = min_key.load(std::memory_order_relaxed);
        while (key < mn &&
               !min_key.compare_exchange_weak(mn, key, std::memory_order_relaxed))
            ;
        uint64_t mx = max_key.load(std::memory_order_relaxed);
        while (key > mx &&
               !max_key.compare_exchange_weak(mx, key, std::memory_order_relaxed))
            ;
    }
};

struct ModeTransition {
    std::chrono::steady_clock::time_point at;
    int from;
    int to;
};

class SmartClientHandle;
class SmartServerHandle;

// SmartPQ: one queue, two access paths. Mode 1 operates directly on the
// base skip list from the calling thread; mode 2 delegates through Nuddle.
// Both paths mutate the same concurrent structure, so flips need no
// synchronization barrier.
class SmartPQ {
  public:
    SmartPQ(SkipListPQ& base, int servers, int max_clients, int line_size = 64)
        : base_(base), nuddle_(base, servers, max_clients, line_size) {}

    SmartClientHandle init_client();
    SmartServerHandle init_server(int core);

    void install_tree(std::shared_ptr<const DecisionTree> tree) {
        std::lock_guard<std::mutex> lk(tree_mu_);
        tree_ = std::move(tree);
    }
    std::shared_ptr<const DecisionTree> tree() const {
        std::lock_guard<std::mutex> lk(tree_mu_);
        return tree_;
    }

    int mode() const { return algo_.load(std::memory_order_acquire); }

    // Forces a mode (testing and scripted benchmarks). Only 1 or 2 accepted.
    void force_mode(int m) {
        if (m != kModeOblivious && m != kModeAware)
            throw std::invalid_argument("SmartPQ: mode must be 1 or 2");
        int old = algo_.exchange(m, std::memory_order_acq_rel);
        if (old != m)
            log_transition(old, m);
    }

    // Runs the installed classifier on `f`; writes the mode only for
    // non-neutral predictions. Returns the raw prediction (may be 0).
    int decide(const FeatureVector& f) {
        auto t = tree();
        if (!t)
            throw std::runtime_error("SmartPQ: no decision tree installed");
        int cls = t->predict(f);
        if (cls != 0) {
            int old = algo_.exchange(cls, std::memory_order_acq_rel);
            if (old != cls)
                log_transition(old, cls);
        }
        return cls;
    }

    // Builds a FeatureVector from the live stats counters. insert_pct is
    // computed over the window since the previous call.
    FeatureVector features_from_stats() {
        FeatureVector f;
        f.n_threads = stats_.active_threads.load(std::memory_order_relaxed);
        int64_t sz = base_.size();
        f.size = sz > 0 ? static_cast<double>(sz) : 0.0;
        uint64_t mn = stats_.min_key.load(std::memory_order_relaxed);
        uint64_t mx = stats_.max_key.load(std::memory_order_relaxed);
        f.key_range = (mx > mn) ? static_cast<double>(mx - mn) : 0.0;
        uint64_t ins = stats_.inserts_total.load(std::memory_order_relaxed);
        uint64_t del = stats_.deletes_total.load(std::memory_order_relaxed);
        uint64_t dins = ins - window_ins_;
        uint64_t ddel = del - window_del_;
        f.insert_pct = (dins + ddel) ? static_cast<double>(dins) / (dins + ddel) : 0.5;
        window_ins_ = ins;
        window_del_ = del;
        return f;
    }

    WorkloadStats& stats() { return stats_; }
    SkipListPQ& base() { return base_; }
    NuddlePQ& nuddle() { return nuddle_; }

    std::vector<ModeTransition> transitions() const {
        std::lock_guard<std::mutex> lk(log_mu_);
        return transitions_;
    }

    void set_client_spray(SprayParams p) { client_spray_ = p; }

  private:
    friend class SmartClientHandle;
    friend class SmartServerHandle;

    void log_transition(int from, int to) {
        std::lock_guard<std::mutex> lk(log_mu_);
        transitions_.push_back({std::chrono::steady_clock::now(), from, to});
    }

    SkipListPQ& base_;
    NuddlePQ nuddle_;
    std::atomic<int> algo_{kModeOblivious};
    WorkloadStats stats_;
    std::optional<SprayParams> client_spray_;
    mutable std::mutex tree_mu_;
    std::shared_ptr<const DecisionTree> tree_;
    uint64_t window_ins_ = 0;  // snapshot at the previous decision tick
    uint64_t window_del_ = 0;
    mutable std::mutex log_mu_;
    std::vector<ModeTransition> transitions_;
};

class SmartClientHandle {
  public:
    bool insert(uint64_t key, uint64_t value) {
        bool ok;
        if (pq_->mode() == kModeOblivious)
            ok = pq_->base_.insert(key, value);
        else
            ok = inner_.insert(key, value);
        note_op(true, ok, key);
        return ok;
    }

    std::optional<std::pair<uint64_t, uint64_t>> delete_min() {
        std::optional<std::pair<uint64_t, uint64_t>> r;
        if (pq_->mode() == kModeOblivious) {
            if (pq_->client_spray_)
                r = pq_->base_.delete_min_spray(*pq_->client_spray_);
            else
                r = pq_->base_.delete_min_exact();
        } else {
            r = inner_.delete_min();
        }
        note_op(false, r.has_value(), 0);
        return r;
    }

    ClientHandle& delegated() { return inner_; }

  private:
    friend class SmartPQ;

    // Shared counters are touched once per 64 ops; per-op updates stay in
    // handle-local fields so the hot path costs no contended RMWs.
    void note_op(bool is_insert, bool ok, uint64_t key) {
        if (is_insert) {
            ++ins_total_;
            ins_ok_ += ok ? 1u : 0u;
            // Key extremes are sampled, not exact: every 16th op bounds cost.
            if ((op_count_ & 0xf) == 0)
                pq_->stats_.observe_key(key);
        } else {
            ++del_total_;
            del_ok_ += ok ? 1u : 0u;
        }
        if ((++op_count_ & 0x3f) == 0)
            flush_stats();
    }

    void flush_stats() {
        auto& st = pq_->stats_;
        st.inserts_total.fetch_add(ins_total_, std::memory_order_relaxed);
        st.inserts_ok.fetch_add(ins_ok_, std::memory_order_relaxed);
        st.deletes_total.fetch_add(del_total_, std::memory_order_relaxed);
        st.deletes_ok.fetch_add(del_ok_, std::memory_order_relaxed);
        ins_total_ = ins_ok_ = del_total_ = del_ok_ = 0;
    }

    SmartPQ* pq_ = nullptr;
    ClientHandle inner_;
    uint64_t op_count_ = 0;
    uint64_t ins_total_ = 0, ins_ok_ = 0, del_total_ = 0, del_ok_ = 0;
};

class SmartServerHandle {
  public:
    // NUMA-aware mode: one scan over owned groups. NUMA-oblivious mode:
    // returns immediately except for a drain pass right after observing a
    // 2 -> 1 flip, plus a cheap pending-toggle check that rescues requests
    // published around the flip.
    int serve() {
        int mode = pq_->mode();
        if (mode == kModeAware) {
            last_mode_ = kModeAware;
            return inner_.serve_requests();
        }
        int n = 0;
        if (last_mode_ == kModeAware) {
            last_mode_ = kModeOblivious;
            n = inner_.serve_requests();  // drain requests from before the flip
        } else if (any_pending()) {
            n = inner_.serve_requests();
        }
        return n;
    }

    bool insert(uint64_t key, uint64_t value) {
        bool ok = inner_.insert(key, value);
        note(true, ok, key);
        return ok;
    }
    std::optional<std::pair<uint64_t, uint64_t>> delete_min() {
        auto r = inner_.delete_min();
        note(false, r.has_value(), 0);
        return r;
    }

    ServerHandle& delegated() { return inner_; }

  private:
    friend class SmartPQ;

    bool any_pending() const {
        for (const auto& og : inner_.groups_) {
            for (int j = 0; j < pq_->nuddle_.clients_per_group(); ++j) {
                const RequestSlot* slot = reinterpret_cast<const RequestSlot*>(
                    reinterpret_cast<const std::byte*>(og.slots) +
                    static_cast<size_t>(j) * pq_->nuddle_.line_size());
                if (slot->toggle.load(std::memory_order_acquire) !=
                    ((og.published >> j) & 1u))
                    return true;
            }
        }
        return false;
    }

    void note(bool is_insert, bool ok, uint64_t key) {
        if (is_insert) {
            ++ins_total_;
            ins_ok_ += ok ? 1u : 0u;
            if ((op_count_ & 0xf) == 0)
                pq_->stats_.observe_key(key);
        } else {
            ++del_total_;
            del_ok_ += ok ? 1u : 0u;
        }
        if ((++op_count_ & 0x3f) == 0)
            flush_stats();
    }

    void flush_stats() {
        auto& st = pq_->stats_;
        st.inserts_total.fetch_add(ins_total_, std::memory_order_relaxed);
        st.inserts_ok.fetch_add(ins_ok_, std::memory_order_relaxed);
        st.deletes_total.fetch_add(del_total_, std::memory_order_relaxed);
        st.deletes_ok.fetch_add(del_ok_, std::memory_order_relaxed);
        ins_total_ = ins_ok_ = del_total_ = del_ok_ = 0;
    }

    SmartPQ* pq_ = nullptr;
    ServerHandle inner_;
    int last_mode_ = kModeOblivious;
    uint64_t op_count_ = 0;
    uint64_t ins_total_ = 0, ins_ok_ = 0, del_total_ = 0, del_ok_ = 0;
};

inline SmartClientHandle SmartPQ::init_client() {
    SmartClientHandle c;
    c.pq_ = this;
    c.inner_ = nuddle_.init_client();
    stats_.active_threads.fetch_add(1, std::memory_order_relaxed);
    return c;
}

inline SmartServerHandle SmartPQ::init_server(int core) {
    SmartServerHandle s;
    s.pq_ = this;
    s.inner_ = nuddle_.init_server(core);
    s.last_mode_ = mode();
    stats_.active_threads.fetch_add(1, std::memory_order_relaxed);
    return s;
}

// Background decision task: every `interval` builds a FeatureVector from the
// workload stats and runs the classifier. An infinite interval disables
// ticking entirely.
class DecisionLoop {
  public:
    DecisionLoop(SmartPQ& pq, std::chrono::duration<double> interval)
        : pq_(pq), interval_(interval) {
        if (interval_.count() > 0 && interval_ != std::chrono::duration<double>::max()) {
            worker_ = std::thread([this] { run(); });
        }
    }

    ~DecisionLoop() { stop(); }

    void stop() {
        {
            std::lock_guard<std::mutex> lk(mu_);
            if (stopping_)
                return;
            stopping_ = true;
        }
        cv_.notify_all();
        if (worker_.joinable())
            worker_.join();
    }

    uint64_t ticks() const { return ticks_.load(std::memory_order_relaxed); }

  private:
    void run() {
        std::unique_lock<std::mutex> lk(mu_);
        auto iv = std::chrono::duration_cast<std::chrono::nanoseconds>(interval_);
        for (;;) {
            // system_clock deadline keeps the timed wait on
            // pthread_cond_timedwait; steady-clock waits go through
            // pthread_cond_clockwait, which some race detectors miss.
            auto deadline = std::chrono::system_clock::now() + iv;
            if (cv_.wait_until(lk, deadline, [this] { return stopping_; }))
                break;
            lk.unlock();
            if (pq_.tree())
                pq_.decide(pq_.features_from_stats());
            ticks_.fetch_add(1, std::memory_order_relaxed);
            lk.lock();
        }
    }

    SmartPQ& pq_;
    std::chrono::duration<double> interval_;
    std::mutex mu_;
    std::condition_variable cv_;
    bool stopping_ = false;
    std::atomic<uint64_t> ticks_{0};
    std::thread worker_;
};

}  // namespace smartpq
