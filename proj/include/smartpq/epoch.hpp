#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <mutex>
#include <vector>

namespace smartpq {

// Epoch-based memory reclamation. Threads wrap data-structure operations in
// a Guard; retired objects are freed only once every thread that could hold
// a reference has left its critical section (observed via per-thread epoch
// slots). Retired objects carry their own deleter so one domain can serve
// heterogeneous node types.
//
// Building with SMARTPQ_LEAK_RECLAIM defined turns retire() into a no-op
// (leak until shutdown), useful when debugging reclamation itself.
class EpochDomain {
    struct Slot;

  public:
    static constexpr int kMaxThreads = 512;

    static EpochDomain& instance() {
        static EpochDomain dom;
        return dom;
    }

    class Guard {
      public:
        explicit Guard(EpochDomain& dom) : dom_(dom), slot_(dom.my_slot()) {
            uint64_t e = dom_.global_epoch_.load(std::memory_order_acquire);
            slot_->active.store(e, std::memory_order_seq_cst);
        }
        ~Guard() {
            slot_->active.store(0, std::memory_order_release);
        }
        Guard(const Guard&) = delete;
        Guard& operator=(const Guard&) = delete;

      private:
        EpochDomain& dom_;
        Slot* slot_;
    };

    Guard pin() { return Guard(*this); }

    template <typename T>
    void retire(T* p) {
        retire_raw(p, [](void* q) { delete static_cast<T*>(q); });
    }

    void retire_raw(void* p, void (*deleter)(void*)) {
#ifdef SMARTPQ_LEAK_RECLAIM
        (void)p;
        (void)deleter;
#else
        Slot* s = my_slot();
        s->limbo.push_back({p, deleter, global_epoch_.load(std::memory_order_acquire)});
        if (s->limbo.size() >= kReclaimBatch)
            try_reclaim(s);
#endif
    }

    // Drains the calling thread's limbo list unconditionally. Only valid when
    // no other thread can still hold references (e.g. at shutdown).
    void drain_unsafe() {
        Slot* s = my_slot();
        for (auto& r : s->limbo)
            r.deleter(r.ptr);
        s->limbo.clear();
        std::lock_guard<std::mutex> lk(orphan_mu_);
        for (auto& r : orphans_)
            r.deleter(r.ptr);
        orphans_.clear();
    }

  private:
    struct Retired {
        void* ptr;
        void (*deleter)(void*);
        uint64_t epoch;
    };

    struct alignas(64) Slot {
        std::atomic<uint64_t> active{0};  // 0 = quiescent, else pinned epoch
        std::atomic<bool> claimed{false};
        std::vector<Retired> limbo;
    };

    static constexpr size_t kReclaimBatch = 64;

    EpochDomain() = default;

    Slot* my_slot() {
        thread_local Registration reg(*this);
        return reg.slot;
    }

    struct Registration {
        explicit Registration(EpochDomain& dom) {
            for (int i = 0; i < kMaxThreads; ++i) {
                bool expected = false;
                if (dom.slots_[i].claimed.compare_exchange_strong(expected, true)) {
                    slot = &dom.slots_[i];
                    return;
                }
            }
            std::terminate();  // slot table exhausted
        }
        ~Registration() {
            // Hand any pending retirements to the shared orphan pool so a
            // later reclaim pass frees them.
            if (!slot->limbo.empty()) {
                EpochDomain& dom = EpochDomain::instance();
                std::lock_guard<std::mutex> lk(dom.orphan_mu_);
                dom.orphans_.insert(dom.orphans_.end(), slot->limbo.begin(),
                                    slot->limbo.end());
                slot->limbo.clear();
            }
            slot->active.store(0, std::memory_order_release);
            slot->claimed.store(false, std::memory_order_release);
        }
        Slot* slot = nullptr;
    };

    void try_reclaim(Slot* s) {
        uint64_t g = global_epoch_.load(std::memory_order_acquire);
        // Advance the global epoch only if no thread is pinned to an older one.
        bool can_advance = true;
        for (int i = 0; i < kMaxThreads; ++i) {
            if (!slots_[i].claimed.load(std::memory_order_acquire))
                continue;
            uint64_t a = slots_[i].active.load(std::memory_order_acquire);
            if (a != 0 && a < g) {
                can_advance = false;
                break;
            }
        }
        if (can_advance)
            global_epoch_.compare_exchange_strong(g, g + 1);

        uint64_t now = global_epoch_.load(std::memory_order_acquire);
        // Anything retired two epochs ago is unreachable by every pinned thread.
        size_t kept = 0;
        for (auto& r : s->limbo) {
            if (r.epoch + 2 <= now)
                r.deleter(r.ptr);
            else
                s->limbo[kept++] = r;
        }
        s->limbo.resize(kept);

        if (orphan_mu_.try_lock()) {
            std::lock_guard<std::mutex> lk(orphan_mu_, std::adopt_lock);
            kept = 0;
            for (auto& r : orphans_) {
                if (r.epoch + 2 <= now)
                    r.deleter(r.ptr);
                else
                    orphans_[kept++] = r;
            }
            orphans_.resize(kept);
        }
    }

    std::atomic<uint64_t> global_epoch_{1};
    Slot slots_[kMaxThreads];
    std::mutex orphan_mu_;
    std::vector<Retired> orphans_;
};

inline void cpu_relax() {
#if defined(__x86_64__) || defined(__i386__)
    __builtin_ia32_pause();
#elif defined(__aarch64__)
    asm volatile("yield");
#else
    std::atomic_signal_fence(std::memory_order_seq_cst);
#endif
}

}  // namespace smartpq
