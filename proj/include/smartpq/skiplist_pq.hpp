#pragma once

#include <atomic>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <unordered_map>
#include <utility>
#include <vector>

#include "smartpq/epoch.hpp"

namespace smartpq {

// Parameters for the relaxed "spray" deleteMin. The walk starts at skip-list
// level ceil(log2(p)) and advances 1 + uniform(0, ceil(log2(p))) nodes per
// level before descending. With p == 1 this degenerates to one bottom-level
// step from the head, i.e. the exact minimum.
//
// Documented rank bound (see docs/protocol.md for the derivation):
//   R(1) = 0, and for p >= 2:  R(p) = 64 * 2^ceil(log2 p) * (ceil(log2 p)+1)^2
struct SprayParams {
    unsigned thread_hint = 1;  // p

    static unsigned ceil_log2(unsigned p) {
        unsigned h = 0;
        while ((1u << h) < p)
            ++h;
        return h;
    }
    unsigned spray_height() const { return ceil_log2(thread_hint); }
    uint64_t rank_bound() const {
        if (thread_hint <= 1)
            return 0;
        uint64_t h = spray_height();
        return 64ull * (1ull << h) * (h + 1) * (h + 1);
    }
};

// Lock-free skip-list priority queue over (key, value) pairs with set
// semantics on the key. Keys 0 and 2^64-1 are the sentinel bounds and are
// rejected at insert. deleteMin comes in an exact flavor (first live node at
// the bottom level, logical deletion via pointer marking) and a relaxed
// spray flavor.
class SkipListPQ {
  public:
    static constexpr uint64_t kMinSentinel = 0;
    static constexpr uint64_t kMaxSentinel = ~0ull;

    SkipListPQ(int max_level, uint64_t seed)
        : max_level_(max_level), seed_(seed) {
        if (max_level < 1 || max_level > 32)
            throw std::invalid_argument("SkipListPQ: max_level must be in [1,32]");
        head_ = Node::make(kMinSentinel, 0, max_level - 1);
        tail_ = Node::make(kMaxSentinel, 0, max_level - 1);
        for (int l = 0; l < max_level; ++l)
            head_->next[l].store(tail_, std::memory_order_relaxed);
    }

    ~SkipListPQ() {
        Node* n = strip(head_->next[0].load(std::memory_order_relaxed));
        while (n != tail_) {
            Node* nx = strip(n->next[0].load(std::memory_order_relaxed));
            Node::destroy(n);
            n = nx;
        }
        Node::destroy(head_);
        Node::destroy(tail_);
    }

    SkipListPQ(const SkipListPQ&) = delete;
    SkipListPQ& operator=(const SkipListPQ&) = delete;

    // Returns true iff key was absent (and live) and has now been inserted.
    bool insert(uint64_t key, uint64_t value) {
        if (key == kMinSentinel || key == kMaxSentinel)
            throw std::invalid_argument("SkipListPQ: key collides with sentinel");
        auto guard = EpochDomain::instance().pin();
        Node* preds[32];
        Node* succs[32];
        int top = random_level();
        Node* node = nullptr;
        while (true) {
            if (find(key, preds, succs)) {
                if (node)
                    Node::destroy(node);
                return false;
            }
            if (!node)
                node = Node::make(key, value, top);
            for (int l = 0; l <= top; ++l)
                node->next[l].store(succs[l], std::memory_order_relaxed);
            Node* expected = succs[0];
            if (!preds[0]->next[0].compare_exchange_strong(
                    expected, node, std::memory_order_seq_cst))
                continue;  // bottom-level link lost a race; retry whole insert
            link_upper_levels(node, top, key, preds, succs);
            size_.fetch_add(1, std::memory_order_relaxed);
            return true;
        }
    }

    // Exact deleteMin: claims the first live bottom-level node.
    std::optional<std::pair<uint64_t, uint64_t>> delete_min_exact() {
        auto guard = EpochDomain::instance().pin();
        return delete_min_exact_locked();
    }

    // Relaxed deleteMin. Sprays up to 3 times, then falls back to an exact
    // scan so "empty" is only reported when the head truly has no live
    // successor.
    std::optional<std::pair<uint64_t, uint64_t>> delete_min_spray(const SprayParams& params) {
        auto guard = EpochDomain::instance().pin();
        if (params.thread_hint <= 1)
            return delete_min_exact_locked();
        unsigned h = params.spray_height();
        int start_level = static_cast<int>(h);
        if (start_level > max_level_ - 1)
            start_level = max_level_ - 1;
        auto& rng = level_rng();
        for (int attempt = 0; attempt < 3; ++attempt) {
            Node* curr = head_;
            for (int l = start_level; l >= 0; --l) {
                unsigned steps = 1 + static_cast<unsigned>(rng() % (h + 1));
                while (steps > 0) {
                    Node* nx = strip(curr->next[l].load(std::memory_order_seq_cst));
                    if (nx == tail_)
                        break;
                    curr = nx;
                    if (!marked(curr->next[0].load(std::memory_order_seq_cst)))
                        --steps;  // marked nodes do not count as progress
                }
            }
            // Claim the landing node, or the first live node after it.
            for (Node* n = (curr == head_)
                               ? strip(head_->next[0].load(std::memory_order_seq_cst))
                               : curr;
                 n != tail_; n = strip(n->next[0].load(std::memory_order_seq_cst))) {
                if (try_claim(n)) {
                    finish_removal(n);
                    return std::make_pair(n->key, n->value);
                }
            }
        }
        return delete_min_exact_locked();
    }

    // Approximate live-entry count; exact in quiescent states.
    int64_t size() const { return size_.load(std::memory_order_relaxed); }

    int max_level() const { return max_level_; }

    // Quiescent-state structural audit: bottom level strictly sorted within
    // the sentinel bounds, and every higher level's live-node set is a subset
    // of the level-0 live-node set (in order). Not safe to run concurrently
    // with mutators.
    bool audit() const {
        std::vector<const Node*> level0;
        uint64_t prev = kMinSentinel;
        for (Node* n = strip(head_->next[0].load()); n != tail_;
             n = strip(n->next[0].load())) {
            if (marked(n->next[0].load()))
                continue;
            if (n->key <= prev || n->key >= kMaxSentinel)
                return false;
            prev = n->key;
            level0.push_back(n);
        }
        for (int l = 1; l < max_level_; ++l) {
            size_t pos = 0;
            for (Node* n = strip(head_->next[l].load()); n != tail_;
                 n = strip(n->next[l].load())) {
                if (marked(n->next[0].load()))
                    continue;
                while (pos < level0.size() && level0[pos] != n)
                    ++pos;
                if (pos == level0.size())
                    return false;  // node at level l missing from level 0
                ++pos;
            }
        }
        return true;
    }

  private:
    struct Node {
        uint64_t key;
        uint64_t value;
        int top_level;
        std::atomic<Node*> next[1];  // allocated with top_level+1 entries

        static Node* make(uint64_t key, uint64_t value, int top_level) {
            size_t bytes = sizeof(Node) + static_cast<size_t>(top_level) * sizeof(std::atomic<Node*>);
            void* mem = ::operator new(bytes);
            Node* n = static_cast<Node*>(mem);
            n->key = key;
            n->value = value;
            n->top_level = top_level;
            for (int l = 0; l <= top_level; ++l)
                new (&n->next[l]) std::atomic<Node*>(nullptr);
            return n;
        }
        static void destroy(Node* n) { ::operator delete(n); }
        static void destroy_erased(void* p) { ::operator delete(p); }
    };

    static bool marked(Node* p) {
        return (reinterpret_cast<uintptr_t>(p) & 1u) != 0;
    }
    static Node* strip(Node* p) {
        return reinterpret_cast<Node*>(reinterpret_cast<uintptr_t>(p) & ~uintptr_t(1));
    }
    static Node* with_mark(Node* p) {
        return reinterpret_cast<Node*>(reinterpret_cast<uintptr_t>(p) | 1u);
    }

    // Harris/Herlihy-style search. Returns true iff a live node with `key`
    // sits at the bottom level; fills preds/succs with unmarked neighbors,
    // snipping marked nodes along the way.
    bool find(uint64_t key, Node** preds, Node** succs) {
    retry:
        Node* pred = head_;
        for (int l = max_level_ - 1; l >= 0; --l) {
            Node* curr = strip(pred->next[l].load(std::memory_order_seq_cst));
            while (true) {
                Node* succ = curr->next[l].load(std::memory_order_seq_cst);
                while (marked(succ)) {
                    Node* clean = strip(succ);
                    Node* expected = curr;
                    if (!pred->next[l].compare_exchange_strong(
                            expected, clean, std::memory_order_seq_cst))
                        goto retry;
                    if (l == 0)
                        retire_once(curr);
                    curr = clean;
                    succ = curr->next[l].load(std::memory_order_seq_cst);
                }
                if (curr->key < key) {
                    pred = curr;
                    curr = strip(succ);
                } else {
                    break;
                }
            }
            preds[l] = pred;
            succs[l] = curr;
        }
        return succs[0]->key == key;
    }

    void link_upper_levels(Node* node, int top, uint64_t key, Node** preds, Node** succs) {
        for (int l = 1; l <= top; ++l) {
            while (true) {
                if (marked(node->next[0].load(std::memory_order_seq_cst)))
                    return;  // node already claimed; stop building towers
                Node* stale = node->next[l].load(std::memory_order_seq_cst);
                if (strip(stale) != succs[l]) {
                    if (marked(stale))
                        return;
                    if (!node->next[l].compare_exchange_strong(
                            stale, succs[l], std::memory_order_seq_cst))
                        return;  // node got marked at this level
                }
                Node* expected = succs[l];
                if (preds[l]->next[l].compare_exchange_strong(
                        expected, node, std::memory_order_seq_cst))
                    break;
                find(key, preds, succs);  // refresh neighborhood and help
            }
        }
    }

    // Logical deletion: mark the node's next pointers top-down; winning the
    // bottom-level mark claims the node.
    bool try_claim(Node* n) {
        for (int l = n->top_level; l >= 1; --l) {
            Node* succ = n->next[l].load(std::memory_order_seq_cst);
            while (!marked(succ)) {
                if (n->next[l].compare_exchange_strong(
                        succ, with_mark(strip(succ)), std::memory_order_seq_cst))
                    break;
            }
        }
        while (true) {
            Node* succ = n->next[0].load(std::memory_order_seq_cst);
            if (marked(succ))
                return false;  // another thread claimed it
            if (n->next[0].compare_exchange_strong(
                    succ, with_mark(succ), std::memory_order_seq_cst)) {
                size_.fetch_sub(1, std::memory_order_relaxed);
                return true;
            }
        }
    }

    void finish_removal(Node* n) {
        Node* preds[32];
        Node* succs[32];
        find(n->key, preds, succs);  // snips the node out of every level
    }

    // A node is retired by the thread whose CAS unlinks it at level 0; that
    // CAS succeeds exactly once per node.
    void retire_once(Node* n) {
        EpochDomain::instance().retire_raw(n, &Node::destroy_erased);
    }

    std::optional<std::pair<uint64_t, uint64_t>> delete_min_exact_locked() {
        for (Node* n = strip(head_->next[0].load(std::memory_order_seq_cst)); n != tail_;
             n = strip(n->next[0].load(std::memory_order_seq_cst))) {
            if (marked(n->next[0].load(std::memory_order_seq_cst)))
                continue;
            if (try_claim(n)) {
                uint64_t k = n->key;
                uint64_t v = n->value;
                finish_removal(n);
                return std::make_pair(k, v);
            }
        }
        return std::nullopt;  // reached the tail without a live node
    }

    // Geometric level distribution, capped. Per-thread generator seeded from
    // the queue seed plus a per-queue thread ordinal so single-threaded runs
    // are reproducible.
    int random_level() {
        auto& rng = level_rng();
        int l = 0;
        while (l < max_level_ - 1 && (rng() & 1u))
            ++l;
        return l;
    }

    std::mt19937_64& level_rng() {
        thread_local std::unordered_map<const SkipListPQ*, std::mt19937_64> rngs;
        auto it = rngs.find(this);
        if (it == rngs.end()) {
            uint64_t ordinal = rng_ordinal_.fetch_add(1, std::memory_order_relaxed);
            it = rngs.emplace(this, std::mt19937_64(seed_ + 0x9e3779b97f4a7c15ull * ordinal)).first;
        }
        return it->second;
    }

    int max_level_;
    uint64_t seed_;
    Node* head_;
    Node* tail_;
    std::atomic<int64_t> size_{0};
    std::atomic<uint64_t> rng_ordinal_{0};
};

}  // namespace smartpq
