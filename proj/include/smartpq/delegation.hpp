#pragma once

#include <atomic>
#include <cstdint>
#include <cstring>
#include <memory>
#include <mutex>
#include <new>
#include <optional>
#include <stdexcept>
#include <thread>
#include <utility>
#include <vector>

#include "smartpq/epoch.hpp"
#include "smartpq/skiplist_pq.hpp"
#include "smartpq/topology.hpp"

namespace smartpq {

// Client <-> server delegation over padded cache-line message cells, ffwd
// style with a toggle-parity handshake:
//
//   * Each client owns one request slot (one cache line). It writes op/key/
//     value and then flips its request toggle (release). A request is
//     pending iff the request toggle differs from the response toggle bit
//     for that client position.
//   * Each group of clients shares one response line: one 8-byte result per
//     client plus a packed toggle word. The server buffers results locally
//     and publishes the line with a single release store of the toggle word.
//   * deleteMin returns its key through the 8-byte result (all-ones means
//     "empty") and its value payload through a second 8-byte field in the
//     client's own request slot.
//
// Exact layouts are documented in docs/protocol.md.

enum class DelegatedOp : uint8_t { none = 0, insert = 1, delete_min = 2 };

inline constexpr uint64_t kEmptyResult = ~0ull;

struct RequestSlot {
    std::atomic<uint8_t> toggle{0};  // written only by the owning client
    uint8_t op{0};
    uint64_t key{0};
    uint64_t value{0};
    uint64_t value_out{0};  // server-written deleteMin payload
};

// View over one response cache line: `capacity` 8-byte results followed by a
// 32-bit toggle word at the end of the line.
struct ResponseLineView {
    uint64_t* results = nullptr;
    std::atomic<uint32_t>* toggles = nullptr;
};

class NuddlePQ;

class ClientHandle {
  public:
    bool insert(uint64_t key, uint64_t value) {
        return roundtrip(DelegatedOp::insert, key, value) != 0;
    }

    std::optional<std::pair<uint64_t, uint64_t>> delete_min() {
        uint64_t r = roundtrip(DelegatedOp::delete_min, 0, 0);
        if (r == kEmptyResult)
            return std::nullopt;
        return std::make_pair(r, slot_->value_out);
    }

    int group() const { return group_; }
    int position() const { return pos_; }

  private:
    friend class NuddlePQ;
    friend class SmartPQ;

    uint64_t roundtrip(DelegatedOp op, uint64_t key, uint64_t value) {
        slot_->op = static_cast<uint8_t>(op);
        slot_->key = key;
        slot_->value = value;
        toggle_ ^= 1;
        slot_->toggle.store(toggle_, std::memory_order_release);
        // Busy-poll, but yield periodically so the server makes progress on
        // oversubscribed hosts (spinning alone can starve a shared core).
        int spins = 0;
        while (((response_.toggles->load(std::memory_order_acquire) >> pos_) & 1u) != toggle_) {
            cpu_relax();
            if (++spins == 128) {
                spins = 0;
                std::this_thread::yield();
            }
        }
        return response_.results[pos_];
    }

    RequestSlot* slot_ = nullptr;
    ResponseLineView response_;
    int group_ = 0;
    int pos_ = 0;
    uint8_t toggle_ = 0;
};

class ServerHandle {
  public:
    bool insert(uint64_t key, uint64_t value);
    std::optional<std::pair<uint64_t, uint64_t>> delete_min();

    // Scans every owned group once; executes pending requests against the
    // base queue and publishes at most one response line per group. Returns
    // the number of requests served.
    int serve_requests();

    bool pinned() const { return pinned_; }
    int owned_groups() const { return static_cast<int>(groups_.size()); }

    // Instrumentation for the exactly-once / batching checks.
    uint64_t response_publishes() const { return publishes_; }
    uint64_t passes_with_pending() const { return passes_with_pending_; }

  private:
    friend class NuddlePQ;
    friend class SmartPQ;
    friend class SmartServerHandle;

    struct OwnedGroup {
        int index;
        RequestSlot* slots;        // clnt_per_group request slots
        ResponseLineView response;
        uint32_t published = 0;    // server's copy of the toggle word
    };

    NuddlePQ* pq_ = nullptr;
    std::vector<OwnedGroup> groups_;
    bool pinned_ = false;
    uint64_t publishes_ = 0;
    uint64_t passes_with_pending_ = 0;
};

class NuddlePQ {
  public:
    NuddlePQ(SkipListPQ& base, int servers, int max_clients, int line_size = 64)
        : base_(base), servers_(servers), line_size_(line_size) {
        if (servers < 1 || max_clients < 1)
            throw std::invalid_argument("NuddlePQ: servers and max_clients must be >= 1");
        if (line_size != 64 && line_size != 128)
            throw std::invalid_argument("NuddlePQ: line size must be 64 or 128");
        clnt_per_group_ = line_size / 8 - 1;  // 8-byte results + toggle word
        groups_ = (max_clients + clnt_per_group_ - 1) / clnt_per_group_;

        size_t req_bytes = static_cast<size_t>(groups_) * clnt_per_group_ * line_size_;
        size_t resp_bytes = static_cast<size_t>(groups_) * line_size_;
        requests_ = alloc_lines(req_bytes);
        responses_ = alloc_lines(resp_bytes);
        std::memset(responses_.get(), 0, resp_bytes);
        for (int g = 0; g < groups_; ++g) {
            for (int j = 0; j < clnt_per_group_; ++j)
                new (request_slot(g, j)) RequestSlot();
            new (toggle_word(g)) std::atomic<uint32_t>(0);
        }
    }

    ~NuddlePQ() {
        for (int g = 0; g < groups_; ++g)
            for (int j = 0; j < clnt_per_group_; ++j)
                request_slot(g, j)->~RequestSlot();
    }

    NuddlePQ(const NuddlePQ&) = delete;
    NuddlePQ& operator=(const NuddlePQ&) = delete;

    // Registers the next client under the global lock, filling group slots
    // in order and wrapping to the next group when one fills up.
    ClientHandle init_client() {
        std::lock_guard<std::mutex> lk(global_lock_);
        if (client_cnt_ >= groups_ * clnt_per_group_)
            throw std::runtime_error("NuddlePQ: client capacity exhausted");
        ClientHandle c;
        c.slot_ = request_slot(group_cnt_, clients_cnt_);
        c.response_ = response_view(group_cnt_);
        c.group_ = group_cnt_;
        c.pos_ = clients_cnt_;
        ++client_cnt_;
        ++clients_cnt_;
        if (clients_cnt_ == clnt_per_group_) {
            clients_cnt_ = 0;
            ++group_cnt_;
        }
        return c;
    }

    // Registers the next server, pinning the calling thread to `core` and
    // claiming groups round-robin (group i belongs to server i mod servers).
    ServerHandle init_server(int core) {
        std::lock_guard<std::mutex> lk(global_lock_);
        if (server_cnt_ >= servers_)
            throw std::runtime_error("NuddlePQ: server capacity exhausted");
        int my_index = server_cnt_++;
        ServerHandle s;
        s.pq_ = this;
        s.pinned_ = topology().pin_self(core);
        for (int g = 0; g < groups_; ++g) {
            if (g % servers_ == my_index) {
                ServerHandle::OwnedGroup og;
                og.index = g;
                og.slots = request_slot(g, 0);
                og.response = response_view(g);
                og.published = og.response.toggles->load(std::memory_order_relaxed);
                s.groups_.push_back(og);
            }
        }
        return s;
    }

    SkipListPQ& base() { return base_; }
    int servers() const { return servers_; }
    int groups() const { return groups_; }
    int clients_per_group() const { return clnt_per_group_; }
    int line_size() const { return line_size_; }
    int registered_clients() const { return client_cnt_; }

    void set_server_spray(SprayParams p) { server_spray_ = p; }
    const std::optional<SprayParams>& server_spray() const { return server_spray_; }

    const Topology& topology() const {
        std::call_once(topo_once_, [this] { topo_ = discover(); });
        return topo_;
    }

  private:
    friend class ServerHandle;

    using LineBuf = std::unique_ptr<std::byte[], void (*)(std::byte*)>;

    LineBuf alloc_lines(size_t bytes) const {
        void* p = ::operator new(bytes, std::align_val_t(128));
        return LineBuf(static_cast<std::byte*>(p), [](std::byte* q) {
            ::operator delete(q, std::align_val_t(128));
        });
    }

    RequestSlot* request_slot(int group, int pos) const {
        std::byte* base = requests_.get() +
                          (static_cast<size_t>(group) * clnt_per_group_ + pos) * line_size_;
        return reinterpret_cast<RequestSlot*>(base);
    }

    std::atomic<uint32_t>* toggle_word(int group) const {
        std::byte* line = responses_.get() + static_cast<size_t>(group) * line_size_;
        return reinterpret_cast<std::atomic<uint32_t>*>(line + clnt_per_group_ * 8);
    }

    ResponseLineView response_view(int group) const {
        std::byte* line = responses_.get() + static_cast<size_t>(group) * line_size_;
        ResponseLineView v;
        v.results = reinterpret_cast<uint64_t*>(line);
        v.toggles = toggle_word(group);
        return v;
    }

    SkipListPQ& base_;
    int servers_;
    int line_size_;
    int clnt_per_group_ = 0;
    int groups_ = 0;
    int server_cnt_ = 0;
    int client_cnt_ = 0;
    int clients_cnt_ = 0;  // position within the currently filling group
    int group_cnt_ = 0;    // currently filling group
    std::mutex global_lock_;
    LineBuf requests_{nullptr, nullptr};
    LineBuf responses_{nullptr, nullptr};
    std::optional<SprayParams> server_spray_;
    mutable std::once_flag topo_once_;
    mutable Topology topo_;
};

inline bool ServerHandle::insert(uint64_t key, uint64_t value) {
    return pq_->base().insert(key, value);
}

inline std::optional<std::pair<uint64_t, uint64_t>> ServerHandle::delete_min() {
    if (pq_->server_spray())
        return pq_->base().delete_min_spray(*pq_->server_spray());
    return pq_->base().delete_min_exact();
}

inline int ServerHandle::serve_requests() {
    int served = 0;
    const int cap = pq_->clients_per_group();
    for (OwnedGroup& og : groups_) {
        uint32_t pending_mask = 0;
        uint64_t results[15];
        for (int j = 0; j < cap; ++j) {
            RequestSlot* slot = reinterpret_cast<RequestSlot*>(
                reinterpret_cast<std::byte*>(og.slots) + static_cast<size_t>(j) * pq_->line_size());
            uint8_t t = slot->toggle.load(std::memory_order_acquire);
            if (t == ((og.published >> j) & 1u))
                continue;  // nothing pending from this client
            switch (static_cast<DelegatedOp>(slot->op)) {
                case DelegatedOp::insert:
                    results[j] = insert(slot->key, slot->value) ? 1 : 0;
                    break;
                case DelegatedOp::delete_min: {
                    auto r = delete_min();
                    if (r) {
                        results[j] = r->first;
                        slot->value_out = r->second;
                    } else {
                        results[j] = kEmptyResult;
                    }
                    break;
                }
                default:
                    results[j] = 0;
                    break;
            }
            pending_mask |= 1u << j;
            ++served;
        }
        if (pending_mask != 0) {
            for (int j = 0; j < cap; ++j)
                if (pending_mask & (1u << j))
                    og.response.results[j] = results[j];
            og.published ^= pending_mask;
            og.response.toggles->store(og.published, std::memory_order_release);
            ++publishes_;
            ++passes_with_pending_;
        }
    }
    return served;
}

}  // namespace smartpq
