#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "smartpq/adaptive.hpp"
#include "smartpq/decision_tree.hpp"
#include "smartpq/delegation.hpp"
#include "smartpq/skiplist_pq.hpp"
#include "smartpq/topology.hpp"

namespace smartpq {

enum class Impl { oblivious, nuddle, smartpq, ffwd };

inline const char* impl_name(Impl i) {
    switch (i) {
        case Impl::oblivious: return "oblivious";
        case Impl::nuddle: return "nuddle";
        case Impl::smartpq: return "smartpq";
        case Impl::ffwd: return "ffwd";
    }
    return "?";
}

inline std::optional<Impl> parse_impl(const std::string& s) {
    if (s == "oblivious") return Impl::oblivious;
    if (s == "nuddle") return Impl::nuddle;
    if (s == "smartpq") return Impl::smartpq;
    if (s == "ffwd") return Impl::ffwd;
    return std::nullopt;
}

// One contention phase. n_threads counts every running thread, servers
// included for the delegation-based implementations.
struct WorkloadPhase {
    double duration_s = 5.0;
    int n_threads = 1;
    uint64_t key_range = 1024;
    double insert_pct = 0.5;
    uint64_t initial_size = 0;  // honored for the first phase only
};

struct RunConfig {
    int servers = 1;
    int line_size = 64;
    int pause_iters = 25;  // delay loop between operations
    uint64_t seed = 1;
    int max_level = 20;
    bool use_spray = true;           // relaxed deleteMin on the direct path
    double decision_interval_s = 1.0;  // smartpq classifier cadence
    std::shared_ptr<const DecisionTree> tree;  // smartpq classifier
    bool pin_threads = true;
    bool run_audit = true;  // conservation audit at the end of the run
    int client_group = 7;   // pinning group size for placement
    int initial_mode = 0;   // smartpq starting mode; 0 keeps the default
};

struct RunResult {
    std::vector<double> sample_times;  // seconds since run start
    std::vector<double> samples;       // ops/s per sample window
    std::vector<int> sample_modes;     // mode at sample time (0 if N/A)
    std::vector<double> phase_means;   // mean ops/s per phase
    std::vector<ModeTransition> transitions;
    std::chrono::steady_clock::time_point run_start;  // after the initial fill
    int64_t final_size = 0;
    uint64_t total_ops = 0;
    bool conservation_ok = true;
};

// ---------------------------------------------------------------------------
// Phase file parsing. Plain text, '#' comments, one phase per line:
//   duration_s  n_threads  key_range  insert_pct  [initial_size]
// key_range and initial_size accept K/M suffixes; insert_pct accepts either
// a fraction (0.75) or a percentage (75).
// ---------------------------------------------------------------------------

inline uint64_t parse_scaled_u64(const std::string& tok) {
    if (tok.empty())
        throw std::invalid_argument("empty numeric field");
    uint64_t mult = 1;
    std::string num = tok;
    char suffix = tok.back();
    if (suffix == 'K' || suffix == 'k') {
        mult = 1000;
        num.pop_back();
    } else if (suffix == 'M' || suffix == 'm') {
        mult = 1000000;
        num.pop_back();
    }
    return static_cast<uint64_t>(std::stoull(num)) * mult;
}

inline std::vector<WorkloadPhase> parse_phases(std::istream& in) {
    std::vector<WorkloadPhase> phases;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos)
            line.erase(hash);
        std::istringstream ls(line);
        std::string dur, thr, range, ins, init;
        if (!(ls >> dur))
            continue;  // blank line
        if (!(ls >> thr >> range >> ins))
            throw std::runtime_error("phase file line " + std::to_string(lineno) +
                                     ": expected duration threads key_range insert_pct");
        WorkloadPhase p;
        try {
            p.duration_s = std::stod(dur);
            p.n_threads = std::stoi(thr);
            p.key_range = parse_scaled_u64(range);
            p.insert_pct = std::stod(ins);
            if (p.insert_pct > 1.0)
                p.insert_pct /= 100.0;
            if (ls >> init)
                p.initial_size = parse_scaled_u64(init);
        } catch (const std::exception& e) {
            throw std::runtime_error("phase file line " + std::to_string(lineno) + ": " +
                                     e.what());
        }
        if (p.duration_s <= 0 || p.n_threads < 1 || p.key_range < 1 ||
            p.insert_pct < 0 || p.insert_pct > 1)
            throw std::runtime_error("phase file line " + std::to_string(lineno) +
                                     ": field out of range");
        phases.push_back(p);
    }
    if (phases.empty())
        throw std::runtime_error("phase file contains no phases");
    return phases;
}

inline std::vector<WorkloadPhase> load_phase_file(const std::string& path) {
    std::ifstream f(path);
    if (!f)
        throw std::runtime_error("cannot open phase file: " + path);
    return parse_phases(f);
}

// ---------------------------------------------------------------------------
// Workload runner
// ---------------------------------------------------------------------------

namespace detail {

struct alignas(64) OpCounter {
    std::atomic<uint64_t> ops{0};
};

// Per-worker conservation log: keys successfully inserted / deleted.
struct WorkerLog {
    std::vector<uint64_t> inserted;
    std::vector<uint64_t> deleted;
};

struct PhaseClock {
    std::atomic<bool> stop{false};
};

inline uint64_t mix_seed(uint64_t seed, uint64_t phase, uint64_t worker) {
    uint64_t x = seed ^ (phase * 0x9e3779b97f4a7c15ull) ^ (worker * 0xbf58476d1ce4e5b9ull);
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ull;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebull;
    x ^= x >> 31;
    return x | 1;
}

// The deterministic per-worker operation stream: (is_insert, key) pairs.
class OpStream {
  public:
    OpStream(uint64_t seed, uint64_t key_range, double insert_pct)
        : rng_(seed), key_range_(key_range), insert_pct_(insert_pct) {}

    std::pair<bool, uint64_t> next() {
        bool ins = dist01_(rng_) < insert_pct_;
        uint64_t key = 1 + rng_() % key_range_;
        return {ins, key};
    }

  private:
    std::mt19937_64 rng_;
    uint64_t key_range_;
    double insert_pct_;
    std::uniform_real_distribution<double> dist01_{0.0, 1.0};
};

inline void delay_loop(int iters) {
    for (int i = 0; i < iters; ++i)
        cpu_relax();
}

// init_server pins the calling thread; the setup thread must shed that
// affinity afterwards or every worker it spawns inherits the server's mask.
class AffinityGuard {
  public:
#if defined(__linux__)
    AffinityGuard() { ok_ = sched_getaffinity(0, sizeof(mask_), &mask_) == 0; }
    ~AffinityGuard() {
        if (ok_)
            sched_setaffinity(0, sizeof(mask_), &mask_);
    }

  private:
    cpu_set_t mask_{};
    bool ok_ = false;
#endif
};

}  // namespace detail

// Runs `phases` against the chosen implementation. The queue object persists
// across phases; each phase quiesces, re-places and restarts worker threads.
// Ends with the conservation audit unless cfg.run_audit is false; a violation
// throws.
inline RunResult run_workload(Impl impl, const std::vector<WorkloadPhase>& phases,
                              const RunConfig& cfg) {
    using clock = std::chrono::steady_clock;
    if (phases.empty())
        throw std::invalid_argument("run_workload: no phases");
    if (impl == Impl::ffwd && cfg.servers != 1)
        throw std::invalid_argument("run_workload: ffwd requires exactly one server");
    const bool delegated = impl != Impl::oblivious;
    int max_threads = 0;
    for (const auto& p : phases) {
        max_threads = std::max(max_threads, p.n_threads);
        if (delegated && p.n_threads < cfg.servers)
            throw std::invalid_argument("run_workload: phase thread count below server count");
    }

    Topology topo = discover();
    SkipListPQ queue(cfg.max_level, cfg.seed);

    std::unique_ptr<SmartPQ> smart;
    std::unique_ptr<NuddlePQ> nuddle;
    std::vector<SmartClientHandle> smart_clients;
    std::vector<SmartServerHandle> smart_servers;
    std::vector<ClientHandle> clients;
    std::vector<ServerHandle> servers;
    std::unique_ptr<DecisionLoop> loop;

    const int max_clients = delegated ? std::max(1, max_threads - cfg.servers) : 0;
    auto placements = placement(topo, delegated ? cfg.servers : 0,
                                delegated ? max_clients : max_threads, cfg.client_group);
    auto context_for = [&](bool server, int idx) -> int {
        int n = 0;
        for (const auto& pl : placements) {
            bool is_server = pl.role == ThreadRole::server;
            if (is_server == server) {
                if (n == idx)
                    return pl.context;
                ++n;
            }
        }
        return -1;
    };

    if (delegated) {
        detail::AffinityGuard restore_affinity;
        SprayParams sp{static_cast<unsigned>(max_threads)};
        if (impl == Impl::smartpq) {
            smart = std::make_unique<SmartPQ>(queue, cfg.servers, max_clients, cfg.line_size);
            if (cfg.use_spray) {
                smart->set_client_spray(sp);
                smart->nuddle().set_server_spray(SprayParams{static_cast<unsigned>(cfg.servers)});
            }
            if (cfg.tree)
                smart->install_tree(cfg.tree);
            if (cfg.initial_mode)
                smart->force_mode(cfg.initial_mode);
            for (int s = 0; s < cfg.servers; ++s)
                smart_servers.push_back(smart->init_server(context_for(true, s)));
            for (int c = 0; c < max_clients; ++c)
                smart_clients.push_back(smart->init_client());
            loop = std::make_unique<DecisionLoop>(
                *smart, std::chrono::duration<double>(cfg.decision_interval_s));
        } else {
            nuddle = std::make_unique<NuddlePQ>(queue, cfg.servers, max_clients, cfg.line_size);
            if (cfg.use_spray)
                nuddle->set_server_spray(SprayParams{static_cast<unsigned>(cfg.servers)});
            for (int s = 0; s < cfg.servers; ++s)
                servers.push_back(nuddle->init_server(context_for(true, s)));
            for (int c = 0; c < max_clients; ++c)
                clients.push_back(nuddle->init_client());
        }
    }

    // Conservation bookkeeping: one log per worker slot plus one for the
    // initial fill.
    std::vector<detail::WorkerLog> logs(static_cast<size_t>(max_threads) + 1);
    detail::WorkerLog& init_log = logs.back();

    // Initial fill: distinct random keys drawn from the first phase's range.
    {
        std::mt19937_64 rng(cfg.seed ^ 0xfeedfacecafebeefull);
        uint64_t want = std::min<uint64_t>(phases[0].initial_size, phases[0].key_range);
        std::unordered_set<uint64_t> chosen;
        while (chosen.size() < want) {
            uint64_t k = 1 + rng() % phases[0].key_range;
            if (chosen.insert(k).second) {
                queue.insert(k, k);
                init_log.inserted.push_back(k);
            }
        }
    }

    std::vector<detail::OpCounter> counters(static_cast<size_t>(max_threads));
    RunResult result;
    auto run_start = clock::now();
    result.run_start = run_start;

    for (size_t pi = 0; pi < phases.size(); ++pi) {
        const WorkloadPhase& phase = phases[pi];
        detail::PhaseClock pc;
        std::vector<std::thread> threads;

        int n_servers = delegated ? cfg.servers : 0;
        int n_clients = phase.n_threads - n_servers;

        SprayParams direct_spray{static_cast<unsigned>(phase.n_threads)};

        auto client_body = [&](int slot, int worker_idx) {
            if (cfg.pin_threads) {
                int ctx = context_for(false, worker_idx);
                if (ctx >= 0)
                    topo.pin_self(ctx);
            }
            detail::OpStream ops(detail::mix_seed(cfg.seed, pi, static_cast<uint64_t>(slot)),
                                 phase.key_range, phase.insert_pct);
            detail::WorkerLog& log = logs[static_cast<size_t>(slot)];
            auto& ctr = counters[static_cast<size_t>(slot)].ops;
            while (!pc.stop.load(std::memory_order_relaxed)) {
                detail::delay_loop(cfg.pause_iters);
                auto [ins, key] = ops.next();
                if (impl == Impl::oblivious) {
                    if (ins) {
                        if (queue.insert(key, key))
                            log.inserted.push_back(key);
                    } else {
                        auto r = cfg.use_spray ? queue.delete_min_spray(direct_spray)
                                               : queue.delete_min_exact();
                        if (r)
                            log.deleted.push_back(r->first);
                    }
                } else if (impl == Impl::smartpq) {
                    auto& h = smart_clients[static_cast<size_t>(worker_idx)];
                    if (ins) {
                        if (h.insert(key, key))
                            log.inserted.push_back(key);
                    } else {
                        auto r = h.delete_min();
                        if (r)
                            log.deleted.push_back(r->first);
                    }
                } else {
                    auto& h = clients[static_cast<size_t>(worker_idx)];
                    if (ins) {
                        if (h.insert(key, key))
                            log.inserted.push_back(key);
                    } else {
                        auto r = h.delete_min();
                        if (r)
                            log.deleted.push_back(r->first);
                    }
                }
                ctr.fetch_add(1, std::memory_order_relaxed);
            }
        };

        auto server_body = [&](int slot, int server_idx) {
            if (cfg.pin_threads) {
                int ctx = context_for(true, server_idx);
                if (ctx >= 0)
                    topo.pin_self(ctx);
            }
            detail::OpStream ops(detail::mix_seed(cfg.seed, pi, static_cast<uint64_t>(slot)),
                                 phase.key_range, phase.insert_pct);
            detail::WorkerLog& log = logs[static_cast<size_t>(slot)];
            auto& ctr = counters[static_cast<size_t>(slot)].ops;
            while (!pc.stop.load(std::memory_order_relaxed)) {
                // Serve pending requests, then perform one own operation.
                if (impl == Impl::smartpq)
                    smart_servers[static_cast<size_t>(server_idx)].serve();
                else
                    servers[static_cast<size_t>(server_idx)].serve_requests();
                detail::delay_loop(cfg.pause_iters);
                auto [ins, key] = ops.next();
                if (impl == Impl::smartpq) {
                    auto& h = smart_servers[static_cast<size_t>(server_idx)];
                    if (ins) {
                        if (h.insert(key, key))
                            log.inserted.push_back(key);
                    } else {
                        auto r = h.delete_min();
                        if (r)
                            log.deleted.push_back(r->first);
                    }
                } else {
                    auto& h = servers[static_cast<size_t>(server_idx)];
                    if (ins) {
                        if (h.insert(key, key))
                            log.inserted.push_back(key);
                    } else {
                        auto r = h.delete_min();
                        if (r)
                            log.deleted.push_back(r->first);
                    }
                }
                ctr.fetch_add(1, std::memory_order_relaxed);
            }
            // Final drain so no client is left spinning at phase end.
            if (impl == Impl::smartpq)
                smart_servers[static_cast<size_t>(server_idx)].delegated().serve_requests();
            else
                servers[static_cast<size_t>(server_idx)].serve_requests();
        };

        for (int s = 0; s < n_servers; ++s)
            threads.emplace_back(server_body, s, s);
        for (int c = 0; c < n_clients; ++c)
            threads.emplace_back(client_body, n_servers + c, c);

        auto total_ops = [&] {
            uint64_t t = 0;
            for (auto& c : counters)
                t += c.ops.load(std::memory_order_relaxed);
            return t;
        };

        // Sampling: one throughput sample per elapsed second, plus a final
        // partial-window sample for sub-second phases.
        auto phase_start = clock::now();
        auto phase_end = phase_start + std::chrono::duration_cast<clock::duration>(
                                           std::chrono::duration<double>(phase.duration_s));
        uint64_t ops_at_window = total_ops();
        uint64_t ops_at_phase = ops_at_window;
        auto window_start = phase_start;
        while (clock::now() < phase_end) {
            auto next = std::min(phase_end, window_start + std::chrono::seconds(1));
            std::this_thread::sleep_until(next);
            double dt = std::chrono::duration<double>(clock::now() - window_start).count();
            if (dt <= 0)
                continue;
            uint64_t now_ops = total_ops();
            result.sample_times.push_back(
                std::chrono::duration<double>(clock::now() - run_start).count());
            result.samples.push_back(static_cast<double>(now_ops - ops_at_window) / dt);
            result.sample_modes.push_back(smart ? smart->mode() : 0);
            ops_at_window = now_ops;
            window_start = clock::now();
        }

        pc.stop.store(true, std::memory_order_relaxed);
        for (auto& t : threads)
            t.join();

        double elapsed = std::chrono::duration<double>(clock::now() - phase_start).count();
        result.phase_means.push_back(static_cast<double>(total_ops() - ops_at_phase) /
                                     std::max(elapsed, 1e-9));
    }

    if (loop)
        loop->stop();
    if (smart)
        result.transitions = smart->transitions();
    result.final_size = queue.size();
    for (auto& c : counters)
        result.total_ops += c.ops.load(std::memory_order_relaxed);

    if (cfg.run_audit) {
        std::unordered_map<uint64_t, int64_t> balance;
        for (const auto& log : logs) {
            for (uint64_t k : log.inserted)
                ++balance[k];
            for (uint64_t k : log.deleted)
                --balance[k];
        }
        while (auto r = queue.delete_min_exact())
            --balance[r->first];
        for (const auto& [k, v] : balance) {
            if (v != 0) {
                result.conservation_ok = false;
                throw std::runtime_error("conservation audit failed for key " +
                                         std::to_string(k));
            }
        }
        result.conservation_ok = true;
    }
    return result;
}

// ---------------------------------------------------------------------------
// Training-data generation
// ---------------------------------------------------------------------------

struct GridSpec {
    std::vector<int> threads;
    std::vector<uint64_t> sizes;
    std::vector<uint64_t> ranges;
    std::vector<double> inserts;

    size_t count() const {
        return threads.size() * sizes.size() * ranges.size() * inserts.size();
    }
};

// Grid spec string: "threads=1,2;size=100,10K;range=1K,1M;insert=0.5,1.0"
inline GridSpec parse_grid(const std::string& spec) {
    GridSpec g;
    std::stringstream ss(spec);
    std::string part;
    while (std::getline(ss, part, ';')) {
        if (part.empty())
            continue;
        auto eq = part.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("grid spec: missing '=' in '" + part + "'");
        std::string key = part.substr(0, eq);
        std::stringstream vs(part.substr(eq + 1));
        std::string item;
        while (std::getline(vs, item, ',')) {
            if (item.empty())
                continue;
            if (key == "threads")
                g.threads.push_back(std::stoi(item));
            else if (key == "size")
                g.sizes.push_back(parse_scaled_u64(item));
            else if (key == "range")
                g.ranges.push_back(parse_scaled_u64(item));
            else if (key == "insert")
                g.inserts.push_back(std::stod(item));
            else
                throw std::invalid_argument("grid spec: unknown key '" + key + "'");
        }
    }
    if (g.count() == 0)
        throw std::invalid_argument("grid spec: empty grid");
    return g;
}

// Grid file: same key=value lists, one per line, '#' comments.
inline GridSpec load_grid_file(const std::string& path) {
    std::ifstream f(path);
    if (!f)
        throw std::runtime_error("cannot open grid file: " + path);
    std::string joined, line;
    while (std::getline(f, line)) {
        auto hash = line.find('#');
        if (hash != std::string::npos)
            line.erase(hash);
        // trim
        auto b = line.find_first_not_of(" \t\r");
        if (b == std::string::npos)
            continue;
        auto e = line.find_last_not_of(" \t\r");
        if (!joined.empty())
            joined += ';';
        joined += line.substr(b, e - b + 1);
    }
    return parse_grid(joined);
}

struct TrainingConfig {
    double duration_s = 1.0;  // per mode per grid point (full scale: 5 s)
    int servers = 2;
    uint64_t seed = 1;
    double threshold = kDefaultTieThreshold;
    int pause_iters = 25;
    bool pin_threads = true;
};

inline const char* kSampleCsvHeader = "n_threads,size,key_range,insert_pct,thr_obl,thr_aware,label";

// Measures both modes for every grid point and appends labeled CSV rows.
// Returns the number of rows written. `progress` (optional) is called after
// each point.
inline size_t gen_training(const GridSpec& grid, std::ostream& out, const TrainingConfig& tc,
                           const std::function<void(size_t, size_t)>& progress = {}) {
    out << kSampleCsvHeader << '\n';
    size_t total = grid.count();
    size_t done = 0;
    for (int threads : grid.threads) {
        for (uint64_t size : grid.sizes) {
            for (uint64_t range : grid.ranges) {
                for (double insert : grid.inserts) {
                    WorkloadPhase phase;
                    phase.duration_s = tc.duration_s;
                    phase.n_threads = threads;
                    phase.key_range = std::max<uint64_t>(range, size);
                    phase.insert_pct = insert;
                    phase.initial_size = size;

                    RunConfig rc;
                    rc.seed = tc.seed + done;
                    rc.pause_iters = tc.pause_iters;
                    rc.pin_threads = tc.pin_threads;
                    rc.servers = std::min(tc.servers, std::max(1, threads));

                    double thr_obl = run_workload(Impl::oblivious, {phase}, rc).phase_means[0];
                    double thr_aware = run_workload(Impl::nuddle, {phase}, rc).phase_means[0];
                    int lab = static_cast<int>(label(thr_obl, thr_aware, tc.threshold));

                    out << threads << ',' << size << ',' << range << ',' << insert << ','
                        << thr_obl << ',' << thr_aware << ',' << lab << '\n';
                    ++done;
                    if (progress)
                        progress(done, total);
                }
            }
        }
    }
    return done;
}

// CSV sample loading (format shared with gen_training).
inline std::vector<LabeledSample> load_samples_csv(std::istream& in) {
    std::vector<LabeledSample> samples;
    std::string line;
    bool first = true;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty())
            continue;
        if (first) {
            first = false;
            if (line.rfind("n_threads", 0) == 0)
                continue;  // header
        }
        std::stringstream ls(line);
        std::string tok;
        std::vector<double> fields;
        while (std::getline(ls, tok, ','))
            fields.push_back(std::stod(tok));
        if (fields.size() != 7)
            throw std::runtime_error("samples CSV line " + std::to_string(lineno) +
                                     ": expected 7 fields");
        LabeledSample s;
        s.features.n_threads = fields[0];
        s.features.size = fields[1];
        s.features.key_range = fields[2];
        s.features.insert_pct = fields[3];
        s.thr_oblivious = fields[4];
        s.thr_aware = fields[5];
        s.label = static_cast<int>(fields[6]);
        samples.push_back(s);
    }
    return samples;
}

}  // namespace smartpq
