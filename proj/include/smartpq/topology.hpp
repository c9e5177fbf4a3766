#pragma once

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#if defined(__linux__)
#include <pthread.h>
#include <sched.h>
#include <thread>
#endif

namespace smartpq {

// Hardware-context layout: which node owns which context ids. A simulated
// topology (from a "nodes=N,cpn=M" spec string or the ADAPTIVEPQ_TOPOLOGY
// env var) is fully deterministic and never pins threads.
struct Topology {
    std::vector<int> nodes;          // node ids, in placement order
    std::vector<std::vector<int>> contexts;  // contexts[node] = context ids
    bool simulated = false;

    int node_count() const { return static_cast<int>(nodes.size()); }
    int context_count() const {
        int n = 0;
        for (const auto& c : contexts)
            n += static_cast<int>(c.size());
        return n;
    }
    bool valid_context(int ctx) const {
        for (const auto& c : contexts)
            for (int id : c)
                if (id == ctx)
                    return true;
        return false;
    }

    bool pin_self(int ctx) const;  // defined below, after pin_self_to
};

enum class ThreadRole { server, client };

struct Placement {
    ThreadRole role;
    int context;
};

// Parses "nodes=N,cpn=M". Returns false on malformed input.
inline bool parse_topology_spec(const std::string& spec, Topology& out) {
    int nodes = 0, cpn = 0;
    std::stringstream ss(spec);
    std::string part;
    while (std::getline(ss, part, ',')) {
        auto eq = part.find('=');
        if (eq == std::string::npos)
            return false;
        std::string key = part.substr(0, eq);
        int val = 0;
        try {
            val = std::stoi(part.substr(eq + 1));
        } catch (...) {
            return false;
        }
        if (key == "nodes")
            nodes = val;
        else if (key == "cpn")
            cpn = val;
        else
            return false;
    }
    if (nodes < 1 || cpn < 1)
        return false;
    out = Topology{};
    out.simulated = true;
    for (int n = 0; n < nodes; ++n) {
        out.nodes.push_back(n);
        std::vector<int> ctx;
        for (int c = 0; c < cpn; ++c)
            ctx.push_back(n * cpn + c);
        out.contexts.push_back(std::move(ctx));
    }
    return true;
}

namespace detail {

inline std::vector<int> parse_cpulist(const std::string& s) {
    std::vector<int> cpus;
    std::stringstream ss(s);
    std::string range;
    while (std::getline(ss, range, ',')) {
        if (range.empty())
            continue;
        auto dash = range.find('-');
        try {
            if (dash == std::string::npos) {
                cpus.push_back(std::stoi(range));
            } else {
                int lo = std::stoi(range.substr(0, dash));
                int hi = std::stoi(range.substr(dash + 1));
                for (int c = lo; c <= hi; ++c)
                    cpus.push_back(c);
            }
        } catch (...) {
        }
    }
    return cpus;
}

inline bool discover_sysfs(Topology& out) {
#if defined(__linux__)
    out = Topology{};
    for (int n = 0;; ++n) {
        std::ifstream f("/sys/devices/system/node/node" + std::to_string(n) + "/cpulist");
        if (!f)
            break;
        std::string line;
        std::getline(f, line);
        auto cpus = parse_cpulist(line);
        if (cpus.empty())
            continue;
        out.nodes.push_back(n);
        out.contexts.push_back(std::move(cpus));
    }
    return !out.nodes.empty();
#else
    (void)out;
    return false;
#endif
}

}  // namespace detail

// Reads ADAPTIVEPQ_TOPOLOGY if set, then the OS topology, then falls back to
// a single simulated node sized by hardware concurrency. Always usable.
inline Topology discover() {
    Topology t;
    if (const char* env = std::getenv("ADAPTIVEPQ_TOPOLOGY")) {
        if (parse_topology_spec(env, t))
            return t;
    }
    if (detail::discover_sysfs(t))
        return t;
    unsigned hw = 1;
#if defined(__linux__)
    hw = std::thread::hardware_concurrency();
    if (hw == 0)
        hw = 1;
#endif
    std::ostringstream spec;
    spec << "nodes=1,cpn=" << hw;
    parse_topology_spec(spec.str(), t);
    return t;
}

// Pinning policy as a pure function: servers occupy node 0's
// contexts in order (wrapping when oversubscribed); client groups of size
// `group` go to nodes round-robin, wrapping within a node's contexts.
inline std::vector<Placement> placement(const Topology& t, int n_servers, int n_clients,
                                        int group) {
    std::vector<Placement> out;
    if (t.node_count() == 0 || group < 1)
        return out;
    const auto& node0 = t.contexts[0];
    std::vector<size_t> cursor(t.node_count(), 0);
    for (int s = 0; s < n_servers; ++s) {
        out.push_back({ThreadRole::server, node0[cursor[0] % node0.size()]});
        ++cursor[0];
    }
    int placed = 0;
    int g = 0;
    while (placed < n_clients) {
        int node = g % t.node_count();
        const auto& ctx = t.contexts[node];
        for (int j = 0; j < group && placed < n_clients; ++j, ++placed) {
            out.push_back({ThreadRole::client, ctx[cursor[node] % ctx.size()]});
            ++cursor[node];
        }
        ++g;
    }
    return out;
}

// Best-effort affinity. Returns false (never throws) on simulated
// topologies, out-of-range contexts, or OS refusal.
inline bool pin_self_to(const Topology& t, int ctx) {
    if (t.simulated || !t.valid_context(ctx))
        return false;
#if defined(__linux__)
    cpu_set_t set;
    CPU_ZERO(&set);
    CPU_SET(ctx, &set);
    return pthread_setaffinity_np(pthread_self(), sizeof(set), &set) == 0;
#else
    return false;
#endif
}

inline bool Topology::pin_self(int ctx) const { return pin_self_to(*this, ctx); }

}  // namespace smartpq
