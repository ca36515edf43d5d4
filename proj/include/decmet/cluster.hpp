#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "decmet/errors.hpp"
#include "decmet/ingest.hpp"
#include "decmet/model.hpp"

namespace decmet::cluster {

// Union-find over address strings with union by size. Paths stay short
// (O(log n)) without compression on the const lookup path, so a finished map
// is safe to query from many threads at once.
class ClusterMap {
  public:
    std::size_t add(std::string_view addr) {
        auto it = index_.find(std::string{addr});
        if (it != index_.end()) return it->second;
        std::size_t id = names_.size();
        index_.emplace(std::string{addr}, id);
        names_.emplace_back(addr);
        parent_.push_back(id);
        size_.push_back(1);
        min_member_.push_back(id);
        return id;
    }

    void unite(std::string_view a, std::string_view b) {
        std::size_t ra = find_mut(add(a));
        std::size_t rb = find_mut(add(b));
        if (ra == rb) return;
        if (size_[ra] < size_[rb]) std::swap(ra, rb);
        parent_[rb] = ra;
        size_[ra] += size_[rb];
        if (names_[min_member_[rb]] < names_[min_member_[ra]])
            min_member_[ra] = min_member_[rb];
    }

    bool contains(std::string_view addr) const {
        return index_.find(std::string{addr}) != index_.end();
    }

    bool same_cluster(std::string_view a, std::string_view b) const {
        auto ia = index_.find(std::string{a});
        auto ib = index_.find(std::string{b});
        if (ia == index_.end() || ib == index_.end()) return a == b;
        return find(ia->second) == find(ib->second);
    }

    // Lexicographically smallest member of the address's cluster; an unknown
    // address represents itself.
    std::string representative(std::string_view addr) const {
        auto it = index_.find(std::string{addr});
        if (it == index_.end()) return std::string{addr};
        return names_[min_member_[find(it->second)]];
    }

    std::size_t size() const { return names_.size(); }

    std::size_t cluster_count() const {
        std::size_t n = 0;
        for (std::size_t i = 0; i < parent_.size(); ++i)
            if (find(i) == i) ++n;
        return n;
    }

    // Every cluster with its members sorted; clusters ordered by their first
    // member. Intended for tests and reports.
    std::vector<std::vector<std::string>> clusters() const {
        std::map<std::size_t, std::vector<std::string>> by_root;
        for (std::size_t i = 0; i < names_.size(); ++i) by_root[find(i)].push_back(names_[i]);
        std::vector<std::vector<std::string>> out;
        out.reserve(by_root.size());
        for (auto& [root, members] : by_root) {
            (void)root;
            std::sort(members.begin(), members.end());
            out.push_back(std::move(members));
        }
        std::sort(out.begin(), out.end(),
                  [](const auto& a, const auto& b) { return a.front() < b.front(); });
        return out;
    }

    // Merge every cluster of `other` into this map.
    void absorb(const ClusterMap& other) {
        for (const auto& members : other.clusters())
            for (std::size_t i = 1; i < members.size(); ++i) unite(members[0], members[i]);
        for (const auto& name : other.names_) add(name);
    }

  private:
    std::size_t find(std::size_t i) const {
        while (parent_[i] != i) i = parent_[i];
        return i;
    }

    std::size_t find_mut(std::size_t i) {
        std::size_t root = i;
        while (parent_[root] != root) root = parent_[root];
        while (parent_[i] != root) {
            std::size_t next = parent_[i];
            parent_[i] = root;
            i = next;
        }
        return root;
    }

    std::unordered_map<std::string, std::size_t> index_;
    std::vector<std::string> names_;
    std::vector<std::size_t> parent_;
    std::vector<std::size_t> size_;
    std::vector<std::size_t> min_member_;  // valid at roots
};

// Multi-input heuristic: addresses spent together in one transaction belong
// to one entity; chains of co-spends connect transitively.
inline ClusterMap build_multi_input_clusters(std::span<const ingest::TxInputs> txs) {
    ClusterMap map;
    for (const auto& tx : txs) {
        if (tx.addresses.empty()) continue;
        map.add(tx.addresses.front());
        for (std::size_t i = 1; i < tx.addresses.size(); ++i)
            map.unite(tx.addresses.front(), tx.addresses[i]);
    }
    return map;
}

// Stake-key grouping: addresses sharing a stake key are one entity; keyless
// addresses stay singletons.
inline ClusterMap build_stake_key_clusters(std::span<const ingest::StakeKeyRecord> records) {
    ClusterMap map;
    std::unordered_map<std::string, std::string> first_for_key;
    for (const auto& rec : records) {
        map.add(rec.address);
        if (!rec.stake_key) continue;
        auto [it, inserted] = first_for_key.emplace(*rec.stake_key, rec.address);
        if (!inserted) map.unite(it->second, rec.address);
    }
    return map;
}

struct MergeLink {
    std::string child;
    std::string parent;
    std::optional<Date> effective_from;  // absent = always in effect
};

struct EntityMap {
    std::map<std::string, std::string> address_to_entity;
    std::map<std::string, std::string> tag_to_entity;
    std::vector<MergeLink> merges;

    bool empty() const {
        return address_to_entity.empty() && tag_to_entity.empty() && merges.empty();
    }
};

namespace detail {

// Conflicting duplicate mappings keep the lexicographically smallest entity
// so the result does not depend on record order.
inline void insert_mapping(std::map<std::string, std::string>& m, const std::string& key,
                           const std::string& entity, const char* what, Warnings* warnings) {
    auto [it, inserted] = m.emplace(key, entity);
    if (inserted || it->second == entity) return;
    std::string keep = std::min(it->second, entity);
    warn(warnings, std::string{what} + " '" + key + "' mapped to both '" + it->second +
                       "' and '" + entity + "'; keeping '" + keep + "'");
    it->second = keep;
}

inline void check_merges_acyclic(const std::vector<MergeLink>& merges) {
    std::map<std::string, std::vector<std::string>> adj;
    for (const auto& m : merges) adj[m.child].push_back(m.parent);
    std::map<std::string, int> state;  // 0 new, 1 in progress, 2 done
    std::vector<std::pair<std::string, std::size_t>> stack;
    for (const auto& [start, _] : adj) {
        if (state[start]) continue;
        stack.emplace_back(start, 0);
        state[start] = 1;
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            auto it = adj.find(node);
            if (it == adj.end() || next >= it->second.size()) {
                state[node] = 2;
                stack.pop_back();
                continue;
            }
            const std::string& child = it->second[next++];
            if (state[child] == 1)
                throw CyclicMergeError("merge links form a cycle through '" + child + "'");
            if (state[child] == 0) {
                state[child] = 1;
                stack.emplace_back(child, 0);
            }
        }
    }
}

}  // namespace detail

inline EntityMap build_entity_map(std::span<const ingest::AttributionRecord> records,
                                  Warnings* warnings = nullptr) {
    EntityMap map;
    std::set<std::tuple<std::string, std::string, std::optional<Date>>> seen_links;
    for (const auto& rec : records) {
        switch (rec.kind) {
            case ingest::AttributionKind::address_tag:
                if (rec.effective_from || rec.effective_to)
                    warn(warnings, "address_tag '" + rec.key +
                                       "': date range ignored (only legal_link is dated)");
                detail::insert_mapping(map.address_to_entity, rec.key, rec.entity_id, "address",
                                       warnings);
                break;
            case ingest::AttributionKind::block_tag:
                if (rec.effective_from || rec.effective_to)
                    warn(warnings, "block_tag '" + rec.key +
                                       "': date range ignored (only legal_link is dated)");
                detail::insert_mapping(map.tag_to_entity, rec.key, rec.entity_id, "tag", warnings);
                break;
            case ingest::AttributionKind::legal_link:
                if (rec.key == rec.entity_id) {
                    warn(warnings, "ignoring self-merge of '" + rec.key + "'");
                    break;
                }
                if (rec.effective_to)
                    warn(warnings, "legal_link '" + rec.key +
                                       "': effective_to ignored (links are open-ended)");
                if (seen_links.emplace(rec.key, rec.entity_id, rec.effective_from).second)
                    map.merges.push_back({rec.key, rec.entity_id, rec.effective_from});
                break;
        }
    }
    detail::check_merges_acyclic(map.merges);
    return map;
}

// Follows merge links applicable at as_of. When several links apply to one
// entity the one with the latest effective_from wins (undated links rank
// earliest); remaining ties resolve to the smallest parent id.
inline std::string apply_merges(const EntityMap& map, std::string entity, Date as_of) {
    if (map.merges.empty()) return entity;
    for (std::size_t step = 0; step <= map.merges.size(); ++step) {
        const MergeLink* best = nullptr;
        for (const auto& m : map.merges) {
            if (m.child != entity) continue;
            if (m.effective_from && *m.effective_from > as_of) continue;
            if (!best) {
                best = &m;
                continue;
            }
            Date bf = best->effective_from.value_or(Date::min());
            Date mf = m.effective_from.value_or(Date::min());
            if (mf > bf || (mf == bf && m.parent < best->parent)) best = &m;
        }
        if (!best) return entity;
        entity = best->parent;
    }
    throw CyclicMergeError("merge chain did not terminate at '" + entity + "'");
}

// Resolver with precomputed per-cluster tag lookups. Construction may emit
// warnings (ambiguous tags); resolution afterwards is const and thread-safe.
class EntityResolver {
  public:
    EntityResolver() = default;

    EntityResolver(const ClusterMap* clusters, const EntityMap* entities,
                   Warnings* warnings = nullptr)
        : clusters_(clusters), entities_(entities) {
        if (!clusters_ || !entities_) return;
        // Representative -> smallest tagged entity in that cluster.
        std::map<std::string, std::set<std::string>> candidates;
        for (const auto& [addr, entity] : entities_->address_to_entity)
            if (clusters_->contains(addr))
                candidates[clusters_->representative(addr)].insert(entity);
        for (auto& [rep, ents] : candidates) {
            if (ents.size() > 1) {
                std::string all;
                for (const auto& e : ents) {
                    if (!all.empty()) all += ", ";
                    all += e;
                }
                warn(warnings, "ambiguous tags in cluster of '" + rep + "' (" + all +
                                   "); keeping '" + *ents.begin() + "'");
            }
            cluster_entity_.emplace(rep, *ents.begin());
        }
    }

    // Address-level resolution: explicit tag, then a tagged cluster sibling,
    // then a synthetic per-cluster entity; merges applied last.
    std::string resolve(std::string_view address, Date as_of) const {
        std::string entity;
        if (auto mapped = lookup_mapped(address))
            entity = std::move(*mapped);
        else
            entity = synthetic(address);
        return entities_ ? apply_merges(*entities_, std::move(entity), as_of) : entity;
    }

    // Block-level resolution: creator tag, then the first reward address
    // that maps to a known entity, then a synthetic entity over the sorted
    // reward-address list.
    std::string resolve_block(const BlockRecord& block, Date as_of) const {
        if (block.creator_tag && entities_) {
            auto it = entities_->tag_to_entity.find(*block.creator_tag);
            if (it != entities_->tag_to_entity.end())
                return apply_merges(*entities_, it->second, as_of);
        }
        for (const auto& addr : block.reward_addresses)
            if (auto mapped = lookup_mapped(addr))
                return entities_ ? apply_merges(*entities_, std::move(*mapped), as_of) : *mapped;
        std::vector<std::string> addrs = block.reward_addresses;
        std::sort(addrs.begin(), addrs.end());
        addrs.erase(std::unique(addrs.begin(), addrs.end()), addrs.end());
        std::string entity = "cluster:" + ingest::detail::join_pipe(addrs);
        return entities_ ? apply_merges(*entities_, std::move(entity), as_of) : entity;
    }

  private:
    // Steps (1)-(2): a real entity id, or nothing. Synthetic fallbacks are
    // deliberately not "known" here.
    std::optional<std::string> lookup_mapped(std::string_view address) const {
        if (entities_) {
            auto it = entities_->address_to_entity.find(std::string{address});
            if (it != entities_->address_to_entity.end()) return it->second;
        }
        if (clusters_ && clusters_->contains(address)) {
            auto it = cluster_entity_.find(clusters_->representative(address));
            if (it != cluster_entity_.end()) return it->second;
        }
        return std::nullopt;
    }

    std::string synthetic(std::string_view address) const {
        std::string rep = clusters_ ? clusters_->representative(address) : std::string{address};
        return "cluster:" + rep;
    }

    const ClusterMap* clusters_ = nullptr;
    const EntityMap* entities_ = nullptr;
    std::map<std::string, std::string> cluster_entity_;
};

}  // namespace decmet::cluster
