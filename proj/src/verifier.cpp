// SPDX-License-Identifier: Apache-2.0

#include "capr/verifier.hpp"

#include <algorithm>
#include <functional>
#include <limits>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>

namespace capr {

namespace {

void verifier_check(bool ok, const char* what) {
  if (!ok) {
    throw std::logic_error(std::string("verifier invariant violated: ") +
                           what);
  }
}

// Position of T0's commit, before every real event.
constexpr std::int64_t kInitialPos = -1;

struct SharedOp {
  EventKind kind;
  ObjectId object;
  Value value;
};

struct VertexInfo {
  // Positions of all events of this incarnation, in history order.
  std::vector<std::size_t> all_events;
  // First and last positions that matter for real-time order: shared-object
  // reads and writes plus the terminal. Begin events and local-object
  // traffic are private and do not pin a transaction in time.
  std::int64_t first_op = std::numeric_limits<std::int64_t>::max();
  std::int64_t last_op = -1;
  bool committed = false;
  std::int64_t commit_pos = -1;
  std::int64_t last_global_read = -1;
  // Shared-object reads and writes in order, for replaying the incarnation
  // against a candidate serialization.
  std::vector<SharedOp> ops;
  // Values the commit published: the last write per object.
  std::map<ObjectId, Value> wset;
};

struct ObjectUse {
  // Shared-memory reads: first contact of an incarnation with the object.
  // Later reads are served from the incarnation's own buffer and are not
  // memory operations.
  std::vector<std::pair<std::int64_t, TxnId>> global_reads;
  std::vector<std::pair<std::int64_t, TxnId>> commits;  // committed writers
};

struct Index {
  std::vector<TxnId> vertices;  // sorted, without T0
  std::map<TxnId, VertexInfo> info;
  std::map<ObjectId, ObjectUse> objects;
};

Index build_index(const History& h) {
  Index idx;
  std::set<std::pair<TxnId, ObjectId>> touched;
  for (std::size_t pos = 0; pos < h.events.size(); ++pos) {
    const Event& e = h.events[pos];
    TxnId v{e.tx, e.incarnation};
    VertexInfo& vi = idx.info[v];
    vi.all_events.push_back(pos);
    if (e.kind == EventKind::kBegin) continue;
    if (e.object && e.object->is_local()) continue;
    std::int64_t p = static_cast<std::int64_t>(pos);
    vi.first_op = std::min(vi.first_op, p);
    vi.last_op = p;
    switch (e.kind) {
      case EventKind::kRead: {
        bool global = touched.insert({v, *e.object}).second;
        if (global) {
          idx.objects[*e.object].global_reads.push_back({p, v});
          vi.last_global_read = p;
        }
        vi.ops.push_back({EventKind::kRead, *e.object, *e.value});
        break;
      }
      case EventKind::kWrite:
        touched.insert({v, *e.object});
        vi.ops.push_back({EventKind::kWrite, *e.object, *e.value});
        vi.wset[*e.object] = *e.value;
        break;
      case EventKind::kCommit:
        vi.committed = true;
        vi.commit_pos = p;
        break;
      default:
        break;
    }
  }
  for (auto& [v, vi] : idx.info) {
    idx.vertices.push_back(v);
    if (vi.committed) {
      for (const auto& [o, val] : vi.wset) {
        idx.objects[o].commits.push_back({vi.commit_pos, v});
      }
    }
  }
  for (auto& [o, use] : idx.objects) {
    std::sort(use.global_reads.begin(), use.global_reads.end());
    std::sort(use.commits.begin(), use.commits.end());
  }
  return idx;
}

void add_edge(ConflictGraph& g, TxnId from, TxnId to, unsigned label) {
  if (from == to) return;
  g.edges[{from, to}] |= label;
}

std::map<TxnId, std::vector<TxnId>> adjacency(const ConflictGraph& g) {
  std::map<TxnId, std::vector<TxnId>> adj;
  for (TxnId v : g.vertices) adj[v];
  for (const auto& [pair, labels] : g.edges) {
    adj[pair.first].push_back(pair.second);
  }
  return adj;  // map iteration keeps successor lists sorted
}

// Shortest cycle, as v0 .. v0; vertices are tried in sorted order so the
// result is deterministic.
std::optional<std::vector<TxnId>> find_cycle(const ConflictGraph& g) {
  auto adj = adjacency(g);
  std::optional<std::vector<TxnId>> best;
  for (TxnId start : g.vertices) {
    std::map<TxnId, TxnId> parent;
    std::vector<TxnId> queue{start};
    std::set<TxnId> seen{start};
    std::optional<TxnId> closer;
    for (std::size_t qi = 0; qi < queue.size() && !closer; ++qi) {
      TxnId cur = queue[qi];
      for (TxnId next : adj[cur]) {
        if (next == start) {
          closer = cur;
          break;
        }
        if (seen.insert(next).second) {
          parent.emplace(next, cur);
          queue.push_back(next);
        }
      }
    }
    if (!closer) continue;
    std::vector<TxnId> path{start};
    TxnId cur = *closer;
    std::vector<TxnId> back;
    while (cur != start) {
      back.push_back(cur);
      cur = parent.at(cur);
    }
    for (auto it = back.rbegin(); it != back.rend(); ++it) path.push_back(*it);
    path.push_back(start);
    if (!best || path.size() < best->size()) best = path;
  }
  return best;
}

// Kahn's algorithm; among ready vertices the one whose first operation
// appears earliest in the history goes next, so the witness follows the
// recorded order wherever the graph allows.
std::vector<TxnId> topological_order(const ConflictGraph& g,
                                     const Index& idx) {
  std::map<TxnId, std::size_t> indegree;
  for (TxnId v : g.vertices) indegree[v] = 0;
  for (const auto& [pair, labels] : g.edges) ++indegree[pair.second];
  auto key = [&](TxnId v) -> std::pair<std::int64_t, TxnId> {
    if (v == kInitialTxn) return {kInitialPos, v};
    return {idx.info.at(v).first_op, v};
  };
  std::set<std::pair<std::pair<std::int64_t, TxnId>, TxnId>> ready;
  for (const auto& [v, deg] : indegree) {
    if (deg == 0) ready.insert({key(v), v});
  }
  auto adj = adjacency(g);
  std::vector<TxnId> order;
  while (!ready.empty()) {
    TxnId v = ready.begin()->second;
    ready.erase(ready.begin());
    order.push_back(v);
    for (TxnId next : adj[v]) {
      if (--indegree[next] == 0) ready.insert({key(next), next});
    }
  }
  verifier_check(order.size() == g.vertices.size(),
                 "topological sort on a cyclic graph");
  return order;
}

// The history containing the same events, grouped by incarnation in the
// given order.
History sequential_witness(const History& hbar, const Index& idx,
                           const std::vector<TxnId>& order) {
  History s;
  s.events.reserve(hbar.events.size());
  for (TxnId v : order) {
    if (v == kInitialTxn) continue;
    for (std::size_t pos : idx.info.at(v).all_events) {
      s.events.push_back(hbar.events[pos]);
    }
  }
  return s;
}

std::set<std::pair<TxnId, TxnId>> conflict_pairs_of(const ConflictGraph& g) {
  std::set<std::pair<TxnId, TxnId>> out;
  for (const auto& [pair, labels] : g.edges) {
    if (labels & ~kEdgeRealTime) out.insert(pair);
  }
  return out;
}

}  // namespace

bool ConflictGraph::has_edge(TxnId from, TxnId to) const {
  return edges.count({from, to}) != 0;
}

unsigned ConflictGraph::labels(TxnId from, TxnId to) const {
  auto it = edges.find({from, to});
  return it == edges.end() ? 0u : it->second;
}

ValidityResult check_valid(const History& h) {
  std::map<ObjectId, std::set<Value>> published;
  std::map<std::pair<TxnId, ObjectId>, Value> buffer;
  std::map<TxnId, std::map<ObjectId, Value>> pending;
  for (const Event& e : h.events) {
    if (!e.object || e.object->is_local()) {
      if (e.kind == EventKind::kCommit) {
        TxnId v{e.tx, e.incarnation};
        for (const auto& [o, val] : pending[v]) published[o].insert(val);
      }
      continue;
    }
    TxnId v{e.tx, e.incarnation};
    if (e.kind == EventKind::kRead) {
      auto buf = buffer.find({v, *e.object});
      bool ok;
      if (buf != buffer.end()) {
        ok = *e.value == buf->second;
      } else {
        ok = *e.value == 0 || published[*e.object].count(*e.value) != 0;
      }
      if (!ok) return {false, e};
      buffer[{v, *e.object}] = *e.value;
    } else if (e.kind == EventKind::kWrite) {
      pending[v][*e.object] = *e.value;
      buffer[{v, *e.object}] = *e.value;
    }
  }
  return {true, std::nullopt};
}

LegalityResult check_legal(const History& h) {
  struct Published {
    Value value = 0;
    std::optional<Event> commit;  // absent for T0
  };
  std::map<ObjectId, Published> published;
  std::map<std::pair<TxnId, ObjectId>, Value> buffer;
  std::map<TxnId, std::map<ObjectId, Value>> pending;
  for (const Event& e : h.events) {
    if (!e.object || e.object->is_local()) {
      if (e.kind == EventKind::kCommit) {
        TxnId v{e.tx, e.incarnation};
        for (const auto& [o, val] : pending[v]) {
          published[o] = {val, e};
        }
      }
      continue;
    }
    TxnId v{e.tx, e.incarnation};
    if (e.kind == EventKind::kRead) {
      auto buf = buffer.find({v, *e.object});
      Value expected;
      std::optional<Event> lastw;
      if (buf != buffer.end()) {
        expected = buf->second;
      } else {
        auto pub = published.find(*e.object);
        expected = pub == published.end() ? 0 : pub->second.value;
        if (pub != published.end()) lastw = pub->second.commit;
      }
      if (*e.value != expected) {
        return {false, IllegalRead{e, expected, lastw}};
      }
      buffer[{v, *e.object}] = *e.value;
    } else if (e.kind == EventKind::kWrite) {
      pending[v][*e.object] = *e.value;
      buffer[{v, *e.object}] = *e.value;
    }
  }
  return {true, std::nullopt};
}

ConflictGraph build_conflict_graph(const History& h) {
  History hbar = complete(h);
  Index idx = build_index(hbar);
  ConflictGraph g;
  g.vertices.push_back(kInitialTxn);
  for (TxnId v : idx.vertices) g.vertices.push_back(v);

  // T0 committed before the first event: real-time for everyone, and its
  // writes of zero precede every committed writer and every read.
  for (TxnId v : idx.vertices) {
    add_edge(g, kInitialTxn, v, kEdgeRealTime);
  }
  for (const auto& [a, ai] : idx.info) {
    for (const auto& [b, bi] : idx.info) {
      if (a == b) continue;
      if (ai.last_op < bi.first_op) add_edge(g, a, b, kEdgeRealTime);
    }
  }
  for (const auto& [o, use] : idx.objects) {
    for (const auto& [cpos, writer] : use.commits) {
      add_edge(g, kInitialTxn, writer, kEdgeWriteWrite);
      for (const auto& [cpos2, writer2] : use.commits) {
        if (cpos < cpos2) add_edge(g, writer, writer2, kEdgeWriteWrite);
      }
      for (const auto& [rpos, reader] : use.global_reads) {
        if (cpos < rpos) {
          add_edge(g, writer, reader, kEdgeWriteRead);
        } else if (rpos < cpos) {
          add_edge(g, reader, writer, kEdgeReadWrite);
        }
      }
    }
    for (const auto& [rpos, reader] : use.global_reads) {
      add_edge(g, kInitialTxn, reader, kEdgeWriteRead);
    }
  }
  return g;
}

Verdict check_co_opaque(const History& h) {
  History hbar = complete(h);
  ValidityResult validity = check_valid(hbar);
  LegalityResult legality = check_legal(hbar);
  if (!validity.ok) {
    verifier_check(!legality.ok, "invalid history passed the legality check");
  }
  Verdict verdict;
  if (!legality.ok) {
    verdict.opaque = false;
    verdict.illegal = legality.violation;
    return verdict;
  }
  ConflictGraph g = build_conflict_graph(hbar);
  if (auto cycle = find_cycle(g)) {
    verdict.opaque = false;
    verdict.cycle = *cycle;
    return verdict;
  }
  Index idx = build_index(hbar);
  std::vector<TxnId> order = topological_order(g, idx);

  // Self-check the witness before vouching for it: serializing in this
  // order must stay legal and must not change any conflict pair.
  History s = sequential_witness(hbar, idx, order);
  verifier_check(check_legal(s).ok, "witness serialization is not legal");
  verifier_check(
      conflict_pairs_of(build_conflict_graph(s)) == conflict_pairs_of(g),
      "witness serialization changes the conflict order");

  verdict.opaque = true;
  verdict.witness = order;
  return verdict;
}

void write_verdict(std::ostream& out, const Verdict& v) {
  if (v.opaque) {
    out << "VERDICT opaque\n";
    out << "ORDER";
    for (TxnId t : v.witness) out << ' ' << to_string(t);
    out << '\n';
    return;
  }
  out << "VERDICT not-opaque\n";
  if (v.illegal) {
    out << "ILLEGAL seq=" << v.illegal->read.seq
        << " expected=" << v.illegal->expected << '\n';
    return;
  }
  out << "CYCLE";
  for (std::size_t i = 0; i < v.cycle.size(); ++i) {
    if (i > 0) out << " ->";
    out << ' ' << to_string(v.cycle[i]);
  }
  out << '\n';
}

std::string verdict_to_string(const Verdict& v) {
  std::ostringstream out;
  write_verdict(out, v);
  return out.str();
}

std::optional<bool> brute_force_opaque(const History& h,
                                       std::size_t max_txns) {
  History hbar = complete(h);
  Index idx = build_index(hbar);
  if (idx.vertices.size() > max_txns) return std::nullopt;

  const std::vector<TxnId>& vs = idx.vertices;
  std::size_t n = vs.size();

  // rt_preds[i]: vertices that finished before vs[i] began and so must be
  // placed first.
  std::vector<std::vector<std::size_t>> rt_preds(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      if (idx.info.at(vs[j]).last_op < idx.info.at(vs[i]).first_op) {
        rt_preds[i].push_back(j);
      }
    }
  }

  std::vector<char> placed(n, 0);
  std::map<ObjectId, Value> published;  // absent object reads as 0

  // Replays one incarnation at the current point of the serialization,
  // reading through its own buffer the way the engine does.
  auto fits = [&](std::size_t i) {
    std::map<ObjectId, Value> buffer;
    for (const SharedOp& op : idx.info.at(vs[i]).ops) {
      if (op.kind == EventKind::kWrite) {
        buffer[op.object] = op.value;
        continue;
      }
      auto buf = buffer.find(op.object);
      Value expected;
      if (buf != buffer.end()) {
        expected = buf->second;
      } else {
        auto pub = published.find(op.object);
        expected = pub == published.end() ? 0 : pub->second;
      }
      if (op.value != expected) return false;
      buffer[op.object] = op.value;
    }
    return true;
  };

  std::function<bool(std::size_t)> place = [&](std::size_t left) {
    if (left == 0) return true;
    for (std::size_t i = 0; i < n; ++i) {
      if (placed[i]) continue;
      bool ready = true;
      for (std::size_t p : rt_preds[i]) {
        if (!placed[p]) {
          ready = false;
          break;
        }
      }
      if (!ready || !fits(i)) continue;
      placed[i] = 1;
      const VertexInfo& vi = idx.info.at(vs[i]);
      std::map<ObjectId, Value> saved;
      if (vi.committed) {
        saved = published;
        for (const auto& [o, val] : vi.wset) published[o] = val;
      }
      if (place(left - 1)) return true;
      if (vi.committed) published = std::move(saved);
      placed[i] = 0;
    }
    return false;
  };

  return place(n);
}

SfmResult check_sfm_ordering(const History& h) {
  History hbar = complete(h);
  Index idx = build_index(hbar);
  ConflictGraph g = build_conflict_graph(hbar);

  // Final successful memory operation: the commit for committed
  // incarnations, the last shared-memory read otherwise. An incarnation
  // that never reached shared memory has none and is skipped.
  auto sfm = [&](TxnId v) -> std::optional<std::int64_t> {
    if (v == kInitialTxn) return kInitialPos;
    const VertexInfo& vi = idx.info.at(v);
    if (vi.committed) return vi.commit_pos;
    if (vi.last_global_read >= 0) return vi.last_global_read;
    return std::nullopt;
  };

  for (const auto& [pair, labels] : g.edges) {
    auto a = sfm(pair.first);
    auto b = sfm(pair.second);
    if (!a || !b) continue;
    if (!(*a < *b)) {
      return {false, pair};
    }
  }
  return {true, std::nullopt};
}

std::set<std::pair<TxnId, TxnId>> conflict_pairs(const History& h) {
  return conflict_pairs_of(build_conflict_graph(h));
}

}  // namespace capr
