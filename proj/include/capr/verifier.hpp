// SPDX-License-Identifier: Apache-2.0
//
// History checkers. The main check builds the conflict graph of the
// completed history and reports either a serialization witness from a
// topological order or a shortest cycle. Acyclicity of that graph is
// exactly conflict opacity, a conservative (sound, not complete)
// approximation of opacity; the brute-force checker decides opacity itself
// by enumerating real-time-respecting serializations and is only usable on
// small histories.
//
// Local-object reads and writes are transaction-private bookkeeping and are
// ignored throughout. A read of a shared object the same incarnation wrote
// earlier is served from its own buffer, so legality compares it against
// that buffered value; every other read must return the latest committed
// value, where the initial transaction T0 committed zero for every object.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <utility>
#include <vector>

#include "capr/history.hpp"

namespace capr {

enum EdgeLabel : unsigned {
  kEdgeRealTime = 1u << 0,
  kEdgeWriteWrite = 1u << 1,
  kEdgeWriteRead = 1u << 2,
  kEdgeReadWrite = 1u << 3,
};

struct ConflictGraph {
  std::vector<TxnId> vertices;  // sorted; always includes T0
  std::map<std::pair<TxnId, TxnId>, unsigned> edges;  // label bitmask

  bool has_edge(TxnId from, TxnId to) const;
  unsigned labels(TxnId from, TxnId to) const;  // 0 when absent
};

struct IllegalRead {
  Event read;
  Value expected = 0;
  // Commit event of the transaction whose write the read should have seen;
  // absent when that transaction is T0.
  std::optional<Event> lastw_commit;
};

struct ValidityResult {
  bool ok = true;
  std::optional<Event> offending_read;
};

struct LegalityResult {
  bool ok = true;
  std::optional<IllegalRead> violation;
};

// Every read returns a value some transaction committed before it (or its
// own buffered write).
ValidityResult check_valid(const History& h);

// Every read returns the latest value committed before it (or its own
// buffered write). Legal implies valid.
LegalityResult check_legal(const History& h);

// Vertices are T0 plus every incarnation; edges are real-time order plus
// write-write, write-read, and read-write conflicts between committed
// writes and successful reads. Built over the completion of h, which has
// the same graph.
ConflictGraph build_conflict_graph(const History& h);

struct Verdict {
  bool opaque = false;
  std::vector<TxnId> witness;           // serialization order when opaque
  std::vector<TxnId> cycle;             // v0 .. v0 when cyclic
  std::optional<IllegalRead> illegal;   // when some read is stale
};

// Decides conflict opacity: completes h, checks legality, then looks for a
// cycle. On success the witness is checked to be a legal history with the
// same conflicts before being returned. Deterministic for a given input.
Verdict check_co_opaque(const History& h);

void write_verdict(std::ostream& out, const Verdict& v);
std::string verdict_to_string(const Verdict& v);

// Decides opacity exactly by searching real-time-respecting orders of all
// incarnations for a legal one. Returns nullopt (refuses) above max_txns
// incarnations, not counting T0.
std::optional<bool> brute_force_opaque(const History& h,
                                       std::size_t max_txns = 8);

struct SfmResult {
  bool holds = true;
  // Conflict edge whose endpoint order contradicts the order of the two
  // final successful memory operations.
  std::optional<std::pair<TxnId, TxnId>> violation;
};

// Checks that along every conflict edge the source's final successful
// memory operation (its commit if committed, its last read otherwise)
// precedes the destination's. Vertices without one, such as an incarnation
// that rolled back before reading, are skipped. Meaningful on engine
// traces, where every logged read is a shared-memory operation.
SfmResult check_sfm_ordering(const History& h);

// Conflict edges only (no real-time label), for equivalence checks.
std::set<std::pair<TxnId, TxnId>> conflict_pairs(const History& h);

}  // namespace capr
