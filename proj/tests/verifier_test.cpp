// SPDX-License-Identifier: Apache-2.0

#include "capr/verifier.hpp"

#include <gtest/gtest.h>

#include <map>
#include <optional>

#include "capr/workload.hpp"
#include "non_opaque_fixtures.hpp"
#include "trace_dsl.hpp"

namespace capr {
namespace {

using namespace dsl;

const ObjectId x = ObjectId::shared(0);
const ObjectId y = ObjectId::shared(1);
const ObjectId z = ObjectId::shared(2);

// The rolled-back reader scenario as its trace appears on the wire: T1 is
// invalidated by T2's commit of y, resumes from the read of y, and the new
// incarnation reopens with the retained read of x.
History rollback_scenario() {
  return hist({B(1), R(1, x, 0), R(1, y, 0), B(2), R(2, x, 0), R(1, z, 0),
               W(2, y, 5), C(2), W(1, x, 5), RA(1), B(1, 2), R(1, x, 0, 2),
               R(1, y, 5, 2), R(1, z, 0, 2), W(1, x, 5, 2), C(1, 2)});
}

TEST(Valid, AcceptsInitialZeros) {
  EXPECT_TRUE(check_valid(hist({B(1), R(1, x, 0), C(1)})).ok);
}

TEST(Valid, RejectsNeverWrittenValue) {
  auto result = check_valid(hist({B(1), R(1, x, 7), C(1)}));
  ASSERT_FALSE(result.ok);
  EXPECT_EQ(result.offending_read->seq, 1);
}

TEST(Valid, AcceptsAnyCommittedValueEvenIfStale) {
  // Reading 1 after 2 was committed is invalid nowhere but illegal: some
  // committed transaction did write 1.
  History h = hist({B(1), W(1, x, 1), C(1), B(2), W(2, x, 2), C(2), B(3),
                    R(3, x, 1), C(3)});
  EXPECT_TRUE(check_valid(h).ok);
  EXPECT_FALSE(check_legal(h).ok);
}

TEST(Valid, ChecksOwnBufferForReadsAfterOwnWrite) {
  EXPECT_TRUE(check_valid(hist({B(1), W(1, x, 3), R(1, x, 3), C(1)})).ok);
  EXPECT_FALSE(check_valid(hist({B(1), W(1, x, 3), R(1, x, 9), C(1)})).ok);
}

TEST(Valid, IgnoresUncommittedWrites) {
  History h = hist({B(1), W(1, x, 3), B(2), R(2, x, 3), C(2)});
  EXPECT_FALSE(check_valid(h).ok);
}

TEST(Legal, ReportsExpectedValueAndWriter) {
  History h = hist({B(1), W(1, x, 5), C(1), B(2), R(2, x, 0), C(2)});
  auto result = check_legal(h);
  ASSERT_FALSE(result.ok);
  EXPECT_EQ(result.violation->read.seq, 4);
  EXPECT_EQ(result.violation->expected, 5);
  ASSERT_TRUE(result.violation->lastw_commit.has_value());
  EXPECT_EQ(result.violation->lastw_commit->tx, 1u);
}

TEST(Legal, InitialTransactionIsTheDefaultWriter) {
  auto result = check_legal(hist({B(1), R(1, x, 4), C(1)}));
  ASSERT_FALSE(result.ok);
  EXPECT_EQ(result.violation->expected, 0);
  EXPECT_FALSE(result.violation->lastw_commit.has_value());
}

TEST(Legal, LatestCommitWins) {
  History h = hist({B(1), W(1, x, 1), C(1), B(2), W(2, x, 2), C(2), B(3),
                    R(3, x, 2), C(3)});
  EXPECT_TRUE(check_legal(h).ok);
}

TEST(Legal, OwnBufferShadowsCommits) {
  // T1 wrote x before T2 committed it; T1's later read still sees its own
  // buffered value.
  History h = hist({B(1), W(1, x, 3), B(2), W(2, x, 9), C(2), R(1, x, 3),
                    C(1)});
  EXPECT_TRUE(check_legal(h).ok);
}

TEST(Legal, UsesTheLastWritePerObject) {
  History h = hist({B(1), W(1, x, 1), W(1, x, 2), C(1), B(2), R(2, x, 1),
                    C(2)});
  auto result = check_legal(h);
  ASSERT_FALSE(result.ok);
  EXPECT_EQ(result.violation->expected, 2);
}

TEST(Graph, RollbackScenarioHasTheDerivedEdges) {
  ConflictGraph g = build_conflict_graph(rollback_scenario());
  TxnId t11{1, 1}, t12{1, 2}, t21{2, 1};
  ASSERT_EQ(g.vertices.size(), 4u);

  std::map<std::pair<TxnId, TxnId>, unsigned> expected{
      {{kInitialTxn, t11}, kEdgeRealTime | kEdgeWriteRead},
      {{kInitialTxn, t21},
       kEdgeRealTime | kEdgeWriteRead | kEdgeWriteWrite},
      {{kInitialTxn, t12},
       kEdgeRealTime | kEdgeWriteRead | kEdgeWriteWrite},
      {{t11, t21}, kEdgeReadWrite},
      {{t11, t12}, kEdgeRealTime | kEdgeReadWrite},
      {{t21, t12}, kEdgeRealTime | kEdgeWriteRead | kEdgeReadWrite},
  };
  EXPECT_EQ(g.edges, expected);
}

TEST(Graph, SequentialTransactionsGetRealTimeEdges) {
  History h = hist({B(1), R(1, x, 0), C(1), B(2), R(2, y, 0), C(2)});
  ConflictGraph g = build_conflict_graph(h);
  EXPECT_TRUE(g.labels({1, 1}, {2, 1}) & kEdgeRealTime);
  EXPECT_FALSE(g.has_edge({2, 1}, {1, 1}));
}

TEST(Graph, AbortedWritesConflictWithNothing) {
  History h = hist({B(1), W(1, x, 5), A(1), B(2), R(2, x, 0), C(2)});
  ConflictGraph g = build_conflict_graph(h);
  EXPECT_EQ(g.labels({1, 1}, {2, 1}), unsigned(kEdgeRealTime));
  EXPECT_TRUE(check_co_opaque(h).opaque);
}

TEST(Graph, BufferedRereadCreatesNoEdge) {
  // T1's second read of x is served from its own buffer, so T2's commit in
  // between must not hang a write-read edge on it.
  History h = hist({B(1), R(1, x, 0), B(2), W(2, x, 1), C(2), R(1, x, 0),
                    C(1)});
  ConflictGraph g = build_conflict_graph(h);
  EXPECT_FALSE(g.has_edge({2, 1}, {1, 1}));
  EXPECT_EQ(g.labels({1, 1}, {2, 1}), unsigned(kEdgeReadWrite));
  EXPECT_TRUE(check_co_opaque(h).opaque);
}

TEST(Graph, LocalObjectsAreInvisible) {
  ObjectId la = ObjectId::local(0);
  History with_locals = hist({B(1), R(1, x, 0), W(1, la, 9), R(1, la, 9),
                              C(1), B(2), R(2, x, 0), C(2)});
  History without = hist({B(1), R(1, x, 0), C(1), B(2), R(2, x, 0), C(2)});
  EXPECT_EQ(build_conflict_graph(with_locals).edges,
            build_conflict_graph(without).edges);
}

TEST(Graph, CompletionLeavesTheGraphUnchanged) {
  History live = hist({B(1), R(1, x, 0), B(2), W(2, x, 1), C(2)});
  EXPECT_EQ(build_conflict_graph(live).edges,
            build_conflict_graph(complete(live)).edges);
}

// Independent recomputation of every edge rule by direct quantification
// over event pairs, checked against the indexed builder.
std::map<std::pair<TxnId, TxnId>, unsigned> quantified_edges(
    const History& input) {
  History h = complete(input);
  const auto& ev = h.events;
  auto vtx = [](const Event& e) { return TxnId{e.tx, e.incarnation}; };
  auto shared_op = [](const Event& e) {
    if (e.kind == EventKind::kBegin) return false;
    return !e.object || e.object->is_shared();
  };
  auto is_global_read = [&](std::size_t i) {
    if (ev[i].kind != EventKind::kRead || !ev[i].object ||
        ev[i].object->is_local()) {
      return false;
    }
    for (std::size_t j = 0; j < i; ++j) {
      if ((ev[j].kind == EventKind::kRead ||
           ev[j].kind == EventKind::kWrite) &&
          vtx(ev[j]) == vtx(ev[i]) && ev[j].object == ev[i].object) {
        return false;
      }
    }
    return true;
  };
  auto commit_pos = [&](TxnId v) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < ev.size(); ++i) {
      if (ev[i].kind == EventKind::kCommit && vtx(ev[i]) == v) return i;
    }
    return std::nullopt;
  };
  auto writes = [&](TxnId v, ObjectId o) {
    for (const Event& e : ev) {
      if (e.kind == EventKind::kWrite && vtx(e) == v && e.object == o) {
        return true;
      }
    }
    return false;
  };

  std::set<TxnId> vertices;
  for (const Event& e : ev) vertices.insert(vtx(e));

  std::map<std::pair<TxnId, TxnId>, unsigned> edges;
  auto add = [&](TxnId a, TxnId b, unsigned label) {
    if (a != b) edges[{a, b}] |= label;
  };

  for (TxnId v : vertices) add(kInitialTxn, v, kEdgeRealTime);
  for (TxnId a : vertices) {
    for (TxnId b : vertices) {
      if (a == b) continue;
      std::optional<std::size_t> last_a, first_b;
      for (std::size_t i = 0; i < ev.size(); ++i) {
        if (!shared_op(ev[i])) continue;
        if (vtx(ev[i]) == a) last_a = i;
        if (vtx(ev[i]) == b && !first_b) first_b = i;
      }
      if (last_a && first_b && *last_a < *first_b) add(a, b, kEdgeRealTime);
    }
  }
  for (TxnId a : vertices) {
    auto ca = commit_pos(a);
    if (!ca) continue;
    for (const Event& e : ev) {
      if (e.kind != EventKind::kWrite || !e.object->is_shared() ||
          vtx(e) != a) {
        continue;
      }
      ObjectId o = *e.object;
      add(kInitialTxn, a, kEdgeWriteWrite);
      for (TxnId b : vertices) {
        auto cb = commit_pos(b);
        if (cb && writes(b, o) && *ca < *cb) add(a, b, kEdgeWriteWrite);
      }
      for (std::size_t i = 0; i < ev.size(); ++i) {
        if (!is_global_read(i) || *ev[i].object != o) continue;
        if (*ca < i) add(a, vtx(ev[i]), kEdgeWriteRead);
        if (i < *ca) add(vtx(ev[i]), a, kEdgeReadWrite);
      }
    }
  }
  for (std::size_t i = 0; i < ev.size(); ++i) {
    if (is_global_read(i)) add(kInitialTxn, vtx(ev[i]), kEdgeWriteRead);
  }
  return edges;
}

TEST(Graph, MatchesQuantifiedRecomputationOnEngineTraces) {
  for (std::uint64_t seed = 1; seed <= 8; ++seed) {
    WorkloadConfig cfg;
    cfg.threads = 3;
    cfg.shared_objects = 3;
    cfg.txn_length = 3;
    cfg.txns_per_thread = 3;
    cfg.rng_seed = seed;
    cfg.mode = seed % 2 ? RollbackMode::kPartialRollback
                        : RollbackMode::kFullAbort;
    auto result = run_workload(cfg);
    History h = split_incarnations(result.trace);
    EXPECT_EQ(build_conflict_graph(h).edges, quantified_edges(h))
        << "seed " << seed;
  }
}

TEST(Graph, MatchesQuantifiedRecomputationOnFixtures) {
  for (const auto& [name, h] : non_opaque_fixtures()) {
    EXPECT_EQ(build_conflict_graph(h).edges, quantified_edges(h)) << name;
  }
  EXPECT_EQ(build_conflict_graph(rollback_scenario()).edges,
            quantified_edges(rollback_scenario()));
}

TEST(Verdict, OpaqueHistoryGetsWitnessOrder) {
  Verdict v = check_co_opaque(rollback_scenario());
  ASSERT_TRUE(v.opaque);
  EXPECT_EQ(verdict_to_string(v),
            "VERDICT opaque\n"
            "ORDER T0 T1.1 T2.1 T1.2\n");
}

TEST(Verdict, EmptyHistoryIsOpaque) {
  Verdict v = check_co_opaque(History{});
  ASSERT_TRUE(v.opaque);
  EXPECT_EQ(verdict_to_string(v), "VERDICT opaque\nORDER T0\n");
}

TEST(Verdict, WriteSkewReportsTheTwoCycle) {
  History h = non_opaque_fixtures()[0].second;
  Verdict v = check_co_opaque(h);
  ASSERT_FALSE(v.opaque);
  EXPECT_EQ(verdict_to_string(v),
            "VERDICT not-opaque\n"
            "CYCLE T1.1 -> T2.1 -> T1.1\n");
}

TEST(Verdict, ThreeWayCycleIsFound) {
  History h = hist({B(1), B(2), B(3), R(1, x, 0), R(2, y, 0), R(3, z, 0),
                    W(1, y, 1), W(2, z, 1), W(3, x, 1), C(1), C(2), C(3)});
  Verdict v = check_co_opaque(h);
  ASSERT_FALSE(v.opaque);
  ASSERT_EQ(v.cycle.size(), 4u);
  EXPECT_EQ(v.cycle.front(), v.cycle.back());
}

TEST(Verdict, StaleReadReportsIllegal) {
  History h = hist({B(1), W(1, x, 5), C(1), B(2), R(2, x, 0), C(2)});
  Verdict v = check_co_opaque(h);
  ASSERT_FALSE(v.opaque);
  EXPECT_EQ(verdict_to_string(v),
            "VERDICT not-opaque\n"
            "ILLEGAL seq=4 expected=5\n");
}

TEST(Verdict, DeterministicAcrossRepeatedRuns) {
  WorkloadConfig cfg;
  cfg.threads = 4;
  cfg.shared_objects = 4;
  cfg.txn_length = 4;
  cfg.txns_per_thread = 6;
  cfg.rng_seed = 31;
  auto result = run_workload(cfg);
  History h = split_incarnations(result.trace);
  std::string first = verdict_to_string(check_co_opaque(h));
  for (int i = 0; i < 5; ++i) {
    EXPECT_EQ(verdict_to_string(check_co_opaque(h)), first);
  }
}

TEST(Verdict, WitnessCoversEveryIncarnationOnce) {
  WorkloadConfig cfg;
  cfg.threads = 4;
  cfg.shared_objects = 3;
  cfg.txn_length = 3;
  cfg.txns_per_thread = 4;
  cfg.rng_seed = 77;
  auto result = run_workload(cfg);
  History h = split_incarnations(result.trace);
  Verdict v = check_co_opaque(h);
  ASSERT_TRUE(v.opaque);
  ASSERT_FALSE(v.witness.empty());
  EXPECT_EQ(v.witness.front(), kInitialTxn);
  auto txns = h.txns();
  EXPECT_EQ(v.witness.size(), txns.size() + 1);
  std::set<TxnId> seen(v.witness.begin(), v.witness.end());
  EXPECT_EQ(seen.size(), v.witness.size());
}

TEST(BruteForce, RefusesLargeHistories) {
  std::vector<Event> events;
  for (TxId t = 1; t <= 9; ++t) {
    events.push_back(B(t));
    events.push_back(R(t, x, 0));
    events.push_back(C(t));
  }
  EXPECT_FALSE(check_co_opaque(hist(events)).opaque == false);
  EXPECT_EQ(brute_force_opaque(hist(events)), std::nullopt);
  EXPECT_EQ(brute_force_opaque(hist(events), 9), std::optional<bool>(true));
}

TEST(BruteForce, RejectsEveryFixture) {
  for (const auto& [name, h] : non_opaque_fixtures()) {
    EXPECT_EQ(brute_force_opaque(h), std::optional<bool>(false)) << name;
  }
}

TEST(BruteForce, RespectsRealTimeOrder) {
  // Legal serialization exists only by reordering against real time, which
  // opacity forbids.
  History h = hist({B(1), W(1, x, 5), C(1), B(2), R(2, x, 0), C(2)});
  EXPECT_EQ(brute_force_opaque(h), std::optional<bool>(false));
}

TEST(BruteForce, AgreesWithGraphCheckOnEngineTraces) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    WorkloadConfig cfg;
    cfg.threads = 2;
    cfg.shared_objects = 3;
    cfg.txn_length = 2;
    cfg.txns_per_thread = 2;
    cfg.rng_seed = seed;
    auto result = run_workload(cfg);
    History h = split_incarnations(result.trace);
    Verdict v = check_co_opaque(h);
    auto exact = brute_force_opaque(h);
    if (!exact) continue;  // too many incarnations this round
    EXPECT_TRUE(v.opaque) << "seed " << seed;
    EXPECT_TRUE(*exact) << "seed " << seed;
  }
}

// The graph check is strictly stronger than opacity: a blind-write history
// can be opaque while its conflict graph is cyclic.
TEST(BruteForce, GraphCheckIsConservative) {
  History h = hist({B(1), R(1, x, 0), B(2), W(2, x, 1), W(2, y, 2), C(2),
                    W(1, y, 3), C(1)});
  EXPECT_EQ(brute_force_opaque(h), std::optional<bool>(true));
  Verdict v = check_co_opaque(h);
  EXPECT_FALSE(v.opaque);
  EXPECT_FALSE(v.cycle.empty());
}

TEST(Sfm, HoldsOnTheRollbackScenario) {
  EXPECT_TRUE(check_sfm_ordering(rollback_scenario()).holds);
}

TEST(Sfm, ViolationOnCraftedHistory) {
  // T1's read-write conflict with T2 points forward, but T1's final read
  // happens after T2's commit; no engine run can produce this shape.
  History h = hist({B(1), R(1, x, 0), B(2), W(2, x, 5), C(2), R(1, y, 0),
                    A(1)});
  auto result = check_sfm_ordering(h);
  ASSERT_FALSE(result.holds);
  EXPECT_EQ(result.violation,
            (std::optional<std::pair<TxnId, TxnId>>({{1, 1}, {2, 1}})));
}

TEST(Sfm, SkipsIncarnationsWithoutMemoryOperations) {
  History h = hist({B(1), A(1), B(2), R(2, x, 0), C(2)});
  EXPECT_TRUE(check_sfm_ordering(h).holds);
}

TEST(Sfm, HoldsOnContendedEngineTraces) {
  for (std::uint64_t seed = 40; seed <= 44; ++seed) {
    WorkloadConfig cfg;
    cfg.threads = 4;
    cfg.shared_objects = 3;
    cfg.txn_length = 3;
    cfg.txns_per_thread = 6;
    cfg.rng_seed = seed;
    auto result = run_workload(cfg);
    History h = split_incarnations(result.trace);
    EXPECT_TRUE(check_sfm_ordering(h).holds) << "seed " << seed;
  }
}

}  // namespace
}  // namespace capr
