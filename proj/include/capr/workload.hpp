// SPDX-License-Identifier: Apache-2.0
//
// Multi-threaded workload driver and a scripted scheduler for pinning exact
// interleavings in tests.

#pragma once

#include <condition_variable>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <thread>
#include <vector>

#include "capr/stm.hpp"

namespace capr {

enum class WorkloadShape {
  // Each transaction reads k distinct objects into locals, then writes each
  // one its local value plus one. Commutative, so the final shared state is
  // checkable against any serialization order.
  kCounterBank,
  // Each transaction reads many distinct cold objects, reads the hot object
  // (id 0) last, then writes the hot object its value plus one. Invalidation
  // lands on the last read, the best case for partial rollback.
  kLongReader,
};

struct WorkloadConfig {
  std::uint32_t threads = 2;
  std::uint32_t shared_objects = 8;
  std::uint32_t txn_length = 4;  // objects touched per transaction
  std::uint32_t txns_per_thread = 4;
  RollbackMode mode = RollbackMode::kPartialRollback;
  WorkloadShape shape = WorkloadShape::kCounterBank;
  std::uint64_t rng_seed = 1;
};

struct RunMetrics {
  std::uint64_t committed_txns = 0;
  std::uint64_t total_incarnations = 0;
  std::uint64_t rollbacks = 0;
  std::uint64_t replayed_ops = 0;
  std::uint64_t discarded_steps = 0;
  double mean_rollback_depth = 0.0;
  double wall_time_ms = 0.0;
};

struct WorkloadResult {
  RunMetrics metrics;
  std::vector<Event> trace;
  // Objects each committed transaction touched, in body order; enough to
  // replay a counter-bank body sequentially.
  std::map<TxId, std::vector<ObjectId>> committed_objects;
  std::map<ObjectId, Value> final_state;
};

TxBody make_counter_body(const std::vector<ObjectId>& objects);
TxBody make_long_reader_body(const std::vector<ObjectId>& cold, ObjectId hot);

// Runs threads * txns_per_thread transactions to commit, all bodies drawn
// from per-thread generators seeded by rng_seed, and returns the recorded
// trace plus metrics. With one thread the result is fully deterministic.
WorkloadResult run_workload(const WorkloadConfig& cfg);

struct ModeComparison {
  RunMetrics partial;
  RunMetrics full;
};

// Same configuration and seed under both rollback modes.
ModeComparison compare_modes(WorkloadConfig cfg);

void write_metrics(std::ostream& out, const RunMetrics& m);
void write_comparison(std::ostream& out, const ModeComparison& c);

// Replays counter-bank bodies sequentially in the given order; the oracle
// for the final shared state of a committed run.
std::map<ObjectId, Value> replay_counters(
    std::uint32_t shared_objects, const std::vector<TxId>& order,
    const std::map<TxId, std::vector<ObjectId>>& bodies);

// Runs each body on its own thread but only when granted: step(i) lets
// worker i execute exactly one unit (a body step or a commit attempt) and
// waits for it to finish, so a test controls the interleaving completely.
// Between grants the workers are parked, which makes their descriptors safe
// to inspect from the scheduling thread.
class ScriptedRun {
 public:
  struct Spec {
    TxBody body;
    RollbackMode mode = RollbackMode::kPartialRollback;
  };

  ScriptedRun(GlobalWorkspace& ws, std::vector<Spec> specs);
  ~ScriptedRun();
  ScriptedRun(const ScriptedRun&) = delete;
  ScriptedRun& operator=(const ScriptedRun&) = delete;

  TxCursor::StepOutcome step(std::size_t worker);
  void finish(std::size_t worker);  // run the worker to commit
  void finish_all();

  bool done(std::size_t worker) const;
  const Transaction& txn(std::size_t worker) const;  // worker must be parked
  TxId tx_id(std::size_t worker) const;
  TxRunResult result(std::size_t worker) const;  // worker must be done

 private:
  struct Worker;
  enum class Command { kNone, kStep, kFinish, kExit };

  TxCursor::StepOutcome issue(std::size_t worker, Command cmd);

  GlobalWorkspace* ws_;
  std::vector<std::unique_ptr<Worker>> workers_;
};

}  // namespace capr
