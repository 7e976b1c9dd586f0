// SPDX-License-Identifier: Apache-2.0
//
// Transactional engine: continuous conflict detection with lazy versioning
// and partial rollback.
//
// Writes are buffered in a per-transaction shared-object store and published
// only at commit. The first read of each shared-memory object appends a
// checkpoint (program location plus snapshots of the local data block and
// the shared-object store), and the object's cell remembers the reader. A
// committing writer invalidates every active reader of its write set by
// flagging it red; the victim later rolls back to the earliest checkpoint
// whose object conflicts, keeping everything it executed before that read.
//
// Locking: one mutex per shared object and one per active-transaction entry.
// Every code path acquires object locks before entry locks, each class in
// ascending id order. This single global order makes deadlock impossible; a
// debug tracker counts violations.

#pragma once

#include <atomic>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <variant>
#include <vector>

#include "capr/event.hpp"
#include "capr/history.hpp"
#include "capr/object_id.hpp"

namespace capr {

// Transaction-private store of local objects. Checkpoints snapshot it
// whole, so every variable a transaction computes with must live here.
using LocalDataBlock = std::map<ObjectId, Value>;

// One buffered object: the transaction's view of its value plus flags
// saying whether the transaction has read or written it. At least one flag
// is set on every entry.
struct SosEntry {
  Value value = 0;
  bool read_flag = false;
  bool write_flag = false;
};

bool operator==(const SosEntry& a, const SosEntry& b);

using SharedObjectStore = std::map<ObjectId, SosEntry>;

// Saved at the first read of a shared-memory object, immediately before the
// read takes effect. Restoring it rewinds the transaction to the moment
// just before that read.
struct Checkpoint {
  ObjectId victim;  // object whose first read created this entry
  StepIndex program_location = 0;
  LocalDataBlock ldb_snapshot;
  SharedObjectStore sos_snapshot;
};

enum class RollbackMode {
  kPartialRollback,  // resume from the earliest conflicting checkpoint
  kFullAbort,        // restart the whole body on invalidation
};

// Transaction bodies are step lists; a step issues at most one
// transactional operation, and program locations are step indices, so a
// rollback resumes execution at a step boundary.
using ValueFn = std::function<Value(const LocalDataBlock&)>;

ValueFn constant(Value v);
ValueFn local_var(ObjectId var);            // reads a local, which must be set
ValueFn local_plus(ObjectId var, Value d);  // local value plus a constant

struct ReadStep {
  ObjectId object;
  ObjectId into;  // local destination for the value read
};
struct WriteStep {
  ObjectId object;
  ValueFn value;
};
struct LocalStep {
  ObjectId into;
  ValueFn value;
};
using TxStep = std::variant<ReadStep, WriteStep, LocalStep>;
using TxBody = std::vector<TxStep>;

struct ReadResult {
  enum class Status {
    kOk,             // value is valid
    kRolledBack,     // invalidated; resume holds the step to re-execute from
    kUnknownObject,  // object outside both stores and shared memory: a bug
                     // in the calling program, not a concurrency condition
  };
  Status status = Status::kOk;
  Value value = 0;
  StepIndex resume = 0;
};

struct CommitResult {
  bool committed = false;
  StepIndex resume = 0;  // meaningful only when committed is false
};

namespace detail {

struct ObjectCell {
  mutable std::mutex mutex;
  Value value = 0;
  std::set<TxId> readers;  // active transactions holding this object read
};

struct TxEntry {
  explicit TxEntry(TxId tx) : id(tx) {}
  const TxId id;
  std::mutex mutex;
  bool red = false;  // invalidated; red exactly when conflicts is nonempty
  std::set<ObjectId> conflicts;
};

}  // namespace detail

// Debug tracker for the global lock order. Always counts, asserts in debug
// builds. Object locks carry their index as tag; entry locks sort above
// every object tag.
namespace lock_order {
std::uint64_t violation_count();
void reset_violations();
}  // namespace lock_order

class Transaction;

// Shared memory, the table of active transactions, and the event log for
// one run. Transactions must not outlive their workspace.
class GlobalWorkspace {
 public:
  explicit GlobalWorkspace(std::uint32_t shared_objects);
  GlobalWorkspace(const GlobalWorkspace&) = delete;
  GlobalWorkspace& operator=(const GlobalWorkspace&) = delete;

  std::unique_ptr<Transaction> begin(
      RollbackMode mode = RollbackMode::kPartialRollback);

  std::uint32_t shared_object_count() const;
  HistoryRecorder& recorder() { return recorder_; }

  // Introspection; each call locks what it reads, but multi-object answers
  // are only stable while no transaction is running.
  Value object_value(ObjectId o) const;
  std::vector<TxId> active_readers(ObjectId o) const;
  std::map<ObjectId, Value> shared_state() const;
  bool is_active(TxId tx) const;
  std::optional<bool> is_red(TxId tx) const;
  std::set<ObjectId> conflict_objects(TxId tx) const;

 private:
  friend class Transaction;

  detail::ObjectCell& cell(ObjectId o);
  const detail::ObjectCell& cell(ObjectId o) const;
  std::shared_ptr<detail::TxEntry> find_entry(TxId tx) const;
  void erase_entry(TxId tx);

  std::deque<detail::ObjectCell> objects_;
  mutable std::mutex table_mutex_;
  std::map<TxId, std::shared_ptr<detail::TxEntry>> active_;
  std::atomic<TxId> next_tx_id_{1};
  HistoryRecorder recorder_;
};

// One transaction descriptor. Confined to its owning thread; the workspace
// mediates all cross-transaction effects. Dropping a live transaction
// aborts it so no reader registration leaks.
class Transaction {
 public:
  ~Transaction();
  Transaction(const Transaction&) = delete;
  Transaction& operator=(const Transaction&) = delete;

  // Reads dispatch in order: own local data block, own shared-object store,
  // shared memory. Only the shared-memory branch can roll the transaction
  // back or create a checkpoint.
  ReadResult read(ObjectId o);

  // Buffers into the local data block or the shared-object store; never
  // blocks on other transactions and never fails. Throws on a shared id
  // outside the workspace.
  void write(ObjectId o, Value v);

  // Publishes the write set and invalidates its active readers, all under
  // the object and entry locks that serialize commits. Returns the resume
  // step instead when this transaction was itself invalidated first.
  CommitResult try_commit();

  // Explicit abort: deregisters every read and retires the transaction.
  void abort();

  TxId id() const { return id_; }
  std::uint32_t incarnation() const { return incarnation_; }
  bool finished() const { return finished_; }
  RollbackMode mode() const { return mode_; }

  // The current step, maintained by the body runner. Reads checkpoint the
  // current value as their program location. Only a rollback moves it
  // backward.
  StepIndex next_step() const { return next_step_; }
  void set_next_step(StepIndex s) { next_step_ = s; }
  void advance_step() { ++next_step_; }

  // Plain local-variable assignment; no event, no buffering rules.
  void set_local(ObjectId var, Value v);

  const LocalDataBlock& ldb() const { return ldb_; }
  const SharedObjectStore& sos() const { return sos_; }
  const std::vector<Checkpoint>& checkpoint_log() const { return cplog_; }

 private:
  friend class GlobalWorkspace;

  // An access already performed by this incarnation, kept so a rollback can
  // re-issue the retained prefix as events of the new incarnation.
  struct AccessRecord {
    StepIndex step;
    EventKind kind;
    ObjectId object;
    Value value;
  };

  Transaction(GlobalWorkspace* ws, TxId id,
              std::shared_ptr<detail::TxEntry> entry, RollbackMode mode);

  void emit(EventKind kind, std::optional<ObjectId> object,
            std::optional<Value> value);

  // Rolls back to the earliest checkpoint whose object is in the conflict
  // set (step 0 with empty stores under full-abort), restores the
  // snapshots, clears the invalidation, and opens the next incarnation with
  // the retained prefix re-issued. Returns the resume step.
  StepIndex roll_back();

  GlobalWorkspace* ws_;
  const TxId id_;
  std::shared_ptr<detail::TxEntry> entry_;
  const RollbackMode mode_;
  std::uint32_t incarnation_ = 1;
  StepIndex next_step_ = 0;
  bool finished_ = false;
  LocalDataBlock ldb_;
  SharedObjectStore sos_;
  std::vector<Checkpoint> cplog_;
  std::vector<AccessRecord> records_;
};

struct TxRunResult {
  TxId tx_id = 0;
  std::uint32_t incarnations = 1;
  std::uint64_t rollbacks = 0;
  std::uint64_t steps_executed = 0;   // successful body-step executions
  std::uint64_t replayed_steps = 0;   // steps_executed minus body length
  std::uint64_t discarded_steps = 0;  // steps undone across all rollbacks
  LocalDataBlock final_locals;
};

// Drives one body against the engine a unit at a time; a unit is one body
// step or, once the body is exhausted, one commit attempt. Used directly by
// the scripted scheduler and via run_transaction for free-running threads.
class TxCursor {
 public:
  enum class StepOutcome { kAdvanced, kRolledBack, kCommitted, kAlreadyDone };

  TxCursor(GlobalWorkspace& ws, const TxBody& body, RollbackMode mode);

  StepOutcome advance_one();
  bool done() const { return done_; }

  // Valid after the first advance_one call.
  Transaction& txn() { return *txn_; }
  const Transaction& txn() const { return *txn_; }
  bool begun() const { return txn_ != nullptr; }

  TxRunResult result() const;  // valid once done

 private:
  GlobalWorkspace* ws_;
  const TxBody* body_;
  RollbackMode mode_;
  std::unique_ptr<Transaction> txn_;
  bool done_ = false;
  std::uint64_t rollbacks_ = 0;
  std::uint64_t steps_executed_ = 0;
  std::uint64_t discarded_steps_ = 0;
};

// Runs the body to commit, retrying through rollbacks.
TxRunResult run_transaction(GlobalWorkspace& ws, const TxBody& body,
                            RollbackMode mode);

}  // namespace capr
