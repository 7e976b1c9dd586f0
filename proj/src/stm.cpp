// SPDX-License-Identifier: Apache-2.0

#include "capr/stm.hpp"

#include <algorithm>
#include <cassert>
#include <stdexcept>
#include <string>
#include <thread>

namespace capr {

namespace lock_order {
namespace {

// Object locks carry their index; entry locks sort above every object.
constexpr std::uint64_t kEntryBit = 1ull << 63;

thread_local std::vector<std::uint64_t> t_held;
std::atomic<std::uint64_t> g_violations{0};

void note_acquire(std::uint64_t tag) {
  for (std::uint64_t held : t_held) {
    if (held >= tag) {
      g_violations.fetch_add(1, std::memory_order_relaxed);
      assert(false && "lock acquired out of global order");
      break;
    }
  }
  t_held.push_back(tag);
}

void note_release(std::uint64_t tag) {
  auto it = std::find(t_held.rbegin(), t_held.rend(), tag);
  if (it != t_held.rend()) {
    t_held.erase(std::next(it).base());
  }
}

}  // namespace

std::uint64_t violation_count() {
  return g_violations.load(std::memory_order_relaxed);
}

void reset_violations() { g_violations.store(0, std::memory_order_relaxed); }

}  // namespace lock_order

namespace {

[[noreturn]] void engine_bug(const std::string& what) {
  throw std::logic_error("engine invariant violated: " + what);
}

void engine_check(bool ok, const char* what) {
  if (!ok) engine_bug(what);
}

// Owns a set of locks for one critical section and releases them on scope
// exit. Callers acquire in the global order: objects ascending, then
// entries ascending.
class LockSet {
 public:
  LockSet() = default;
  LockSet(const LockSet&) = delete;
  LockSet& operator=(const LockSet&) = delete;
  ~LockSet() { unlock_all(); }

  void lock_object(detail::ObjectCell& cell, std::uint32_t index) {
    lock(cell.mutex, index);
  }

  void lock_entry(detail::TxEntry& entry) {
    lock(entry.mutex, (1ull << 63) | entry.id);
  }

  void unlock_all() {
    for (auto it = held_.rbegin(); it != held_.rend(); ++it) {
      it->first->unlock();
      lock_order::note_release(it->second);
    }
    held_.clear();
  }

 private:
  void lock(std::mutex& m, std::uint64_t tag) {
    m.lock();
    lock_order::note_acquire(tag);
    held_.emplace_back(&m, tag);
  }

  std::vector<std::pair<std::mutex*, std::uint64_t>> held_;
};

}  // namespace

bool operator==(const SosEntry& a, const SosEntry& b) {
  return a.value == b.value && a.read_flag == b.read_flag &&
         a.write_flag == b.write_flag;
}

ValueFn constant(Value v) {
  return [v](const LocalDataBlock&) { return v; };
}

ValueFn local_var(ObjectId var) {
  return [var](const LocalDataBlock& ldb) { return ldb.at(var); };
}

ValueFn local_plus(ObjectId var, Value d) {
  return [var, d](const LocalDataBlock& ldb) { return ldb.at(var) + d; };
}

GlobalWorkspace::GlobalWorkspace(std::uint32_t shared_objects) {
  for (std::uint32_t i = 0; i < shared_objects; ++i) {
    objects_.emplace_back();
  }
}

std::unique_ptr<Transaction> GlobalWorkspace::begin(RollbackMode mode) {
  TxId id = next_tx_id_.fetch_add(1, std::memory_order_relaxed);
  auto entry = std::make_shared<detail::TxEntry>(id);
  {
    std::lock_guard<std::mutex> lock(table_mutex_);
    active_.emplace(id, entry);
  }
  std::unique_ptr<Transaction> txn(
      new Transaction(this, id, std::move(entry), mode));
  txn->emit(EventKind::kBegin, std::nullopt, std::nullopt);
  return txn;
}

std::uint32_t GlobalWorkspace::shared_object_count() const {
  return static_cast<std::uint32_t>(objects_.size());
}

detail::ObjectCell& GlobalWorkspace::cell(ObjectId o) {
  engine_check(o.is_shared() && o.index() < objects_.size(),
               "object outside shared memory");
  return objects_[o.index()];
}

const detail::ObjectCell& GlobalWorkspace::cell(ObjectId o) const {
  engine_check(o.is_shared() && o.index() < objects_.size(),
               "object outside shared memory");
  return objects_[o.index()];
}

std::shared_ptr<detail::TxEntry> GlobalWorkspace::find_entry(TxId tx) const {
  std::lock_guard<std::mutex> lock(table_mutex_);
  auto it = active_.find(tx);
  return it == active_.end() ? nullptr : it->second;
}

void GlobalWorkspace::erase_entry(TxId tx) {
  std::lock_guard<std::mutex> lock(table_mutex_);
  active_.erase(tx);
}

Value GlobalWorkspace::object_value(ObjectId o) const {
  const detail::ObjectCell& c = cell(o);
  std::lock_guard<std::mutex> lock(c.mutex);
  return c.value;
}

std::vector<TxId> GlobalWorkspace::active_readers(ObjectId o) const {
  const detail::ObjectCell& c = cell(o);
  std::lock_guard<std::mutex> lock(c.mutex);
  return std::vector<TxId>(c.readers.begin(), c.readers.end());
}

std::map<ObjectId, Value> GlobalWorkspace::shared_state() const {
  std::map<ObjectId, Value> out;
  for (std::uint32_t i = 0; i < objects_.size(); ++i) {
    ObjectId o = ObjectId::shared(i);
    out.emplace(o, object_value(o));
  }
  return out;
}

bool GlobalWorkspace::is_active(TxId tx) const {
  return find_entry(tx) != nullptr;
}

std::optional<bool> GlobalWorkspace::is_red(TxId tx) const {
  auto entry = find_entry(tx);
  if (!entry) return std::nullopt;
  std::lock_guard<std::mutex> lock(entry->mutex);
  return entry->red;
}

std::set<ObjectId> GlobalWorkspace::conflict_objects(TxId tx) const {
  auto entry = find_entry(tx);
  if (!entry) return {};
  std::lock_guard<std::mutex> lock(entry->mutex);
  return entry->conflicts;
}

Transaction::Transaction(GlobalWorkspace* ws, TxId id,
                         std::shared_ptr<detail::TxEntry> entry,
                         RollbackMode mode)
    : ws_(ws), id_(id), entry_(std::move(entry)), mode_(mode) {}

Transaction::~Transaction() {
  if (!finished_) abort();
}

void Transaction::emit(EventKind kind, std::optional<ObjectId> object,
                       std::optional<Value> value) {
  Event e;
  e.tx = id_;
  e.incarnation = incarnation_;
  e.kind = kind;
  e.object = object;
  e.value = value;
  ws_->recorder_.record(e);
}

ReadResult Transaction::read(ObjectId o) {
  engine_check(!finished_, "read on a finished transaction");

  // Own local data block first.
  if (auto it = ldb_.find(o); it != ldb_.end()) {
    Value v = it->second;
    records_.push_back({next_step_, EventKind::kRead, o, v});
    emit(EventKind::kRead, o, v);
    return {ReadResult::Status::kOk, v, 0};
  }

  // Then the shared-object store: objects this transaction already read or
  // wrote are served from its own buffer. A buffer hit is not a shared
  // memory operation, so it does not set the read flag, register a reader,
  // or checkpoint.
  if (auto it = sos_.find(o); it != sos_.end()) {
    Value v = it->second.value;
    records_.push_back({next_step_, EventKind::kRead, o, v});
    emit(EventKind::kRead, o, v);
    return {ReadResult::Status::kOk, v, 0};
  }

  if (!o.is_shared() || o.index() >= ws_->shared_object_count()) {
    return {ReadResult::Status::kUnknownObject, 0, 0};
  }

  // First contact with this shared-memory object. Check for invalidation,
  // checkpoint, read, and register as an active reader, all atomically with
  // respect to commits touching this object or this transaction.
  detail::ObjectCell& c = ws_->cell(o);
  {
    LockSet locks;
    locks.lock_object(c, o.index());
    locks.lock_entry(*entry_);
    if (!entry_->red) {
      cplog_.push_back(Checkpoint{o, next_step_, ldb_, sos_});

      Value v = c.value;
      c.readers.insert(id_);
      SosEntry& entry = sos_[o];
      entry.value = v;
      entry.read_flag = true;
      records_.push_back({next_step_, EventKind::kRead, o, v});
      emit(EventKind::kRead, o, v);
      return {ReadResult::Status::kOk, v, 0};
    }
  }
  // Invalidated before this memory operation could take effect.
  StepIndex resume = roll_back();
  return {ReadResult::Status::kRolledBack, 0, resume};
}

void Transaction::write(ObjectId o, Value v) {
  engine_check(!finished_, "write on a finished transaction");
  if (o.is_local()) {
    ldb_[o] = v;
  } else {
    engine_check(o.index() < ws_->shared_object_count(),
                 "write to an object outside shared memory");
    SosEntry& entry = sos_[o];
    entry.value = v;
    entry.write_flag = true;
  }
  records_.push_back({next_step_, EventKind::kWrite, o, v});
  emit(EventKind::kWrite, o, v);
}

void Transaction::set_local(ObjectId var, Value v) {
  engine_check(var.is_local(), "set_local on a shared object");
  ldb_[var] = v;
}

CommitResult Transaction::try_commit() {
  engine_check(!finished_, "commit on a finished transaction");

  std::vector<ObjectId> touched;  // ascending: sos_ is ordered by id
  std::set<ObjectId> write_set;
  for (const auto& [o, e] : sos_) {
    touched.push_back(o);
    if (e.write_flag) write_set.insert(o);
  }

  LockSet locks;
  for (ObjectId o : touched) {
    locks.lock_object(ws_->cell(o), o.index());
  }

  // Everyone to invalidate: the active readers of the write set. Reader
  // sets are stable while the object locks are held.
  std::set<TxId> to_lock{id_};
  for (ObjectId o : write_set) {
    for (TxId r : ws_->cell(o).readers) to_lock.insert(r);
  }
  std::map<TxId, std::shared_ptr<detail::TxEntry>> entries;
  entries.emplace(id_, entry_);
  for (TxId t : to_lock) {
    if (t == id_) continue;
    auto e = ws_->find_entry(t);
    engine_check(e != nullptr, "active reader missing from the table");
    entries.emplace(t, std::move(e));
  }
  for (auto& [t, e] : entries) {
    locks.lock_entry(*e);
  }

  if (entry_->red) {
    locks.unlock_all();
    StepIndex resume = roll_back();
    return {false, resume};
  }

  // Publish the write set, then invalidate its readers: each one turns red
  // and learns the whole write set as its conflict objects.
  for (ObjectId o : write_set) {
    ws_->cell(o).value = sos_[o].value;
  }
  for (ObjectId o : write_set) {
    for (TxId r : ws_->cell(o).readers) {
      if (r == id_) continue;
      detail::TxEntry& victim = *entries.at(r);
      victim.conflicts.insert(write_set.begin(), write_set.end());
      victim.red = true;
    }
  }

  ws_->erase_entry(id_);
  for (ObjectId o : touched) {
    if (sos_[o].read_flag) ws_->cell(o).readers.erase(id_);
  }
  emit(EventKind::kCommit, std::nullopt, std::nullopt);
  locks.unlock_all();
  finished_ = true;
  return {true, 0};
}

void Transaction::abort() {
  engine_check(!finished_, "abort on a finished transaction");
  std::vector<ObjectId> read_objs;
  for (const auto& [o, e] : sos_) {
    if (e.read_flag) read_objs.push_back(o);
  }
  LockSet locks;
  for (ObjectId o : read_objs) {
    locks.lock_object(ws_->cell(o), o.index());
  }
  locks.lock_entry(*entry_);
  for (ObjectId o : read_objs) {
    ws_->cell(o).readers.erase(id_);
  }
  ws_->erase_entry(id_);
  emit(EventKind::kAbort, std::nullopt, std::nullopt);
  locks.unlock_all();
  finished_ = true;
}

StepIndex Transaction::roll_back() {
  // Reacquire from scratch in the global order: every object this
  // incarnation has read (a superset of what gets deregistered), then the
  // own entry.
  std::vector<ObjectId> read_objs;
  for (const auto& [o, e] : sos_) {
    if (e.read_flag) read_objs.push_back(o);
  }
  LockSet locks;
  for (ObjectId o : read_objs) {
    locks.lock_object(ws_->cell(o), o.index());
  }
  locks.lock_entry(*entry_);
  engine_check(entry_->red, "rollback of a transaction that is not red");

  StepIndex resume = 0;
  std::size_t keep_checkpoints = 0;
  LocalDataBlock restored_ldb;
  SharedObjectStore restored_sos;
  if (mode_ == RollbackMode::kPartialRollback) {
    std::size_t selected = cplog_.size();
    for (std::size_t i = 0; i < cplog_.size(); ++i) {
      if (entry_->conflicts.count(cplog_[i].victim)) {
        selected = i;
        break;
      }
    }
    engine_check(selected < cplog_.size(),
                 "no checkpoint covers the conflict set");
    resume = cplog_[selected].program_location;
    keep_checkpoints = selected;
    restored_ldb = cplog_[selected].ldb_snapshot;
    restored_sos = cplog_[selected].sos_snapshot;
  }

  // Deregister reads the restored state no longer holds.
  for (ObjectId o : read_objs) {
    auto kept = restored_sos.find(o);
    if (kept == restored_sos.end() || !kept->second.read_flag) {
      ws_->cell(o).readers.erase(id_);
    }
  }

  ldb_ = std::move(restored_ldb);
  sos_ = std::move(restored_sos);
  cplog_.erase(cplog_.begin() + static_cast<std::ptrdiff_t>(keep_checkpoints),
               cplog_.end());
  entry_->conflicts.clear();
  entry_->red = false;

  // Close this incarnation and reissue the retained prefix as the opening
  // of the next one, all inside the same critical section so no commit can
  // slip between the replayed reads and invalidate them unrecorded.
  std::erase_if(records_,
                [&](const AccessRecord& r) { return r.step >= resume; });
  emit(EventKind::kRollbackAbort, std::nullopt, std::nullopt);
  ++incarnation_;
  emit(EventKind::kBegin, std::nullopt, std::nullopt);
  for (const AccessRecord& r : records_) {
    emit(r.kind, r.object, r.value);
  }
  next_step_ = resume;
  return resume;
}

TxCursor::TxCursor(GlobalWorkspace& ws, const TxBody& body, RollbackMode mode)
    : ws_(&ws), body_(&body), mode_(mode) {}

TxCursor::StepOutcome TxCursor::advance_one() {
  if (done_) return StepOutcome::kAlreadyDone;
  if (!txn_) txn_ = ws_->begin(mode_);

  if (txn_->next_step() >= body_->size()) {
    CommitResult r = txn_->try_commit();
    if (r.committed) {
      done_ = true;
      return StepOutcome::kCommitted;
    }
    ++rollbacks_;
    discarded_steps_ += body_->size() - r.resume;
    return StepOutcome::kRolledBack;
  }

  StepIndex current = txn_->next_step();
  const TxStep& step = (*body_)[current];
  if (const auto* rs = std::get_if<ReadStep>(&step)) {
    ReadResult r = txn_->read(rs->object);
    switch (r.status) {
      case ReadResult::Status::kOk:
        txn_->set_local(rs->into, r.value);
        break;
      case ReadResult::Status::kRolledBack:
        ++rollbacks_;
        discarded_steps_ += current - r.resume;
        return StepOutcome::kRolledBack;
      case ReadResult::Status::kUnknownObject:
        throw std::logic_error("body reads an unknown object");
    }
  } else if (const auto* wstep = std::get_if<WriteStep>(&step)) {
    txn_->write(wstep->object, wstep->value(txn_->ldb()));
  } else {
    const auto& ls = std::get<LocalStep>(step);
    txn_->set_local(ls.into, ls.value(txn_->ldb()));
  }
  ++steps_executed_;
  txn_->advance_step();
  return StepOutcome::kAdvanced;
}

TxRunResult TxCursor::result() const {
  if (!done_ || !txn_) {
    throw std::logic_error("result requested before the transaction finished");
  }
  TxRunResult out;
  out.tx_id = txn_->id();
  out.incarnations = txn_->incarnation();
  out.rollbacks = rollbacks_;
  out.steps_executed = steps_executed_;
  out.replayed_steps = steps_executed_ - body_->size();
  out.discarded_steps = discarded_steps_;
  out.final_locals = txn_->ldb();
  return out;
}

TxRunResult run_transaction(GlobalWorkspace& ws, const TxBody& body,
                            RollbackMode mode) {
  TxCursor cursor(ws, body, mode);
  while (!cursor.done()) {
    cursor.advance_one();
    // A body is microseconds of work, far below a scheduler quantum, so on
    // few cores concurrent transactions would otherwise never overlap.
    std::this_thread::yield();
  }
  return cursor.result();
}

}  // namespace capr
