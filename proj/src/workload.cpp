// SPDX-License-Identifier: Apache-2.0

#include "capr/workload.hpp"

#include <algorithm>
#include <chrono>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>
#include <stdexcept>

namespace capr {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::uint64_t thread_seed(std::uint64_t base, std::uint32_t thread) {
  return splitmix64(base ^ (0x9E3779B97F4A7C15ull * (thread + 1)));
}

std::vector<ObjectId> sample_distinct(std::mt19937_64& rng, std::uint32_t lo,
                                      std::uint32_t hi, std::uint32_t k) {
  std::vector<std::uint32_t> pool(hi - lo);
  std::iota(pool.begin(), pool.end(), lo);
  std::shuffle(pool.begin(), pool.end(), rng);
  pool.resize(k);
  std::vector<ObjectId> out;
  out.reserve(k);
  for (std::uint32_t i : pool) out.push_back(ObjectId::shared(i));
  return out;
}

}  // namespace

TxBody make_counter_body(const std::vector<ObjectId>& objects) {
  TxBody body;
  body.reserve(objects.size() * 2);
  for (std::uint32_t i = 0; i < objects.size(); ++i) {
    body.push_back(ReadStep{objects[i], ObjectId::local(i)});
  }
  for (std::uint32_t i = 0; i < objects.size(); ++i) {
    body.push_back(WriteStep{objects[i], local_plus(ObjectId::local(i), 1)});
  }
  return body;
}

TxBody make_long_reader_body(const std::vector<ObjectId>& cold, ObjectId hot) {
  TxBody body;
  body.reserve(cold.size() + 2);
  for (std::uint32_t i = 0; i < cold.size(); ++i) {
    body.push_back(ReadStep{cold[i], ObjectId::local(i)});
  }
  ObjectId hot_local = ObjectId::local(static_cast<std::uint32_t>(cold.size()));
  body.push_back(ReadStep{hot, hot_local});
  body.push_back(WriteStep{hot, local_plus(hot_local, 1)});
  return body;
}

WorkloadResult run_workload(const WorkloadConfig& cfg) {
  if (cfg.threads == 0 || cfg.shared_objects == 0 || cfg.txn_length == 0 ||
      cfg.txns_per_thread == 0) {
    throw std::invalid_argument("workload dimensions must all be positive");
  }
  if (cfg.shape == WorkloadShape::kLongReader && cfg.shared_objects < 2) {
    throw std::invalid_argument(
        "long-reader workloads need at least two objects");
  }

  GlobalWorkspace ws(cfg.shared_objects);

  struct PerThread {
    std::vector<TxRunResult> results;
    std::vector<std::pair<TxId, std::vector<ObjectId>>> bodies;
  };
  std::vector<PerThread> per_thread(cfg.threads);

  auto started = std::chrono::steady_clock::now();
  {
    std::vector<std::thread> threads;
    threads.reserve(cfg.threads);
    for (std::uint32_t t = 0; t < cfg.threads; ++t) {
      threads.emplace_back([&, t] {
        std::mt19937_64 rng(thread_seed(cfg.rng_seed, t));
        for (std::uint32_t i = 0; i < cfg.txns_per_thread; ++i) {
          std::vector<ObjectId> objects;
          TxBody body;
          if (cfg.shape == WorkloadShape::kCounterBank) {
            std::uint32_t k = std::min(cfg.txn_length, cfg.shared_objects);
            objects = sample_distinct(rng, 0, cfg.shared_objects, k);
            body = make_counter_body(objects);
          } else {
            std::uint32_t cold_count =
                std::min(cfg.txn_length - 1, cfg.shared_objects - 1);
            std::vector<ObjectId> cold =
                sample_distinct(rng, 1, cfg.shared_objects, cold_count);
            ObjectId hot = ObjectId::shared(0);
            body = make_long_reader_body(cold, hot);
            objects = cold;
            objects.push_back(hot);
          }
          TxRunResult r = run_transaction(ws, body, cfg.mode);
          per_thread[t].bodies.emplace_back(r.tx_id, std::move(objects));
          per_thread[t].results.push_back(std::move(r));
        }
      });
    }
    for (std::thread& th : threads) th.join();
  }
  auto finished = std::chrono::steady_clock::now();

  WorkloadResult out;
  out.metrics.wall_time_ms =
      std::chrono::duration<double, std::milli>(finished - started).count();
  for (const PerThread& pt : per_thread) {
    for (const TxRunResult& r : pt.results) {
      ++out.metrics.committed_txns;
      out.metrics.total_incarnations += r.incarnations;
      out.metrics.rollbacks += r.rollbacks;
      out.metrics.replayed_ops += r.replayed_steps;
      out.metrics.discarded_steps += r.discarded_steps;
    }
    for (const auto& [tx, objects] : pt.bodies) {
      out.committed_objects.emplace(tx, objects);
    }
  }
  out.metrics.mean_rollback_depth =
      out.metrics.rollbacks == 0
          ? 0.0
          : static_cast<double>(out.metrics.discarded_steps) /
                static_cast<double>(out.metrics.rollbacks);
  out.trace = ws.recorder().events();
  out.final_state = ws.shared_state();
  return out;
}

ModeComparison compare_modes(WorkloadConfig cfg) {
  ModeComparison out;
  cfg.mode = RollbackMode::kPartialRollback;
  out.partial = run_workload(cfg).metrics;
  cfg.mode = RollbackMode::kFullAbort;
  out.full = run_workload(cfg).metrics;
  return out;
}

void write_metrics(std::ostream& out, const RunMetrics& m) {
  out << "committed_txns=" << m.committed_txns << '\n'
      << "total_incarnations=" << m.total_incarnations << '\n'
      << "rollbacks=" << m.rollbacks << '\n'
      << "replayed_ops=" << m.replayed_ops << '\n'
      << "discarded_steps=" << m.discarded_steps << '\n'
      << "mean_rollback_depth=" << std::fixed << std::setprecision(2)
      << m.mean_rollback_depth << '\n'
      << "wall_time_ms=" << std::fixed << std::setprecision(3)
      << m.wall_time_ms << '\n';
  out.unsetf(std::ios::fixed);
}

void write_comparison(std::ostream& out, const ModeComparison& c) {
  auto line = [&out](const char* mode, const RunMetrics& m) {
    out << "mode=" << mode << " rollbacks=" << m.rollbacks
        << " replayed_ops=" << m.replayed_ops << " wall_time_ms=" << std::fixed
        << std::setprecision(3) << m.wall_time_ms << '\n';
    out.unsetf(std::ios::fixed);
  };
  line("partial-rollback", c.partial);
  line("full-abort", c.full);
  auto ratio = [](double num, double den) {
    if (den > 0) return num / den;
    return num > 0 ? std::numeric_limits<double>::infinity() : 1.0;
  };
  out << "replayed_ops_ratio=" << std::fixed << std::setprecision(3)
      << ratio(static_cast<double>(c.partial.replayed_ops),
               static_cast<double>(c.full.replayed_ops))
      << '\n';
  out << "wall_time_ratio=" << std::fixed << std::setprecision(3)
      << ratio(c.partial.wall_time_ms, c.full.wall_time_ms) << '\n';
  out.unsetf(std::ios::fixed);
}

std::map<ObjectId, Value> replay_counters(
    std::uint32_t shared_objects, const std::vector<TxId>& order,
    const std::map<TxId, std::vector<ObjectId>>& bodies) {
  std::map<ObjectId, Value> state;
  for (std::uint32_t i = 0; i < shared_objects; ++i) {
    state.emplace(ObjectId::shared(i), 0);
  }
  for (TxId tx : order) {
    // Each body reads its objects and writes back what it read plus one.
    for (ObjectId o : bodies.at(tx)) {
      state.at(o) += 1;
    }
  }
  return state;
}

struct ScriptedRun::Worker {
  Spec spec;
  std::unique_ptr<TxCursor> cursor;
  std::thread thread;
  std::mutex mutex;
  std::condition_variable cv;
  Command command = Command::kNone;
  bool has_result = false;
  TxCursor::StepOutcome outcome = TxCursor::StepOutcome::kAlreadyDone;
  std::exception_ptr error;
};

ScriptedRun::ScriptedRun(GlobalWorkspace& ws, std::vector<Spec> specs)
    : ws_(&ws) {
  workers_.reserve(specs.size());
  for (Spec& spec : specs) {
    auto w = std::make_unique<Worker>();
    w->spec = std::move(spec);
    w->cursor = std::make_unique<TxCursor>(*ws_, w->spec.body, w->spec.mode);
    workers_.push_back(std::move(w));
  }
  for (auto& w : workers_) {
    Worker* worker = w.get();
    worker->thread = std::thread([worker] {
      std::unique_lock<std::mutex> lock(worker->mutex);
      while (true) {
        worker->cv.wait(lock,
                        [worker] { return worker->command != Command::kNone; });
        Command cmd = worker->command;
        if (cmd == Command::kExit) return;
        lock.unlock();
        TxCursor::StepOutcome outcome = TxCursor::StepOutcome::kAlreadyDone;
        std::exception_ptr error;
        try {
          if (cmd == Command::kStep) {
            outcome = worker->cursor->advance_one();
          } else {
            while (!worker->cursor->done()) {
              outcome = worker->cursor->advance_one();
            }
          }
        } catch (...) {
          error = std::current_exception();
        }
        lock.lock();
        worker->command = Command::kNone;
        worker->outcome = outcome;
        worker->error = error;
        worker->has_result = true;
        worker->cv.notify_all();
      }
    });
  }
}

ScriptedRun::~ScriptedRun() {
  for (auto& w : workers_) {
    {
      std::lock_guard<std::mutex> lock(w->mutex);
      w->command = Command::kExit;
    }
    w->cv.notify_all();
    w->thread.join();
  }
}

TxCursor::StepOutcome ScriptedRun::issue(std::size_t worker, Command cmd) {
  Worker& w = *workers_.at(worker);
  std::unique_lock<std::mutex> lock(w.mutex);
  w.command = cmd;
  w.has_result = false;
  w.cv.notify_all();
  w.cv.wait(lock, [&w] { return w.has_result; });
  if (w.error) std::rethrow_exception(w.error);
  return w.outcome;
}

TxCursor::StepOutcome ScriptedRun::step(std::size_t worker) {
  return issue(worker, Command::kStep);
}

void ScriptedRun::finish(std::size_t worker) {
  issue(worker, Command::kFinish);
}

void ScriptedRun::finish_all() {
  for (std::size_t i = 0; i < workers_.size(); ++i) finish(i);
}

bool ScriptedRun::done(std::size_t worker) const {
  return workers_.at(worker)->cursor->done();
}

const Transaction& ScriptedRun::txn(std::size_t worker) const {
  const TxCursor& cursor = *workers_.at(worker)->cursor;
  if (!cursor.begun()) {
    throw std::logic_error("transaction inspected before its first step");
  }
  return cursor.txn();
}

TxId ScriptedRun::tx_id(std::size_t worker) const { return txn(worker).id(); }

TxRunResult ScriptedRun::result(std::size_t worker) const {
  return workers_.at(worker)->cursor->result();
}

}  // namespace capr
