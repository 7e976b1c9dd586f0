// SPDX-License-Identifier: Apache-2.0
//
// capr: run workloads against the transactional engine, check recorded
// traces for opacity, and compare rollback modes.
//
// Exit codes: 0 success (verify: trace is opaque), 1 verify found the trace
// not opaque or a selftest failed, 2 bad command line, 3 malformed trace.

#include <exception>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "capr/history.hpp"
#include "capr/stm.hpp"
#include "capr/verifier.hpp"
#include "capr/workload.hpp"

namespace {

using namespace capr;

int do_run(const WorkloadConfig& cfg, const std::string& trace_path) {
  WorkloadResult result = run_workload(cfg);
  write_metrics(std::cout, result.metrics);
  if (!trace_path.empty()) {
    std::ofstream out(trace_path);
    if (!out) {
      std::cerr << "error: cannot write trace file '" << trace_path << "'\n";
      return 1;
    }
    write_trace(out, result.trace);
  }
  return 0;
}

int do_verify(const std::string& trace_path, bool brute) {
  History h = split_incarnations(read_trace_file(trace_path));
  Verdict verdict = check_co_opaque(h);
  write_verdict(std::cout, verdict);
  if (brute) {
    std::optional<bool> exact = brute_force_opaque(h);
    if (!exact) {
      std::cout << "BRUTE-FORCE skipped (more than 8 transactions)\n";
    } else {
      std::cout << "BRUTE-FORCE " << (*exact ? "opaque" : "not-opaque")
                << '\n';
      if (verdict.opaque && !*exact) {
        // The graph check is conservative: it may reject an opaque history
        // but must never pass a non-opaque one.
        throw std::logic_error(
            "conflict-graph check accepted a history the exhaustive "
            "search rejects");
      }
    }
  }
  return verdict.opaque ? 0 : 1;
}

int do_compare(const WorkloadConfig& cfg) {
  write_comparison(std::cout, compare_modes(cfg));
  return 0;
}

void expect(bool ok, const std::string& what) {
  if (!ok) throw std::runtime_error(what);
}

// Scripted two-transaction scenario: a committing writer invalidates a
// reader between its checkpoints, the reader resumes from the read of the
// overwritten object, and the rerun observes the new value.
void selftest_partial_resume() {
  ObjectId x = ObjectId::shared(0);
  ObjectId y = ObjectId::shared(1);
  ObjectId z = ObjectId::shared(2);
  ObjectId l0 = ObjectId::local(0);
  ObjectId l1 = ObjectId::local(1);
  ObjectId l2 = ObjectId::local(2);

  GlobalWorkspace ws(3);
  TxBody reader{ReadStep{x, l0}, ReadStep{y, l1}, ReadStep{z, l2},
                WriteStep{x, constant(5)}};
  TxBody writer{ReadStep{x, l0}, WriteStep{y, constant(5)}};
  ScriptedRun run(ws, {{reader, RollbackMode::kPartialRollback},
                       {writer, RollbackMode::kPartialRollback}});

  run.step(0);  // reader: x
  run.step(0);  // reader: y
  run.step(1);  // writer: x
  run.step(0);  // reader: z
  run.step(1);  // writer: buffers y=5
  auto committed = run.step(1);
  expect(committed == TxCursor::StepOutcome::kCommitted,
         "writer failed to commit");
  expect(ws.is_red(run.tx_id(0)).value_or(false),
         "reader not invalidated by the commit");
  expect(ws.conflict_objects(run.tx_id(0)) == std::set<ObjectId>{y},
         "conflict objects should be exactly the committed write set");

  run.step(0);  // reader: buffered write of x, still allowed
  auto rolled = run.step(0);
  expect(rolled == TxCursor::StepOutcome::kRolledBack,
         "invalidated reader must roll back at commit");
  expect(run.txn(0).next_step() == 1, "resume point should be the read of y");
  expect(run.txn(0).incarnation() == 2, "rollback should open incarnation 2");
  run.finish(0);
  expect(run.result(0).final_locals.at(l1) == 5,
         "rerun read of y should observe the committed value");
  expect(ws.object_value(x) == 5, "reader's own write should be published");

  History h = split_incarnations(ws.recorder().events());
  Verdict verdict = check_co_opaque(h);
  expect(verdict.opaque, "scripted scenario trace should be opaque");
  std::cout << "selftest: partial resume ok\n";
}

// A red transaction learns about its invalidation at the next memory
// operation, whichever kind comes first.
void selftest_invalidation_surfaces() {
  ObjectId x = ObjectId::shared(0);
  ObjectId y = ObjectId::shared(1);
  ObjectId l0 = ObjectId::local(0);
  ObjectId l1 = ObjectId::local(1);

  {  // at the next fresh read
    GlobalWorkspace ws(2);
    TxBody reader{ReadStep{x, l0}, ReadStep{y, l1}};
    TxBody writer{ReadStep{x, l0}, WriteStep{x, local_plus(l0, 1)}};
    ScriptedRun run(ws, {{reader}, {writer}});
    run.step(0);
    run.finish(1);
    expect(run.step(0) == TxCursor::StepOutcome::kRolledBack,
           "next read after invalidation must roll back");
    run.finish(0);
  }
  {  // at commit
    GlobalWorkspace ws(2);
    TxBody reader{ReadStep{x, l0}};
    TxBody writer{ReadStep{x, l0}, WriteStep{x, local_plus(l0, 1)}};
    ScriptedRun run(ws, {{reader}, {writer}});
    run.step(0);
    run.finish(1);
    expect(run.step(0) == TxCursor::StepOutcome::kRolledBack,
           "commit after invalidation must roll back");
    run.finish(0);
  }
  std::cout << "selftest: invalidation surfaces at the next operation ok\n";
}

int do_selftest() {
  selftest_partial_resume();
  selftest_invalidation_surfaces();
  std::cout << "selftest: ok\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"transactional engine workloads and trace checking"};
  app.require_subcommand(1);

  WorkloadConfig cfg;
  std::string mode = "partial-rollback";
  std::string shape = "counter";
  std::string trace_path;

  auto add_workload_flags = [&](CLI::App* cmd, bool with_mode) {
    cmd->add_option("--threads", cfg.threads, "worker threads");
    cmd->add_option("--objects", cfg.shared_objects, "shared objects");
    cmd->add_option("--txn-len", cfg.txn_length,
                    "objects touched per transaction");
    cmd->add_option("--txns", cfg.txns_per_thread,
                    "transactions per thread");
    cmd->add_option("--seed", cfg.rng_seed, "workload generator seed");
    cmd->add_option("--workload", shape, "body shape")
        ->check(CLI::IsMember({"counter", "long-reader"}));
    if (with_mode) {
      cmd->add_option("--mode", mode, "rollback mode")
          ->check(CLI::IsMember({"partial-rollback", "full-abort"}));
    }
  };

  CLI::App* run = app.add_subcommand("run", "run a workload, write its trace");
  add_workload_flags(run, true);
  run->add_option("--trace", trace_path, "trace output file");

  CLI::App* verify =
      app.add_subcommand("verify", "check a recorded trace for opacity");
  std::string verify_path;
  bool brute = false;
  verify->add_option("trace", verify_path, "trace file")->required();
  verify->add_flag("--brute-force", brute,
                   "cross-check small traces exhaustively");

  CLI::App* compare = app.add_subcommand(
      "compare", "same workload under partial rollback and full abort");
  add_workload_flags(compare, false);

  app.add_subcommand("selftest", "scripted engine scenarios");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  cfg.mode = mode == "full-abort" ? RollbackMode::kFullAbort
                                  : RollbackMode::kPartialRollback;
  cfg.shape = shape == "long-reader" ? WorkloadShape::kLongReader
                                     : WorkloadShape::kCounterBank;

  try {
    if (run->parsed()) return do_run(cfg, trace_path);
    if (verify->parsed()) return do_verify(verify_path, brute);
    if (compare->parsed()) return do_compare(cfg);
    return do_selftest();
  } catch (const TraceError& e) {
    std::cerr << "trace error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
