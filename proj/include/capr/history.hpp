// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <mutex>
#include <vector>

#include "capr/event.hpp"

namespace capr {

enum class TxnOutcome { kCommitted, kAborted, kLive };

// A totally ordered sequence of events. All definitions used by the verifier
// are stated over positions in `events`; seq values are diagnostics carried
// along from the original recording. The initial committed transaction T0 is
// implicit and never stored.
struct History {
  std::vector<Event> events;

  // Every incarnation appearing in the history, sorted.
  std::vector<TxnId> txns() const;
  TxnOutcome outcome(TxnId id) const;
};

// Thread-safe append-only event log. A record call made while the caller
// holds the locks that serialized the operation receives a seq consistent
// with that serialization, so the log is a linearization of the run.
class HistoryRecorder {
 public:
  std::int64_t record(Event e);  // assigns e.seq, returns it
  std::vector<Event> events() const;
  std::size_t size() const;

 private:
  mutable std::mutex mutex_;
  std::vector<Event> events_;
};

// Completion: every live incarnation gets an abort event appended
// immediately after its last event. Committed and aborted incarnations are
// untouched, so completing twice is the identity.
History complete(const History& h);

// Validates a raw event sequence and wraps it as a history in which each
// incarnation stands alone. Checks per-incarnation shape (begin, then reads
// and writes, then at most one terminal), contiguous incarnation numbering
// from 1, rollback-abort as the only terminal of a non-final incarnation,
// and that successive incarnations of one transaction do not overlap.
// Throws TraceError with a diagnostic on the first violation.
History split_incarnations(const std::vector<Event>& raw);

}  // namespace capr
