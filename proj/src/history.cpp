// SPDX-License-Identifier: Apache-2.0

#include "capr/history.hpp"

#include <algorithm>
#include <map>

namespace capr {

std::vector<TxnId> History::txns() const {
  std::vector<TxnId> out;
  for (const Event& e : events) {
    TxnId id{e.tx, e.incarnation};
    if (std::find(out.begin(), out.end(), id) == out.end()) {
      out.push_back(id);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

TxnOutcome History::outcome(TxnId id) const {
  if (id == kInitialTxn) return TxnOutcome::kCommitted;
  TxnOutcome out = TxnOutcome::kLive;
  for (const Event& e : events) {
    if (e.tx != id.tx || e.incarnation != id.incarnation) continue;
    if (e.kind == EventKind::kCommit) {
      out = TxnOutcome::kCommitted;
    } else if (is_terminal(e.kind)) {
      out = TxnOutcome::kAborted;
    }
  }
  return out;
}

std::int64_t HistoryRecorder::record(Event e) {
  std::lock_guard<std::mutex> lock(mutex_);
  e.seq = static_cast<std::int64_t>(events_.size());
  events_.push_back(e);
  return e.seq;
}

std::vector<Event> HistoryRecorder::events() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return events_;
}

std::size_t HistoryRecorder::size() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return events_.size();
}

History complete(const History& h) {
  // Last event position and terminal status per incarnation.
  std::map<TxnId, std::size_t> last;
  std::map<TxnId, bool> terminated;
  for (std::size_t i = 0; i < h.events.size(); ++i) {
    const Event& e = h.events[i];
    TxnId id{e.tx, e.incarnation};
    last[id] = i;
    if (is_terminal(e.kind)) terminated[id] = true;
  }
  History out;
  out.events.reserve(h.events.size());
  for (std::size_t i = 0; i < h.events.size(); ++i) {
    out.events.push_back(h.events[i]);
    const Event& e = h.events[i];
    TxnId id{e.tx, e.incarnation};
    if (last[id] == i && !terminated[id]) {
      Event abort;
      abort.seq = -1;
      abort.tx = e.tx;
      abort.incarnation = e.incarnation;
      abort.kind = EventKind::kAbort;
      out.events.push_back(abort);
    }
  }
  return out;
}

History split_incarnations(const std::vector<Event>& raw) {
  struct IncState {
    bool begun = false;
    bool terminated = false;
    EventKind terminal = EventKind::kAbort;
  };
  std::map<TxId, std::map<std::uint32_t, IncState>> txs;

  auto fail = [](const Event& e, const std::string& why) {
    throw TraceError("event seq " + std::to_string(e.seq) + " (tx " +
                     std::to_string(e.tx) + " incarnation " +
                     std::to_string(e.incarnation) + "): " + why);
  };

  for (const Event& e : raw) {
    if (e.incarnation < 1) fail(e, "incarnation below 1");
    auto& incs = txs[e.tx];
    IncState& st = incs[e.incarnation];
    if (e.kind == EventKind::kBegin) {
      if (st.begun) fail(e, "duplicate begin");
      st.begun = true;
    } else {
      if (!st.begun) fail(e, "event before begin");
    }
    if (st.terminated) fail(e, "event after terminal");
    if (e.incarnation > 1) {
      auto prev = incs.find(e.incarnation - 1);
      if (prev == incs.end() || !prev->second.terminated) {
        fail(e, "overlaps the previous incarnation");
      }
      if (prev->second.terminal != EventKind::kRollbackAbort) {
        fail(e, "previous incarnation did not end in a rollback");
      }
    }
    if (is_terminal(e.kind)) {
      st.terminated = true;
      st.terminal = e.kind;
    }
    if ((e.kind == EventKind::kRead || e.kind == EventKind::kWrite) &&
        (!e.object || !e.value)) {
      fail(e, "read/write without object and value");
    }
  }

  for (const auto& [tx, incs] : txs) {
    std::uint32_t expect = 1;
    for (const auto& [inc, st] : incs) {
      if (inc != expect) {
        throw TraceError("tx " + std::to_string(tx) + ": incarnation " +
                         std::to_string(inc) + " out of sequence, expected " +
                         std::to_string(expect));
      }
      ++expect;
    }
  }

  return History{raw};
}

}  // namespace capr
