// SPDX-License-Identifier: Apache-2.0
//
// Compact builders for history fixtures in tests.

#pragma once

#include <vector>

#include "capr/history.hpp"

namespace capr::dsl {

inline Event ev(TxId tx, std::uint32_t inc, EventKind kind,
                std::optional<ObjectId> object = std::nullopt,
                std::optional<Value> value = std::nullopt) {
  Event e;
  e.tx = tx;
  e.incarnation = inc;
  e.kind = kind;
  e.object = object;
  e.value = value;
  return e;
}

inline Event B(TxId tx, std::uint32_t inc = 1) {
  return ev(tx, inc, EventKind::kBegin);
}
inline Event R(TxId tx, ObjectId o, Value v, std::uint32_t inc = 1) {
  return ev(tx, inc, EventKind::kRead, o, v);
}
inline Event W(TxId tx, ObjectId o, Value v, std::uint32_t inc = 1) {
  return ev(tx, inc, EventKind::kWrite, o, v);
}
inline Event C(TxId tx, std::uint32_t inc = 1) {
  return ev(tx, inc, EventKind::kCommit);
}
inline Event A(TxId tx, std::uint32_t inc = 1) {
  return ev(tx, inc, EventKind::kAbort);
}
inline Event RA(TxId tx, std::uint32_t inc = 1) {
  return ev(tx, inc, EventKind::kRollbackAbort);
}

// Assigns dense seq numbers; begins for each transaction are implied by the
// caller including B events explicitly.
inline History hist(std::vector<Event> events) {
  for (std::size_t i = 0; i < events.size(); ++i) {
    events[i].seq = static_cast<std::int64_t>(i);
  }
  return History{std::move(events)};
}

}  // namespace capr::dsl
