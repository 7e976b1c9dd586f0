// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "capr/object_id.hpp"

namespace capr {

// One linearized transactional operation. Traces order events by seq,
// assigned by the history recorder at append time while the engine still
// holds the locks that serialized the operation.
enum class EventKind : std::uint8_t {
  kBegin,          // B: first event of an incarnation
  kRead,           // R: successful read, carries object and value
  kWrite,          // W: successful buffered write, carries object and value
  kCommit,         // C: commit, terminal
  kAbort,          // A: explicit abort, terminal
  kRollbackAbort,  // RA: incarnation closed by a partial rollback, terminal
};

bool is_terminal(EventKind kind);
const char* kind_code(EventKind kind);  // "B", "R", "W", "C", "A", "RA"

struct Event {
  std::int64_t seq = -1;  // -1 on events synthesized after recording
  TxId tx = 0;
  std::uint32_t incarnation = 1;
  EventKind kind = EventKind::kBegin;
  std::optional<ObjectId> object;
  std::optional<Value> value;
};

bool operator==(const Event& a, const Event& b);

// Names one transaction incarnation; each incarnation is analyzed as a
// transaction in its own right. The initial committed transaction that
// wrote zero everywhere is {0, 0}, printed "T0".
struct TxnId {
  TxId tx = 0;
  std::uint32_t incarnation = 0;

  auto operator<=>(const TxnId&) const = default;
};

inline constexpr TxnId kInitialTxn{0, 0};

std::string to_string(TxnId id);  // "T0" or "T<tx>.<incarnation>"

class TraceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Trace wire format. Header line "#capr-trace v1", then one event per line:
// seq, tx, incarnation, kind, object, value separated by single tabs, with
// "-" for an absent object or value. Events appear in seq order, seq is
// contiguous from 0, and all integers are decimal.
void write_trace(std::ostream& out, const std::vector<Event>& events);
std::string trace_to_string(const std::vector<Event>& events);
std::vector<Event> read_trace(std::istream& in);     // throws TraceError
std::vector<Event> read_trace_file(const std::string& path);

}  // namespace capr
