// SPDX-License-Identifier: Apache-2.0

#include "capr/event.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace capr {

namespace {

constexpr char kTraceHeader[] = "#capr-trace v1";

std::int64_t parse_int(const std::string& field, std::size_t line_no,
                       const char* what) {
  std::int64_t out = 0;
  const char* begin = field.data();
  const char* end = begin + field.size();
  auto [ptr, ec] = std::from_chars(begin, end, out);
  if (ec != std::errc() || ptr != end) {
    throw TraceError("line " + std::to_string(line_no) + ": bad " + what +
                     " '" + field + "'");
  }
  return out;
}

EventKind parse_kind(const std::string& field, std::size_t line_no) {
  if (field == "B") return EventKind::kBegin;
  if (field == "R") return EventKind::kRead;
  if (field == "W") return EventKind::kWrite;
  if (field == "C") return EventKind::kCommit;
  if (field == "A") return EventKind::kAbort;
  if (field == "RA") return EventKind::kRollbackAbort;
  throw TraceError("line " + std::to_string(line_no) + ": bad kind '" +
                   field + "'");
}

}  // namespace

bool is_terminal(EventKind kind) {
  return kind == EventKind::kCommit || kind == EventKind::kAbort ||
         kind == EventKind::kRollbackAbort;
}

const char* kind_code(EventKind kind) {
  switch (kind) {
    case EventKind::kBegin:
      return "B";
    case EventKind::kRead:
      return "R";
    case EventKind::kWrite:
      return "W";
    case EventKind::kCommit:
      return "C";
    case EventKind::kAbort:
      return "A";
    case EventKind::kRollbackAbort:
      return "RA";
  }
  return "?";
}

bool operator==(const Event& a, const Event& b) {
  return a.seq == b.seq && a.tx == b.tx && a.incarnation == b.incarnation &&
         a.kind == b.kind && a.object == b.object && a.value == b.value;
}

std::string to_string(TxnId id) {
  if (id == kInitialTxn) return "T0";
  return "T" + std::to_string(id.tx) + "." + std::to_string(id.incarnation);
}

void write_trace(std::ostream& out, const std::vector<Event>& events) {
  out << kTraceHeader << '\n';
  for (const Event& e : events) {
    out << e.seq << '\t' << e.tx << '\t' << e.incarnation << '\t'
        << kind_code(e.kind) << '\t';
    if (e.object) {
      out << e.object->wire();
    } else {
      out << '-';
    }
    out << '\t';
    if (e.value) {
      out << *e.value;
    } else {
      out << '-';
    }
    out << '\n';
  }
}

std::string trace_to_string(const std::vector<Event>& events) {
  std::ostringstream out;
  write_trace(out, events);
  return out.str();
}

std::vector<Event> read_trace(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kTraceHeader) {
    throw TraceError("missing trace header '" + std::string(kTraceHeader) +
                     "'");
  }
  std::vector<Event> events;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) {
      throw TraceError("line " + std::to_string(line_no) + ": empty line");
    }
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      std::size_t tab = line.find('\t', start);
      if (tab == std::string::npos) {
        fields.push_back(line.substr(start));
        break;
      }
      fields.push_back(line.substr(start, tab - start));
      start = tab + 1;
    }
    if (fields.size() != 6) {
      throw TraceError("line " + std::to_string(line_no) + ": expected 6 " +
                       "fields, got " + std::to_string(fields.size()));
    }
    Event e;
    e.seq = parse_int(fields[0], line_no, "seq");
    if (e.seq != static_cast<std::int64_t>(events.size())) {
      throw TraceError("line " + std::to_string(line_no) + ": seq " +
                       std::to_string(e.seq) + " out of order, expected " +
                       std::to_string(events.size()));
    }
    std::int64_t tx = parse_int(fields[1], line_no, "tx");
    if (tx <= 0) {
      throw TraceError("line " + std::to_string(line_no) +
                       ": tx must be positive");
    }
    e.tx = static_cast<TxId>(tx);
    std::int64_t inc = parse_int(fields[2], line_no, "incarnation");
    if (inc < 1) {
      throw TraceError("line " + std::to_string(line_no) +
                       ": incarnation must be at least 1");
    }
    e.incarnation = static_cast<std::uint32_t>(inc);
    e.kind = parse_kind(fields[3], line_no);
    bool needs_object =
        e.kind == EventKind::kRead || e.kind == EventKind::kWrite;
    if (fields[4] == "-") {
      if (needs_object) {
        throw TraceError("line " + std::to_string(line_no) +
                         ": read/write needs an object");
      }
    } else {
      e.object = ObjectId::from_wire(parse_int(fields[4], line_no, "object"));
    }
    if (fields[5] == "-") {
      if (needs_object) {
        throw TraceError("line " + std::to_string(line_no) +
                         ": read/write needs a value");
      }
    } else {
      e.value = parse_int(fields[5], line_no, "value");
    }
    if (!needs_object && (e.object || e.value)) {
      throw TraceError("line " + std::to_string(line_no) + ": " +
                       kind_code(e.kind) + " takes no object or value");
    }
    events.push_back(e);
  }
  return events;
}

std::vector<Event> read_trace_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw TraceError("cannot open trace file '" + path + "'");
  }
  return read_trace(in);
}

}  // namespace capr
