// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>

namespace capr {

using Value = std::int64_t;
using TxId = std::uint64_t;
using StepIndex = std::size_t;

// Identifier for one data object. Shared objects live in shared memory and
// are visible to every transaction; local objects are private to a single
// transaction's local data block. The two namespaces are disjoint: on the
// wire, shared ids are non-negative and local ids are negative.
class ObjectId {
 public:
  static ObjectId shared(std::uint32_t index) {
    return ObjectId(static_cast<std::int64_t>(index));
  }
  static ObjectId local(std::uint32_t index) {
    return ObjectId(-static_cast<std::int64_t>(index) - 1);
  }
  static ObjectId from_wire(std::int64_t raw) { return ObjectId(raw); }

  std::int64_t wire() const { return raw_; }
  bool is_shared() const { return raw_ >= 0; }
  bool is_local() const { return raw_ < 0; }
  std::uint32_t index() const {
    return static_cast<std::uint32_t>(is_shared() ? raw_ : -(raw_ + 1));
  }

  auto operator<=>(const ObjectId&) const = default;

 private:
  explicit ObjectId(std::int64_t raw) : raw_(raw) {}
  std::int64_t raw_;
};

}  // namespace capr
