#pragma once

#include <cstddef>
#include <deque>
#include <utility>

#include "infoprop/linalg.hpp"

namespace infoprop {

struct Transition {
  Vec state;
  Vec action;
  Vec next_state;
};

/// Ordered, append-only buffer of environment transitions. An optional
/// capacity evicts the oldest transitions first.
class TransitionBuffer {
 public:
  TransitionBuffer() = default;
  explicit TransitionBuffer(size_t capacity) : capacity_(capacity) {}

  void push(Transition t) {
    if (!items_.empty()) {
      if (t.state.size() != items_.front().state.size() ||
          t.action.size() != items_.front().action.size() ||
          t.next_state.size() != items_.front().next_state.size())
        throw DimensionMismatch("TransitionBuffer: inconsistent transition dimensions");
    }
    if (t.state.size() != t.next_state.size())
      throw DimensionMismatch("TransitionBuffer: state/next_state dimensions disagree");
    items_.push_back(std::move(t));
    if (capacity_ > 0 && items_.size() > capacity_) items_.pop_front();
  }

  const Transition& operator[](size_t b) const { return items_[b]; }
  size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }

  int state_dim() const { return items_.empty() ? 0 : static_cast<int>(items_.front().state.size()); }
  int action_dim() const { return items_.empty() ? 0 : static_cast<int>(items_.front().action.size()); }

  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

 private:
  std::deque<Transition> items_;
  size_t capacity_ = 0;  // 0 = unbounded
};

}  // namespace infoprop
