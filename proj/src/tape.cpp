#include "brst/tape.hpp"

#include "brst/errors.hpp"

namespace brst {

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape* active_tape() { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

void Tape::backward(const Tensor& loss) {
  if (!loss.defined()) throw NumericError("backward: undefined loss tensor");
  if (loss.value().numel() != 1) {
    throw NumericError("backward: loss must be scalar, got shape " + loss.value().shape_str());
  }
  for (auto& n : record_) n->needed = false;

  Node* loss_node = loss.node().get();
  loss_node->needed = true;
  loss_node->ensure_grad()[0] = 1.0;

  // Reverse creation order: every consumer is visited before its inputs.
  for (auto it = record_.rbegin(); it != record_.rend(); ++it) {
    Node& node = **it;
    if (!node.needed) continue;
    node.ensure_grad();
    for (auto& parent : node.parents) parent->needed = true;
    if (node.backward) node.backward(node);
  }
}

}  // namespace brst
