#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "hydisc/protocol.hpp"

namespace hydisc {

// A server-bound payload that would reveal a client's private modality.
struct Violation {
  std::size_t message_index = 0;  // position in the ledger
  MessageKind kind = MessageKind::text_up;
  int sender = 0;
  int receiver = 0;
  int round = 0;
  std::string reason;
};

// Scans every message ever recorded and flags payloads that move raw audio or
// visual material (features or their gradients, marked as real) toward the
// server. The rule is independent of the privacy scenario: a deployment that
// shares a modality does so through data-access grants, never through the
// message channel, so a clean trace stays clean under every scenario.
std::vector<Violation> audit(const CommsLedger& ledger);

}  // namespace hydisc
