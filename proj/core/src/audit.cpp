#include "hydisc/audit.hpp"

namespace hydisc {

namespace {

bool private_modality(const TensorDescriptor& d) {
  return d.modality && (*d.modality == Modality::audio || *d.modality == Modality::visual);
}

bool leaks(const TensorDescriptor& d) {
  if (!private_modality(d)) return false;
  if (!d.provenance || *d.provenance != Provenance::real) return false;
  return d.payload_class == PayloadClass::feature || d.payload_class == PayloadClass::gradient;
}

}  // namespace

std::vector<Violation> audit(const CommsLedger& ledger) {
  std::vector<Violation> out;
  const std::vector<Message>& msgs = ledger.messages();
  for (std::size_t i = 0; i < msgs.size(); ++i) {
    const Message& m = msgs[i];
    if (m.receiver != kServerId) continue;  // only server-bound traffic can leak
    for (const TensorDescriptor& d : m.payload) {
      if (!leaks(d)) continue;
      Violation v;
      v.message_index = i;
      v.kind = m.kind;
      v.sender = m.sender;
      v.receiver = m.receiver;
      v.round = m.round;
      v.reason = std::string("round ") + std::to_string(m.round) + ": client " +
                 std::to_string(m.sender) + " sent a real " + to_string(*d.modality) + " " +
                 to_string(d.payload_class) + " ('" + d.label + "') to the server";
      out.push_back(std::move(v));
    }
  }
  return out;
}

}  // namespace hydisc
