#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "hydisc/optim.hpp"
#include "hydisc/tensor.hpp"

namespace hydisc {

// Detached value snapshot of a ParamSet. All parameter movement across the
// simulated wire (checkpoints, FedAvg, ledger accounting) goes through
// bundles, so every consumer counts elements identically.
struct ParamBundle {
  struct Entry {
    std::string name;
    int rows = 0;
    int cols = 0;
    std::vector<double> data;
  };
  std::vector<Entry> entries;

  std::uint64_t total_elements() const;
  std::uint64_t content_hash() const;
};

ParamBundle snapshot(const ParamSet& params);
// Copies bundle values into the ParamSet's leaves. Name, order, and shape
// must match exactly.
void restore(ParamSet& params, const ParamBundle& bundle);

// Elementwise mean across congruent bundles. Shape or name disagreement
// raises an aggregation error naming the offending tensor index.
ParamBundle fedavg(std::span<const ParamBundle> bundles);

// Versioned, length-prefixed little-endian binary layout:
//   u32 magic 'HYPB', u32 version, u32 entry count, then per entry
//   u16 name length + bytes, u32 rows, u32 cols, f64 data.
std::vector<std::uint8_t> serialize_bundle(const ParamBundle& bundle);
ParamBundle deserialize_bundle(std::span<const std::uint8_t> bytes, std::size_t* consumed = nullptr);

// Adam moments travel with checkpoints so interrupted runs resume exactly.
std::vector<std::uint8_t> serialize_adam(const AdamState& state);
AdamState deserialize_adam(std::span<const std::uint8_t> bytes, std::size_t* consumed = nullptr);

// Byte-stream helpers shared by the checkpoint container.
void append_u32(std::vector<std::uint8_t>& out, std::uint32_t v);
void append_u64(std::vector<std::uint8_t>& out, std::uint64_t v);
void append_f64(std::vector<std::uint8_t>& out, double v);
std::uint32_t read_u32(std::span<const std::uint8_t> bytes, std::size_t& pos);
std::uint64_t read_u64(std::span<const std::uint8_t> bytes, std::size_t& pos);
double read_f64(std::span<const std::uint8_t> bytes, std::size_t& pos);

}  // namespace hydisc
