#include "hydisc/params.hpp"

#include <cstring>

#include "hydisc/rng.hpp"

namespace hydisc {

std::uint64_t ParamBundle::total_elements() const {
  std::uint64_t n = 0;
  for (const Entry& e : entries) n += e.data.size();
  return n;
}

std::uint64_t ParamBundle::content_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const Entry& e : entries) {
    h = fnv1a(e.name.data(), e.name.size(), h);
    const std::uint32_t dims[2] = {static_cast<std::uint32_t>(e.rows),
                                   static_cast<std::uint32_t>(e.cols)};
    h = fnv1a(dims, sizeof(dims), h);
    h = fnv1a(e.data.data(), e.data.size() * sizeof(double), h);
  }
  return h;
}

ParamBundle snapshot(const ParamSet& params) {
  ParamBundle b;
  b.entries.reserve(params.count());
  for (std::size_t i = 0; i < params.count(); ++i) {
    const Tensor& t = params.tensor(i);
    auto v = t.values();
    b.entries.push_back({params.name(i), t.rows(), t.cols(), {v.begin(), v.end()}});
  }
  return b;
}

void restore(ParamSet& params, const ParamBundle& bundle) {
  if (bundle.entries.size() != params.count()) {
    throw ContractError("restore: bundle has " + std::to_string(bundle.entries.size()) +
                        " entries, parameter set has " + std::to_string(params.count()));
  }
  for (std::size_t i = 0; i < params.count(); ++i) {
    const ParamBundle::Entry& e = bundle.entries[i];
    Tensor& t = params.tensor(i);
    if (e.name != params.name(i)) {
      throw ContractError("restore: entry " + std::to_string(i) + " name '" + e.name +
                          "' does not match parameter '" + params.name(i) + "'");
    }
    if (e.rows != t.rows() || e.cols != t.cols()) {
      throw DimensionError("restore: entry " + std::to_string(i) + " ('" + e.name + "') shape (" +
                           std::to_string(e.rows) + "x" + std::to_string(e.cols) +
                           ") does not match " + t.shape_str());
    }
    auto dst = t.leaf_values();
    std::copy(e.data.begin(), e.data.end(), dst.begin());
  }
}

ParamBundle fedavg(std::span<const ParamBundle> bundles) {
  if (bundles.empty()) throw ContractError("fedavg: empty bundle list");
  ParamBundle out = bundles[0];
  for (std::size_t b = 1; b < bundles.size(); ++b) {
    const ParamBundle& cur = bundles[b];
    if (cur.entries.size() != out.entries.size()) {
      throw ContractError("fedavg: bundle " + std::to_string(b) + " has " +
                          std::to_string(cur.entries.size()) + " entries, expected " +
                          std::to_string(out.entries.size()));
    }
    for (std::size_t i = 0; i < out.entries.size(); ++i) {
      const ParamBundle::Entry& e = cur.entries[i];
      ParamBundle::Entry& acc = out.entries[i];
      if (e.name != acc.name || e.rows != acc.rows || e.cols != acc.cols) {
        throw ContractError("fedavg: tensor " + std::to_string(i) + " ('" + acc.name +
                            "') is not congruent across bundles: (" + std::to_string(acc.rows) +
                            "x" + std::to_string(acc.cols) + ") vs ('" + e.name + "' " +
                            std::to_string(e.rows) + "x" + std::to_string(e.cols) + ")");
      }
      for (std::size_t j = 0; j < acc.data.size(); ++j) acc.data[j] += e.data[j];
    }
  }
  // Divide rather than multiply by a reciprocal: the result is then the
  // correctly rounded mean of the in-order sum, bit-identical to a plain
  // accumulate-and-divide reference.
  const double n = static_cast<double>(bundles.size());
  for (ParamBundle::Entry& e : out.entries) {
    for (double& x : e.data) x /= n;
  }
  return out;
}

namespace {
constexpr std::uint32_t kBundleMagic = 0x48595042;  // 'HYPB'
constexpr std::uint32_t kBundleVersion = 1;
constexpr std::uint32_t kAdamMagic = 0x48594144;  // 'HYAD'
}  // namespace

void append_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void append_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void append_f64(std::vector<std::uint8_t>& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  append_u64(out, bits);
}

std::uint32_t read_u32(std::span<const std::uint8_t> bytes, std::size_t& pos) {
  if (pos + 4 > bytes.size()) throw ParseError("binary read: truncated u32 at offset " + std::to_string(pos));
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[pos + i]) << (8 * i);
  pos += 4;
  return v;
}

std::uint64_t read_u64(std::span<const std::uint8_t> bytes, std::size_t& pos) {
  if (pos + 8 > bytes.size()) throw ParseError("binary read: truncated u64 at offset " + std::to_string(pos));
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[pos + i]) << (8 * i);
  pos += 8;
  return v;
}

double read_f64(std::span<const std::uint8_t> bytes, std::size_t& pos) {
  const std::uint64_t bits = read_u64(bytes, pos);
  double v;
  std::memcpy(&v, &bits, sizeof(v));
  return v;
}

std::vector<std::uint8_t> serialize_bundle(const ParamBundle& bundle) {
  std::vector<std::uint8_t> out;
  append_u32(out, kBundleMagic);
  append_u32(out, kBundleVersion);
  append_u32(out, static_cast<std::uint32_t>(bundle.entries.size()));
  for (const ParamBundle::Entry& e : bundle.entries) {
    if (e.name.size() > 0xffff) throw ContractError("serialize_bundle: name too long: " + e.name);
    out.push_back(static_cast<std::uint8_t>(e.name.size() & 0xff));
    out.push_back(static_cast<std::uint8_t>((e.name.size() >> 8) & 0xff));
    out.insert(out.end(), e.name.begin(), e.name.end());
    append_u32(out, static_cast<std::uint32_t>(e.rows));
    append_u32(out, static_cast<std::uint32_t>(e.cols));
    for (double v : e.data) append_f64(out, v);
  }
  return out;
}

ParamBundle deserialize_bundle(std::span<const std::uint8_t> bytes, std::size_t* consumed) {
  std::size_t pos = 0;
  if (read_u32(bytes, pos) != kBundleMagic) throw ParseError("deserialize_bundle: bad magic");
  const std::uint32_t version = read_u32(bytes, pos);
  if (version != kBundleVersion) {
    throw ParseError("deserialize_bundle: unsupported version " + std::to_string(version));
  }
  const std::uint32_t count = read_u32(bytes, pos);
  ParamBundle b;
  b.entries.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    if (pos + 2 > bytes.size()) throw ParseError("deserialize_bundle: truncated name length");
    const std::size_t name_len = bytes[pos] | (static_cast<std::size_t>(bytes[pos + 1]) << 8);
    pos += 2;
    if (pos + name_len > bytes.size()) throw ParseError("deserialize_bundle: truncated name");
    std::string name(reinterpret_cast<const char*>(bytes.data() + pos), name_len);
    pos += name_len;
    const int rows = static_cast<int>(read_u32(bytes, pos));
    const int cols = static_cast<int>(read_u32(bytes, pos));
    ParamBundle::Entry e{std::move(name), rows, cols, {}};
    const std::size_t n = static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
    e.data.reserve(n);
    for (std::size_t j = 0; j < n; ++j) e.data.push_back(read_f64(bytes, pos));
    b.entries.push_back(std::move(e));
  }
  if (consumed) *consumed = pos;
  return b;
}

std::vector<std::uint8_t> serialize_adam(const AdamState& state) {
  std::vector<std::uint8_t> out;
  append_u32(out, kAdamMagic);
  append_f64(out, state.lr);
  append_f64(out, state.beta1);
  append_f64(out, state.beta2);
  append_f64(out, state.eps);
  append_u64(out, static_cast<std::uint64_t>(state.step_count));
  append_u32(out, static_cast<std::uint32_t>(state.m.size()));
  for (std::size_t i = 0; i < state.m.size(); ++i) {
    append_u64(out, state.m[i].size());
    for (double v : state.m[i]) append_f64(out, v);
    for (double v : state.v[i]) append_f64(out, v);
  }
  return out;
}

AdamState deserialize_adam(std::span<const std::uint8_t> bytes, std::size_t* consumed) {
  std::size_t pos = 0;
  if (read_u32(bytes, pos) != kAdamMagic) throw ParseError("deserialize_adam: bad magic");
  AdamState s;
  s.lr = read_f64(bytes, pos);
  s.beta1 = read_f64(bytes, pos);
  s.beta2 = read_f64(bytes, pos);
  s.eps = read_f64(bytes, pos);
  s.step_count = static_cast<std::int64_t>(read_u64(bytes, pos));
  const std::uint32_t slots = read_u32(bytes, pos);
  s.m.resize(slots);
  s.v.resize(slots);
  for (std::uint32_t i = 0; i < slots; ++i) {
    const std::uint64_t n = read_u64(bytes, pos);
    s.m[i].reserve(n);
    s.v[i].reserve(n);
    for (std::uint64_t j = 0; j < n; ++j) s.m[i].push_back(read_f64(bytes, pos));
    for (std::uint64_t j = 0; j < n; ++j) s.v[i].push_back(read_f64(bytes, pos));
  }
  if (consumed) *consumed = pos;
  return s;
}

}  // namespace hydisc
