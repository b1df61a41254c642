#pragma once

// Portable network checkpoint layout. All integers and floats are
// little-endian regardless of host byte order.
//
//   offset  size  field
//   0       8     magic "HJBACNET"
//   8       4     u32 format version (1)
//   12      4     u32 network count
//   then per network:
//           4     u32 name length L
//           L     name bytes (ASCII)
//           4     u32 in_dim
//           4     u32 out_dim
//           4     u32 width
//           4     u32 depth
//           4     u32 head (0 unconstrained, 1 unit-ball)
//           8     u64 parameter count P
//           8*P   f64 parameters in ParamVector order (W0, b0, W1, b1, ...;
//                 each matrix column-major)

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "hjbac/networks/network_set.hpp"

namespace hjbac::nn {

class BinaryWriter {
 public:
  explicit BinaryWriter(std::ostream& os) : os_(os) {}
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  void bytes(const std::string& s);
  void f64_array(const Vector& v);

 private:
  std::ostream& os_;
};

class BinaryReader {
 public:
  explicit BinaryReader(std::istream& is) : is_(is) {}
  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  std::string bytes(std::size_t n);
  Vector f64_array(std::size_t n);

 private:
  std::istream& is_;
};

/// One serialized network.
struct NetRecord {
  std::string name;
  ResidualMLP net;
  ControlHead head = ControlHead::Unconstrained;
};

void write_networks(std::ostream& os, const std::vector<NetRecord>& nets);
std::vector<NetRecord> read_networks(std::istream& is);

/// Records for a NetworkSet, named "value", "gradient" (VR-LSTD only) and "control".
std::vector<NetRecord> to_records(const NetworkSet& nets);
NetworkSet from_records(const std::vector<NetRecord>& records);

void save_networks(const std::string& path, const NetworkSet& nets);
NetworkSet load_networks(const std::string& path);

}  // namespace hjbac::nn
