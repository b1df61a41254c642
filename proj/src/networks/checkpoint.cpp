#include "hjbac/networks/checkpoint.hpp"

#include <array>
#include <bit>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace hjbac::nn {

namespace {

constexpr std::array<char, 8> kMagic = {'H', 'J', 'B', 'A', 'C', 'N', 'E', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename U>
void put_le(std::ostream& os, U v) {
  std::array<char, sizeof(U)> buf{};
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  }
  os.write(buf.data(), buf.size());
}

template <typename U>
U get_le(std::istream& is) {
  std::array<unsigned char, sizeof(U)> buf{};
  is.read(reinterpret_cast<char*>(buf.data()), buf.size());
  if (!is) throw std::runtime_error("checkpoint: unexpected end of file");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
  return v;
}

}  // namespace

void BinaryWriter::u32(std::uint32_t v) { put_le(os_, v); }
void BinaryWriter::u64(std::uint64_t v) { put_le(os_, v); }
void BinaryWriter::f64(double v) { put_le(os_, std::bit_cast<std::uint64_t>(v)); }
void BinaryWriter::bytes(const std::string& s) { os_.write(s.data(), static_cast<std::streamsize>(s.size())); }
void BinaryWriter::f64_array(const Vector& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) f64(v[i]);
}

std::uint32_t BinaryReader::u32() { return get_le<std::uint32_t>(is_); }
std::uint64_t BinaryReader::u64() { return get_le<std::uint64_t>(is_); }
double BinaryReader::f64() { return std::bit_cast<double>(get_le<std::uint64_t>(is_)); }
std::string BinaryReader::bytes(std::size_t n) {
  std::string s(n, '\0');
  is_.read(s.data(), static_cast<std::streamsize>(n));
  if (!is_) throw std::runtime_error("checkpoint: unexpected end of file");
  return s;
}
Vector BinaryReader::f64_array(std::size_t n) {
  Vector v(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) v[static_cast<Eigen::Index>(i)] = f64();
  return v;
}

void write_networks(std::ostream& os, const std::vector<NetRecord>& nets) {
  BinaryWriter w(os);
  os.write(kMagic.data(), kMagic.size());
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(nets.size()));
  for (const NetRecord& r : nets) {
    w.u32(static_cast<std::uint32_t>(r.name.size()));
    w.bytes(r.name);
    w.u32(static_cast<std::uint32_t>(r.net.in_dim()));
    w.u32(static_cast<std::uint32_t>(r.net.out_dim()));
    w.u32(static_cast<std::uint32_t>(r.net.width()));
    w.u32(static_cast<std::uint32_t>(r.net.depth()));
    w.u32(static_cast<std::uint32_t>(r.head));
    w.u64(r.net.params().size());
    w.f64_array(r.net.params().values());
  }
  if (!os) throw std::runtime_error("checkpoint: write failed");
}

std::vector<NetRecord> read_networks(std::istream& is) {
  BinaryReader rd(is);
  const std::string magic = rd.bytes(kMagic.size());
  if (magic != std::string(kMagic.begin(), kMagic.end())) {
    throw std::runtime_error("checkpoint: bad magic, not a network file");
  }
  if (const auto v = rd.u32(); v != kVersion) {
    throw std::runtime_error("checkpoint: unsupported format version " + std::to_string(v));
  }
  const std::uint32_t count = rd.u32();
  std::vector<NetRecord> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    NetRecord r;
    r.name = rd.bytes(rd.u32());
    const auto in_dim = static_cast<int>(rd.u32());
    const auto out_dim = static_cast<int>(rd.u32());
    const auto width = static_cast<int>(rd.u32());
    const auto depth = static_cast<int>(rd.u32());
    const auto head = rd.u32();
    if (head > 1) throw std::runtime_error("checkpoint: unknown control head");
    r.head = static_cast<ControlHead>(head);
    r.net = ResidualMLP(in_dim, out_dim, width, depth);
    const std::uint64_t n = rd.u64();
    if (n != r.net.params().size()) {
      throw std::runtime_error("checkpoint: parameter count does not match architecture of '" +
                               r.name + "'");
    }
    r.net.params().assign(rd.f64_array(n));
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<NetRecord> to_records(const NetworkSet& nets) {
  std::vector<NetRecord> r;
  r.push_back({"value", nets.value, ControlHead::Unconstrained});
  if (nets.gradient) r.push_back({"gradient", *nets.gradient, ControlHead::Unconstrained});
  r.push_back({"control", nets.control, nets.head});
  return r;
}

NetworkSet from_records(const std::vector<NetRecord>& records) {
  NetworkSet set;
  bool has_value = false;
  bool has_control = false;
  for (const NetRecord& r : records) {
    if (r.name == "value") {
      set.value = r.net;
      has_value = true;
    } else if (r.name == "gradient") {
      set.gradient = r.net;
    } else if (r.name == "control") {
      set.control = r.net;
      set.head = r.head;
      has_control = true;
    } else {
      throw std::runtime_error("checkpoint: unexpected network '" + r.name + "'");
    }
  }
  if (!has_value || !has_control) throw std::runtime_error("checkpoint: missing value or control network");
  return set;
}

void save_networks(const std::string& path, const NetworkSet& nets) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + tmp + " for writing");
    write_networks(os, to_records(nets));
  }
  std::filesystem::rename(tmp, path);
}

NetworkSet load_networks(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  return from_records(read_networks(is));
}

}  // namespace hjbac::nn
