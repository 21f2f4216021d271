#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "umnn/flow.hpp"

namespace umnn {

// CRC-32 (IEEE 802.3 polynomial, reflected), matching zlib's crc32.
inline std::uint32_t crc32(const unsigned char* data, std::size_t n,
                           std::uint32_t crc = 0) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  crc = ~crc;
  for (std::size_t i = 0; i < n; ++i) crc = table[(crc ^ data[i]) & 0xFF] ^ (crc >> 8);
  return ~crc;
}

namespace detail {

// Little-endian byte writer over a growable buffer.
struct ByteWriter {
  std::vector<unsigned char> buf;

  void u8(std::uint8_t v) { buf.push_back(v); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) buf.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void f64(double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<unsigned char>(bits >> (8 * i)));
  }
};

struct ByteReader {
  const unsigned char* p;
  std::size_t left;

  void need(std::size_t n) {
    if (left < n) throw IoError("model file truncated");
  }
  std::uint8_t u8() {
    need(1);
    --left;
    return *p++;
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = 0;
    for (int i = 0; i < 2; ++i) v |= static_cast<std::uint16_t>(*p++) << (8 * i);
    left -= 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(*p++) << (8 * i);
    left -= 4;
    return v;
  }
  double f64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(*p++) << (8 * i);
    left -= 8;
    return std::bit_cast<double>(v);
  }
};

inline constexpr std::uint16_t kModelVersion = 1;

}  // namespace detail

// Serializes the model: magic "UMNN", version, dimensions and layer shapes,
// per-step permutations, then every parameter tensor as little-endian 64-bit
// floats in declaration order, followed by a CRC-32 of all preceding bytes.
inline std::vector<unsigned char> model_to_bytes(const FlowModel& model) {
  detail::ByteWriter w;
  w.u8('U');
  w.u8('M');
  w.u8('N');
  w.u8('N');
  w.u16(detail::kModelVersion);
  w.u32(static_cast<std::uint32_t>(model.d));
  w.u32(static_cast<std::uint32_t>(model.steps.size()));
  w.u32(static_cast<std::uint32_t>(model.q));
  w.u8(static_cast<std::uint8_t>(model.made_act));
  w.u8(static_cast<std::uint8_t>(model.integrand_act));
  w.u32(static_cast<std::uint32_t>(model.made_hidden.size()));
  for (int s : model.made_hidden) w.u32(static_cast<std::uint32_t>(s));
  w.u32(static_cast<std::uint32_t>(model.integrand_hidden.size()));
  for (int s : model.integrand_hidden) w.u32(static_cast<std::uint32_t>(s));
  for (const auto& step : model.steps)
    for (int p : step.perm) w.u32(static_cast<std::uint32_t>(p));
  for (const auto& step : model.steps) {
    step.made.params.for_each_value([&](double v) { w.f64(v); });
    step.block.integrand.for_each_value([&](double v) { w.f64(v); });
  }
  w.u32(crc32(w.buf.data(), w.buf.size()));
  return std::move(w.buf);
}

inline void save_model(const std::string& path, const FlowModel& model) {
  const auto bytes = model_to_bytes(model);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed while writing '" + path + "'");
}

inline FlowModel model_from_bytes(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < 4 + 2 + 4) throw IoError("model file truncated");
  const std::uint32_t stored =
      static_cast<std::uint32_t>(bytes[bytes.size() - 4]) |
      static_cast<std::uint32_t>(bytes[bytes.size() - 3]) << 8 |
      static_cast<std::uint32_t>(bytes[bytes.size() - 2]) << 16 |
      static_cast<std::uint32_t>(bytes[bytes.size() - 1]) << 24;
  if (crc32(bytes.data(), bytes.size() - 4) != stored)
    throw IoError("model file checksum mismatch, refusing to load");

  detail::ByteReader r{bytes.data(), bytes.size() - 4};
  if (r.u8() != 'U' || r.u8() != 'M' || r.u8() != 'N' || r.u8() != 'N')
    throw IoError("not a UMNN model file (bad magic)");
  const std::uint16_t version = r.u16();
  if (version != detail::kModelVersion)
    throw IoError("unsupported model format version " + std::to_string(version));

  const int d = static_cast<int>(r.u32());
  const int k = static_cast<int>(r.u32());
  const int q = static_cast<int>(r.u32());
  const auto made_act = static_cast<Hidden>(r.u8());
  const auto integrand_act = static_cast<Hidden>(r.u8());
  std::vector<int> made_hidden(r.u32());
  for (auto& s : made_hidden) s = static_cast<int>(r.u32());
  std::vector<int> integrand_hidden;
  integrand_hidden.resize(r.u32());
  for (auto& s : integrand_hidden) s = static_cast<int>(r.u32());

  FlowModel model = make_flow_model(d, k, made_hidden, integrand_hidden, q, 0, made_act,
                                    integrand_act);
  for (auto& step : model.steps)
    for (int& p : step.perm) p = static_cast<int>(r.u32());
  for (auto& step : model.steps) {
    step.made.params.for_each_param([&](double& v, double&) { v = r.f64(); });
    step.made.params.apply_masks();
    step.block.integrand.for_each_param([&](double& v, double&) { v = r.f64(); });
  }
  if (r.left != 0) throw IoError("model file has trailing bytes");
  return model;
}

inline FlowModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return model_from_bytes(bytes);
}

}  // namespace umnn
