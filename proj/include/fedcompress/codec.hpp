// SPDX-License-Identifier: Apache-2.0
#pragma once

// Binary model format for clustered models ("FCMP").
//
//   magic "FCMP" | version u8 | layer count u32
//   per layer:
//     rows u32 | cols u32 | activation u8 | cluster count u32
//     u32 byte length | C x float32          (codebook)
//     u32 byte length | packed indices       (ceil(rows*cols*bits/8) bytes)
//     u32 byte length | rows x float32       (bias, or empty)
//
// Integers and floats are little-endian. Indices use bits = ceil(log2 C) bits
// each, packed least-significant-bit first into a per-layer stream whose final
// byte is zero-padded.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fedcompress/compression.hpp"
#include "fedcompress/error.hpp"

namespace fedcompress {

inline constexpr std::uint8_t kFormatVersion = 1;
inline constexpr std::size_t kFileHeaderBytes = 4 + 1 + 4;
inline constexpr std::size_t kLayerFramingBytes = 4 + 4 + 1 + 4 + 3 * 4;

/// ceil(log2 C); zero for C <= 1.
constexpr unsigned bits_per_index(std::uint64_t clusters) noexcept {
  return clusters <= 1 ? 0u : static_cast<unsigned>(std::bit_width(clusters - 1));
}

constexpr std::uint64_t packed_index_bytes(std::uint64_t count, std::uint64_t clusters) noexcept {
  return (count * bits_per_index(clusters) + 7) / 8;
}

struct LayerShape {
  std::uint64_t rows = 0;
  std::uint64_t cols = 0;
  bool has_bias = true;
};

inline std::vector<LayerShape> layer_shapes(const ModelWeights& model) {
  std::vector<LayerShape> s;
  for (const auto& l : model.layers) s.push_back({l.weight.rows(), l.weight.cols(), !l.bias.empty()});
  return s;
}

/// Codebooks + packed indices + biases, without any framing.
inline std::uint64_t compressed_payload_bytes(std::span<const LayerShape> shapes, std::uint64_t clusters) {
  std::uint64_t total = 0;
  for (const auto& s : shapes) {
    total += 4 * clusters + packed_index_bytes(s.rows * s.cols, clusters) + (s.has_bias ? 4 * s.rows : 0);
  }
  return total;
}

/// Exact length of `encode` output for a model of these shapes.
inline std::uint64_t encoded_size(std::span<const LayerShape> shapes, std::uint64_t clusters) {
  return kFileHeaderBytes + kLayerFramingBytes * shapes.size() + compressed_payload_bytes(shapes, clusters);
}

inline std::uint64_t raw_parameter_bytes(std::span<const LayerShape> shapes) {
  std::uint64_t total = 0;
  for (const auto& s : shapes) total += 4 * (s.rows * s.cols + (s.has_bias ? s.rows : 0));
  return total;
}

/// Raw float32 size of all parameters over the compressed payload size.
inline double model_compression_ratio(std::span<const LayerShape> shapes, std::uint64_t clusters) {
  if (clusters == 0) throw InvalidInput("cluster count must be at least 1");
  return static_cast<double>(raw_parameter_bytes(shapes)) /
         static_cast<double>(compressed_payload_bytes(shapes, clusters));
}

inline double model_compression_ratio(const ModelWeights& model, std::uint64_t clusters) {
  const auto shapes = layer_shapes(model);
  return model_compression_ratio(std::span<const LayerShape>(shapes), clusters);
}

namespace detail {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void bytes(std::span<const std::uint8_t> b) { out_.insert(out_.end(), b.begin(), b.end()); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> in) : in_(in) {}

  std::size_t offset() const noexcept { return pos_; }
  bool done() const noexcept { return pos_ == in_.size(); }

  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    if (in_.size() - pos_ < n) throw DecodeError(std::string("truncated stream reading ") + what, pos_);
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint8_t u8(const char* what) { return take(1, what)[0]; }
  std::uint32_t u32(const char* what) {
    auto b = take(4, what);
    return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
           static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
  }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> pack_indices(std::span<const std::uint32_t> indices, unsigned bits) {
  std::vector<std::uint8_t> out((indices.size() * bits + 7) / 8, 0);
  std::uint64_t bitpos = 0;
  for (auto v : indices) {
    for (unsigned b = 0; b < bits; ++b, ++bitpos) {
      if ((v >> b) & 1u) out[bitpos / 8] |= static_cast<std::uint8_t>(1u << (bitpos % 8));
    }
  }
  return out;
}

inline std::vector<std::uint32_t> unpack_indices(std::span<const std::uint8_t> packed, std::size_t count,
                                                 unsigned bits) {
  std::vector<std::uint32_t> out(count, 0);
  std::uint64_t bitpos = 0;
  for (auto& v : out) {
    for (unsigned b = 0; b < bits; ++b, ++bitpos) {
      if ((packed[bitpos / 8] >> (bitpos % 8)) & 1u) v |= 1u << b;
    }
  }
  return out;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode(const ClusteredModel& model) {
  if (model.activations.size() + 1 != model.layers.size()) {
    throw InvalidInput("clustered model needs one activation tag per hidden layer");
  }
  detail::ByteWriter w;
  w.bytes(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>("FCMP"), 4));
  w.u8(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(model.layers.size()));
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const auto& cl = model.layers[l];
    const std::uint64_t count = std::uint64_t{cl.rows} * cl.cols;
    const auto clusters = cl.codebook.size();
    if (clusters == 0) throw InvalidInput("layer " + std::to_string(l) + " has an empty codebook");
    if (cl.indices.size() != count) throw InvalidInput("layer " + std::to_string(l) + " index count mismatch");
    if (!cl.bias.empty() && cl.bias.size() != cl.rows) throw InvalidInput("layer bias length mismatch");
    for (auto i : cl.indices)
      if (i >= clusters) throw InvalidInput("layer " + std::to_string(l) + " has an out-of-range index");
    w.u32(cl.rows);
    w.u32(cl.cols);
    w.u8(l + 1 < model.layers.size() ? static_cast<std::uint8_t>(model.activations[l])
                                     : static_cast<std::uint8_t>(Activation::identity));
    w.u32(static_cast<std::uint32_t>(clusters));
    w.u32(static_cast<std::uint32_t>(4 * clusters));
    for (float c : cl.codebook) w.f32(c);
    const auto packed = detail::pack_indices(cl.indices, bits_per_index(clusters));
    w.u32(static_cast<std::uint32_t>(packed.size()));
    w.bytes(packed);
    w.u32(static_cast<std::uint32_t>(4 * cl.bias.size()));
    for (float b : cl.bias) w.f32(b);
  }
  return w.take();
}

inline ClusteredModel decode(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  auto magic = r.take(4, "magic");
  if (!std::equal(magic.begin(), magic.end(), "FCMP")) throw DecodeError("bad magic", 0);
  const auto version = r.u8("version");
  if (version != kFormatVersion) throw DecodeError("unsupported format version " + std::to_string(version), 4);
  const auto layers = r.u32("layer count");
  if (layers == 0) throw DecodeError("model has no layers", r.offset() - 4);

  ClusteredModel m;
  for (std::uint32_t l = 0; l < layers; ++l) {
    ClusteredLayer cl;
    cl.rows = r.u32("rows");
    cl.cols = r.u32("cols");
    const std::size_t act_at = r.offset();
    const auto act = r.u8("activation");
    if (act > static_cast<std::uint8_t>(Activation::identity)) throw DecodeError("unknown activation tag", act_at);
    const std::size_t c_at = r.offset();
    const std::uint32_t clusters = r.u32("cluster count");
    if (clusters == 0) throw DecodeError("zero cluster count", c_at);

    const std::size_t cb_at = r.offset();
    if (r.u32("codebook length") != std::uint64_t{4} * clusters) throw DecodeError("codebook length mismatch", cb_at);
    cl.codebook.reserve(clusters);
    for (std::uint32_t j = 0; j < clusters; ++j) cl.codebook.push_back(r.f32("codebook"));

    const std::uint64_t count = std::uint64_t{cl.rows} * cl.cols;
    const unsigned bits = bits_per_index(clusters);
    const std::size_t idx_at = r.offset();
    const std::uint32_t idx_len = r.u32("index length");
    if (idx_len != packed_index_bytes(count, clusters)) throw DecodeError("index section length mismatch", idx_at);
    const auto packed = r.take(idx_len, "indices");
    const std::uint64_t used_bits = count * bits;
    if (used_bits % 8 != 0 && (packed.back() >> (used_bits % 8)) != 0) {
      throw DecodeError("non-zero padding bits", r.offset() - 1);
    }
    cl.indices = detail::unpack_indices(packed, count, bits);
    for (std::size_t i = 0; i < cl.indices.size(); ++i) {
      if (cl.indices[i] >= clusters) throw DecodeError("index out of codebook range", idx_at + 4 + i * bits / 8);
    }

    const std::size_t bias_at = r.offset();
    const std::uint32_t bias_len = r.u32("bias length");
    if (bias_len != 0 && bias_len != std::uint64_t{4} * cl.rows) throw DecodeError("bias length mismatch", bias_at);
    for (std::uint32_t i = 0; i < bias_len / 4; ++i) cl.bias.push_back(r.f32("bias"));

    if (l > 0 && m.layers.back().rows != cl.cols) throw DecodeError("layer widths do not compose", act_at - 8);
    if (l + 1 < layers) {
      m.activations.push_back(static_cast<Activation>(act));
    } else if (act != static_cast<std::uint8_t>(Activation::identity)) {
      throw DecodeError("output layer must be tagged identity", act_at);
    }
    m.layers.push_back(std::move(cl));
  }
  if (!r.done()) throw DecodeError("trailing bytes after last layer", r.offset());
  return m;
}

}  // namespace fedcompress
