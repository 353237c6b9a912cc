// SPDX-License-Identifier: Apache-2.0
#include "quantdesk/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace quantdesk {

namespace {

using nlohmann::json;

void append_u64_le(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void append_f64_le(std::string& out, double v) {
  append_u64_le(out, std::bit_cast<uint64_t>(v));
}

void append_f32_le(std::string& out, float v) {
  const uint32_t b = std::bit_cast<uint32_t>(v);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((b >> (8 * i)) & 0xFF));
}

uint64_t take_u64_le(const std::string& buf, size_t off) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<uint64_t>(static_cast<unsigned char>(buf[off + static_cast<size_t>(i)]))
         << (8 * i);
  return v;
}

uint32_t take_u32_le(const std::string& buf, size_t off) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<uint32_t>(static_cast<unsigned char>(buf[off + static_cast<size_t>(i)]))
         << (8 * i);
  return v;
}

void write_file(const std::string& path, const json& header, const std::string& payload) {
  const std::string head = header.dump();
  std::string out;
  append_u64_le(out, head.size());
  out += head;
  out += payload;
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("write_tensor: cannot open '" + path + "' for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("write_tensor: write failed for '" + path + "'");
}

struct ParsedFile {
  json header;
  std::string payload;
};

ParsedFile read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_tensor: cannot open '" + path + "'");
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (buf.size() < 8) throw std::runtime_error("read_tensor: truncated header length in '" + path + "'");
  const uint64_t head_len = take_u64_le(buf, 0);
  if (buf.size() < 8 + head_len)
    throw std::runtime_error("read_tensor: truncated header in '" + path + "'");
  ParsedFile pf;
  try {
    pf.header = json::parse(buf.substr(8, head_len));
  } catch (const json::exception& e) {
    throw std::runtime_error("read_tensor: corrupt header in '" + path + "': " + e.what());
  }
  pf.payload = buf.substr(8 + head_len);
  return pf;
}

void require_payload_size(const ParsedFile& pf, size_t expected, const std::string& path) {
  if (pf.payload.size() != expected)
    throw std::runtime_error("read_tensor: payload size mismatch in '" + path + "': expected " +
                             std::to_string(expected) + " bytes, got " +
                             std::to_string(pf.payload.size()));
}

json layout_to_json(const BlockLayout& l) {
  if (l.kind == BlockLayout::Kind::OneD)
    return json{{"kind", "1d"}, {"axis", l.axis}, {"block_len", l.block_len}};
  return json{{"kind", "2d"}, {"tile_rows", l.tile_rows}, {"tile_cols", l.tile_cols}};
}

BlockLayout layout_from_json(const json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "1d") return BlockLayout::one_d(j.at("axis").get<int>(), j.at("block_len").get<int64_t>());
  if (kind == "2d")
    return BlockLayout::two_d(j.at("tile_rows").get<int64_t>(), j.at("tile_cols").get<int64_t>());
  throw std::runtime_error("read_tensor: unknown layout kind '" + kind + "'");
}

}  // namespace

void write_tensor(const Matrix& m, const std::string& path, const std::string& element_type) {
  if (element_type != "f64" && element_type != "f32")
    throw std::invalid_argument("write_tensor: element_type must be f64 or f32");
  json header{{"element_type", element_type}, {"shape", {m.rows, m.cols}}};
  std::string payload;
  payload.reserve(static_cast<size_t>(m.size()) * (element_type == "f64" ? 8 : 4));
  for (double v : m.data) {
    if (element_type == "f64")
      append_f64_le(payload, v);
    else
      append_f32_le(payload, static_cast<float>(v));
  }
  write_file(path, header, payload);
}

Matrix read_tensor(const std::string& path) {
  const ParsedFile pf = read_file(path);
  const std::string et = pf.header.at("element_type").get<std::string>();
  const auto shape = pf.header.at("shape").get<std::vector<int64_t>>();
  if (shape.size() != 2) throw std::runtime_error("read_tensor: shape must have two dims");
  const int64_t rows = shape[0], cols = shape[1];
  Matrix m(rows, cols);
  if (et == "f64") {
    require_payload_size(pf, static_cast<size_t>(m.size()) * 8, path);
    for (int64_t i = 0; i < m.size(); ++i)
      m.data[static_cast<size_t>(i)] =
          std::bit_cast<double>(take_u64_le(pf.payload, static_cast<size_t>(i) * 8));
  } else if (et == "f32") {
    require_payload_size(pf, static_cast<size_t>(m.size()) * 4, path);
    for (int64_t i = 0; i < m.size(); ++i)
      m.data[static_cast<size_t>(i)] = static_cast<double>(
          std::bit_cast<float>(take_u32_le(pf.payload, static_cast<size_t>(i) * 4)));
  } else {
    throw std::runtime_error("read_tensor: unknown element_type '" + et + "' in '" + path + "'");
  }
  return m;
}

void write_container(const MicroBlockTensor& q, const std::string& path) {
  json header{{"element_type", "codes"},
              {"shape", {q.rows, q.cols}},
              {"layout", layout_to_json(q.layout)},
              {"global_scale_bits", std::bit_cast<uint32_t>(q.global_scale)},
              {"zero_tensor", q.zero_tensor},
              {"code_count", q.codes.size()},
              {"scale_count", q.block_scales.size()}};
  std::string payload;
  payload.reserve(q.codes.size() + q.block_scales.size());
  payload.append(reinterpret_cast<const char*>(q.codes.data()), q.codes.size());
  payload.append(reinterpret_cast<const char*>(q.block_scales.data()), q.block_scales.size());
  write_file(path, header, payload);
}

MicroBlockTensor read_container(const std::string& path) {
  const ParsedFile pf = read_file(path);
  if (pf.header.at("element_type").get<std::string>() != "codes")
    throw std::runtime_error("read_container: not a codes container: '" + path + "'");
  const auto shape = pf.header.at("shape").get<std::vector<int64_t>>();
  if (shape.size() != 2) throw std::runtime_error("read_container: shape must have two dims");
  MicroBlockTensor q;
  q.rows = shape[0];
  q.cols = shape[1];
  q.layout = layout_from_json(pf.header.at("layout"));
  q.global_scale = std::bit_cast<float>(pf.header.at("global_scale_bits").get<uint32_t>());
  q.zero_tensor = pf.header.at("zero_tensor").get<bool>();
  const size_t code_count = pf.header.at("code_count").get<size_t>();
  const size_t scale_count = pf.header.at("scale_count").get<size_t>();
  require_payload_size(pf, code_count + scale_count, path);
  q.codes.assign(pf.payload.begin(), pf.payload.begin() + static_cast<int64_t>(code_count));
  q.block_scales.assign(pf.payload.begin() + static_cast<int64_t>(code_count), pf.payload.end());
  return q;
}

}  // namespace quantdesk
