#pragma once

// Checkpoint container for named parameter tensors. Same envelope as the
// dataset format: magic "LSPC", u32 version, u64 JSON header length, header,
// then f64 payload. The header carries an arbitrary metadata object so
// models can store their construction config next to the weights.

#include <string>
#include <vector>

#include "json.hpp"
#include "lsp/dataset.hpp"
#include "lsp/nn.hpp"

namespace lsp::ckpt {

constexpr uint32_t kCheckpointVersion = 1;

inline std::string serialize_checkpoint(const nn::NamedTensors& params,
                                        const nlohmann::json& meta) {
  nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
  std::string payload;
  for (const auto& [name, t] : params.items) {
    nlohmann::ordered_json j;
    j["name"] = name;
    j["shape"] = t.shape();
    j["offset"] = payload.size();
    tensors.push_back(j);
    data::detail::put_doubles(payload, t.data());
  }
  nlohmann::ordered_json header;
  header["schema"] = "checkpoint";
  header["meta"] = meta;
  header["tensors"] = tensors;
  std::string hj = header.dump();

  std::string out;
  out.reserve(16 + hj.size() + payload.size());
  out.append("LSPC", 4);
  uint32_t ver = kCheckpointVersion;
  data::detail::put_bytes(out, &ver, 4);
  uint64_t hlen = hj.size();
  data::detail::put_bytes(out, &hlen, 8);
  out.append(hj);
  out.append(payload);
  return out;
}

inline nn::NamedTensors parse_checkpoint(const std::string& buf, const std::string& origin,
                                         nlohmann::json* meta_out = nullptr) {
  data::detail::Reader r{buf, 0, origin};
  char magic[4];
  r.read(magic, 4, "magic");
  if (std::string(magic, 4) != "LSPC")
    throw FormatError(origin + ": bad magic, not a checkpoint file");
  uint32_t ver = r.u32("version");
  if (ver != kCheckpointVersion)
    throw FormatError(origin + ": unsupported checkpoint version " + std::to_string(ver) +
                      " (expected " + std::to_string(kCheckpointVersion) + ")");
  uint64_t hlen = r.u64("header length");
  r.need(hlen, "header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(buf.substr(r.pos, hlen));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(origin + ": bad header json: " + e.what());
  }
  r.pos += hlen;
  size_t payload_base = r.pos;

  if (header.value("schema", "") != "checkpoint")
    throw FormatError(origin + ": header schema is not 'checkpoint'");
  if (meta_out) *meta_out = header.value("meta", nlohmann::json::object());

  nn::NamedTensors out;
  try {
    for (const auto& jt : header.at("tensors")) {
      std::string name = jt.at("name").get<std::string>();
      Shape shape = jt.at("shape").get<Shape>();
      size_t offset = jt.at("offset").get<size_t>();
      size_t n = shape_numel(shape);
      data::detail::Reader pr{buf, payload_base + offset, origin + " tensor '" + name + "'"};
      std::vector<double> vals(n);
      pr.read(vals.data(), n * sizeof(double), "tensor data");
      out.add(name, Tensor::from(std::move(shape), std::move(vals)));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(origin + ": bad tensor index: " + e.what());
  }
  return out;
}

inline void save_checkpoint(const std::string& path, const nn::NamedTensors& params,
                            const nlohmann::json& meta) {
  data::detail::write_file(path, serialize_checkpoint(params, meta));
}

inline nn::NamedTensors load_checkpoint(const std::string& path,
                                        nlohmann::json* meta_out = nullptr) {
  return parse_checkpoint(data::detail::read_file(path), path, meta_out);
}

// Header summary plus value ranges, for the inspection subcommand.
inline nlohmann::ordered_json inspect_checkpoint(const std::string& path) {
  nlohmann::json meta;
  nn::NamedTensors params = load_checkpoint(path, &meta);
  nlohmann::ordered_json out;
  out["meta"] = meta;
  nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
  size_t total = 0;
  for (const auto& [name, t] : params.items) {
    nlohmann::ordered_json j;
    j["name"] = name;
    j["shape"] = t.shape();
    j["numel"] = t.numel();
    double lo = t.data()[0], hi = t.data()[0], sum = 0;
    for (double v : t.data()) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
      sum += v;
    }
    j["min"] = lo;
    j["max"] = hi;
    j["mean"] = sum / static_cast<double>(t.numel());
    tensors.push_back(j);
    total += t.numel();
  }
  out["tensors"] = tensors;
  out["total_params"] = total;
  return out;
}

}  // namespace lsp::ckpt
