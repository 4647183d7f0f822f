#pragma once

// Demonstration corpus: scripted-expert clip generation and the on-disk
// container. Files open with magic "LSPD", a little-endian u32 version, a
// u64 JSON header length, the header, then raw f64 payload. Each clip stores
// its feature frames followed by the applied (already clipped) actions;
// actions always number one fewer than frames.

#include <bit>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "lsp/common.hpp"
#include "lsp/world.hpp"

static_assert(std::endian::native == std::endian::little,
              "serialized artifacts assume a little-endian host");

namespace lsp::data {

struct DemoClip {
  std::string label;
  std::vector<kin::Frame> frames;
  std::vector<world::Action> actions;
};

struct DemoDataset {
  int n_links = 4;
  double link_len = 0.25;
  int frame_dim = 12;
  uint64_t seed = 0;
  std::vector<DemoClip> clips;

  size_t total_frames() const {
    size_t n = 0;
    for (const auto& c : clips) n += c.frames.size();
    return n;
  }
};

struct CorpusConfig {
  std::vector<world::Style> styles = world::all_styles();
  int clips_per_style = 8;
  int frames_per_clip = 1000;
  uint64_t seed = 1;
};

// Rolls out every scripted controller from canonical rest starts. Stored
// actions are the clipped values actually applied, so replaying them through
// step() reproduces the stored frames.
inline DemoDataset generate_demos(const world::WorldParams& wp, const CorpusConfig& cfg) {
  if (cfg.frames_per_clip < 2) throw ConfigError("generate_demos: clips need >= 2 frames");
  DemoDataset ds;
  ds.n_links = wp.n_links;
  ds.link_len = wp.link_len;
  ds.frame_dim = kin::feature_dim(wp.n_links);
  ds.seed = cfg.seed;

  CounterRng root(cfg.seed);
  for (size_t si = 0; si < cfg.styles.size(); ++si) {
    world::Style style = cfg.styles[si];
    for (int ci = 0; ci < cfg.clips_per_style; ++ci) {
      CounterRng rng = root.split(style_name(style)).split(static_cast<uint64_t>(ci));
      kin::ChainState s = world::initial_state(wp, rng);
      world::ExpertMemory mem;

      std::vector<kin::ChainState> states{s};
      DemoClip clip;
      clip.label = style_name(style) + "/" + std::to_string(ci);
      for (int t = 0; t + 1 < cfg.frames_per_clip; ++t) {
        world::Action a = world::expert_action(wp, style, s, t, mem, rng);
        s = world::step(wp, s, a);
        states.push_back(s);
        clip.actions.push_back(std::move(a));
      }
      clip.frames = kin::featurize(states);
      ds.clips.push_back(std::move(clip));
    }
  }
  return ds;
}

// Splits off every `every`-th clip (the last of each group) as a holdout.
inline std::pair<DemoDataset, DemoDataset> split_clips(const DemoDataset& ds, int every) {
  if (every < 2) throw ConfigError("split_clips: holdout interval must be >= 2");
  DemoDataset train = ds, hold = ds;
  train.clips.clear();
  hold.clips.clear();
  for (size_t i = 0; i < ds.clips.size(); ++i) {
    if (static_cast<int>(i % static_cast<size_t>(every)) == every - 1)
      hold.clips.push_back(ds.clips[i]);
    else
      train.clips.push_back(ds.clips[i]);
  }
  return {train, hold};
}

// ---------------------------------------------------------------- file io

namespace detail {

inline void put_bytes(std::string& out, const void* p, size_t n) {
  out.append(static_cast<const char*>(p), n);
}

inline void put_doubles(std::string& out, const std::vector<double>& v) {
  put_bytes(out, v.data(), v.size() * sizeof(double));
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;
  std::string where;

  void need(size_t n, const char* what) const {
    if (pos + n > buf.size())
      throw FormatError(where + ": truncated while reading " + what + " at byte " +
                        std::to_string(pos) + " (file size " + std::to_string(buf.size()) + ")");
  }
  void read(void* dst, size_t n, const char* what) {
    need(n, what);
    std::memcpy(dst, buf.data() + pos, n);
    pos += n;
  }
  uint32_t u32(const char* what) {
    uint32_t v;
    read(&v, 4, what);
    return v;
  }
  uint64_t u64(const char* what) {
    uint64_t v;
    read(&v, 8, what);
    return v;
  }
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open file: " + path);
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return buf;
}

inline void write_file(const std::string& path, const std::string& buf) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open file for writing: " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw FormatError("failed writing file: " + path);
}

}  // namespace detail

constexpr uint32_t kDemoVersion = 1;

inline std::string serialize_dataset(const DemoDataset& ds) {
  nlohmann::ordered_json clips = nlohmann::ordered_json::array();
  std::string payload;
  const int adim = world::Action::dim(ds.n_links);
  for (const auto& c : ds.clips) {
    if (c.actions.size() + 1 != c.frames.size())
      throw FormatError("serialize_dataset: clip '" + c.label +
                        "' must have one action less than frames");
    nlohmann::ordered_json j;
    j["label"] = c.label;
    j["frames"] = c.frames.size();
    j["actions"] = c.actions.size();
    j["offset"] = payload.size();
    clips.push_back(j);
    for (const auto& f : c.frames) {
      if (static_cast<int>(f.size()) != ds.frame_dim)
        throw FormatError("serialize_dataset: frame dim mismatch in clip '" + c.label + "'");
      detail::put_doubles(payload, f);
    }
    for (const auto& a : c.actions) {
      auto flat = a.flat();
      if (static_cast<int>(flat.size()) != adim)
        throw FormatError("serialize_dataset: action dim mismatch in clip '" + c.label + "'");
      detail::put_doubles(payload, flat);
    }
  }

  nlohmann::ordered_json header;
  header["schema"] = "demo_dataset";
  header["n_links"] = ds.n_links;
  header["link_len"] = ds.link_len;
  header["frame_dim"] = ds.frame_dim;
  header["action_dim"] = adim;
  header["seed"] = ds.seed;
  header["clips"] = clips;
  std::string hj = header.dump();

  std::string out;
  out.reserve(16 + hj.size() + payload.size());
  out.append("LSPD", 4);
  uint32_t ver = kDemoVersion;
  detail::put_bytes(out, &ver, 4);
  uint64_t hlen = hj.size();
  detail::put_bytes(out, &hlen, 8);
  out.append(hj);
  out.append(payload);
  return out;
}

inline DemoDataset parse_dataset(const std::string& buf, const std::string& origin) {
  detail::Reader r{buf, 0, origin};
  char magic[4];
  r.read(magic, 4, "magic");
  if (std::string(magic, 4) != "LSPD")
    throw FormatError(origin + ": bad magic, not a demo dataset file");
  uint32_t ver = r.u32("version");
  if (ver != kDemoVersion)
    throw FormatError(origin + ": unsupported dataset version " + std::to_string(ver) +
                      " (expected " + std::to_string(kDemoVersion) + ")");
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

  DemoDataset ds;
  try {
    if (header.at("schema").get<std::string>() != "demo_dataset")
      throw FormatError(origin + ": header schema is not 'demo_dataset'");
    ds.n_links = header.at("n_links").get<int>();
    ds.link_len = header.at("link_len").get<double>();
    ds.frame_dim = header.at("frame_dim").get<int>();
    ds.seed = header.at("seed").get<uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(origin + ": missing header field: " + e.what());
  }
  if (ds.frame_dim != kin::feature_dim(ds.n_links))
    throw FormatError(origin + ": frame_dim inconsistent with n_links");
  const int adim = world::Action::dim(ds.n_links);
  if (header.at("action_dim").get<int>() != adim)
    throw FormatError(origin + ": action_dim inconsistent with n_links");

  for (const auto& jc : header.at("clips")) {
    DemoClip clip;
    clip.label = jc.at("label").get<std::string>();
    size_t nf = jc.at("frames").get<size_t>();
    size_t na = jc.at("actions").get<size_t>();
    if (na + 1 != nf)
      throw FormatError(origin + ": clip '" + clip.label + "' action count mismatch");
    size_t offset = jc.at("offset").get<size_t>();
    detail::Reader pr{buf, payload_base + offset, origin + " clip '" + clip.label + "'"};
    clip.frames.assign(nf, kin::Frame(static_cast<size_t>(ds.frame_dim)));
    for (auto& f : clip.frames) pr.read(f.data(), f.size() * sizeof(double), "frame data");
    for (size_t i = 0; i < na; ++i) {
      std::vector<double> flat(static_cast<size_t>(adim));
      pr.read(flat.data(), flat.size() * sizeof(double), "action data");
      clip.actions.push_back(world::Action::from_flat(flat, ds.n_links));
    }
    ds.clips.push_back(std::move(clip));
  }
  return ds;
}

inline void save_dataset(const std::string& path, const DemoDataset& ds) {
  detail::write_file(path, serialize_dataset(ds));
}

inline DemoDataset load_dataset(const std::string& path) {
  return parse_dataset(detail::read_file(path), path);
}

}  // namespace lsp::data
