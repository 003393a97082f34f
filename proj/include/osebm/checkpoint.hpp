#pragma once

#include <bit>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "osebm/textio.hpp"
#include "osebm/trainer.hpp"

// Binary checkpoint of the full trainer state: a fixed header (version,
// epoch, model dimensions, serialized config, rng streams, integer scalars),
// a manifest of named arrays (name, shape, byte offset), and one raw
// little-endian float64 payload section the offsets point into. Entries are
// emitted in sorted-name order with contiguous offsets, so saving, loading,
// and saving again reproduces the file byte for byte.

namespace osebm {
namespace ckpt_detail {

constexpr char kMagic[8] = {'O', 'S', 'E', 'B', 'M', 'C', 'K', '1'};
constexpr uint32_t kVersion = 1;

class ByteWriter {
 public:
  void u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f64(double v) { u64(std::bit_cast<uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<uint32_t>(s.size()));
    buf_.append(s);
  }
  void raw(const char* p, size_t n) { buf_.append(p, n); }
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  ByteReader(const std::string& bytes, std::string origin)
      : bytes_(bytes), origin_(std::move(origin)) {}

  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(bytes_[pos_++])) << (8 * i);
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(bytes_[pos_++])) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const uint32_t n = u32();
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string raw_block(uint64_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void expect_magic() {
    need(8);
    for (char c : kMagic)
      if (bytes_[pos_++] != c) throw IoError(origin_ + ": not a checkpoint file (bad magic)");
  }
  void expect_done() const {
    if (pos_ != bytes_.size()) throw IoError(origin_ + ": trailing bytes after checkpoint payload");
  }

 private:
  void need(size_t n) const {
    if (pos_ + n > bytes_.size()) throw IoError(origin_ + ": truncated checkpoint");
  }
  const std::string& bytes_;
  std::string origin_;
  size_t pos_ = 0;
};

inline DenseMatrix vector_as_row(const std::vector<double>& v) {
  DenseMatrix m(1, static_cast<int>(v.size()));
  m.data = v;
  return m;
}

}  // namespace ckpt_detail

inline std::string checkpoint_bytes(const TrainerState& st) {
  using namespace ckpt_detail;
  const Model& model = st.model;

  std::map<std::string, uint64_t> scalars;
  std::map<std::string, DenseMatrix> arrays;

  for (const auto& [name, entry] : model.params) arrays.emplace("param/" + name, entry.value);
  for (const auto& [name, s] : st.opt.state()) {
    scalars.emplace("adam/t/" + name, s.t);
    arrays.emplace("adam/m/" + name, s.m);
    arrays.emplace("adam/v/" + name, s.v);
  }
  for (const auto& [k, d] : model.densities) {
    const std::string base = "density/" + std::to_string(k) + "/";
    scalars.emplace(base + "n_seen", static_cast<uint64_t>(d.n_seen));
    arrays.emplace(base + "accum_pmu", vector_as_row(d.accum_pmu));
    arrays.emplace(base + "accum_p", vector_as_row(d.accum_p));
  }
  arrays.emplace("graph/a_raw", model.graph.a_raw);
  arrays.emplace("graph/a_hat", model.graph.a_hat);

  ByteWriter w;
  w.raw(kMagic, 8);
  w.u32(kVersion);
  w.u64(static_cast<uint64_t>(st.epoch));
  w.f64(model.final_train_acc);
  w.u32(static_cast<uint32_t>(model.data_dim));
  w.u32(static_cast<uint32_t>(model.m_attrs));
  w.u32(static_cast<uint32_t>(model.k_known));
  for (int id : model.known_ids) w.u64(static_cast<uint64_t>(static_cast<int64_t>(id)));
  w.str(serialize_train_config(model.cfg));

  const std::pair<std::string, const Rng*> streams[] = {
      {"data", &st.rng_data}, {"reparam", &st.rng_reparam}, {"sgld", &st.rng_sgld}, {"uvos", &st.rng_uvos}};
  w.u32(4);
  for (const auto& [name, rng] : streams) {
    w.str(name);
    w.u64(rng->seed());
    for (uint64_t word : rng->state()) w.u64(word);
  }

  w.u32(static_cast<uint32_t>(scalars.size()));
  for (const auto& [name, v] : scalars) {
    w.str(name);
    w.u64(v);
  }

  // Array manifest: (name, shape, byte offset into the payload section),
  // offsets assigned contiguously in sorted-name order.
  w.u32(static_cast<uint32_t>(arrays.size()));
  uint64_t offset = 0;
  for (const auto& [name, m] : arrays) {
    w.str(name);
    w.u32(static_cast<uint32_t>(m.rows));
    w.u32(static_cast<uint32_t>(m.cols));
    w.u64(offset);
    offset += static_cast<uint64_t>(m.data.size()) * 8;
  }
  w.u64(offset);  // payload byte length
  for (const auto& [name, m] : arrays)
    for (double v : m.data) w.f64(v);
  return w.bytes();
}

inline void save_checkpoint(const std::string& path, const TrainerState& st) {
  write_text_file(path, checkpoint_bytes(st));
}

inline TrainerState checkpoint_from_bytes(const std::string& bytes, const std::string& origin) {
  using namespace ckpt_detail;
  ByteReader r(bytes, origin);
  r.expect_magic();
  const uint32_t version = r.u32();
  if (version != kVersion)
    throw IoError(origin + ": unsupported checkpoint version " + std::to_string(version));

  const uint64_t epoch = r.u64();
  const double final_acc = r.f64();
  const int data_dim = static_cast<int>(r.u32());
  const int m_attrs = static_cast<int>(r.u32());
  const int k_known = static_cast<int>(r.u32());
  std::vector<int> known_ids(k_known);
  for (int& id : known_ids) id = static_cast<int>(static_cast<int64_t>(r.u64()));
  const std::string config_text = r.str();

  struct StreamState {
    uint64_t seed = 0;
    std::array<uint64_t, 4> words{};
  };
  std::map<std::string, StreamState> streams;
  const uint32_t n_streams = r.u32();
  for (uint32_t i = 0; i < n_streams; ++i) {
    StreamState s;
    const std::string name = r.str();
    s.seed = r.u64();
    for (uint64_t& word : s.words) word = r.u64();
    streams[name] = s;
  }

  std::map<std::string, uint64_t> scalars;
  const uint32_t n_scalars = r.u32();
  for (uint32_t i = 0; i < n_scalars; ++i) {
    const std::string name = r.str();
    scalars[name] = r.u64();
  }

  struct ManifestEntry {
    std::string name;
    int rows = 0, cols = 0;
    uint64_t offset = 0;
  };
  std::vector<ManifestEntry> manifest;
  const uint32_t n_arrays = r.u32();
  manifest.reserve(n_arrays);
  for (uint32_t i = 0; i < n_arrays; ++i) {
    ManifestEntry e;
    e.name = r.str();
    e.rows = static_cast<int>(r.u32());
    e.cols = static_cast<int>(r.u32());
    e.offset = r.u64();
    manifest.push_back(std::move(e));
  }
  const uint64_t payload_len = r.u64();
  const std::string payload = r.raw_block(payload_len);
  r.expect_done();

  std::map<std::string, DenseMatrix> arrays;
  for (const ManifestEntry& e : manifest) {
    const uint64_t bytes_needed = static_cast<uint64_t>(e.rows) * e.cols * 8;
    if (e.offset > payload.size() || bytes_needed > payload.size() - e.offset)
      throw IoError(origin + ": array " + e.name + " points outside the payload section");
    DenseMatrix m(e.rows, e.cols);
    for (size_t i = 0; i < m.data.size(); ++i) {
      uint64_t word = 0;
      const size_t at = e.offset + i * 8;
      for (int b = 0; b < 8; ++b)
        word |= static_cast<uint64_t>(static_cast<unsigned char>(payload[at + b])) << (8 * b);
      m.data[i] = std::bit_cast<double>(word);
    }
    if (!arrays.emplace(e.name, std::move(m)).second)
      throw IoError(origin + ": duplicate array " + e.name);
  }

  TrainerState st;
  Model& model = st.model;
  model.cfg = apply_config_pairs(TrainConfig{}, parse_kv_text(config_text, origin + " (config block)"));
  model.data_dim = data_dim;
  model.m_attrs = m_attrs;
  model.k_known = k_known;
  model.known_ids = known_ids;
  model.final_train_acc = final_acc;
  st.epoch = static_cast<int>(epoch);

  const auto want_stream = [&](const char* name) {
    const auto it = streams.find(name);
    if (it == streams.end()) throw IoError(origin + ": checkpoint missing rng stream " + name);
    Rng rng(0);
    rng.restore(it->second.seed, it->second.words);
    return rng;
  };
  st.rng_data = want_stream("data");
  st.rng_reparam = want_stream("reparam");
  st.rng_sgld = want_stream("sgld");
  st.rng_uvos = want_stream("uvos");

  const auto take_array = [&](const std::string& name) {
    const auto it = arrays.find(name);
    if (it == arrays.end()) throw IoError(origin + ": checkpoint missing array " + name);
    DenseMatrix m = std::move(it->second);
    arrays.erase(it);
    return m;
  };

  model.graph.a_raw = take_array("graph/a_raw");
  model.graph.a_hat = take_array("graph/a_hat");

  for (const auto& [name, v] : scalars) {
    if (name.rfind("density/", 0) != 0) continue;
    const size_t slash = name.find('/', 8);
    if (slash == std::string::npos || name.substr(slash + 1) != "n_seen")
      throw IoError(origin + ": unexpected scalar " + name);
    const int k = static_cast<int>(parse_long(name.substr(8, slash - 8), "density key"));
    ClassDensity d;
    d.n_seen = v;
    d.accum_pmu = take_array("density/" + std::to_string(k) + "/accum_pmu").data;
    d.accum_p = take_array("density/" + std::to_string(k) + "/accum_p").data;
    if (d.accum_pmu.size() != d.accum_p.size())
      throw IoError(origin + ": density arrays disagree for class " + std::to_string(k));
    model.densities.emplace(k, std::move(d));
  }

  // Whatever remains must be parameters and their optimizer moments.
  std::vector<std::string> param_names;
  for (const auto& [name, m] : arrays)
    if (name.rfind("param/", 0) == 0) param_names.push_back(name.substr(6));
  for (const std::string& name : param_names) {
    DenseMatrix value = take_array("param/" + name);
    model.params.add(name, value.rows, value.cols);
    model.params.value(name) = std::move(value);
    const auto t_it = scalars.find("adam/t/" + name);
    if (t_it == scalars.end()) continue;
    AdamW::State s;
    s.t = t_it->second;
    s.m = take_array("adam/m/" + name);
    s.v = take_array("adam/v/" + name);
    st.opt.state().emplace(name, std::move(s));
  }
  if (!arrays.empty()) throw IoError(origin + ": unexpected array " + arrays.begin()->first);

  return st;
}

inline TrainerState load_checkpoint(const std::string& path) {
  return checkpoint_from_bytes(read_text_file(path), path);
}

}  // namespace osebm
