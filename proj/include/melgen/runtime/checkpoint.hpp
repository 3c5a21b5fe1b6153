// Copyright 2026 The melgen Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include "melgen/runtime/optimizer.hpp"

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace melgen {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 1469598103934665603ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::uint64_t fnv1a(const std::string& s) { return fnv1a(s.data(), s.size()); }

struct NamedTensor {
  std::string name;
  Matrix value;
};

/// Everything needed to resume a tier: parameters, optimizer buffers,
/// schedule metadata, step counter and rng state.
struct Checkpoint {
  int tier = 1;
  std::string config;     // canonical model description
  std::string schedule;   // axis schedule and tier count
  std::vector<NamedTensor> params;
  RmsPropState optimizer;
  std::int64_t step = 0;
  std::string rng_state;

  std::uint64_t config_digest() const { return fnv1a(config); }
};

namespace checkpoint_detail {

inline constexpr char kMagic[4] = {'M', 'G', 'C', 'K'};
inline constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  template <class T>
  void pod(const T& v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.append(p, sizeof(T));
  }
  void str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    buf_.append(s);
  }
  void matrix(const Matrix& m) {
    pod<std::int64_t>(m.rows());
    pod<std::int64_t>(m.cols());
    buf_.append(reinterpret_cast<const char*>(m.data()), sizeof(double) * static_cast<std::size_t>(m.size()));
  }
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(const char* p, std::size_t n) : p_(p), n_(n) {}
  template <class T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, p_ + off_, sizeof(T));
    off_ += sizeof(T);
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    need(n);
    std::string s(p_ + off_, n);
    off_ += n;
    return s;
  }
  Matrix matrix() {
    const auto r = pod<std::int64_t>();
    const auto c = pod<std::int64_t>();
    if (r < 0 || c < 0) throw CheckpointError("checkpoint: corrupt tensor shape");
    const auto bytes = sizeof(double) * static_cast<std::size_t>(r * c);
    need(bytes);
    Matrix m(r, c);
    std::memcpy(m.data(), p_ + off_, bytes);
    off_ += bytes;
    return m;
  }
  bool done() const { return off_ == n_; }

 private:
  void need(std::size_t k) const {
    if (off_ + k > n_) throw CheckpointError("checkpoint: truncated file");
  }
  const char* p_;
  std::size_t n_;
  std::size_t off_ = 0;
};

}  // namespace checkpoint_detail

/// Layout: magic, version, config digest, payload, FNV-1a checksum of the
/// payload. All integers and doubles are host byte order.
inline std::string encode_checkpoint(const Checkpoint& c) {
  using namespace checkpoint_detail;
  Writer w;
  w.pod<std::int32_t>(c.tier);
  w.str(c.config);
  w.str(c.schedule);
  w.pod<std::uint64_t>(c.params.size());
  for (const auto& t : c.params) {
    w.str(t.name);
    w.matrix(t.value);
  }
  w.pod<std::uint64_t>(c.optimizer.mean_square.size());
  for (std::size_t k = 0; k < c.optimizer.mean_square.size(); ++k) {
    w.matrix(c.optimizer.mean_square[k]);
    w.matrix(c.optimizer.velocity[k]);
  }
  w.pod<std::int64_t>(c.step);
  w.str(c.rng_state);

  Writer out;
  std::string head(kMagic, 4);
  std::string file = head;
  out.pod<std::uint32_t>(kVersion);
  out.pod<std::uint64_t>(c.config_digest());
  file += out.bytes();
  file += w.bytes();
  Writer tail;
  tail.pod<std::uint64_t>(fnv1a(w.bytes()));
  file += tail.bytes();
  return file;
}

inline Checkpoint decode_checkpoint(const std::string& file) {
  using namespace checkpoint_detail;
  constexpr std::size_t head = 4 + sizeof(std::uint32_t) + sizeof(std::uint64_t);
  if (file.size() < head + sizeof(std::uint64_t) || file.compare(0, 4, kMagic, 4) != 0) {
    throw CheckpointError("checkpoint: not a melgen checkpoint");
  }
  Reader h(file.data() + 4, head - 4);
  const auto version = h.pod<std::uint32_t>();
  if (version != kVersion) throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
  const auto digest = h.pod<std::uint64_t>();
  const std::size_t payload = file.size() - head - sizeof(std::uint64_t);
  std::uint64_t checksum;
  std::memcpy(&checksum, file.data() + head + payload, sizeof checksum);
  if (fnv1a(file.data() + head, payload) != checksum) throw CheckpointError("checkpoint: checksum mismatch");

  Reader r(file.data() + head, payload);
  Checkpoint c;
  c.tier = r.pod<std::int32_t>();
  c.config = r.str();
  c.schedule = r.str();
  const auto n = r.pod<std::uint64_t>();
  for (std::uint64_t k = 0; k < n; ++k) {
    NamedTensor t;
    t.name = r.str();
    t.value = r.matrix();
    c.params.push_back(std::move(t));
  }
  const auto m = r.pod<std::uint64_t>();
  for (std::uint64_t k = 0; k < m; ++k) {
    c.optimizer.mean_square.push_back(r.matrix());
    c.optimizer.velocity.push_back(r.matrix());
  }
  c.step = r.pod<std::int64_t>();
  c.rng_state = r.str();
  if (!r.done()) throw CheckpointError("checkpoint: trailing bytes");
  if (c.config_digest() != digest) throw CheckpointError("checkpoint: config digest mismatch");
  return c;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::string bytes = encode_checkpoint(c);
  // Write then rename so an interrupted save never leaves a torn file.
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw CheckpointError("checkpoint: cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("checkpoint: write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str());
}

inline std::string rng_to_string(const std::mt19937_64& rng) {
  std::ostringstream s;
  s << rng;
  return s.str();
}

inline std::mt19937_64 rng_from_string(const std::string& s) {
  std::mt19937_64 rng;
  std::istringstream in(s);
  in >> rng;
  if (!in) throw CheckpointError("checkpoint: corrupt rng state");
  return rng;
}

inline std::vector<NamedTensor> snapshot(const ParameterSet& ps) {
  std::vector<NamedTensor> out;
  for (const auto& p : ps.all()) out.push_back({p.name, p.value});
  return out;
}

/// Copies stored tensors into `ps` after checking that the stored
/// description matches `config` and that names and shapes line up.
inline void restore_parameters(ParameterSet& ps, const Checkpoint& c, const std::string& config) {
  if (c.config != config) throw CheckpointError("checkpoint: model configuration does not match the checkpoint");
  if (c.params.size() != ps.size()) throw CheckpointError("checkpoint: parameter count mismatch");
  for (std::size_t k = 0; k < ps.size(); ++k) {
    auto& p = ps.all()[k];
    const auto& t = c.params[k];
    if (p.name != t.name || p.value.rows() != t.value.rows() || p.value.cols() != t.value.cols()) {
      throw CheckpointError("checkpoint: tensor '" + t.name + "' does not match model tensor '" + p.name + "'");
    }
  }
  for (std::size_t k = 0; k < ps.size(); ++k) ps.all()[k].value = c.params[k].value;
}

}  // namespace melgen
