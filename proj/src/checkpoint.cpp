// Copyright 2026 The wwcnn Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "wwcnn/checkpoint.hpp"

#include <array>
#include <fstream>

#include "binio.hpp"
#include "wwcnn/rng.hpp"

namespace wwcnn {

namespace {

constexpr std::array<char, 4> kCheckpointMagic{'W', 'W', 'C', 'K'};

template <typename Stored>
void write_tensor(detail::BinWriter& w, const Tensor<Stored>& t) {
  w.put<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) w.put<std::uint64_t>(d);
  w.bytes(t.data(), t.size() * sizeof(Stored));
}

template <typename Stored, typename T>
Tensor<T> read_tensor(detail::BinReader& r, const std::string& field) {
  const auto rank = r.get<std::uint32_t>(field + " rank");
  if (rank == 0) return {};
  if (rank > 8) throw IoError("checkpoint: implausible rank for " + field);
  Shape shape(rank);
  for (auto& d : shape) {
    d = static_cast<std::size_t>(r.get<std::uint64_t>(field + " shape"));
    if (d == 0 || d > (1u << 28)) throw IoError("checkpoint: implausible dimension for " + field);
  }
  std::vector<Stored> raw(shape_size(shape));
  r.bytes(raw.data(), raw.size() * sizeof(Stored), field);
  return Tensor<T>(std::move(shape), std::vector<T>(raw.begin(), raw.end()));
}

struct Header {
  Precision precision;
  ArchKind kind;
  std::uint64_t spec_hash;
};

Header read_header(detail::BinReader& r, const std::string& path) {
  std::array<char, 4> magic{};
  r.bytes(magic.data(), magic.size(), "magic");
  if (magic != kCheckpointMagic) throw IoError("checkpoint '" + path + "': bad magic");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion)
    throw IoError("checkpoint '" + path + "': version mismatch (file " + std::to_string(version) +
                  ", expected " + std::to_string(kCheckpointVersion) + ")");
  const auto prec = r.get<std::uint8_t>("precision");
  if (prec != 4 && prec != 8) throw IoError("checkpoint '" + path + "': bad precision tag");
  const auto kind = r.get<std::uint8_t>("architecture");
  if (kind > 2) throw IoError("checkpoint '" + path + "': bad architecture tag");
  r.get<std::uint16_t>("reserved");
  const auto hash = r.get<std::uint64_t>("spec hash");
  return {static_cast<Precision>(prec), static_cast<ArchKind>(kind), hash};
}

template <typename Stored, typename T>
Checkpoint<T> read_body(detail::BinReader& r, const Header& h, const std::string& path) {
  Checkpoint<T> c;
  c.kind = h.kind;
  c.spec_text = r.str("spec text");
  if (fnv1a(c.spec_text) != h.spec_hash)
    throw IoError("checkpoint '" + path + "': spec text does not match its recorded hash");
  c.state.epoch = static_cast<std::size_t>(r.get<std::uint64_t>("epoch"));
  Rng::State st;
  for (auto& w : st.s) w = r.get<std::uint64_t>("rng state");
  st.has_spare = r.get<std::uint8_t>("rng state") != 0;
  st.spare = r.get<double>("rng state");
  c.state.rng.set_state(st);
  const auto count = r.get<std::uint32_t>("parameter count");
  for (std::uint32_t i = 0; i < count; ++i) {
    Parameter<T> p;
    p.name = r.str("parameter name");
    const auto part = r.get<std::uint8_t>(p.name);
    if (part > 3) throw IoError("checkpoint: bad partition for " + p.name);
    p.partition = static_cast<Partition>(part);
    p.branch = r.str(p.name + " branch");
    p.trainable = r.get<std::uint8_t>(p.name) != 0;
    const auto init = r.get<std::uint8_t>(p.name);
    if (init > 2) throw IoError("checkpoint: bad init tag for " + p.name);
    p.init = static_cast<Init>(init);
    p.value = read_tensor<Stored, T>(r, p.name);
    c.state.params.add(std::move(p));
  }
  const auto nvel = r.get<std::uint32_t>("velocity count");
  if (nvel != 0 && nvel != count) throw IoError("checkpoint: velocity count does not match parameters");
  c.state.velocity.resize(count);
  for (std::uint32_t i = 0; i < nvel; ++i) {
    c.state.velocity[i] = read_tensor<Stored, T>(r, "velocity");
    if (!c.state.velocity[i].empty() && c.state.velocity[i].shape() != c.state.params[i].value.shape())
      throw IoError("checkpoint: velocity shape mismatch for " + c.state.params[i].name);
  }
  for (std::uint32_t i = 0; i < count; ++i)
    if (c.state.params[i].trainable && c.state.velocity[i].empty())
      c.state.velocity[i] = Tensor<T>(c.state.params[i].value.shape());
  if (!r.at_eof()) throw IoError("checkpoint '" + path + "': trailing data");
  return c;
}

}  // namespace

template <typename T>
std::uint64_t Checkpoint<T>::spec_hash() const {
  return fnv1a(spec_text);
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Checkpoint<T>& c) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  detail::BinWriter w(os);
  w.bytes(kCheckpointMagic.data(), kCheckpointMagic.size());
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(precision_of<T>()));
  w.put<std::uint8_t>(static_cast<std::uint8_t>(c.kind));
  w.put<std::uint16_t>(0);
  w.put<std::uint64_t>(c.spec_hash());
  w.str(c.spec_text);
  w.put<std::uint64_t>(c.state.epoch);
  const auto& st = c.state.rng.state();
  for (auto v : st.s) w.put<std::uint64_t>(v);
  w.put<std::uint8_t>(st.has_spare ? 1 : 0);
  w.put<double>(st.spare);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.state.params.size()));
  for (const auto& p : c.state.params) {
    w.str(p.name);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(p.partition));
    w.str(p.branch);
    w.put<std::uint8_t>(p.trainable ? 1 : 0);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(p.init));
    write_tensor(w, p.value);
  }
  const bool has_velocity = c.state.velocity.size() == c.state.params.size();
  w.put<std::uint32_t>(has_velocity ? static_cast<std::uint32_t>(c.state.velocity.size()) : 0);
  if (has_velocity)
    for (const auto& v : c.state.velocity) write_tensor(w, v);
  w.check(path.string());
}

Precision checkpoint_precision(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint '" + path.string() + "'");
  detail::BinReader r(is, "checkpoint '" + path.string() + "'");
  return read_header(r, path.string()).precision;
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint '" + path.string() + "'");
  detail::BinReader r(is, "checkpoint '" + path.string() + "'");
  const auto h = read_header(r, path.string());
  if (h.precision == Precision::F32) return read_body<float, T>(r, h, path.string());
  return read_body<double, T>(r, h, path.string());
}

template struct Checkpoint<float>;
template struct Checkpoint<double>;
template void save_checkpoint(const std::filesystem::path&, const Checkpoint<float>&);
template void save_checkpoint(const std::filesystem::path&, const Checkpoint<double>&);
template Checkpoint<float> load_checkpoint(const std::filesystem::path&);
template Checkpoint<double> load_checkpoint(const std::filesystem::path&);

}  // namespace wwcnn
