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

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "fd_graph.hpp"
#include "wwcnn/checkpoint.hpp"

using namespace wwcnn;
using namespace wwcnn::testing;
namespace fs = std::filesystem;

namespace {

fs::path tmp(const std::string& name) {
  auto dir = fs::temp_directory_path() / "wwcnn_test_checkpoint";
  fs::create_directories(dir);
  return dir / name;
}

Checkpoint<float> trained() {
  GenConfig g;
  g.categories = 4;
  g.n_rot = 3;
  g.n_az = 2;
  g.instances = 2;
  g.backgrounds = 1;
  g.height = g.width = 16;
  auto d = generate(g);
  auto spec = parse_spec(kToySpec);
  auto net = build<float>(spec, ArchKind::InjectMulti, 4);
  Checkpoint<float> c{ArchKind::InjectMulti, spec.canonical(), TrainState<float>::start(net.params, 4)};
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 8;
  train(net.graph, c.state, d, nullptr, cfg);
  return c;
}

}  // namespace

TEST(Checkpoint, RoundTripIsExact) {
  auto c = trained();
  auto p = tmp("rt.wwck");
  save_checkpoint(p, c);
  EXPECT_EQ(checkpoint_precision(p), Precision::F32);
  auto back = load_checkpoint<float>(p);
  EXPECT_EQ(back.kind, c.kind);
  EXPECT_EQ(back.spec_text, c.spec_text);
  EXPECT_EQ(back.spec_hash(), parse_spec(kToySpec).hash());
  EXPECT_EQ(back.state.epoch, 1u);
  EXPECT_EQ(back.state.rng.state(), c.state.rng.state());
  EXPECT_TRUE(back.state.params == c.state.params);
  ASSERT_EQ(back.state.velocity.size(), c.state.velocity.size());
  for (std::size_t i = 0; i < c.state.velocity.size(); ++i) EXPECT_EQ(back.state.velocity[i], c.state.velocity[i]);
}

TEST(Checkpoint, PrecisionConversion) {
  auto c = trained();
  auto p = tmp("conv.wwck");
  save_checkpoint(p, c);
  auto d = load_checkpoint<double>(p);
  for (std::size_t i = 0; i < c.state.params.size(); ++i)
    for (std::size_t j = 0; j < c.state.params[i].value.size(); ++j)
      EXPECT_EQ(d.state.params[i].value[j], static_cast<double>(c.state.params[i].value[j]));
}

TEST(Checkpoint, CorruptionDetected) {
  auto c = trained();
  auto p = tmp("bad.wwck");
  save_checkpoint(p, c);
  const auto size = fs::file_size(p);
  {
    std::fstream f(p, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.put('Z');
  }
  EXPECT_THROW(load_checkpoint<float>(p), IoError);
  save_checkpoint(p, c);
  fs::resize_file(p, size - 7);
  EXPECT_THROW(load_checkpoint<float>(p), IoError);
  save_checkpoint(p, c);
  {
    std::fstream f(p, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(4);
    f.put(9);  // version
  }
  try {
    load_checkpoint<float>(p);
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }
  EXPECT_THROW(load_checkpoint<float>(tmp("missing.wwck")), IoError);
}
