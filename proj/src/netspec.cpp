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

#include "wwcnn/netspec.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "wwcnn/rng.hpp"

namespace wwcnn {

namespace {

std::vector<std::string> tokenize(std::string_view line) {
  if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.emplace_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

std::size_t parse_positive(const std::string& tok, std::size_t line, const std::string& what) {
  std::size_t v = 0;
  auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || p != tok.data() + tok.size())
    throw ParseError(line, what + " must be an integer, got '" + tok + "'");
  if (v == 0) throw ParseError(line, what + " must be positive");
  return v;
}

std::size_t parse_count(const std::string& tok, std::size_t line, const std::string& what) {
  std::size_t v = 0;
  auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || p != tok.data() + tok.size())
    throw ParseError(line, what + " must be a non-negative integer, got '" + tok + "'");
  return v;
}

double parse_real(const std::string& tok, std::size_t line, const std::string& what) {
  std::istringstream is(tok);
  is.imbue(std::locale::classic());
  double v = 0;
  if (!(is >> v) || !is.eof() || !std::isfinite(v))
    throw ParseError(line, what + " must be a real number, got '" + tok + "'");
  return v;
}

bool valid_name(const std::string& s) {
  if (s.empty()) return false;
  for (char c : s)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.'))
      return false;
  return true;
}

bool reserved_name(const std::string& s) {
  static const std::set<std::string> names{"data", "category", "category_loss", "pose", "pose_top",
                                           "pose_loss"};
  return names.count(s) || s.rfind("inj_", 0) == 0 || s.rfind("pose_from_", 0) == 0;
}

std::string fmt_real(double v) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os.precision(17);
  os << v;
  return os.str();
}

// Generated node and parameter names.
std::string branch_fc(const std::string& src, int i) { return "inj_" + src + "_fc" + std::to_string(i); }
std::string branch_relu(const std::string& src, int i) { return "inj_" + src + "_relu" + std::to_string(i); }
std::string pathway(const std::string& src) { return "pose_from_" + src; }

}  // namespace

std::string_view layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Conv: return "conv";
    case LayerKind::Pool: return "pool";
    case LayerKind::BatchNorm: return "bn";
    case LayerKind::Relu: return "relu";
    case LayerKind::Fc: return "fc";
    case LayerKind::Dropout: return "dropout";
  }
  return "?";
}

std::size_t NetworkSpec::count(LayerKind kind) const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.kind == kind;
  return n;
}

std::string NetworkSpec::canonical() const {
  std::ostringstream os;
  os << "input " << height << ' ' << width << ' ' << channels << '\n';
  for (const auto& l : layers) {
    os << "layer " << l.name << ' ' << layer_kind_name(l.kind);
    switch (l.kind) {
      case LayerKind::Conv:
        os << " out=" << l.out << " k=" << l.kernel << " stride=" << l.stride << " pad=" << l.pad;
        break;
      case LayerKind::Pool: os << " k=" << l.kernel << " stride=" << l.stride; break;
      case LayerKind::Fc: os << " out=" << l.out; break;
      case LayerKind::Dropout: os << " rate=" << fmt_real(l.rate); break;
      case LayerKind::BatchNorm:
      case LayerKind::Relu: break;
    }
    os << '\n';
  }
  os << "head category " << category_width << '\n';
  if (pose_width) os << "head pose " << pose_width << '\n';
  for (const auto& inj : injections)
    os << "inject " << inj.source << ' ' << inj.width1 << ' ' << inj.width2 << '\n';
  os << "lambda " << fmt_real(lambda) << '\n';
  return os.str();
}

std::uint64_t NetworkSpec::hash() const { return fnv1a(canonical()); }

NetworkSpec parse_spec(std::string_view text) {
  NetworkSpec spec;
  bool have_input = false, have_category = false, have_pose = false, have_lambda = false;
  std::map<std::string, std::size_t> layer_line;
  std::set<std::string> injected;

  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    ++line_no;
    const auto tok = tokenize(text.substr(pos, end - pos));
    pos = end + 1;
    if (tok.empty()) continue;

    const std::string& d = tok[0];
    if (d == "input") {
      if (have_input) throw ParseError(line_no, "duplicate input directive");
      if (tok.size() != 4) throw ParseError(line_no, "expected 'input H W C'");
      spec.height = parse_positive(tok[1], line_no, "input height");
      spec.width = parse_positive(tok[2], line_no, "input width");
      spec.channels = parse_positive(tok[3], line_no, "input channels");
      have_input = true;
    } else if (d == "layer") {
      if (tok.size() < 3) throw ParseError(line_no, "expected 'layer <name> <kind> [k=v ...]'");
      LayerSpec l;
      l.name = tok[1];
      l.line = line_no;
      if (!valid_name(l.name)) throw ParseError(line_no, "invalid layer name '" + l.name + "'");
      if (reserved_name(l.name)) throw ParseError(line_no, "layer name '" + l.name + "' is reserved");
      if (layer_line.count(l.name))
        throw ParseError(line_no, "duplicate layer name '" + l.name + "' (first defined on line " +
                                      std::to_string(layer_line[l.name]) + ")");
      const std::string& kind = tok[2];
      if (kind == "conv") l.kind = LayerKind::Conv;
      else if (kind == "pool") l.kind = LayerKind::Pool;
      else if (kind == "bn") l.kind = LayerKind::BatchNorm;
      else if (kind == "relu") l.kind = LayerKind::Relu;
      else if (kind == "fc") l.kind = LayerKind::Fc;
      else if (kind == "dropout") l.kind = LayerKind::Dropout;
      else throw ParseError(line_no, "unknown layer kind '" + kind + "'");

      std::set<std::string> allowed;
      switch (l.kind) {
        case LayerKind::Conv: allowed = {"out", "k", "stride", "pad"}; break;
        case LayerKind::Pool: allowed = {"k", "stride"}; break;
        case LayerKind::Fc: allowed = {"out"}; break;
        case LayerKind::Dropout: allowed = {"rate"}; break;
        case LayerKind::BatchNorm:
        case LayerKind::Relu: break;
      }
      std::map<std::string, std::string> kv;
      for (std::size_t i = 3; i < tok.size(); ++i) {
        const auto eq = tok[i].find('=');
        if (eq == std::string::npos || eq == 0 || eq + 1 == tok[i].size())
          throw ParseError(line_no, "expected key=value, got '" + tok[i] + "'");
        std::string key = tok[i].substr(0, eq), val = tok[i].substr(eq + 1);
        if (!allowed.count(key))
          throw ParseError(line_no, "unknown key '" + key + "' for " + kind + " layer");
        if (kv.count(key)) throw ParseError(line_no, "duplicate key '" + key + "'");
        kv[key] = val;
      }
      auto require = [&](const std::string& key) {
        if (!kv.count(key)) throw ParseError(line_no, kind + " layer needs " + key + "=");
        return kv[key];
      };
      if (l.kind == LayerKind::Conv) {
        l.out = parse_positive(require("out"), line_no, "out");
        l.kernel = parse_positive(require("k"), line_no, "k");
        if (kv.count("stride")) l.stride = parse_positive(kv["stride"], line_no, "stride");
        if (kv.count("pad")) l.pad = parse_count(kv["pad"], line_no, "pad");
      } else if (l.kind == LayerKind::Pool) {
        l.kernel = parse_positive(require("k"), line_no, "k");
        l.stride = kv.count("stride") ? parse_positive(kv["stride"], line_no, "stride") : l.kernel;
      } else if (l.kind == LayerKind::Fc) {
        l.out = parse_positive(require("out"), line_no, "out");
      } else if (l.kind == LayerKind::Dropout) {
        if (kv.count("rate")) l.rate = parse_real(kv["rate"], line_no, "rate");
        if (!(l.rate >= 0.0 && l.rate < 1.0)) throw ParseError(line_no, "dropout rate must lie in [0, 1)");
      }
      layer_line[l.name] = line_no;
      spec.layers.push_back(std::move(l));
    } else if (d == "head") {
      if (tok.size() != 3) throw ParseError(line_no, "expected 'head category|pose <width>'");
      if (tok[1] == "category") {
        if (have_category) throw ParseError(line_no, "more than one category head");
        spec.category_width = parse_positive(tok[2], line_no, "category head width");
        if (spec.category_width < 2) throw ParseError(line_no, "category head needs at least 2 classes");
        have_category = true;
      } else if (tok[1] == "pose") {
        if (have_pose) throw ParseError(line_no, "more than one pose head");
        spec.pose_width = parse_positive(tok[2], line_no, "pose head width");
        if (spec.pose_width < 2) throw ParseError(line_no, "pose head needs at least 2 classes");
        have_pose = true;
      } else {
        throw ParseError(line_no, "unknown head '" + tok[1] + "'");
      }
    } else if (d == "inject") {
      if (tok.size() != 4) throw ParseError(line_no, "expected 'inject <layer> <w1> <w2>'");
      InjectionSpec inj{tok[1], parse_positive(tok[2], line_no, "branch width"),
                        parse_positive(tok[3], line_no, "branch width"), line_no};
      if (!injected.insert(inj.source).second)
        throw ParseError(line_no, "layer '" + inj.source + "' injected twice");
      spec.injections.push_back(std::move(inj));
    } else if (d == "lambda") {
      if (have_lambda) throw ParseError(line_no, "duplicate lambda directive");
      if (tok.size() != 2) throw ParseError(line_no, "expected 'lambda <real>'");
      spec.lambda = parse_real(tok[1], line_no, "lambda");
      if (spec.lambda < 0) throw ParseError(line_no, "lambda must be non-negative");
      have_lambda = true;
    } else {
      throw ParseError(line_no, "unknown directive '" + d + "'");
    }
    if (end == text.size()) break;
  }

  if (spec.layers.empty()) throw ParseError(0, "no layers");
  if (!have_input) throw ParseError(0, "missing 'input H W C' directive");
  if (!have_category) throw ParseError(0, "missing 'head category <K>' directive");
  for (const auto& inj : spec.injections)
    if (!layer_line.count(inj.source))
      throw ParseError(inj.line, "injection source '" + inj.source + "' is not a layer");
  if (!spec.injections.empty() && !have_pose)
    throw ParseError(spec.injections.front().line, "injections need a 'head pose <P>' directive");
  return spec;
}

NetworkSpec load_spec(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open spec file '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_spec(ss.str());
  } catch (const ParseError& e) {
    throw ParseError(e.line(), path.string() + ": " + std::string(e.what()));
  }
}

std::string_view arch_name(ArchKind k) {
  switch (k) {
    case ArchKind::Base: return "base";
    case ArchKind::InjectTop: return "inject-top";
    case ArchKind::InjectMulti: return "inject-multi";
  }
  return "?";
}

ArchKind parse_arch(std::string_view s) {
  if (s == "base") return ArchKind::Base;
  if (s == "inject-top" || s == "inject_top") return ArchKind::InjectTop;
  if (s == "inject-multi" || s == "inject_multi") return ArchKind::InjectMulti;
  throw ConfigError("unknown architecture '" + std::string(s) +
                    "' (expected base, inject-top or inject-multi)");
}

Graph build_graph(const NetworkSpec& spec, ArchKind kind) {
  if (kind != ArchKind::Base && spec.pose_width == 0)
    throw ConfigError(std::string(arch_name(kind)) + " needs a pose head ('head pose <P>')");
  if (kind == ArchKind::InjectMulti && spec.injections.empty())
    throw ConfigError("inject-multi needs at least one 'inject' directive");

  Graph g({spec.channels, spec.height, spec.width});
  std::size_t prev = 0;
  for (const auto& l : spec.layers) {
    OpNode n;
    n.name = l.name;
    n.inputs = {prev};
    switch (l.kind) {
      case LayerKind::Conv:
        n.kind = OpKind::Conv;
        n.out = l.out;
        n.kernel = l.kernel;
        n.stride = l.stride;
        n.pad = l.pad;
        n.params = {l.name + ".weight", l.name + ".bias"};
        break;
      case LayerKind::Pool:
        n.kind = OpKind::Pool;
        n.kernel = l.kernel;
        n.stride = l.stride;
        break;
      case LayerKind::BatchNorm:
        n.kind = OpKind::BatchNorm;
        n.params = {l.name + ".gamma", l.name + ".beta", l.name + ".running_mean",
                    l.name + ".running_var"};
        break;
      case LayerKind::Relu: n.kind = OpKind::Relu; break;
      case LayerKind::Fc:
        n.kind = OpKind::Fc;
        n.out = l.out;
        n.params = {l.name + ".weight", l.name + ".bias"};
        break;
      case LayerKind::Dropout:
        n.kind = OpKind::Dropout;
        n.rate = l.rate;
        break;
    }
    try {
      prev = g.add(std::move(n));
    } catch (const ShapeError& e) {
      throw ParseError(l.line, e.what());
    }
  }
  const std::size_t top = prev;

  auto fc = [](std::string name, std::size_t in, std::size_t out, bool bias) {
    OpNode n;
    n.kind = OpKind::Fc;
    n.inputs = {in};
    n.out = out;
    n.params = {name + ".weight"};
    if (bias) n.params.push_back(name + ".bias");
    n.name = std::move(name);
    return n;
  };
  auto relu = [](std::string name, std::size_t in) {
    OpNode n;
    n.kind = OpKind::Relu;
    n.inputs = {in};
    n.name = std::move(name);
    return n;
  };
  auto loss = [](std::string name, std::size_t in, LabelKind label) {
    OpNode n;
    n.kind = OpKind::SoftmaxLoss;
    n.inputs = {in};
    n.label = label;
    n.name = std::move(name);
    return n;
  };

  const auto cat = g.add(fc("category", top, spec.category_width, true));
  g.add(loss(std::string(kCategorySink), cat, LabelKind::Category));

  if (kind == ArchKind::InjectTop) {
    const auto pose = g.add(fc("pose_top", top, spec.pose_width, true));
    g.add(loss(std::string(kPoseSink), pose, LabelKind::Pose));
  } else if (kind == ArchKind::InjectMulti) {
    std::vector<std::size_t> pathways;
    for (const auto& inj : spec.injections) {
      std::size_t x = g.require(inj.source);
      x = g.add(fc(branch_fc(inj.source, 1), x, inj.width1, true));
      x = g.add(relu(branch_relu(inj.source, 1), x));
      x = g.add(fc(branch_fc(inj.source, 2), x, inj.width2, true));
      x = g.add(relu(branch_relu(inj.source, 2), x));
      pathways.push_back(g.add(fc(pathway(inj.source), x, spec.pose_width, false)));
    }
    pathways.push_back(g.add(fc("pose_top", top, spec.pose_width, true)));
    OpNode sum;
    sum.name = "pose";
    sum.kind = OpKind::Add;
    sum.inputs = pathways;
    const auto pose = g.add(std::move(sum));
    g.add(loss(std::string(kPoseSink), pose, LabelKind::Pose));
  }
  g.validate();
  return g;
}

template <typename T>
Network<T> build(const NetworkSpec& spec, ArchKind kind, std::uint64_t seed) {
  Network<T> net{kind, build_graph(spec, kind), {}};

  // Partition of each parameter follows from the node that owns it.
  std::map<std::string, std::string> branch_of;
  for (const auto& inj : spec.injections) {
    for (int i = 1; i <= 2; ++i) branch_of[branch_fc(inj.source, i)] = inj.source;
    branch_of[pathway(inj.source)] = inj.source;
  }
  const auto& g = net.graph;
  for (const auto& node : g.nodes()) {
    Partition part = Partition::Shared;
    std::string branch;
    if (node.name == "category") {
      part = Partition::CategoryHead;
    } else if (node.name == "pose_top") {
      part = Partition::PoseHead;
    } else if (auto it = branch_of.find(node.name); it != branch_of.end()) {
      part = Partition::PoseBranch;
      branch = it->second;
    }
    const Shape& in = g.node(node.inputs.empty() ? 0 : node.inputs[0]).shape;
    for (std::size_t k = 0; k < node.params.size(); ++k) {
      Parameter<T> p;
      p.name = node.params[k];
      p.partition = part;
      p.branch = branch;
      switch (node.kind) {
        case OpKind::Conv:
          p.init = k == 0 ? Init::Gaussian : Init::Zero;
          p.value = k == 0 ? Tensor<T>({node.out, in[0], node.kernel, node.kernel}) : Tensor<T>({node.out});
          break;
        case OpKind::Fc:
          p.init = k == 0 ? Init::Gaussian : Init::Zero;
          p.value = k == 0 ? Tensor<T>({node.out, shape_size(in)}) : Tensor<T>({node.out});
          break;
        case OpKind::BatchNorm:
          p.init = (k == 0 || k == 3) ? Init::One : Init::Zero;
          p.trainable = k < 2;
          p.value = Tensor<T>({in[0]});
          break;
        default:
          throw ConfigError("node '" + node.name + "' cannot own parameters");
      }
      initialize(p, seed);
      net.params.add(std::move(p));
    }
  }
  return net;
}

template <typename T>
PruneResult<T> prune(const Network<T>& net) {
  if (net.kind == ArchKind::Base) return {net, true};
  const auto keep = net.graph.ancestors({net.graph.require(kCategorySink)});
  PruneResult<T> r;
  r.network.kind = ArchKind::Base;
  r.network.graph = net.graph.subgraph(keep);
  const auto names = r.network.graph.param_names();
  const std::set<std::string> live(names.begin(), names.end());
  r.network.params = net.params.filtered(
      [&](const Parameter<T>& p) { return !is_pose_side(p.partition) && live.count(p.name); });
  return r;
}

template <typename T>
TransplantReport transplant(const ParamStore<T>& src, ParamStore<T>& dst, std::uint64_t seed) {
  for (const auto& p : dst) {
    if (auto i = src.index_of(p.name); i && src[*i].value.shape() != p.value.shape())
      throw ShapeError("cannot transplant '" + p.name + "': source shape " +
                       shape_str(src[*i].value.shape()) + " != destination shape " +
                       shape_str(p.value.shape()));
  }
  TransplantReport report;
  for (auto& p : dst) {
    if (auto i = src.index_of(p.name)) {
      p.value = src[*i].value;
      report.copied.push_back(p.name);
    } else {
      initialize(p, seed);
      report.fresh.push_back(p.name);
    }
  }
  return report;
}

#define WWCNN_INSTANTIATE(T)                                                         \
  template Network<T> build(const NetworkSpec&, ArchKind, std::uint64_t);            \
  template PruneResult<T> prune(const Network<T>&);                                  \
  template TransplantReport transplant(const ParamStore<T>&, ParamStore<T>&, std::uint64_t);

WWCNN_INSTANTIATE(float)
WWCNN_INSTANTIATE(double)

#undef WWCNN_INSTANTIATE

}  // namespace wwcnn
