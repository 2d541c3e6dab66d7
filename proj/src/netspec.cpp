#include "salicon/netspec.hpp"

#include <charconv>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <unordered_map>

namespace salicon {
namespace {

Error graph_error(const std::string& message) {
  return Error(ErrorKind::kGraph, message);
}

struct Arity {
  std::size_t bottoms;
  std::size_t tops;
};

Arity arity(LayerKind kind) {
  switch (kind) {
    case LayerKind::kInput: return {0, 1};
    case LayerKind::kConcat:
    case LayerKind::kLoss: return {2, 1};
    default: return {1, 1};
  }
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

// ---- parsing helpers -------------------------------------------------------

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

class LineParser {
 public:
  explicit LineParser(std::size_t line) : line_(line) {}

  [[noreturn]] void fail(const std::string& message) const {
    throw Error(ErrorKind::kFormat,
                "netspec line " + std::to_string(line_) + ": " + message);
  }

  std::vector<std::string_view> words(std::string_view value) const {
    std::vector<std::string_view> out;
    std::size_t pos = 0;
    while (pos < value.size()) {
      const auto start = value.find_first_not_of(" \t", pos);
      if (start == std::string_view::npos) break;
      auto end = value.find_first_of(" \t", start);
      if (end == std::string_view::npos) end = value.size();
      out.push_back(value.substr(start, end - start));
      pos = end;
    }
    return out;
  }

  std::size_t count(std::string_view word) const {
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(word.data(), word.data() + word.size(), v);
    if (ec != std::errc() || ptr != word.data() + word.size()) {
      fail("expected a non-negative integer, got '" + std::string(word) + "'");
    }
    return v;
  }

  double real(std::string_view word) const {
    double v = 0;
    auto [ptr, ec] = std::from_chars(word.data(), word.data() + word.size(), v);
    if (ec != std::errc() || ptr != word.data() + word.size()) {
      fail("expected a number, got '" + std::string(word) + "'");
    }
    return v;
  }

  std::vector<std::size_t> counts(std::string_view value, std::size_t min_n,
                                  std::size_t max_n) const {
    std::vector<std::size_t> out;
    for (auto w : words(value)) out.push_back(count(w));
    if (out.size() < min_n || out.size() > max_n) {
      fail("expected " + std::to_string(min_n) +
           (min_n == max_n ? "" : "-" + std::to_string(max_n)) + " integers");
    }
    return out;
  }

  // One or two integers; a single value applies to both axes.
  std::pair<std::size_t, std::size_t> pair(std::string_view value) const {
    auto v = counts(value, 1, 2);
    return {v[0], v.size() == 2 ? v[1] : v[0]};
  }

  std::string identifier(std::string_view value) const {
    auto w = words(value);
    if (w.size() != 1) fail("expected one identifier");
    return std::string(w[0]);
  }

 private:
  std::size_t line_;
};

struct PendingLayer {
  LayerSpec spec;
  std::map<std::string, std::pair<std::string, std::size_t>> fields;
  std::size_t line = 0;
};

LayerSpec finish_layer(PendingLayer& pending) {
  LayerSpec& l = pending.spec;
  auto take = [&](const std::string& key) -> std::optional<std::pair<std::string, std::size_t>> {
    auto it = pending.fields.find(key);
    if (it == pending.fields.end()) return std::nullopt;
    auto v = it->second;
    pending.fields.erase(it);
    return v;
  };
  auto require = [&](const std::string& key) {
    auto v = take(key);
    if (!v) {
      LineParser(pending.line).fail("layer '" + l.name + "' lacks '" + key + "'");
    }
    return *v;
  };

  auto type = require("type");
  try {
    l.kind = parse_layer_kind(type.first);
  } catch (const Error&) {
    LineParser(type.second).fail("unknown layer type '" + type.first + "'");
  }

  switch (l.kind) {
    case LayerKind::kInput: {
      auto [value, line] = require("dims");
      auto d = LineParser(line).counts(value, 4, 4);
      l.params = InputSpec{Dims{d[0], d[1], d[2], d[3]}};
      break;
    }
    case LayerKind::kConv: {
      ConvSpec conv;
      auto [num, num_line] = require("num_output");
      conv.num_output = LineParser(num_line).count(trim(num));
      if (auto v = take("kernel")) {
        std::tie(conv.geometry.kernel_h, conv.geometry.kernel_w) =
            LineParser(v->second).pair(v->first);
      }
      if (auto v = take("stride")) {
        std::tie(conv.geometry.stride_h, conv.geometry.stride_w) =
            LineParser(v->second).pair(v->first);
      }
      if (auto v = take("pad")) {
        std::tie(conv.geometry.pad_h, conv.geometry.pad_w) =
            LineParser(v->second).pair(v->first);
      }
      l.params = conv;
      auto mult = [&](const char* key, double& field) {
        if (auto v = take(key)) {
          field = LineParser(v->second).real(trim(v->first));
          if (!(field >= 0.0)) {
            LineParser(v->second).fail(std::string(key) + " must be >= 0");
          }
        }
      };
      mult("lr_mult", l.lr_mult);
      mult("lr_mult_bias", l.lr_mult_bias);
      mult("decay_mult", l.decay_mult);
      mult("decay_mult_bias", l.decay_mult_bias);
      break;
    }
    case LayerKind::kMaxPool: {
      layers::PoolParams p;
      if (auto v = take("window")) p.window = LineParser(v->second).count(trim(v->first));
      if (auto v = take("stride")) p.stride = LineParser(v->second).count(trim(v->first));
      l.params = p;
      break;
    }
    case LayerKind::kBilinearResize: {
      auto [value, line] = require("size");
      auto [h, w] = LineParser(line).pair(value);
      l.params = ResizeSpec{{h, w}};
      break;
    }
    default:
      l.params = NoParams{};
  }

  if (!pending.fields.empty()) {
    const auto& [key, value] = *pending.fields.begin();
    LineParser(value.second)
        .fail("unexpected key '" + key + "' for a " + to_string(l.kind) +
              " layer");
  }
  return l;
}

}  // namespace

const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::kInput: return "input";
    case LayerKind::kConv: return "conv";
    case LayerKind::kRelu: return "relu";
    case LayerKind::kMaxPool: return "maxpool";
    case LayerKind::kBilinearResize: return "bilinear_resize";
    case LayerKind::kConcat: return "concat";
    case LayerKind::kLoss: return "loss";
  }
  return "unknown";
}

LayerKind parse_layer_kind(std::string_view text) {
  for (auto k : {LayerKind::kInput, LayerKind::kConv, LayerKind::kRelu,
                 LayerKind::kMaxPool, LayerKind::kBilinearResize,
                 LayerKind::kConcat, LayerKind::kLoss}) {
    if (text == to_string(k)) return k;
  }
  throw Error(ErrorKind::kFormat, "unknown layer type '" + std::string(text) + "'");
}

const LayerSpec* NetSpec::find(std::string_view layer_name) const {
  for (const auto& l : layers) {
    if (l.name == layer_name) return &l;
  }
  return nullptr;
}

LayerSpec* NetSpec::find(std::string_view layer_name) {
  for (auto& l : layers) {
    if (l.name == layer_name) return &l;
  }
  return nullptr;
}

bool NetSpec::has_loss() const {
  for (const auto& l : layers) {
    if (l.kind == LayerKind::kLoss) return true;
  }
  return false;
}

std::string weight_name(std::string_view layer) {
  return std::string(layer) + ".weight";
}

std::string bias_name(std::string_view layer) {
  return std::string(layer) + ".bias";
}

std::vector<std::size_t> topological_order(const NetSpec& spec) {
  const std::size_t n = spec.layers.size();
  std::unordered_map<std::string, std::size_t> producer;
  std::set<std::string> names;
  for (std::size_t i = 0; i < n; ++i) {
    const LayerSpec& l = spec.layers[i];
    if (!names.insert(l.name).second) {
      throw graph_error("duplicate layer name '" + l.name + "'");
    }
    const Arity a = arity(l.kind);
    if (l.bottoms.size() != a.bottoms || l.tops.size() != a.tops) {
      throw graph_error("layer '" + l.name + "' (" + to_string(l.kind) +
                        ") needs " + std::to_string(a.bottoms) +
                        " bottom(s) and " + std::to_string(a.tops) +
                        " top(s)");
    }
    for (const auto& top : l.tops) {
      if (!producer.emplace(top, i).second) {
        throw graph_error("blob '" + top + "' is produced by both '" +
                          spec.layers[producer[top]].name + "' and '" +
                          l.name + "'");
      }
    }
  }

  std::vector<std::vector<std::size_t>> consumers(n);
  std::vector<std::size_t> pending(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (const auto& bottom : spec.layers[i].bottoms) {
      auto it = producer.find(bottom);
      if (it == producer.end()) {
        throw graph_error("bottom '" + bottom + "' of layer '" +
                          spec.layers[i].name + "' is not produced by any layer");
      }
      consumers[it->second].push_back(i);
      ++pending[i];
    }
  }

  std::set<std::size_t> ready;
  for (std::size_t i = 0; i < n; ++i) {
    if (pending[i] == 0) ready.insert(i);
  }
  std::vector<std::size_t> order;
  order.reserve(n);
  while (!ready.empty()) {
    const std::size_t i = *ready.begin();
    ready.erase(ready.begin());
    order.push_back(i);
    for (std::size_t c : consumers[i]) {
      if (--pending[c] == 0) ready.insert(c);
    }
  }
  if (order.size() != n) {
    std::string stuck;
    for (std::size_t i = 0; i < n; ++i) {
      if (pending[i] != 0) stuck += (stuck.empty() ? "'" : ", '") + spec.layers[i].name + "'";
    }
    throw graph_error("cycle through layers " + stuck);
  }
  return order;
}

ShapeMap infer_shapes(const NetSpec& spec) {
  ShapeMap shapes;
  for (std::size_t i : topological_order(spec)) {
    const LayerSpec& l = spec.layers[i];
    auto in = [&](std::size_t k) { return shapes.at(l.bottoms[k]); };
    Dims out;
    try {
      switch (l.kind) {
        case LayerKind::kInput:
          out = std::get<InputSpec>(l.params).dims;
          out.count();
          break;
        case LayerKind::kConv:
          out = layers::conv_output_dims(in(0), l.conv().num_output,
                                         l.conv().geometry);
          break;
        case LayerKind::kRelu:
          out = in(0);
          break;
        case LayerKind::kMaxPool:
          out = layers::pool_output_dims(in(0),
                                         std::get<layers::PoolParams>(l.params));
          break;
        case LayerKind::kBilinearResize: {
          const auto& r = std::get<ResizeSpec>(l.params);
          out = in(0);
          out.h = r.out_hw.h;
          out.w = r.out_hw.w;
          out.count();
          break;
        }
        case LayerKind::kConcat: {
          const Dims a = in(0);
          const Dims b = in(1);
          if (a.n != b.n || a.h != b.h || a.w != b.w) {
            throw Error(ErrorKind::kShape,
                        "concat partners '" + l.bottoms[0] + "' " + to_string(a) +
                            " and '" + l.bottoms[1] + "' " + to_string(b) +
                            " disagree");
          }
          out = {a.n, a.c + b.c, a.h, a.w};
          break;
        }
        case LayerKind::kLoss:
          if (!(in(0) == in(1))) {
            throw Error(ErrorKind::kShape,
                        "loss inputs '" + l.bottoms[0] + "' " + to_string(in(0)) +
                            " and '" + l.bottoms[1] + "' " + to_string(in(1)) +
                            " disagree");
          }
          out = {1, 1, 1, 1};
          break;
      }
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kShape && e.kind() != ErrorKind::kSize) throw;
      throw Error(e.kind(), "layer '" + l.name + "': " + e.message());
    }
    shapes[l.tops[0]] = out;
  }
  return shapes;
}

std::string format_netspec(const NetSpec& spec) {
  std::ostringstream os;
  os << "name: " << spec.name << "\n";
  for (const auto& l : spec.layers) {
    os << "layer {\n";
    os << "  name: " << l.name << "\n";
    os << "  type: " << to_string(l.kind) << "\n";
    for (const auto& b : l.bottoms) os << "  bottom: " << b << "\n";
    for (const auto& t : l.tops) os << "  top: " << t << "\n";
    switch (l.kind) {
      case LayerKind::kInput: {
        const Dims& d = std::get<InputSpec>(l.params).dims;
        os << "  dims: " << d.n << " " << d.c << " " << d.h << " " << d.w << "\n";
        break;
      }
      case LayerKind::kConv: {
        const auto& c = l.conv();
        const auto& g = c.geometry;
        os << "  num_output: " << c.num_output << "\n";
        os << "  kernel: " << g.kernel_h << " " << g.kernel_w << "\n";
        os << "  stride: " << g.stride_h << " " << g.stride_w << "\n";
        os << "  pad: " << g.pad_h << " " << g.pad_w << "\n";
        os << "  lr_mult: " << format_double(l.lr_mult) << "\n";
        os << "  lr_mult_bias: " << format_double(l.lr_mult_bias) << "\n";
        os << "  decay_mult: " << format_double(l.decay_mult) << "\n";
        os << "  decay_mult_bias: " << format_double(l.decay_mult_bias) << "\n";
        break;
      }
      case LayerKind::kMaxPool: {
        const auto& p = std::get<layers::PoolParams>(l.params);
        os << "  window: " << p.window << "\n";
        os << "  stride: " << p.stride << "\n";
        break;
      }
      case LayerKind::kBilinearResize: {
        const auto& r = std::get<ResizeSpec>(l.params);
        os << "  size: " << r.out_hw.h << " " << r.out_hw.w << "\n";
        break;
      }
      default:
        break;
    }
    os << "}\n";
  }
  return os.str();
}

NetSpec parse_netspec(std::string_view text) {
  NetSpec spec;
  std::optional<PendingLayer> current;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) {
      line = line.substr(0, hash);
    }
    line = trim(line);
    if (line.empty()) continue;
    LineParser lp(line_no);

    if (line == "}") {
      if (!current) lp.fail("unmatched '}'");
      spec.layers.push_back(finish_layer(*current));
      current.reset();
      continue;
    }
    if (line == "layer {" || line == "layer{") {
      if (current) lp.fail("nested layer record");
      current.emplace();
      current->line = line_no;
      continue;
    }
    const auto colon = line.find(':');
    if (colon == std::string_view::npos) lp.fail("expected 'key: value'");
    const std::string key(trim(line.substr(0, colon)));
    const std::string_view value = trim(line.substr(colon + 1));
    if (value.empty()) lp.fail("empty value for '" + key + "'");

    if (!current) {
      if (key != "name") lp.fail("unexpected top-level key '" + key + "'");
      spec.name = lp.identifier(value);
      continue;
    }
    if (key == "name") {
      current->spec.name = lp.identifier(value);
    } else if (key == "bottom") {
      current->spec.bottoms.push_back(lp.identifier(value));
    } else if (key == "top") {
      current->spec.tops.push_back(lp.identifier(value));
    } else if (!current->fields.emplace(key, std::pair{std::string(value), line_no}).second) {
      lp.fail("duplicate key '" + key + "'");
    }
  }
  if (current) LineParser(line_no).fail("unterminated layer record");
  for (const auto& l : spec.layers) {
    if (l.name.empty()) throw Error(ErrorKind::kFormat, "netspec layer without a name");
  }
  topological_order(spec);
  return spec;
}

NetSpec load_netspec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open netspec '" + path.string() + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  try {
    return parse_netspec(buffer.str());
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.message());
  }
}

void save_netspec(const NetSpec& spec, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kIo, "cannot write netspec '" + path.string() + "'");
  out << format_netspec(spec);
  if (!out) throw Error(ErrorKind::kIo, "failed writing '" + path.string() + "'");
}

// ---- two-stream architecture -----------------------------------------------

std::vector<ConvBlock> vgg16_blocks() {
  return {{2, 64}, {2, 128}, {3, 256}, {3, 512}, {3, 512}};
}

std::vector<std::string> vgg16_conv_names() {
  std::vector<std::string> names;
  const auto blocks = vgg16_blocks();
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    for (std::size_t i = 0; i < blocks[b].convs; ++i) {
      names.push_back("conv" + std::to_string(b + 1) + "_" + std::to_string(i + 1));
    }
  }
  return names;
}

TwoStreamConfig TwoStreamConfig::vgg16(NetMode mode) {
  TwoStreamConfig cfg;
  cfg.blocks = vgg16_blocks();
  cfg.frozen_blocks = 3;
  cfg.mode = mode;
  return cfg;
}

TwoStreamConfig TwoStreamConfig::miniature(NetMode mode) {
  TwoStreamConfig cfg;
  cfg.fine_input = {1, 3, 24, 32};
  cfg.coarse_input = {1, 3, 12, 16};
  cfg.blocks = {{1, 4}, {1, 6}};
  cfg.frozen_blocks = 1;
  cfg.mode = mode;
  return cfg;
}

layers::Extent2 fused_extent(const TwoStreamConfig& cfg) {
  Dims d = cfg.fine_input;
  for (std::size_t b = 0; b < cfg.blocks.size(); ++b) {
    d = layers::pool_output_dims(d, layers::PoolParams{});
  }
  return {d.h, d.w};
}

namespace {

void append_stream(NetSpec& spec, const TwoStreamConfig& cfg,
                   const std::string& prefix, const std::string& input) {
  std::string bottom = input;
  for (std::size_t b = 0; b < cfg.blocks.size(); ++b) {
    const std::string block = std::to_string(b + 1);
    const bool frozen = b < cfg.frozen_blocks;
    for (std::size_t i = 0; i < cfg.blocks[b].convs; ++i) {
      const std::string suffix = block + "_" + std::to_string(i + 1);
      LayerSpec conv;
      conv.name = prefix + "conv" + suffix;
      conv.kind = LayerKind::kConv;
      conv.bottoms = {bottom};
      conv.tops = {conv.name};
      conv.params = ConvSpec{cfg.blocks[b].channels, layers::ConvGeometry::same3x3()};
      if (frozen) {
        conv.lr_mult = conv.lr_mult_bias = conv.decay_mult = conv.decay_mult_bias = 0.0;
      }
      spec.layers.push_back(conv);

      LayerSpec relu;
      relu.name = prefix + "relu" + suffix;
      relu.kind = LayerKind::kRelu;
      relu.bottoms = {conv.name};
      relu.tops = {relu.name};
      spec.layers.push_back(relu);
      bottom = relu.name;
    }
    LayerSpec pool;
    pool.name = prefix + "pool" + block;
    pool.kind = LayerKind::kMaxPool;
    pool.bottoms = {bottom};
    pool.tops = {pool.name};
    pool.params = layers::PoolParams{};
    spec.layers.push_back(pool);
    bottom = pool.name;
  }
}

LayerSpec input_layer(std::string_view name, const Dims& dims) {
  LayerSpec l;
  l.name = std::string(name);
  l.kind = LayerKind::kInput;
  l.tops = {l.name};
  l.params = InputSpec{dims};
  return l;
}

}  // namespace

NetSpec build_two_stream_spec(const TwoStreamConfig& cfg) {
  if (cfg.blocks.empty()) {
    throw Error(ErrorKind::kConfig, "two-stream network needs at least one block");
  }
  const bool training = cfg.mode == NetMode::kTraining;
  const layers::Extent2 fused = fused_extent(cfg);
  const std::string last_block = std::to_string(cfg.blocks.size());
  const std::string coarse_prefix(blobs::kCoarsePrefix);

  NetSpec spec;
  spec.name = training ? "salicon_finetune" : "salicon";
  spec.layers.push_back(input_layer(blobs::kFineInput, cfg.fine_input));
  spec.layers.push_back(input_layer(blobs::kCoarseInput, cfg.coarse_input));
  if (training) {
    spec.layers.push_back(
        input_layer(blobs::kGroundTruth, Dims{1, 1, fused.h, fused.w}));
  }
  append_stream(spec, cfg, "", std::string(blobs::kFineInput));
  append_stream(spec, cfg, coarse_prefix, std::string(blobs::kCoarseInput));

  LayerSpec resize;
  resize.name = std::string(blobs::kInterpolationLayer);
  resize.kind = LayerKind::kBilinearResize;
  resize.bottoms = {coarse_prefix + "pool" + last_block};
  resize.tops = {"interpolated_data"};
  resize.params = ResizeSpec{fused};
  spec.layers.push_back(resize);

  LayerSpec concat;
  concat.name = "concat";
  concat.kind = LayerKind::kConcat;
  concat.bottoms = {"pool" + last_block, "interpolated_data"};
  concat.tops = {"concat"};
  spec.layers.push_back(concat);

  LayerSpec fusion;
  fusion.name = std::string(blobs::kFusionLayer);
  fusion.kind = LayerKind::kConv;
  fusion.bottoms = {"concat"};
  fusion.tops = {std::string(blobs::kSaliency)};
  fusion.params = ConvSpec{1, layers::ConvGeometry::pointwise()};
  spec.layers.push_back(fusion);

  if (training) {
    LayerSpec loss;
    loss.name = std::string(blobs::kLoss);
    loss.kind = LayerKind::kLoss;
    loss.bottoms = {std::string(blobs::kSaliency), std::string(blobs::kGroundTruth)};
    loss.tops = {std::string(blobs::kLoss)};
    spec.layers.push_back(loss);
  }
  return spec;
}

NetSpec build_salicon_spec(NetMode mode) {
  return build_two_stream_spec(TwoStreamConfig::vgg16(mode));
}

}  // namespace salicon
