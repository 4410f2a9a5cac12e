#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "svox/binary.hpp"
#include "svox/normalization.hpp"
#include "svox/tensor.hpp"
#include "svox/volume.hpp"

namespace svox {

/// Four-branch Inception block widths: 1^3 | 1^3 -> 3^3 | 1^3 -> 5^3 | pool -> 1^3.
struct InceptionSpec {
  int reduce_1x1 = 64;
  int reduce_3 = 96;
  int out_3 = 128;
  int reduce_5 = 16;
  int out_5 = 32;
  int pool_proj = 32;

  int out_channels() const { return reduce_1x1 + out_3 + out_5 + pool_proj; }
  bool valid() const {
    return reduce_1x1 > 0 && reduce_3 > 0 && out_3 > 0 && reduce_5 > 0 && out_5 > 0 && pool_proj > 0;
  }
  friend bool operator==(const InceptionSpec&, const InceptionSpec&) = default;
};

/// Patch geometry in reoriented axis order: two in-plane extents, then the
/// through-plane extent.
struct PatchShape {
  int in_plane_1 = 25;
  int in_plane_2 = 25;
  int through_plane = 5;
  friend bool operator==(const PatchShape&, const PatchShape&) = default;
};

struct ModelConfig {
  std::string name = "paper";
  int stem_filters = 128;
  std::array<InceptionSpec, 3> blocks{};  // branch 1, branch 2, fusion
  PatchShape patch_shape{};
  int input_channels_per_branch = 1;
  std::uint64_t seed = 1;
  double init_sigma = 0.001;
  /// "gaussian": every weight ~ N(0, init_sigma). "he": per-layer N(0, 2 / fan_in).
  std::string init_scheme = "gaussian";

  static ModelConfig paper() { return ModelConfig{}; }

  static ModelConfig tiny() {
    ModelConfig c;
    c.name = "tiny";
    c.stem_filters = 4;
    c.blocks.fill(InceptionSpec{2, 2, 4, 2, 2, 2});
    return c;
  }

  void validate() const {
    if (stem_filters <= 0) throw Error("model", "stem_filters must be positive");
    if (input_channels_per_branch != 1) throw Error("model", "each branch takes exactly one input channel");
    for (const auto& b : blocks)
      if (!b.valid()) throw Error("model", "inception widths must be positive");
    if (patch_shape.in_plane_1 % 2 == 0 || patch_shape.in_plane_2 % 2 == 0 || patch_shape.through_plane % 2 == 0 ||
        patch_shape.in_plane_1 <= 0 || patch_shape.in_plane_2 <= 0 || patch_shape.through_plane <= 0)
      throw Error("model", "patch dims must be positive and odd");
    if (!(init_sigma > 0.0)) throw Error("model", "init_sigma must be positive");
    if (init_scheme != "gaussian" && init_scheme != "he") throw Error("model", "unknown init_scheme '" + init_scheme + "'");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline void to_json(nlohmann::json& j, const InceptionSpec& s) {
  j = nlohmann::json{{"reduce_1x1", s.reduce_1x1}, {"reduce_3", s.reduce_3}, {"out_3", s.out_3},
                     {"reduce_5", s.reduce_5},     {"out_5", s.out_5},       {"pool_proj", s.pool_proj}};
}
inline void from_json(const nlohmann::json& j, InceptionSpec& s) {
  j.at("reduce_1x1").get_to(s.reduce_1x1);
  j.at("reduce_3").get_to(s.reduce_3);
  j.at("out_3").get_to(s.out_3);
  j.at("reduce_5").get_to(s.reduce_5);
  j.at("out_5").get_to(s.out_5);
  j.at("pool_proj").get_to(s.pool_proj);
}
inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"name", c.name},
                     {"stem_filters", c.stem_filters},
                     {"blocks", c.blocks},
                     {"patch_shape", {c.patch_shape.in_plane_1, c.patch_shape.in_plane_2, c.patch_shape.through_plane}},
                     {"input_channels_per_branch", c.input_channels_per_branch},
                     {"seed", c.seed},
                     {"init_sigma", c.init_sigma},
                     {"init_scheme", c.init_scheme}};
}
inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.name = j.value("name", std::string("custom"));
  j.at("stem_filters").get_to(c.stem_filters);
  j.at("blocks").get_to(c.blocks);
  const auto p = j.at("patch_shape").get<std::array<int, 3>>();
  c.patch_shape = {p[0], p[1], p[2]};
  c.input_channels_per_branch = j.value("input_channels_per_branch", 1);
  c.seed = j.value("seed", std::uint64_t{1});
  c.init_sigma = j.value("init_sigma", 0.001);
  c.init_scheme = j.value("init_scheme", std::string("gaussian"));
}

template <class T>
struct InceptionBlock {
  InceptionSpec spec;
  ConvParams<T> branch_1x1, reduce_3, conv_3, reduce_5, conv_5, pool_proj;

  InceptionBlock() = default;
  InceptionBlock(const InceptionSpec& s, int in_channels)
      : spec(s),
        branch_1x1(s.reduce_1x1, in_channels, 1),
        reduce_3(s.reduce_3, in_channels, 1),
        conv_3(s.out_3, s.reduce_3, 3),
        reduce_5(s.reduce_5, in_channels, 1),
        conv_5(s.out_5, s.reduce_5, 5),
        pool_proj(s.pool_proj, in_channels, 1) {}

  int in_channels() const { return branch_1x1.c_in; }
  int out_channels() const { return spec.out_channels(); }

  template <class F>
  void for_each_layer(F&& f) {
    for (auto* l : {&branch_1x1, &reduce_3, &conv_3, &reduce_5, &conv_5, &pool_proj}) f(*l);
  }
  template <class F>
  void for_each_layer(F&& f) const {
    for (const auto* l : {&branch_1x1, &reduce_3, &conv_3, &reduce_5, &conv_5, &pool_proj}) f(*l);
  }
};

/// Two source branches (stem 3^3 conv -> ReLU -> Inception), channel concat,
/// a fusion Inception block, and a linear 3^3 conv to one output channel.
/// Every conv except the last is followed by ReLU.
template <class T>
struct Network {
  ModelConfig config;
  std::array<ConvParams<T>, 2> stem;
  std::array<InceptionBlock<T>, 2> branch;
  InceptionBlock<T> fusion;
  ConvParams<T> head;

  static constexpr int kBranches = 2;
  static constexpr int kInceptionBlocks = 3;

  /// All conv layers in topology order: branch 1 (stem, block), branch 2,
  /// fusion block, head.
  std::vector<ConvParams<T>*> layers() {
    std::vector<ConvParams<T>*> out;
    for (int b = 0; b < kBranches; ++b) {
      out.push_back(&stem[b]);
      branch[b].for_each_layer([&](ConvParams<T>& l) { out.push_back(&l); });
    }
    fusion.for_each_layer([&](ConvParams<T>& l) { out.push_back(&l); });
    out.push_back(&head);
    return out;
  }
  std::vector<const ConvParams<T>*> layers() const {
    std::vector<const ConvParams<T>*> out;
    for (auto* l : const_cast<Network*>(this)->layers()) out.push_back(l);
    return out;
  }

  friend bool operator==(const Network& a, const Network& b) {
    if (!(a.config == b.config)) return false;
    const auto la = a.layers(), lb = b.layers();
    for (std::size_t i = 0; i < la.size(); ++i)
      if (!(*la[i] == *lb[i])) return false;
    return true;
  }
};

/// Weight + bias scalars implied by a config, enumerated layer by layer.
inline std::size_t config_param_count(const ModelConfig& cfg) {
  auto conv = [](std::size_t co, std::size_t ci, std::size_t k) { return co * ci * k * k * k + co; };
  auto block = [&](const InceptionSpec& s, std::size_t in) {
    return conv(s.reduce_1x1, in, 1) + conv(s.reduce_3, in, 1) + conv(s.out_3, s.reduce_3, 3) +
           conv(s.reduce_5, in, 1) + conv(s.out_5, s.reduce_5, 5) + conv(s.pool_proj, in, 1);
  };
  const std::size_t stem = conv(cfg.stem_filters, cfg.input_channels_per_branch, 3);
  const std::size_t fused_in = cfg.blocks[0].out_channels() + cfg.blocks[1].out_channels();
  return 2 * stem + block(cfg.blocks[0], cfg.stem_filters) + block(cfg.blocks[1], cfg.stem_filters) +
         block(cfg.blocks[2], fused_in) + conv(1, cfg.blocks[2].out_channels(), 3);
}

template <class T>
std::size_t count_params(const Network<T>& net) {
  std::size_t n = 0;
  for (const auto* l : net.layers()) n += l->param_count();
  return n;
}

/// Gaussian weights drawn in topology order from cfg.seed; zero biases.
template <class T>
Network<T> build_network(const ModelConfig& cfg) {
  cfg.validate();
  Network<T> net;
  net.config = cfg;
  for (int b = 0; b < 2; ++b) {
    net.stem[b] = ConvParams<T>(cfg.stem_filters, cfg.input_channels_per_branch, 3);
    net.branch[b] = InceptionBlock<T>(cfg.blocks[b], cfg.stem_filters);
  }
  net.fusion = InceptionBlock<T>(cfg.blocks[2], cfg.blocks[0].out_channels() + cfg.blocks[1].out_channels());
  net.head = ConvParams<T>(1, cfg.blocks[2].out_channels(), 3);

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto* l : net.layers()) {
    const double fan_in = static_cast<double>(l->c_in) * l->kd * l->kh * l->kw;
    const double sigma = cfg.init_scheme == "he" ? std::sqrt(2.0 / fan_in) : cfg.init_sigma;
    for (auto& w : l->weights) w = static_cast<T>(sigma * normal(rng));
  }
  if (count_params(net) != config_param_count(cfg)) throw Error("model", "inconsistent channel chaining");
  return net;
}

// ---------------------------------------------------------------------------
// Forward / backward

template <class T>
struct BlockCache {
  Tensor5<T> b1_pre, b1, r3_pre, r3, c3_pre, c3, r5_pre, r5, c5_pre, c5, pool, pp_pre, pp, out;
};

template <class T>
struct ForwardCache {
  std::array<Tensor5<T>, 2> input, stem_pre, stem;
  std::array<BlockCache<T>, 2> branch;
  Tensor5<T> fused;
  BlockCache<T> fusion;
  Tensor5<T> out;
};

template <class T>
struct NetworkGrads {
  std::vector<ConvGrads> layers;

  NetworkGrads() = default;
  explicit NetworkGrads(const Network<T>& net) {
    for (const auto* l : net.layers()) layers.emplace_back(*l);
  }
  void zero() {
    for (auto& g : layers) g.zero();
  }
  /// Flattened in topology order, weights then bias per layer.
  std::vector<double> flat() const {
    std::vector<double> out;
    for (const auto& g : layers) {
      out.insert(out.end(), g.weights.begin(), g.weights.end());
      out.insert(out.end(), g.bias.begin(), g.bias.end());
    }
    return out;
  }
};

namespace detail {

template <class T>
Tensor5<T> conv_relu(const Tensor5<T>& x, const ConvParams<T>& p, Tensor5<T>* pre) {
  Tensor5<T> z = conv3d(x, p);
  Tensor5<T> a = relu(z);
  if (pre) *pre = std::move(z);
  return a;
}

template <class T>
Tensor5<T> block_forward(const Tensor5<T>& x, const InceptionBlock<T>& blk, BlockCache<T>* c) {
  if (!c) {
    Tensor5<T> b1 = conv_relu(x, blk.branch_1x1, static_cast<Tensor5<T>*>(nullptr));
    Tensor5<T> c3 = conv_relu(conv_relu(x, blk.reduce_3, static_cast<Tensor5<T>*>(nullptr)), blk.conv_3,
                              static_cast<Tensor5<T>*>(nullptr));
    Tensor5<T> c5 = conv_relu(conv_relu(x, blk.reduce_5, static_cast<Tensor5<T>*>(nullptr)), blk.conv_5,
                              static_cast<Tensor5<T>*>(nullptr));
    Tensor5<T> pp = conv_relu(maxpool3d(x), blk.pool_proj, static_cast<Tensor5<T>*>(nullptr));
    const Tensor5<T>* parts[] = {&b1, &c3, &c5, &pp};
    return concat_channels<T>(parts);
  }
  c->b1 = conv_relu(x, blk.branch_1x1, &c->b1_pre);
  c->r3 = conv_relu(x, blk.reduce_3, &c->r3_pre);
  c->c3 = conv_relu(c->r3, blk.conv_3, &c->c3_pre);
  c->r5 = conv_relu(x, blk.reduce_5, &c->r5_pre);
  c->c5 = conv_relu(c->r5, blk.conv_5, &c->c5_pre);
  c->pool = maxpool3d(x);
  c->pp = conv_relu(c->pool, blk.pool_proj, &c->pp_pre);
  const Tensor5<T>* parts[] = {&c->b1, &c->c3, &c->c5, &c->pp};
  c->out = concat_channels<T>(parts);
  return c->out;
}

// Backward through relu(conv(x)) given the activation's grad.
template <class T>
void conv_relu_backward(Tensor5<T>& x, const ConvParams<T>& p, Tensor5<T>& pre, const Tensor5<T>& act,
                        ConvGrads& g) {
  relu_backward(pre, act);
  conv3d_backward(x, p, pre, g);
}

// `grads` points at the block's six ConvGrads in for_each_layer order.
template <class T>
void block_backward(Tensor5<T>& x, const InceptionBlock<T>& blk, BlockCache<T>& c, ConvGrads* grads) {
  Tensor5<T>* parts[] = {&c.b1, &c.c3, &c.c5, &c.pp};
  concat_channels_backward<T>(parts, c.out);
  x.ensure_grad();
  conv_relu_backward(x, blk.branch_1x1, c.b1_pre, c.b1, grads[0]);
  c.r3.ensure_grad();
  conv_relu_backward(c.r3, blk.conv_3, c.c3_pre, c.c3, grads[2]);
  conv_relu_backward(x, blk.reduce_3, c.r3_pre, c.r3, grads[1]);
  c.r5.ensure_grad();
  conv_relu_backward(c.r5, blk.conv_5, c.c5_pre, c.c5, grads[4]);
  conv_relu_backward(x, blk.reduce_5, c.r5_pre, c.r5, grads[3]);
  c.pool.ensure_grad();
  conv_relu_backward(c.pool, blk.pool_proj, c.pp_pre, c.pp, grads[5]);
  maxpool3d_backward(x, c.pool);
}

}  // namespace detail

/// Fully-convolutional forward at any spatial size. Each echo is (N,1,D,H,W).
template <class T>
Tensor5<T> forward_full(const Network<T>& net, const Tensor5<T>& echo1, const Tensor5<T>& echo2,
                        ForwardCache<T>* cache = nullptr) {
  if (!(echo1.shape == echo2.shape))
    throw Error("model", "echo shape mismatch: " + to_string(echo1.shape) + " vs " + to_string(echo2.shape));
  if (echo1.shape.c != net.config.input_channels_per_branch)
    throw Error("model", "each echo must have exactly one channel");
  if (!cache) {
    Tensor5<T> f1 = detail::block_forward(detail::conv_relu(echo1, net.stem[0], static_cast<Tensor5<T>*>(nullptr)),
                                          net.branch[0], static_cast<BlockCache<T>*>(nullptr));
    Tensor5<T> f2 = detail::block_forward(detail::conv_relu(echo2, net.stem[1], static_cast<Tensor5<T>*>(nullptr)),
                                          net.branch[1], static_cast<BlockCache<T>*>(nullptr));
    Tensor5<T> fused = concat_channels(f1, f2);
    f1 = {};
    f2 = {};
    return conv3d(detail::block_forward(fused, net.fusion, static_cast<BlockCache<T>*>(nullptr)), net.head);
  }
  auto& c = *cache;
  c.input = {echo1, echo2};
  for (int b = 0; b < 2; ++b) {
    c.stem[b] = detail::conv_relu(c.input[b], net.stem[b], &c.stem_pre[b]);
    detail::block_forward(c.stem[b], net.branch[b], &c.branch[b]);
  }
  c.fused = concat_channels(c.branch[0].out, c.branch[1].out);
  detail::block_forward(c.fused, net.fusion, &c.fusion);
  c.out = conv3d(c.fusion.out, net.head);
  return c.out;
}

/// Backpropagates `cache.out.grad` (set by the caller, e.g. via
/// mse_loss_backward) into `grads`. Input gradients are not computed.
template <class T>
void backward(const Network<T>& net, ForwardCache<T>& c, NetworkGrads<T>& grads) {
  ConvGrads* g = grads.layers.data();
  // topology layout: [stem0, b0 x6, stem1, b1 x6, fusion x6, head]
  ConvGrads* g_branch[2] = {g, g + 7};
  ConvGrads* g_fusion = g + 14;
  ConvGrads& g_head = g[20];

  c.fusion.out.ensure_grad();
  conv3d_backward(c.fusion.out, net.head, c.out, g_head);
  c.fused.ensure_grad();
  detail::block_backward(c.fused, net.fusion, c.fusion, g_fusion);
  concat_channels_backward(c.branch[0].out, c.branch[1].out, c.fused);
  for (int b = 0; b < 2; ++b) {
    c.stem[b].ensure_grad();
    detail::block_backward(c.stem[b], net.branch[b], c.branch[b], g_branch[b] + 1);
    // the raw input carries no grad buffer, so only parameter grads accumulate
    detail::conv_relu_backward(c.input[b], net.stem[b], c.stem_pre[b], c.stem[b], g_branch[b][0]);
  }
}

// ---------------------------------------------------------------------------
// Serialization

inline constexpr std::array<char, 8> kModelMagic{'S', 'V', 'O', 'X', 'N', 'E', 'T', '1'};
inline constexpr std::uint32_t kModelFormatVersion = 1;

/// What a model file records besides the weights.
struct ModelMetadata {
  Orientation orientation = Orientation::axial();
  NormalizationSpec normalization{};
  friend bool operator==(const ModelMetadata&, const ModelMetadata&) = default;
};

struct ModelFile {
  Network<float> network;
  ModelMetadata metadata;
};

inline std::vector<std::uint8_t> encode_model(const Network<float>& net, const ModelMetadata& meta) {
  nlohmann::json j;
  j["config"] = net.config;
  j["orientation"] = std::string(to_string(meta.orientation.tag));
  j["axis_permutation"] = meta.orientation.axes;
  j["normalization"] = meta.normalization;
  j["param_count"] = count_params(net);
  j["topology"] = {{"branches", Network<float>::kBranches}, {"inception_blocks", Network<float>::kInceptionBlocks}};
  const std::string blob = j.dump();
  binary::Writer w;
  w.bytes(kModelMagic.data(), kModelMagic.size());
  w.u32(kModelFormatVersion);
  w.u32(static_cast<std::uint32_t>(blob.size()));
  w.bytes(blob.data(), blob.size());
  for (const auto* l : net.layers()) {
    w.f32s(l->weights);
    w.f32s(l->bias);
  }
  w.u64(binary::fnv1a64(w.buffer()));
  return std::move(w.buffer());
}

inline ModelFile decode_model(std::span<const std::uint8_t> bytes) {
  binary::Reader r(bytes, "model");
  const auto magic = r.take(kModelMagic.size(), "magic");
  if (!std::equal(magic.begin(), magic.end(), kModelMagic.begin(),
                  [](std::uint8_t a, char b) { return a == static_cast<std::uint8_t>(b); }))
    r.fail(0, "bad magic (not an SVOXNET1 model file)");
  const std::uint32_t version = r.u32("version");
  if (version != kModelFormatVersion) r.fail(8, "unsupported model format version " + std::to_string(version));
  const std::uint32_t len = r.u32("config length");
  const std::size_t json_at = r.offset();
  const auto blob = r.take(len, "config blob");
  ModelFile mf;
  try {
    const auto j = nlohmann::json::parse(blob.begin(), blob.end());
    const auto cfg = j.at("config").get<ModelConfig>();
    mf.network = build_network<float>(cfg);
    mf.metadata.orientation.tag = orientation_from_string(j.at("orientation").get<std::string>());
    mf.metadata.orientation.axes = j.at("axis_permutation").get<std::array<int, 3>>();
    if (!mf.metadata.orientation.is_bijection()) r.fail(json_at, "axis_permutation is not a bijection");
    mf.metadata.normalization = j.at("normalization").get<NormalizationSpec>();
  } catch (const nlohmann::json::exception& e) {
    r.fail(json_at, std::string("malformed config blob: ") + e.what());
  } catch (const Error& e) {
    r.fail(json_at, std::string("invalid config: ") + e.what());
  }
  for (auto* l : mf.network.layers()) {
    for (auto* arr : {&l->weights, &l->bias})
      for (auto& v : *arr) v = r.f32("layer weights");
  }
  const std::size_t payload_end = r.offset();
  const std::uint64_t stored = r.u64("checksum");
  if (r.remaining() != 0) r.fail(r.offset(), "trailing bytes after checksum");
  if (stored != binary::fnv1a64(bytes.first(payload_end))) r.fail(payload_end, "checksum mismatch");
  return mf;
}

inline void save_model(const Network<float>& net, const ModelMetadata& meta, const std::filesystem::path& path) {
  binary::write_file(path, encode_model(net, meta), "model");
}

inline ModelFile load_model(const std::filesystem::path& path) {
  const auto bytes = binary::read_file(path, "model");
  try {
    return decode_model(bytes);
  } catch (const Error& e) {
    throw Error(e.module(), path.string() + ": " + e.what());
  }
}

inline ModelConfig load_config_file(const std::filesystem::path& path) {
  const auto bytes = binary::read_file(path, "model");
  try {
    auto cfg = nlohmann::json::parse(bytes.begin(), bytes.end()).get<ModelConfig>();
    cfg.validate();
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw Error("model", path.string() + ": malformed config: " + e.what());
  }
}

}  // namespace svox
