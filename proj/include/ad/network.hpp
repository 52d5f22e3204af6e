#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "ad/core.hpp"
#include "ad/diffusion.hpp"
#include "ad/nn.hpp"

namespace ad::net {

using nn::ConvCache;
using nn::ConvSpec;
using nn::NormCache;
using nn::ParamPack;

struct VNetConfig {
  int num_classes = 3;
  int feature_size = 8;
  int stages = 4;  // down-samplings; patch dims must be divisible by 2^stages
  int emb_dim = 64;

  Index width(int stage) const { return static_cast<Index>(feature_size) << stage; }
};

/// Multi-scale encoder outputs h_i, i in [0, stages]; level i has channel
/// width F*2^i and spatial dims divided by 2^i.
template <typename T>
struct FeaturePyramid {
  std::vector<Grid4<T>> levels;
};

enum class DecoderId { xi = 0, psi = 1, theta = 2 };

struct ConvRef {
  ConvSpec spec;
  int w = -1;
  int b = -1;
};

struct NormRef {
  int gamma = -1;
  int beta = -1;
  Index channels = 0;
};

struct StageRefs {
  ConvRef block;
  NormRef norm;
  int tproj_w = -1;  // (emb_dim, C) matrix, column-major
  int tproj_b = -1;
};

struct DownRefs {
  ConvRef conv;
  NormRef norm;
};

struct UpRefs {
  ConvRef up;
  NormRef up_norm;
  ConvRef merge;
  NormRef merge_norm;
};

/// The Diff-VNet parameter sets: one shared trunk fed by two stems (noisy
/// label + image vs image only) and three structurally identical decoders.
template <typename T>
struct VNet {
  VNetConfig cfg;

  ParamPack<T> stem_denoise;
  ParamPack<T> stem_plain;
  ParamPack<T> trunk;
  std::array<ParamPack<T>, 3> dec;

  ConvRef stem_denoise_conv;
  ConvRef stem_plain_conv;
  std::vector<StageRefs> stages;  // size cfg.stages + 1
  std::vector<DownRefs> downs;    // size cfg.stages
  std::vector<UpRefs> ups;        // size cfg.stages, deepest first
  ConvRef head;

  ParamPack<T>& decoder(DecoderId id) { return dec[static_cast<std::size_t>(id)]; }
  const ParamPack<T>& decoder(DecoderId id) const { return dec[static_cast<std::size_t>(id)]; }

  void zero_grad() {
    stem_denoise.zero_grad();
    stem_plain.zero_grad();
    trunk.zero_grad();
    for (auto& d : dec) d.zero_grad();
  }

  std::vector<ParamPack<T>*> packs() {
    return {&stem_denoise, &stem_plain, &trunk, &dec[0], &dec[1], &dec[2]};
  }
  static std::vector<std::string> pack_names() {
    return {"stem_denoise", "stem_plain", "trunk", "dec_xi", "dec_psi", "dec_theta"};
  }
};

namespace detail {

template <typename T>
ConvRef add_conv(ParamPack<T>& pack, const std::string& name, ConvSpec spec) {
  ConvRef ref;
  ref.spec = spec;
  ref.w = pack.add(name + ".w", spec.weight_count());
  if (spec.bias) ref.b = pack.add(name + ".b", spec.cout);
  return ref;
}

template <typename T>
NormRef add_norm(ParamPack<T>& pack, const std::string& name, Index channels) {
  NormRef ref;
  ref.channels = channels;
  ref.gamma = pack.add(name + ".gamma", channels);
  ref.beta = pack.add(name + ".beta", channels);
  return ref;
}

template <typename T>
void init_conv(ParamPack<T>& pack, const ConvRef& ref, Rng& rng) {
  const Index fan_in = ref.spec.kernel * ref.spec.kernel * ref.spec.kernel * ref.spec.cin;
  nn::he_init(pack.view(ref.w).data(), ref.spec.weight_count(), fan_in, rng);
}

template <typename T>
void init_norm(ParamPack<T>& pack, const NormRef& ref) {
  pack.view(ref.gamma).setOnes();
  pack.view(ref.beta).setZero();
}

}  // namespace detail

template <typename T>
VNet<T> make_vnet(const VNetConfig& cfg, Rng& rng) {
  VNet<T> net;
  net.cfg = cfg;
  const int k = cfg.num_classes;
  const Index f = cfg.width(0);

  net.stem_denoise_conv = detail::add_conv(
      net.stem_denoise, "stem", ConvSpec{k + 1, f, 3, 1, 1, true});
  net.stem_plain_conv = detail::add_conv(net.stem_plain, "stem", ConvSpec{1, f, 3, 1, 1, true});

  for (int s = 0; s <= cfg.stages; ++s) {
    const Index c = cfg.width(s);
    StageRefs st;
    st.block = detail::add_conv(net.trunk, "stage" + std::to_string(s) + ".block",
                                ConvSpec{c, c, 3, 1, 1, false});
    st.norm = detail::add_norm(net.trunk, "stage" + std::to_string(s) + ".norm", c);
    st.tproj_w = net.trunk.add("stage" + std::to_string(s) + ".tproj.w", cfg.emb_dim * c);
    st.tproj_b = net.trunk.add("stage" + std::to_string(s) + ".tproj.b", c);
    net.stages.push_back(st);
    if (s < cfg.stages) {
      DownRefs dn;
      dn.conv = detail::add_conv(net.trunk, "down" + std::to_string(s),
                                 ConvSpec{c, cfg.width(s + 1), 2, 2, 0, false});
      dn.norm = detail::add_norm(net.trunk, "down" + std::to_string(s) + ".norm", cfg.width(s + 1));
      net.downs.push_back(dn);
    }
  }

  // All three decoders share one layout; build refs against dec[0] and reuse.
  for (int which = 0; which < 3; ++which) {
    auto& pack = net.dec[static_cast<std::size_t>(which)];
    std::vector<UpRefs> ups;
    for (int s = cfg.stages; s >= 1; --s) {
      const Index c_in = cfg.width(s);
      const Index c_out = cfg.width(s - 1);
      UpRefs u;
      u.up = detail::add_conv(pack, "up" + std::to_string(s), ConvSpec{c_in, c_out, 3, 1, 1, false});
      u.up_norm = detail::add_norm(pack, "up" + std::to_string(s) + ".norm", c_out);
      u.merge = detail::add_conv(pack, "merge" + std::to_string(s),
                                 ConvSpec{2 * c_out, c_out, 3, 1, 1, false});
      u.merge_norm = detail::add_norm(pack, "merge" + std::to_string(s) + ".norm", c_out);
      ups.push_back(u);
    }
    const ConvRef head = detail::add_conv(pack, "head", ConvSpec{f, k, 1, 1, 0, true});
    if (which == 0) {
      net.ups = ups;
      net.head = head;
    }
  }

  for (auto* pack : net.packs()) pack->finish();

  detail::init_conv(net.stem_denoise, net.stem_denoise_conv, rng);
  detail::init_conv(net.stem_plain, net.stem_plain_conv, rng);
  for (const auto& st : net.stages) {
    detail::init_conv(net.trunk, st.block, rng);
    detail::init_norm(net.trunk, st.norm);
    auto tw = net.trunk.view(st.tproj_w);
    for (Index i = 0; i < tw.size(); ++i) tw[i] = static_cast<T>(0.02 * rng.normal());
  }
  for (const auto& dn : net.downs) {
    detail::init_conv(net.trunk, dn.conv, rng);
    detail::init_norm(net.trunk, dn.norm);
  }
  for (auto& pack : net.dec) {
    for (const auto& u : net.ups) {
      detail::init_conv(pack, u.up, rng);
      detail::init_norm(pack, u.up_norm);
      detail::init_conv(pack, u.merge, rng);
      detail::init_norm(pack, u.merge_norm);
    }
    detail::init_conv(pack, net.head, rng);
  }
  return net;
}

// ---------------------------------------------------------------------------
// Encoder.
// ---------------------------------------------------------------------------

template <typename T>
struct EncodeTrace {
  ConvCache<T> stem_cache;
  Grid4<T> stem_preact;
  std::vector<ConvCache<T>> block_cache;
  std::vector<NormCache<T>> block_norm_cache;
  std::vector<Grid4<T>> block_preact;
  std::vector<ConvCache<T>> down_cache;
  std::vector<NormCache<T>> down_norm_cache;
  std::vector<Grid4<T>> down_preact;
  bool denoise = false;
  ArrayX<T> emb;
};

template <typename T>
Grid4<T> volume_to_grid(const Volume<T>& v) {
  return Grid4<T>({1, v.shape().d, v.shape().h, v.shape().w}, v.grid().array());
}

namespace detail {

template <typename T>
FeaturePyramid<T> encode_impl(const VNet<T>& net, const Grid4<T>& input, const ConvRef& stem_ref,
                              const ParamPack<T>& stem_pack, const ArrayX<T>* emb,
                              EncodeTrace<T>* trace) {
  const auto& cfg = net.cfg;
  if (input.d() % (1 << cfg.stages) || input.h() % (1 << cfg.stages) ||
      input.w() % (1 << cfg.stages))
    throw std::invalid_argument("encode: spatial dims must be divisible by 2^stages");

  if (trace) {
    trace->block_cache.resize(static_cast<std::size_t>(cfg.stages) + 1);
    trace->block_norm_cache.resize(static_cast<std::size_t>(cfg.stages) + 1);
    trace->block_preact.resize(static_cast<std::size_t>(cfg.stages) + 1);
    trace->down_cache.resize(static_cast<std::size_t>(cfg.stages));
    trace->down_norm_cache.resize(static_cast<std::size_t>(cfg.stages));
    trace->down_preact.resize(static_cast<std::size_t>(cfg.stages));
    trace->denoise = emb != nullptr;
    if (emb) trace->emb = *emb;
  }

  Grid4<T> x = nn::conv3d_forward(input, stem_ref.spec, stem_pack.view(stem_ref.w).data(),
                                  stem_pack.view(stem_ref.b).data(),
                                  trace ? &trace->stem_cache : nullptr);
  x = nn::leaky_relu_forward(x, trace ? &trace->stem_preact : nullptr);

  FeaturePyramid<T> pyr;
  for (int s = 0; s <= cfg.stages; ++s) {
    const auto si = static_cast<std::size_t>(s);
    if (s > 0) {
      const auto& dn = net.downs[si - 1];
      x = nn::conv3d_forward(x, dn.conv.spec, net.trunk.view(dn.conv.w).data(),
                             static_cast<const T*>(nullptr),
                             trace ? &trace->down_cache[si - 1] : nullptr);
      x = nn::instance_norm_forward(x, net.trunk.view(dn.norm.gamma).data(),
                                    net.trunk.view(dn.norm.beta).data(),
                                    trace ? &trace->down_norm_cache[si - 1] : nullptr);
      x = nn::leaky_relu_forward(x, trace ? &trace->down_preact[si - 1] : nullptr);
    }
    const auto& st = net.stages[si];
    x = nn::conv3d_forward(x, st.block.spec, net.trunk.view(st.block.w).data(),
                           static_cast<const T*>(nullptr),
                           trace ? &trace->block_cache[si] : nullptr);
    x = nn::instance_norm_forward(x, net.trunk.view(st.norm.gamma).data(),
                                  net.trunk.view(st.norm.beta).data(),
                                  trace ? &trace->block_norm_cache[si] : nullptr);
    if (emb) {
      // Timestep conditioning: learned per-stage projection added per channel.
      Eigen::Map<const MatrixX<T>> tw(net.trunk.view(st.tproj_w).data(), cfg.emb_dim, x.c());
      auto tb = net.trunk.view(st.tproj_b);
      for (Index c = 0; c < x.c(); ++c)
        x.channel(c) += tw.col(c).dot(emb->matrix()) + tb[c];
    }
    x = nn::leaky_relu_forward(x, trace ? &trace->block_preact[si] : nullptr);
    pyr.levels.push_back(x);
  }
  return pyr;
}

}  // namespace detail

/// Denoising flow: the trunk sees concat([y_t, x]) through the K+1-channel
/// stem, with the sinusoidal embedding of t injected at every stage.
template <typename T>
FeaturePyramid<T> encode_denoising(const VNet<T>& net, const Grid4<T>& x, const Grid4<T>& y_t,
                                   int t, EncodeTrace<T>* trace = nullptr) {
  if (x.c() != 1) throw std::invalid_argument("encode_denoising: image must have one channel");
  if (y_t.c() != net.cfg.num_classes || !(y_t.shape().spatial() == x.shape().spatial()))
    throw std::invalid_argument("encode_denoising: noisy label shape mismatch");
  const auto emb_d = diff::timestep_embed(t, net.cfg.emb_dim);
  ArrayX<T> emb = emb_d.template cast<T>();
  const Grid4<T> input = concat_channels(y_t, x);
  return detail::encode_impl(net, input, net.stem_denoise_conv, net.stem_denoise, &emb, trace);
}

/// Difficulty-aware and unlabeled flows: image only, same trunk weights.
template <typename T>
FeaturePyramid<T> encode_plain(const VNet<T>& net, const Grid4<T>& x,
                               EncodeTrace<T>* trace = nullptr) {
  if (x.c() != 1) throw std::invalid_argument("encode_plain: image must have one channel");
  return detail::encode_impl<T>(net, x, net.stem_plain_conv, net.stem_plain, nullptr, trace);
}

/// Accumulate gradients for one encode pass; dpyr holds the loss gradient
/// w.r.t. every pyramid level. Stem gradients flow into the stem pack that
/// fed the pass.
template <typename T>
void encode_backward(VNet<T>& net, const EncodeTrace<T>& trace, const FeaturePyramid<T>& dpyr) {
  const auto& cfg = net.cfg;
  Grid4<T> carried;
  for (int s = cfg.stages; s >= 0; --s) {
    const auto si = static_cast<std::size_t>(s);
    Grid4<T> dx = dpyr.levels[si];
    if (carried.size() > 0) dx.array() += carried.array();

    dx = nn::leaky_relu_backward(dx, trace.block_preact[si]);
    const auto& st = net.stages[si];
    if (trace.denoise) {
      Eigen::Map<MatrixX<T>> dtw(net.trunk.grad(st.tproj_w).data(), cfg.emb_dim, dx.c());
      auto dtb = net.trunk.grad(st.tproj_b);
      for (Index c = 0; c < dx.c(); ++c) {
        const T sum = dx.channel(c).sum();
        dtw.col(c) += sum * trace.emb.matrix();
        dtb[c] += sum;
      }
    }
    dx = nn::instance_norm_backward(dx, trace.block_norm_cache[si],
                                    net.trunk.view(st.norm.gamma).data(),
                                    net.trunk.grad(st.norm.gamma).data(),
                                    net.trunk.grad(st.norm.beta).data());
    dx = nn::conv3d_backward(dx, st.block.spec, trace.block_cache[si],
                             net.trunk.view(st.block.w).data(),
                             net.trunk.grad(st.block.w).data(), static_cast<T*>(nullptr));

    if (s > 0) {
      const auto& dn = net.downs[si - 1];
      dx = nn::leaky_relu_backward(dx, trace.down_preact[si - 1]);
      dx = nn::instance_norm_backward(dx, trace.down_norm_cache[si - 1],
                                      net.trunk.view(dn.norm.gamma).data(),
                                      net.trunk.grad(dn.norm.gamma).data(),
                                      net.trunk.grad(dn.norm.beta).data());
      carried = nn::conv3d_backward(dx, dn.conv.spec, trace.down_cache[si - 1],
                                    net.trunk.view(dn.conv.w).data(),
                                    net.trunk.grad(dn.conv.w).data(), static_cast<T*>(nullptr));
    } else {
      auto& stem_pack = trace.denoise ? net.stem_denoise : net.stem_plain;
      const auto& stem_ref = trace.denoise ? net.stem_denoise_conv : net.stem_plain_conv;
      dx = nn::leaky_relu_backward(dx, trace.stem_preact);
      nn::conv3d_backward(dx, stem_ref.spec, trace.stem_cache, stem_pack.view(stem_ref.w).data(),
                          stem_pack.grad(stem_ref.w).data(), stem_pack.grad(stem_ref.b).data());
    }
  }
}

// ---------------------------------------------------------------------------
// Decoder.
// ---------------------------------------------------------------------------

template <typename T>
struct DecodeTrace {
  struct Level {
    ConvCache<T> up_cache;
    NormCache<T> up_norm_cache;
    Grid4<T> up_preact;
    ConvCache<T> merge_cache;
    NormCache<T> merge_norm_cache;
    Grid4<T> merge_preact;
  };
  std::vector<Level> levels;  // deepest first, matching net.ups
  ConvCache<T> head_cache;
};

template <typename T>
Grid4<T> decode(const VNet<T>& net, DecoderId id, const FeaturePyramid<T>& pyr,
                DecodeTrace<T>* trace = nullptr) {
  const auto& cfg = net.cfg;
  if (pyr.levels.size() != static_cast<std::size_t>(cfg.stages) + 1)
    throw std::invalid_argument("decode: pyramid level count mismatch");
  for (int s = 0; s <= cfg.stages; ++s)
    if (pyr.levels[static_cast<std::size_t>(s)].c() != cfg.width(s))
      throw std::invalid_argument("decode: pyramid width mismatch at level " + std::to_string(s));
  const auto& pack = net.decoder(id);
  if (trace) trace->levels.resize(net.ups.size());

  Grid4<T> x = pyr.levels.back();
  for (std::size_t i = 0; i < net.ups.size(); ++i) {
    const auto& u = net.ups[i];
    const int skip_level = cfg.stages - 1 - static_cast<int>(i);
    x = nn::upsample2_forward(x);
    x = nn::conv3d_forward(x, u.up.spec, pack.view(u.up.w).data(),
                           static_cast<const T*>(nullptr),
                           trace ? &trace->levels[i].up_cache : nullptr);
    x = nn::instance_norm_forward(x, pack.view(u.up_norm.gamma).data(),
                                  pack.view(u.up_norm.beta).data(),
                                  trace ? &trace->levels[i].up_norm_cache : nullptr);
    x = nn::leaky_relu_forward(x, trace ? &trace->levels[i].up_preact : nullptr);
    x = concat_channels(x, pyr.levels[static_cast<std::size_t>(skip_level)]);
    x = nn::conv3d_forward(x, u.merge.spec, pack.view(u.merge.w).data(),
                           static_cast<const T*>(nullptr),
                           trace ? &trace->levels[i].merge_cache : nullptr);
    x = nn::instance_norm_forward(x, pack.view(u.merge_norm.gamma).data(),
                                  pack.view(u.merge_norm.beta).data(),
                                  trace ? &trace->levels[i].merge_norm_cache : nullptr);
    x = nn::leaky_relu_forward(x, trace ? &trace->levels[i].merge_preact : nullptr);
  }
  return nn::conv3d_forward(x, net.head.spec, pack.view(net.head.w).data(),
                            pack.view(net.head.b).data(),
                            trace ? &trace->head_cache : nullptr);
}

/// Accumulate decoder gradients and return the gradient w.r.t. the pyramid.
template <typename T>
FeaturePyramid<T> decode_backward(VNet<T>& net, DecoderId id, const DecodeTrace<T>& trace,
                                  const Grid4<T>& dlogits) {
  const auto& cfg = net.cfg;
  auto& pack = net.decoder(id);
  FeaturePyramid<T> dpyr;
  for (int s = 0; s <= cfg.stages; ++s) {
    const Index c = cfg.width(s);
    const Index scale = Index(1) << s;
    const auto& head_in = trace.head_cache.in_shape;
    dpyr.levels.emplace_back(c, head_in.d / scale, head_in.h / scale, head_in.w / scale);
  }

  Grid4<T> dx = nn::conv3d_backward(dlogits, net.head.spec, trace.head_cache,
                                    pack.view(net.head.w).data(), pack.grad(net.head.w).data(),
                                    pack.grad(net.head.b).data());

  for (std::size_t i = net.ups.size(); i-- > 0;) {
    const auto& u = net.ups[i];
    const auto& lv = trace.levels[i];
    const int skip_level = cfg.stages - 1 - static_cast<int>(i);

    dx = nn::leaky_relu_backward(dx, lv.merge_preact);
    dx = nn::instance_norm_backward(dx, lv.merge_norm_cache, pack.view(u.merge_norm.gamma).data(),
                                    pack.grad(u.merge_norm.gamma).data(),
                                    pack.grad(u.merge_norm.beta).data());
    dx = nn::conv3d_backward(dx, u.merge.spec, lv.merge_cache, pack.view(u.merge.w).data(),
                             pack.grad(u.merge.w).data(), static_cast<T*>(nullptr));

    // Split the concat gradient: first half to the up path, second to the skip.
    const Index half = dx.c() / 2;
    Grid4<T> d_up(half, dx.d(), dx.h(), dx.w());
    d_up.array() = dx.array().head(d_up.size());
    auto& d_skip = dpyr.levels[static_cast<std::size_t>(skip_level)];
    d_skip.array() += dx.array().tail(d_skip.size());

    d_up = nn::leaky_relu_backward(d_up, lv.up_preact);
    d_up = nn::instance_norm_backward(d_up, lv.up_norm_cache, pack.view(u.up_norm.gamma).data(),
                                      pack.grad(u.up_norm.gamma).data(),
                                      pack.grad(u.up_norm.beta).data());
    d_up = nn::conv3d_backward(d_up, u.up.spec, lv.up_cache, pack.view(u.up.w).data(),
                               pack.grad(u.up.w).data(), static_cast<T*>(nullptr));
    dx = nn::upsample2_backward(d_up);
  }
  dpyr.levels.back().array() += dx.array();
  return dpyr;
}

/// theta <- w_ema * theta + (1 - w_ema) * (xi + psi) / 2, elementwise.
template <typename T>
void ema_distill(VNet<T>& net, double w_ema) {
  auto& theta = net.decoder(DecoderId::theta);
  const auto& xi = net.decoder(DecoderId::xi);
  const auto& psi = net.decoder(DecoderId::psi);
  if (!theta.layout_matches(xi) || !theta.layout_matches(psi))
    throw std::invalid_argument("ema_distill: decoder layouts are not compatible");
  const T w = static_cast<T>(w_ema);
  theta.w = w * theta.w + (T(1) - w) * (xi.w + psi.w) / T(2);
}

// ---------------------------------------------------------------------------
// Checkpoints: text manifest of named tensors plus a float32 payload.
// ---------------------------------------------------------------------------

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const VNet<T>& net,
                     const std::map<std::string, std::string>& config_echo = {}) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open checkpoint for write: " + path.string());
  os << "A&D-CKPTv1\n";
  os << "config " << config_echo.size() << '\n';
  for (const auto& [k, v] : config_echo) os << k << ' ' << v << '\n';
  const auto names = VNet<T>::pack_names();
  auto* mutable_net = const_cast<VNet<T>*>(&net);
  const auto packs = mutable_net->packs();
  os << "groups " << packs.size() << '\n';
  os << "arch " << net.cfg.num_classes << ' ' << net.cfg.feature_size << ' ' << net.cfg.stages
     << ' ' << net.cfg.emb_dim << '\n';
  for (std::size_t i = 0; i < packs.size(); ++i) {
    os << names[i] << ' ' << packs[i]->entries.size() << '\n';
    for (const auto& e : packs[i]->entries) os << e.name << ' ' << e.size << '\n';
  }
  for (const auto* pack : packs) {
    std::vector<float> buf(static_cast<std::size_t>(pack->w.size()));
    for (Index j = 0; j < pack->w.size(); ++j) buf[static_cast<std::size_t>(j)] = static_cast<float>(pack->w[j]);
    os.write(reinterpret_cast<const char*>(buf.data()),
             static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
}

template <typename T>
VNet<T> load_checkpoint(const std::filesystem::path& path,
                        std::map<std::string, std::string>* config_echo = nullptr) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path.string());
  std::string magic;
  std::getline(is, magic);
  if (magic != "A&D-CKPTv1") throw std::runtime_error("bad checkpoint header: " + path.string());
  std::string word;
  std::size_t n_config = 0;
  is >> word >> n_config;
  for (std::size_t i = 0; i < n_config; ++i) {
    std::string k, v;
    is >> k >> v;
    if (config_echo) (*config_echo)[k] = v;
  }
  std::size_t n_groups = 0;
  is >> word >> n_groups;
  VNetConfig cfg;
  is >> word >> cfg.num_classes >> cfg.feature_size >> cfg.stages >> cfg.emb_dim;
  Rng rng(0);
  VNet<T> net = make_vnet<T>(cfg, rng);

  const auto names = VNet<T>::pack_names();
  auto packs = net.packs();
  for (std::size_t i = 0; i < n_groups; ++i) {
    std::string group_name;
    std::size_t n_entries = 0;
    is >> group_name >> n_entries;
    if (i >= packs.size() || group_name != names[i] ||
        n_entries != packs[i]->entries.size())
      throw std::runtime_error("checkpoint group mismatch: " + group_name);
    for (std::size_t j = 0; j < n_entries; ++j) {
      std::string entry_name;
      Index size = 0;
      is >> entry_name >> size;
      if (entry_name != packs[i]->entries[j].name || size != packs[i]->entries[j].size)
        throw std::runtime_error("checkpoint entry mismatch: " + entry_name);
    }
  }
  is.ignore(1);  // trailing newline before the payload
  for (auto* pack : packs) {
    std::vector<float> buf(static_cast<std::size_t>(pack->w.size()));
    is.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!is) throw std::runtime_error("checkpoint payload truncated: " + path.string());
    for (Index j = 0; j < pack->w.size(); ++j) pack->w[j] = static_cast<T>(buf[static_cast<std::size_t>(j)]);
  }
  return net;
}

}  // namespace ad::net
