/* Copyright (c) 2026 The pgcc Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License. */

#pragma once

// Siamese point-wise encoder, projection head and swapped reconstruction
// decoders. Both branches run through the single EncoderParams instance held
// by ModelParams.

#include <string>
#include <vector>

#include "pgcc/embedding.hpp"
#include "pgcc/scene.hpp"

namespace pgcc {

enum class Activation { Relu, Identity };

struct EncoderParams {
  std::vector<Affine> layers;
  Activation activation = Activation::Relu;

  Eigen::Index in_dim() const { return layers.front().in_dim(); }
  Eigen::Index out_dim() const { return layers.back().out_dim(); }

  /// `depth` affine layers: in -> hidden -> ... -> hidden -> out.
  static EncoderParams init(Eigen::Index in, Eigen::Index hidden, Eigen::Index out, int depth, Rng& rng) {
    if (depth < 1) throw InputError("encoder depth must be at least 1");
    EncoderParams p;
    for (int l = 0; l < depth; ++l) {
      const Eigen::Index a = l == 0 ? in : hidden;
      const Eigen::Index b = l == depth - 1 ? out : hidden;
      p.layers.push_back(Affine::uniform_init(a, b, rng));
    }
    return p;
  }

  template <typename F>
  void for_each_tensor(F&& f) {
    for (auto& l : layers) l.for_each_tensor(f);
  }
};

/// Activations retained by encode() for the backward pass.
struct EncoderCache {
  std::vector<Mat> inputs;  // input of each layer (post-activation of the previous)
  std::vector<Mat> pre;     // pre-activation of each layer
};

/// Point-wise MLP. The nonlinearity follows every layer but the last.
inline Mat encode(const Mat& e, const EncoderParams& params, EncoderCache* cache = nullptr) {
  if (params.layers.empty()) throw Error("encoder has no layers");
  Mat h = e;
  if (cache) {
    cache->inputs.clear();
    cache->pre.clear();
  }
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    Mat pre = params.layers[l].forward(h);
    if (cache) {
      cache->inputs.push_back(h);
      cache->pre.push_back(pre);
    }
    if (l + 1 < params.layers.size() && params.activation == Activation::Relu) {
      h = pre.cwiseMax(0.0);
    } else {
      h = std::move(pre);
    }
  }
  return h;
}

/// ReLU subgradient at exactly zero is taken as 0.
inline Mat encode_backward(const EncoderCache& cache, const Mat& grad_out, const EncoderParams& params,
                           EncoderParams& grad) {
  Mat g = grad_out;
  for (std::size_t l = params.layers.size(); l-- > 0;) {
    if (l + 1 < params.layers.size() && params.activation == Activation::Relu) {
      g = (cache.pre[l].array() > 0.0).select(g, 0.0);
    }
    g = params.layers[l].backward(cache.inputs[l], g, grad.layers[l]);
  }
  return g;
}

struct ModelShape {
  int embed_width = 32;
  int hidden_width = 64;
  int depth = 3;
  int feature_width = 32;
  int projection_width = 16;
  int num_prototypes = 20;
};

struct ModelParams {
  EmbeddingParams embed;
  EncoderParams encoder;
  Affine projection;      // D_feat -> D_proj, followed by l2 normalisation
  Affine geo_decoder;     // colour features -> coordinates
  Affine color_decoder;   // geometry features -> colours
  Mat prototypes;         // D_proj x K, unit columns

  int num_prototypes() const { return static_cast<int>(prototypes.cols()); }

  static ModelParams init(const ModelShape& s, std::uint64_t seed) {
    if (s.embed_width < 1 || s.hidden_width < 1 || s.feature_width < 1 || s.projection_width < 1 ||
        s.num_prototypes < 1)
      throw InputError("model widths and prototype count must be positive");
    Rng rng(mix_seed(seed, 0x1417));
    ModelParams p;
    p.embed = EmbeddingParams::init(s.embed_width, rng);
    p.encoder = EncoderParams::init(s.embed_width, s.hidden_width, s.feature_width, s.depth, rng);
    p.projection = Affine::uniform_init(s.feature_width, s.projection_width, rng);
    p.geo_decoder = Affine::uniform_init(s.feature_width, 3, rng);
    p.color_decoder = Affine::uniform_init(s.feature_width, 3, rng);
    p.prototypes.resize(s.projection_width, s.num_prototypes);
    for (Eigen::Index i = 0; i < p.prototypes.size(); ++i) p.prototypes.data()[i] = gaussian(rng);
    p.normalize_prototypes();
    return p;
  }

  /// Same shapes, all zeros. Used as a gradient accumulator.
  ModelParams zeros_like() const {
    ModelParams g = *this;
    g.for_each_tensor([](Mat& m) { m.setZero(); });
    return g;
  }

  void normalize_prototypes() {
    for (Eigen::Index k = 0; k < prototypes.cols(); ++k) {
      const double n = prototypes.col(k).norm();
      if (n > 0.0) prototypes.col(k) /= n;
    }
  }

  /// Visits every tensor in a fixed order. The order is part of the
  /// checkpoint format.
  template <typename F>
  void for_each_tensor(F&& f) {
    embed.for_each_tensor(f);
    encoder.for_each_tensor(f);
    projection.for_each_tensor(f);
    geo_decoder.for_each_tensor(f);
    color_decoder.for_each_tensor(f);
    f(prototypes);
  }

  template <typename F>
  void for_each_tensor(F&& f) const {
    const_cast<ModelParams*>(this)->for_each_tensor([&](Mat& m) { f(static_cast<const Mat&>(m)); });
  }

  template <typename F>
  void for_each_named(F&& f) {
    auto affine = [&](const std::string& name, Affine& a) {
      f(name + ".weight", a.weight);
      f(name + ".bias", a.bias);
    };
    affine("embed.geo", embed.geo);
    affine("embed.color", embed.color);
    affine("embed.pos", embed.pos);
    for (std::size_t l = 0; l < encoder.layers.size(); ++l)
      affine("encoder." + std::to_string(l), encoder.layers[l]);
    affine("projection", projection);
    affine("geo_decoder", geo_decoder);
    affine("color_decoder", color_decoder);
    f(std::string("prototypes"), prototypes);
  }

  template <typename F>
  void for_each_named(F&& f) const {
    const_cast<ModelParams*>(this)->for_each_named(
        [&](const std::string& name, Mat& m) { f(name, static_cast<const Mat&>(m)); });
  }

  std::size_t num_scalars() const {
    std::size_t n = 0;
    for_each_tensor([&](const Mat& m) { n += static_cast<std::size_t>(m.size()); });
    return n;
  }

  /// Axpy over every tensor: this += scale * other.
  void add_scaled(const ModelParams& other, double scale) {
    std::vector<const Mat*> src;
    other.for_each_tensor([&](const Mat& m) { src.push_back(&m); });
    std::size_t i = 0;
    for_each_tensor([&](Mat& m) { m += scale * *src[i++]; });
  }
};

/// Projection head: affine map then row-wise l2 normalisation.
inline Mat project(const Mat& f, const Affine& head, Mat* pre_norm = nullptr) {
  Mat y = head.forward(f);
  Mat z = normalize_rows(y);
  if (pre_norm) *pre_norm = std::move(y);
  return z;
}

struct Reconstruction {
  Mat geo;    // predicted coordinates, from colour features
  Mat color;  // predicted colours, from geometry features
};

inline Reconstruction decode(const Mat& f_geo, const Mat& f_color, const ModelParams& p) {
  return {p.geo_decoder.forward(f_color), p.color_decoder.forward(f_geo)};
}

struct FeaturePair {
  Mat f_geo, f_color;
  Mat z_geo, z_color;
};

/// Everything forward_pair computes, retained for backward_pair.
struct ForwardPass {
  FeaturePair features;
  Reconstruction recon;
  Mat e_geo, e_color_in;      // encoder inputs (colour branch includes e_pos)
  EncoderCache enc_geo, enc_color;
  Mat y_geo, y_color;         // projection outputs before normalisation
};

inline ForwardPass forward_pair(const NormalizedCloud& cloud, const ModelParams& p) {
  if (cloud.geo.cols() != 3 || cloud.color.cols() != 3 || cloud.geo.rows() != cloud.color.rows())
    throw Error("forward_pair: expected matching N x 3 geometry and colour");
  ForwardPass fp;
  fp.e_geo = embed_geometry(cloud.geo, p.embed);
  fp.e_color_in = embed_color(cloud.color, p.embed) + embed_position(cloud.geo, p.embed);
  fp.features.f_geo = encode(fp.e_geo, p.encoder, &fp.enc_geo);
  fp.features.f_color = encode(fp.e_color_in, p.encoder, &fp.enc_color);
  fp.features.z_geo = project(fp.features.f_geo, p.projection, &fp.y_geo);
  fp.features.z_color = project(fp.features.f_color, p.projection, &fp.y_color);
  fp.recon = decode(fp.features.f_geo, fp.features.f_color, p);
  return fp;
}

/// Upstream gradients arriving at the outputs of forward_pair. Empty
/// matrices mean "no gradient".
struct PairGradients {
  Mat z_geo, z_color;
  Mat recon_geo, recon_color;
};

/// Back-propagates into every parameter except the prototypes (their
/// gradient comes directly from the clustering loss).
inline void backward_pair(const NormalizedCloud& cloud, const ModelParams& p, const ForwardPass& fp,
                          const PairGradients& g, ModelParams& grad) {
  const Eigen::Index n = cloud.geo.rows();
  Mat gf_geo = Mat::Zero(n, p.encoder.out_dim());
  Mat gf_color = Mat::Zero(n, p.encoder.out_dim());
  if (g.z_geo.size() > 0) {
    const Mat gy = normalize_rows_backward(fp.y_geo, fp.features.z_geo, g.z_geo);
    gf_geo += p.projection.backward(fp.features.f_geo, gy, grad.projection);
  }
  if (g.z_color.size() > 0) {
    const Mat gy = normalize_rows_backward(fp.y_color, fp.features.z_color, g.z_color);
    gf_color += p.projection.backward(fp.features.f_color, gy, grad.projection);
  }
  if (g.recon_color.size() > 0)
    gf_geo += p.color_decoder.backward(fp.features.f_geo, g.recon_color, grad.color_decoder);
  if (g.recon_geo.size() > 0)
    gf_color += p.geo_decoder.backward(fp.features.f_color, g.recon_geo, grad.geo_decoder);

  const Mat ge_geo = encode_backward(fp.enc_geo, gf_geo, p.encoder, grad.encoder);
  const Mat ge_color = encode_backward(fp.enc_color, gf_color, p.encoder, grad.encoder);
  embed_geometry_backward(cloud.geo, ge_geo, p.embed, grad.embed);
  embed_color_backward(cloud.color, ge_color, p.embed, grad.embed);
  embed_position_backward(cloud.geo, ge_color, p.embed, grad.embed);
}

}  // namespace pgcc
