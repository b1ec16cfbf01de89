#include "network.hpp"

#include <algorithm>
#include <cmath>

namespace snds {

using ad::Graph;
using ad::NodeId;
using ad::Parameter;
using ad::Shape;
using ad::Tensor;

BlockKind block_kind_from_string(const std::string& s) {
  if (s == "conv") return BlockKind::kConvBasic;
  if (s == "dense") return BlockKind::kDense;
  if (s == "scalar") return BlockKind::kScalarTest;
  throw ConfigError("network: unknown block kind '" + s + "' (expected conv, dense, or scalar)");
}

std::string to_string(BlockKind kind) {
  switch (kind) {
    case BlockKind::kConvBasic: return "conv";
    case BlockKind::kDense: return "dense";
    case BlockKind::kScalarTest: return "scalar";
  }
  return "?";
}

GrowingNetwork::GrowingNetwork(NetworkConfig config, uint64_t seed)
    : config_(std::move(config)), rng_(seed) {
  validate_config();
}

void GrowingNetwork::validate_config() const {
  if (config_.num_classes < 2) throw ConfigError("network: num_classes must be >= 2");
  switch (config_.kind) {
    case BlockKind::kConvBasic:
      if (config_.in_channels < 1 || config_.image_size < 3 || config_.base_channels < 1 || config_.head_pool < 1) {
        throw ConfigError("network: invalid conv settings");
      }
      for (size_t i = 0; i < config_.downsample_at.size(); ++i) {
        if (config_.downsample_at[i] < 2 || (i > 0 && config_.downsample_at[i] <= config_.downsample_at[i - 1])) {
          throw ConfigError("network: downsample_at must be increasing indices >= 2");
        }
      }
      break;
    case BlockKind::kDense:
      if (config_.in_dim < 1 || config_.width < 1) throw ConfigError("network: invalid dense settings");
      break;
    case BlockKind::kScalarTest:
      break;
  }
}

Parameter* GrowingNetwork::new_param(std::vector<std::unique_ptr<Parameter>>& owner, const std::string& id,
                                     Shape shape, double he_fan_in, double init) {
  Tensor t(std::move(shape));
  if (he_fan_in > 0.0) {
    const double limit = std::sqrt(6.0 / he_fan_in);
    for (int64_t i = 0; i < t.size(); ++i) t[i] = rng_.uniform(-limit, limit);
  } else if (init != 0.0) {
    t.fill(init);
  }
  owner.push_back(std::make_unique<Parameter>(id, std::move(t)));
  return owner.back().get();
}

GrowingNetwork::LayerShape GrowingNetwork::layer_shape(int layer) const {
  LayerShape s;
  if (config_.kind != BlockKind::kConvBasic) {
    const int width = config_.kind == BlockKind::kDense ? config_.width : 1;
    return {width, width, 1, false};
  }
  int channels = config_.base_channels;
  int spatial = config_.image_size;
  for (int k = 1; k < layer; ++k) {
    if (std::find(config_.downsample_at.begin(), config_.downsample_at.end(), k) != config_.downsample_at.end()) {
      channels *= 2;
      spatial = (spatial - 1) / 2 + 1;
    }
  }
  s.in_channels = channels;
  s.spatial = spatial;
  s.downsample =
      std::find(config_.downsample_at.begin(), config_.downsample_at.end(), layer) != config_.downsample_at.end();
  s.out_channels = s.downsample ? channels * 2 : channels;
  if (s.downsample) s.spatial = (s.spatial - 1) / 2 + 1;
  return s;
}

void GrowingNetwork::append_layer() {
  const int layer = depth() + 1;
  const std::string lp = "layer" + std::to_string(layer) + ".";
  const std::string hp = "head" + std::to_string(layer) + ".";
  Block block;
  Head head;

  switch (config_.kind) {
    case BlockKind::kConvBasic: {
      // Stem is created lazily with the first layer.
      if (layer == 1 && stem_params_.empty()) {
        new_param(stem_params_, "stem.conv.weight", {config_.base_channels, config_.in_channels, 3, 3},
                  config_.in_channels * 9.0);
        new_param(stem_params_, "stem.conv.bias", {config_.base_channels}, 0.0);
        new_param(stem_params_, "stem.norm.scale", {config_.base_channels}, 0.0, 1.0);
        new_param(stem_params_, "stem.norm.shift", {config_.base_channels}, 0.0);
      }
      block.shape = layer_shape(layer);
      const int ic = block.shape.in_channels, oc = block.shape.out_channels;
      if (block.shape.spatial < 1) {
        throw ConfigError("network: layer " + std::to_string(layer) + " would shrink spatial size below 1");
      }
      new_param(block.params, lp + "conv1.weight", {oc, ic, 3, 3}, ic * 9.0);
      new_param(block.params, lp + "conv1.bias", {oc}, 0.0);
      new_param(block.params, lp + "norm1.scale", {oc}, 0.0, 1.0);
      new_param(block.params, lp + "norm1.shift", {oc}, 0.0);
      new_param(block.params, lp + "conv2.weight", {oc, oc, 3, 3}, oc * 9.0);
      new_param(block.params, lp + "conv2.bias", {oc}, 0.0);
      // residual-branch scale starts at zero: a fresh block is a pass-through
      new_param(block.params, lp + "norm2.scale", {oc}, 0.0, 0.0);
      new_param(block.params, lp + "norm2.shift", {oc}, 0.0);
      if (block.shape.downsample) {
        new_param(block.params, lp + "shortcut.weight", {oc, ic, 3, 3}, ic * 9.0);
        new_param(block.params, lp + "shortcut.bias", {oc}, 0.0);
      }
      head.pool = std::min(config_.head_pool, block.shape.spatial);
      const int pooled = block.shape.spatial / head.pool;
      head.feature_dim = oc * pooled * pooled;
      new_param(head.params, hp + "fc.weight", {head.feature_dim, config_.num_classes},
                static_cast<double>(head.feature_dim));
      new_param(head.params, hp + "fc.bias", {config_.num_classes}, 0.0);
      break;
    }
    case BlockKind::kDense: {
      if (layer == 1 && stem_params_.empty() && config_.in_dim != config_.width) {
        new_param(stem_params_, "stem.lift.weight", {config_.in_dim, config_.width},
                  static_cast<double>(config_.in_dim));
        new_param(stem_params_, "stem.lift.bias", {config_.width}, 0.0);
      }
      block.shape = layer_shape(layer);
      const int w = config_.width;
      new_param(block.params, lp + "fc1.weight", {w, w}, static_cast<double>(w));
      new_param(block.params, lp + "fc1.bias", {w}, 0.0);
      new_param(block.params, lp + "norm1.scale", {w}, 0.0, 1.0);
      new_param(block.params, lp + "norm1.shift", {w}, 0.0);
      new_param(block.params, lp + "fc2.weight", {w, w}, static_cast<double>(w));
      new_param(block.params, lp + "fc2.bias", {w}, 0.0);
      new_param(block.params, lp + "norm2.scale", {w}, 0.0, 0.0);
      new_param(block.params, lp + "norm2.shift", {w}, 0.0);
      head.feature_dim = w;
      new_param(head.params, hp + "fc.weight", {w, config_.num_classes}, static_cast<double>(w));
      new_param(head.params, hp + "fc.bias", {config_.num_classes}, 0.0);
      break;
    }
    case BlockKind::kScalarTest: {
      block.shape = layer_shape(layer);
      new_param(block.params, lp + "w", {1}, 0.0);
      head.feature_dim = 1;  // parameter-free head: logits are (feature, 0)
      break;
    }
  }

  layers_.push_back(std::move(block));
  heads_.push_back(std::move(head));
}

void GrowingNetwork::grow_to(int target_depth) {
  if (target_depth < 1) throw DomainError("grow_to: target depth must be >= 1");
  while (depth() < target_depth) append_layer();
}

NodeId GrowingNetwork::norm(Graph& g, NodeId x, Parameter& gamma, Parameter& beta) const {
  if (config_.full_batch_norm) return g.batch_norm(x, g.leaf(gamma), g.leaf(beta));
  return g.scale_shift(x, g.leaf(gamma), g.leaf(beta));
}

NodeId GrowingNetwork::stem_forward(Graph& g, NodeId x) const {
  switch (config_.kind) {
    case BlockKind::kConvBasic: {
      NodeId h = g.conv2d(x, g.leaf(*stem_params_[0]), g.leaf(*stem_params_[1]), 1);
      return g.relu(norm(g, h, *stem_params_[2], *stem_params_[3]));
    }
    case BlockKind::kDense:
      if (stem_params_.empty()) return x;
      return g.affine(x, g.leaf(*stem_params_[0]), g.leaf(*stem_params_[1]));
    case BlockKind::kScalarTest:
      return x;
  }
  return x;
}

NodeId GrowingNetwork::block_forward(Graph& g, NodeId x, int layer) const {
  const Block& b = layers_[static_cast<size_t>(layer - 1)];
  auto& p = b.params;
  switch (config_.kind) {
    case BlockKind::kConvBasic: {
      const int stride = b.shape.downsample ? 2 : 1;
      NodeId h = g.conv2d(x, g.leaf(*p[0]), g.leaf(*p[1]), stride);
      h = g.relu(norm(g, h, *p[2], *p[3]));
      NodeId r = g.conv2d(h, g.leaf(*p[4]), g.leaf(*p[5]), 1);
      r = norm(g, r, *p[6], *p[7]);
      NodeId shortcut = b.shape.downsample ? g.conv2d(x, g.leaf(*p[8]), g.leaf(*p[9]), 2) : x;
      return g.relu(g.add(r, shortcut));
    }
    case BlockKind::kDense: {
      NodeId h = g.affine(x, g.leaf(*p[0]), g.leaf(*p[1]));
      h = g.relu(norm(g, h, *p[2], *p[3]));
      NodeId r = g.affine(h, g.leaf(*p[4]), g.leaf(*p[5]));
      r = norm(g, r, *p[6], *p[7]);
      return g.relu(g.add(r, x));
    }
    case BlockKind::kScalarTest:
      // y = x + w*x
      return g.add(x, g.scale_by(x, g.leaf(*p[0])));
  }
  return x;
}

NodeId GrowingNetwork::head_forward(Graph& g, NodeId features, int layer) const {
  const Head& h = heads_[static_cast<size_t>(layer - 1)];
  if (config_.kind == BlockKind::kScalarTest) {
    // identity head padded with a zero logit so cross-entropy is defined
    NodeId w = g.input(Tensor({1, 2}, {1.0, 0.0}));
    NodeId b = g.input(Tensor({2}));
    return g.affine(features, w, b);
  }
  return g.affine(features, g.leaf(*h.params[0]), g.leaf(*h.params[1]));
}

NodeId GrowingNetwork::features_at_depth(Graph& g, NodeId batch, int d) const {
  check_depth(d, "features_at_depth");
  NodeId h = stem_forward(g, batch);
  for (int k = 1; k <= d; ++k) h = block_forward(g, h, k);
  if (config_.kind == BlockKind::kConvBasic) {
    const Head& head = heads_[static_cast<size_t>(d - 1)];
    h = g.avg_pool(h, head.pool);
    const int n = g.value(h).dim(0);
    h = g.reshape(h, {n, head.feature_dim});
  }
  return h;
}

NodeId GrowingNetwork::forward_at_depth(Graph& g, NodeId batch, int d) const {
  return head_forward(g, features_at_depth(g, batch, d), d);
}

std::vector<NodeId> GrowingNetwork::forward_all_depths(Graph& g, NodeId batch, int d_max) const {
  check_depth(d_max, "forward_all_depths");
  std::vector<NodeId> logits;
  logits.reserve(static_cast<size_t>(d_max));
  NodeId h = stem_forward(g, batch);
  for (int k = 1; k <= d_max; ++k) {
    h = block_forward(g, h, k);
    NodeId feat = h;
    if (config_.kind == BlockKind::kConvBasic) {
      const Head& head = heads_[static_cast<size_t>(k - 1)];
      feat = g.avg_pool(h, head.pool);
      const int n = g.value(feat).dim(0);
      feat = g.reshape(feat, {n, head.feature_dim});
    }
    logits.push_back(head_forward(g, feat, k));
  }
  return logits;
}

Tensor GrowingNetwork::logits_at_depth(const Tensor& batch, int d) const {
  Graph g(Graph::Mode::kInference);
  return g.value(forward_at_depth(g, g.input(batch), d));
}

Tensor GrowingNetwork::predict_mixture(const Tensor& batch, const TruncatedPoissonPosterior& posterior) const {
  if (posterior.d_max() > depth()) {
    throw DomainError("predict_mixture: posterior support reaches depth " + std::to_string(posterior.d_max()) +
                      " but network has " + std::to_string(depth()) + " layers");
  }
  Graph g(Graph::Mode::kInference);
  const std::vector<NodeId> logits = forward_all_depths(g, g.input(batch), posterior.d_max());
  const std::vector<double> weights = posterior.pmf_vector();
  Tensor out({batch.dim(0), config_.num_classes});
  for (int d = posterior.d_min(); d <= posterior.d_max(); ++d) {
    const Tensor probs = ad::softmax(g.value(logits[static_cast<size_t>(d - 1)]));
    out.add_scaled(probs, weights[static_cast<size_t>(d - posterior.d_min())]);
  }
  return out;
}

Tensor GrowingNetwork::features_at_mode(const Tensor& batch, const TruncatedPoissonPosterior& posterior) const {
  const int d = posterior.mode_depth();
  if (d > depth()) {
    throw DomainError("features_at_mode: mode depth " + std::to_string(d) + " exceeds network depth " +
                      std::to_string(depth()));
  }
  Graph g(Graph::Mode::kInference);
  return g.value(features_at_depth(g, g.input(batch), d));
}

void GrowingNetwork::check_depth(int d, const char* op) const {
  if (d < 1 || d > depth()) {
    throw DomainError(std::string(op) + ": depth " + std::to_string(d) + " outside [1, " +
                      std::to_string(depth()) + "]");
  }
}

std::vector<Parameter*> GrowingNetwork::parameters() const {
  std::vector<Parameter*> out = stem_parameters();
  for (int k = 1; k <= depth(); ++k) {
    for (auto& p : layers_[static_cast<size_t>(k - 1)].params) out.push_back(p.get());
    for (auto& p : heads_[static_cast<size_t>(k - 1)].params) out.push_back(p.get());
  }
  return out;
}

std::vector<Parameter*> GrowingNetwork::parameters_for_depth(int d) const {
  check_depth(d, "parameters_for_depth");
  std::vector<Parameter*> out = stem_parameters();
  for (int k = 1; k <= d; ++k) {
    for (auto& p : layers_[static_cast<size_t>(k - 1)].params) out.push_back(p.get());
  }
  for (auto& p : heads_[static_cast<size_t>(d - 1)].params) out.push_back(p.get());
  return out;
}

std::vector<Parameter*> GrowingNetwork::stem_parameters() const {
  std::vector<Parameter*> out;
  for (auto& p : stem_params_) out.push_back(p.get());
  return out;
}

std::vector<Parameter*> GrowingNetwork::block_parameters(int layer) const {
  check_depth(layer, "block_parameters");
  std::vector<Parameter*> out;
  for (auto& p : layers_[static_cast<size_t>(layer - 1)].params) out.push_back(p.get());
  return out;
}

std::vector<Parameter*> GrowingNetwork::head_parameters(int layer) const {
  check_depth(layer, "head_parameters");
  std::vector<Parameter*> out;
  for (auto& p : heads_[static_cast<size_t>(layer - 1)].params) out.push_back(p.get());
  return out;
}

double GrowingNetwork::parameter_checksum(int max_layer) const {
  const int upto = max_layer < 0 ? depth() : std::min(max_layer, depth());
  double acc = 0.0;
  auto add_all = [&acc](const std::vector<std::unique_ptr<Parameter>>& params) {
    for (const auto& p : params) {
      for (int64_t i = 0; i < p->value().size(); ++i) acc += p->value()[i];
    }
  };
  add_all(stem_params_);
  for (int k = 1; k <= upto; ++k) {
    add_all(layers_[static_cast<size_t>(k - 1)].params);
    add_all(heads_[static_cast<size_t>(k - 1)].params);
  }
  return acc;
}

Parameter& GrowingNetwork::scalar_weight(int layer) {
  if (config_.kind != BlockKind::kScalarTest) throw DomainError("scalar_weight: not a scalar-test network");
  check_depth(layer, "scalar_weight");
  return *layers_[static_cast<size_t>(layer - 1)].params[0];
}

}  // namespace snds
