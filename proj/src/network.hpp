#pragma once

#include <memory>
#include <vector>

#include "depth_posterior.hpp"
#include "graph.hpp"
#include "rng.hpp"

namespace snds {

enum class BlockKind { kConvBasic, kDense, kScalarTest };

BlockKind block_kind_from_string(const std::string& s);
std::string to_string(BlockKind kind);

struct NetworkConfig {
  BlockKind kind = BlockKind::kDense;
  int num_classes = 2;

  // conv-basic-block settings
  int in_channels = 1;
  int image_size = 28;
  int base_channels = 8;
  int head_pool = 3;                     // clamped to the layer's spatial size
  std::vector<int> downsample_at = {4, 9};  // halve spatial, double channels
  bool full_batch_norm = false;          // batch statistics instead of scale-shift

  // dense-block settings
  int in_dim = 4;
  int width = 4;
};

// A stack of residual blocks grown on demand, with one prediction head per
// depth. Growth appends freshly initialized blocks and never mutates existing
// parameter values; new blocks start near identity (residual-branch
// normalization scale zero) so a trained shallower network is preserved.
class GrowingNetwork {
 public:
  GrowingNetwork(NetworkConfig config, uint64_t seed);

  const NetworkConfig& config() const { return config_; }
  int depth() const { return static_cast<int>(layers_.size()); }

  // Ensures at least target_depth layers; no-op when already that deep.
  void grow_to(int target_depth);

  // Logits (N, num_classes) read from stem, layers 1..d, and head d only.
  ad::NodeId forward_at_depth(ad::Graph& g, ad::NodeId batch, int d) const;
  // Logits at every depth 1..d_max with the block trunk computed once.
  std::vector<ad::NodeId> forward_all_depths(ad::Graph& g, ad::NodeId batch, int d_max) const;
  // Pooled pre-classifier representation feeding head d.
  ad::NodeId features_at_depth(ad::Graph& g, ad::NodeId batch, int d) const;

  // Forward-only conveniences (fresh inference graph per call; pure).
  ad::Tensor logits_at_depth(const ad::Tensor& batch, int d) const;
  // Posterior-weighted mixture of per-depth softmax outputs; rows sum to 1.
  ad::Tensor predict_mixture(const ad::Tensor& batch, const TruncatedPoissonPosterior& posterior) const;
  ad::Tensor features_at_mode(const ad::Tensor& batch, const TruncatedPoissonPosterior& posterior) const;

  std::vector<ad::Parameter*> parameters() const;  // stem + every block + every head
  std::vector<ad::Parameter*> parameters_for_depth(int d) const;  // stem + blocks 1..d + head d
  std::vector<ad::Parameter*> stem_parameters() const;
  std::vector<ad::Parameter*> block_parameters(int layer) const;  // 1-based
  std::vector<ad::Parameter*> head_parameters(int layer) const;   // 1-based

  // Plain value sum over stem and the first max_layer blocks/heads
  // (all layers when max_layer < 0); used to verify growth isolation.
  double parameter_checksum(int max_layer = -1) const;

  // Scalar-test nets only: the single weight of a given layer.
  ad::Parameter& scalar_weight(int layer);

 private:
  struct LayerShape {
    int in_channels = 0;
    int out_channels = 0;
    int spatial = 0;  // output H (== W)
    bool downsample = false;
  };
  struct Block {
    LayerShape shape;
    std::vector<std::unique_ptr<ad::Parameter>> params;  // owned, pointer-stable
  };
  struct Head {
    int pool = 1;
    int feature_dim = 0;
    std::vector<std::unique_ptr<ad::Parameter>> params;
  };

  void validate_config() const;
  LayerShape layer_shape(int layer) const;  // 1-based
  void append_layer();
  ad::Parameter* new_param(std::vector<std::unique_ptr<ad::Parameter>>& owner, const std::string& id,
                           ad::Shape shape, double he_fan_in, double init = 0.0);
  ad::NodeId norm(ad::Graph& g, ad::NodeId x, ad::Parameter& gamma, ad::Parameter& beta) const;
  ad::NodeId stem_forward(ad::Graph& g, ad::NodeId x) const;
  ad::NodeId block_forward(ad::Graph& g, ad::NodeId x, int layer) const;
  ad::NodeId head_forward(ad::Graph& g, ad::NodeId features, int layer) const;
  void check_depth(int d, const char* op) const;

  NetworkConfig config_;
  Rng rng_;
  std::vector<std::unique_ptr<ad::Parameter>> stem_params_;
  std::vector<Block> layers_;
  std::vector<Head> heads_;
};

}  // namespace snds
