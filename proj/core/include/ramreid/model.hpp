#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ramreid/config.hpp"
#include "ramreid/layers.hpp"
#include "ramreid/optim.hpp"
#include "ramreid/region.hpp"
#include "ramreid/tensor.hpp"

namespace ramreid {

// The four heads grafted onto the shared stem, in the order they are added
// during staged training.
enum class Branch { kConv, kBn, kRegion, kAttribute };

inline constexpr std::array<Branch, 4> kAllBranches = {Branch::kConv, Branch::kBn, Branch::kRegion,
                                                       Branch::kAttribute};

std::string_view branch_name(Branch branch);
Branch parse_branch(std::string_view name);

class BranchSet {
 public:
  BranchSet() = default;
  BranchSet(std::initializer_list<Branch> branches);

  bool contains(Branch b) const { return bits_[static_cast<std::size_t>(b)]; }
  void insert(Branch b) { bits_[static_cast<std::size_t>(b)] = true; }
  std::vector<Branch> list() const;
  std::string to_string() const;
  static BranchSet parse(std::string_view text);
  bool operator==(const BranchSet&) const = default;

 private:
  std::array<bool, 4> bits_{};
};

struct StemLayerSpec {
  enum class Kind { kConv, kRelu, kMaxPool };
  Kind kind = Kind::kRelu;
  std::size_t out_channels = 0;
  std::size_t kernel = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;
};

// "conv:<out>:<kernel>:<stride>:<pad>", "relu", "maxpool:<kernel>:<stride>",
// comma separated.
std::vector<StemLayerSpec> parse_stem(std::string_view text);
std::string format_stem(const std::vector<StemLayerSpec>& stem);

struct AttributeSpec {
  std::string name;
  std::size_t classes = 0;
};

struct RamConfig {
  std::size_t input_c = 3;
  std::size_t input_h = 32;
  std::size_t input_w = 32;
  std::vector<StemLayerSpec> stem = parse_stem("conv:8:3:1:0,relu,maxpool:2:2,conv:8:3:1:0,relu");
  // Max pooling applied to M before the global heads and to every region.
  std::size_t pool_kernel = 3;
  std::size_t pool_stride = 2;
  std::size_t region_count = 3;
  std::size_t region_h = 7;
  std::size_t region_overlap = 4;
  std::size_t fc_dim = 64;
  double bn_momentum = 0.9;
  double bn_epsilon = 1e-5;
  bool normalize_features = true;
  std::size_t num_ids = 0;
  std::vector<AttributeSpec> attributes;
  BranchSet branches{Branch::kConv};

  // (C, H, W) of the stem output M.
  std::array<std::size_t, 3> map_dims() const;
  RegionSpec region_spec() const;
  void validate() const;

  // model.* keys, including the derived ones (num_ids, attribute classes,
  // active branches) a checkpoint needs.
  KeyValueConfig to_config() const;
  // Reads model.* keys. Derived keys are optional here; callers fill them in.
  static RamConfig from_config(const KeyValueConfig& config);
};

// Branch features for a batch, each (N, fc_dim). Present iff the branch is active.
struct BranchFeatures {
  std::optional<Tensor> conv;
  std::optional<Tensor> bn;
  std::vector<Tensor> regions;
  std::optional<Tensor> attribute;
};

struct ForwardOutput {
  BranchFeatures features;
  Tensor conv_logits;
  Tensor bn_logits;
  std::vector<Tensor> region_logits;
  std::vector<Tensor> attribute_logits;  // one per AttributeSpec
};

enum class Mode { kTrain, kEval };

class RamModel {
 public:
  static RamModel create(RamConfig config, std::uint64_t seed);

  const RamConfig& config() const { return config_; }

  // Train mode uses batch statistics in the BN branch and updates its
  // running buffers; eval mode is a pure function of (parameters, x).
  ForwardOutput forward(const Tensor& x, Mode mode);

  // Shared feature map M.
  Tensor stem_forward(const Tensor& x) const;

  // Trainable tensors in canonical order; names are "<group>.<layer>.<field>".
  std::vector<NamedTensor> parameters() const;
  // Non-trainable state (BN running statistics).
  std::vector<NamedTensor> buffers() const;
  std::vector<NamedTensor> state() const;
  std::size_t parameter_count() const;

  // New model with the extra branch freshly initialized from `seed`; every
  // existing tensor is copied bitwise.
  RamModel add_branch(Branch branch, std::uint64_t seed) const;
  RamModel clone() const;

  void zero_grad();

 private:
  struct Head {
    FcLayer fc1;
    FcLayer fc2;
    FcLayer classifier;
  };
  struct AttributeHead {
    FcLayer fc;
    std::vector<FcLayer> classifiers;
  };

  struct TensorSlot {
    std::string name;
    Tensor* tensor;
    bool trainable;
  };

  RamModel() = default;
  // Canonical enumeration of every tensor the model owns.
  std::vector<TensorSlot> slots();
  void init_branch(Branch branch, std::uint64_t seed);
  Head make_head(std::size_t in_features, Rng& rng) const;
  std::size_t pooled_features(std::size_t h, std::size_t w) const;

  RamConfig config_;
  std::vector<ConvLayer> stem_convs_;
  std::optional<Head> conv_head_;
  std::optional<BatchNormLayer> bn_norm_;
  std::optional<Head> bn_head_;
  std::vector<Head> region_heads_;
  std::optional<AttributeHead> attribute_head_;
};

// Directory layout: config.txt (model.* keys), manifest.txt, one RAMT file
// per tensor.
void save_model(const RamModel& model, const std::filesystem::path& dir);
RamModel load_model(const std::filesystem::path& dir);

// Feature naming: f_c, f_b, f_r (all bands), f_rt / f_rm / f_rb (k = 3) or
// f_r0.., f_a.
struct FeatureKey {
  enum class Kind { kConv, kBn, kRegion, kAttribute };
  Kind kind;
  std::size_t region = 0;
  auto operator<=>(const FeatureKey&) const = default;
};

// Parts joined by '+', e.g. "f_c+f_b+f_r". Keys are kept in canonical order
// f_c, f_b, f_r*, f_a.
class FeatureSelection {
 public:
  static FeatureSelection parse(std::string_view text, std::size_t region_count);
  const std::vector<FeatureKey>& keys() const { return keys_; }
  const std::string& name() const { return name_; }
  // Table label such as "[f_c;f_b;f_r]".
  std::string label() const;

 private:
  std::vector<FeatureKey> keys_;
  std::string name_;
  std::vector<std::string> parts_;
};

// Concatenates the selected features row-wise; each block is L2-normalized
// first when `normalize` is set. Returns an (N, D) tensor without history.
Tensor concat_features(const BranchFeatures& features, const FeatureSelection& selection,
                       bool normalize);

}  // namespace ramreid
