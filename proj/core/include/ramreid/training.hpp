#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ramreid/config.hpp"
#include "ramreid/data.hpp"
#include "ramreid/model.hpp"
#include "ramreid/optim.hpp"

namespace ramreid {

enum class RegionLoss { kMean, kSum };

struct LossWeights {
  double lambda1 = 1.0;  // BN branch
  double lambda2 = 1.0;  // region branch
  double lambda3 = 1.0;  // attribute branch
  RegionLoss region = RegionLoss::kMean;

  void validate() const;
};

// Plain-number view of one batch's component losses; absent terms count as 0.
struct ComponentLosses {
  std::optional<double> conv;
  std::optional<double> bn;
  std::vector<double> regions;
  std::optional<double> attribute;
};

// l_conv + lambda1 * l_bn + lambda2 * l_re + lambda3 * l_att
double total_loss(const ComponentLosses& losses, const LossWeights& weights);
// Combined region term: mean (or sum) of the per-region losses.
double region_loss(const std::vector<double>& regions, RegionLoss mode);

// Differentiable counterpart; undefined tensors are absent terms.
struct LossTerms {
  Tensor conv;
  Tensor bn;
  std::vector<Tensor> regions;
  Tensor attribute;

  ComponentLosses values() const;
};

Tensor total_loss(const LossTerms& terms, const LossWeights& weights);

// Classification losses of every active head. Attribute losses only use rows
// with a label and are averaged over the attributes labeled in the batch.
LossTerms compute_losses(const ForwardOutput& out, const Batch& batch, const RamConfig& config);

struct EpochRecord {
  std::string stage;
  std::size_t stage_index = 0;
  int epoch = 0;  // counted from 0 within the stage
  // Means over the epoch's batches; a term missing from a batch adds 0.
  ComponentLosses losses;
  double total = 0.0;
  double learning_rate = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> records;

  void append(const TrainLog& other);
  // One JSON object per line.
  std::string to_jsonl() const;
  void save(const std::filesystem::path& path) const;
};

struct StageOptions {
  std::string name;
  std::size_t index = 0;
  int epochs = 30;
  std::size_t batch_size = 16;
  SgdState sgd;
  LossWeights weights;
  std::uint64_t shuffle_seed = 1;
};

// Trains `model` in place on the dataset's train split.
TrainLog train_stage(RamModel& model, const Dataset& data, const StageOptions& options);

struct TrainPlan {
  // Branch added by each stage; the first must be conv.
  std::vector<Branch> stages{Branch::kConv, Branch::kBn, Branch::kRegion, Branch::kAttribute};
  int epochs_per_stage = 30;
  std::size_t batch_size = 16;
  SgdState sgd;
  LossWeights weights;
  std::uint64_t seed = 1;

  void validate() const;
  static TrainPlan from_config(const KeyValueConfig& config);
};

// "baseline", "BN", "BN+R", "RAM" for the canonical branch sets, otherwise
// the active branch names joined by '+'.
std::string stage_checkpoint_name(const BranchSet& branches);

// RamConfig from the model.* keys with num_ids and attribute classes taken
// from the manifest; only the conv branch is active.
RamConfig model_config_for(const KeyValueConfig& config, const DatasetManifest& manifest);

struct StageCheckpoint {
  std::string name;
  RamModel model;
};

struct PlanResult {
  std::vector<StageCheckpoint> checkpoints;
  TrainLog log;

  const RamModel& final_model() const { return checkpoints.back().model; }
};

// Runs the stages in order, growing the model with add_branch in between.
// `on_stage` (optional) sees every finished stage.
PlanResult run_plan(const TrainPlan& plan, const RamConfig& base, const Dataset& data,
                    const std::function<void(const StageCheckpoint&)>& on_stage = {});

}  // namespace ramreid
