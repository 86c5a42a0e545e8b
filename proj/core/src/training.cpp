#include "ramreid/training.hpp"

#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>

#include "ramreid/error.hpp"
#include "ramreid/layers.hpp"
#include "ramreid/ops.hpp"
#include "ramreid/rng.hpp"

namespace ramreid {

namespace {

constexpr std::uint64_t kShuffleStream = 1000;

void check_weight(double w, const char* name) {
  if (!std::isfinite(w) || w < 0.0) {
    throw ValueError(std::string(name) + " must be finite and non-negative");
  }
}

RegionLoss parse_region_loss(const std::string& text) {
  if (text == "mean") return RegionLoss::kMean;
  if (text == "sum") return RegionLoss::kSum;
  throw ConfigError("train.region_loss must be mean or sum, got `" + text + "`");
}

// Mean accumulator where an absent term contributes 0.
struct EpochSums {
  double conv = 0.0, bn = 0.0, attribute = 0.0, total = 0.0;
  bool has_bn = false, has_attribute = false;
  std::vector<double> regions;
  std::size_t batches = 0;

  void add(const ComponentLosses& c, double total_value) {
    conv += c.conv.value_or(0.0);
    if (c.bn) {
      bn += *c.bn;
      has_bn = true;
    }
    if (regions.size() < c.regions.size()) regions.resize(c.regions.size(), 0.0);
    for (std::size_t i = 0; i < c.regions.size(); ++i) regions[i] += c.regions[i];
    if (c.attribute) {
      attribute += *c.attribute;
      has_attribute = true;
    }
    total += total_value;
    ++batches;
  }

  ComponentLosses means(bool attribute_active) const {
    const double n = static_cast<double>(batches);
    ComponentLosses m;
    m.conv = conv / n;
    if (has_bn) m.bn = bn / n;
    for (double r : regions) m.regions.push_back(r / n);
    if (has_attribute || attribute_active) m.attribute = attribute / n;
    return m;
  }
};

}  // namespace

void LossWeights::validate() const {
  check_weight(lambda1, "lambda1");
  check_weight(lambda2, "lambda2");
  check_weight(lambda3, "lambda3");
}

double region_loss(const std::vector<double>& regions, RegionLoss mode) {
  if (regions.empty()) throw ValueError("region loss needs at least one region");
  double s = 0.0;
  for (double r : regions) s += r;
  return mode == RegionLoss::kMean ? s * (1.0 / static_cast<double>(regions.size())) : s;
}

double total_loss(const ComponentLosses& losses, const LossWeights& weights) {
  if (!losses.conv) throw ValueError("total loss needs the conv branch loss");
  double total = *losses.conv;
  if (losses.bn) total += weights.lambda1 * *losses.bn;
  if (!losses.regions.empty()) total += weights.lambda2 * region_loss(losses.regions, weights.region);
  if (losses.attribute) total += weights.lambda3 * *losses.attribute;
  return total;
}

ComponentLosses LossTerms::values() const {
  ComponentLosses c;
  if (conv.defined()) c.conv = conv.item();
  if (bn.defined()) c.bn = bn.item();
  for (const Tensor& r : regions) c.regions.push_back(r.item());
  if (attribute.defined()) c.attribute = attribute.item();
  return c;
}

Tensor total_loss(const LossTerms& terms, const LossWeights& weights) {
  if (!terms.conv.defined()) throw ValueError("total loss needs the conv branch loss");
  Tensor total = terms.conv;
  if (terms.bn.defined()) total = add(total, scale(terms.bn, weights.lambda1));
  if (!terms.regions.empty()) {
    Tensor re = terms.regions[0];
    for (std::size_t i = 1; i < terms.regions.size(); ++i) re = add(re, terms.regions[i]);
    if (weights.region == RegionLoss::kMean) {
      re = scale(re, 1.0 / static_cast<double>(terms.regions.size()));
    }
    total = add(total, scale(re, weights.lambda2));
  }
  if (terms.attribute.defined()) total = add(total, scale(terms.attribute, weights.lambda3));
  return total;
}

LossTerms compute_losses(const ForwardOutput& out, const Batch& batch, const RamConfig& config) {
  for (int id : batch.ids) {
    if (id < 0) throw ValueError("batch contains a sample without a training id");
  }
  LossTerms terms;
  const BranchSet& active = config.branches;
  if (active.contains(Branch::kConv)) terms.conv = softmax_cross_entropy(out.conv_logits, batch.ids);
  if (active.contains(Branch::kBn)) terms.bn = softmax_cross_entropy(out.bn_logits, batch.ids);
  if (active.contains(Branch::kRegion)) {
    for (const Tensor& logits : out.region_logits) {
      terms.regions.push_back(softmax_cross_entropy(logits, batch.ids));
    }
  }
  if (active.contains(Branch::kAttribute)) {
    Tensor sum_losses;
    std::size_t labeled_attributes = 0;
    for (std::size_t a = 0; a < config.attributes.size(); ++a) {
      const std::string& name = config.attributes[a].name;
      auto it = batch.attributes.find(name);
      if (it == batch.attributes.end()) throw ValueError("batch has no `" + name + "` labels");
      std::vector<std::size_t> rows;
      std::vector<int> labels;
      for (std::size_t r = 0; r < it->second.size(); ++r) {
        if (it->second[r] >= 0) {
          rows.push_back(r);
          labels.push_back(it->second[r]);
        }
      }
      if (rows.empty()) continue;
      const Tensor& logits = out.attribute_logits[a];
      Tensor loss = rows.size() == logits.dim(0)
                        ? softmax_cross_entropy(logits, labels)
                        : softmax_cross_entropy(select_rows(logits, rows), labels);
      sum_losses = sum_losses.defined() ? add(sum_losses, loss) : loss;
      ++labeled_attributes;
    }
    if (labeled_attributes > 0) {
      terms.attribute = labeled_attributes == 1
                            ? sum_losses
                            : scale(sum_losses, 1.0 / static_cast<double>(labeled_attributes));
    }
  }
  return terms;
}

void TrainLog::append(const TrainLog& other) {
  records.insert(records.end(), other.records.begin(), other.records.end());
}

std::string TrainLog::to_jsonl() const {
  std::string out;
  for (const EpochRecord& r : records) {
    nlohmann::json losses = nlohmann::json::object();
    if (r.losses.conv) losses["conv"] = *r.losses.conv;
    if (r.losses.bn) losses["bn"] = *r.losses.bn;
    if (!r.losses.regions.empty()) losses["regions"] = r.losses.regions;
    if (r.losses.attribute) losses["attribute"] = *r.losses.attribute;
    nlohmann::json line = {{"stage", r.stage},       {"stage_index", r.stage_index},
                           {"epoch", r.epoch},       {"losses", losses},
                           {"total", r.total},       {"lr", r.learning_rate}};
    out += line.dump();
    out += '\n';
  }
  return out;
}

void TrainLog::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write training log " + path.string());
  out << to_jsonl();
  if (!out) throw IoError("failed writing training log " + path.string());
}

TrainLog train_stage(RamModel& model, const Dataset& data, const StageOptions& options) {
  const RamConfig& config = model.config();
  options.weights.validate();
  if (options.epochs < 0) throw ValueError("stage epochs must be non-negative");
  const DatasetManifest& manifest = data.manifest();
  if (manifest.num_train_ids() != config.num_ids) {
    throw ValueError("model has " + std::to_string(config.num_ids) + " id classes, dataset has " +
                     std::to_string(manifest.num_train_ids()) + " training ids");
  }
  const bool attribute_active = config.branches.contains(Branch::kAttribute);
  if (attribute_active) {
    for (const AttributeSpec& a : config.attributes) {
      bool any = false;
      for (std::size_t i : manifest.indices(Split::kTrain)) {
        any = any || manifest.attribute_label(manifest.samples[i], a.name).has_value();
      }
      if (!any) {
        throw ValueError("attribute branch is active but no training sample has a `" + a.name +
                         "` label");
      }
    }
  }
  const bool needs_pairs = config.branches.contains(Branch::kBn);

  Sgd sgd(options.sgd);
  const std::vector<NamedTensor> params = model.parameters();
  model.zero_grad();

  TrainLog log;
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    auto batches = make_batches(manifest, options.batch_size, options.shuffle_seed, epoch);
    // Batch statistics need two rows; fold a single leftover sample into the
    // previous batch.
    if (needs_pairs && batches.size() > 1 && batches.back().size() == 1) {
      batches[batches.size() - 2].push_back(batches.back()[0]);
      batches.pop_back();
    }
    EpochSums sums;
    for (const auto& indices : batches) {
      const Batch batch = data.batch(indices);
      const ForwardOutput out = model.forward(batch.images, Mode::kTrain);
      const LossTerms terms = compute_losses(out, batch, config);
      const Tensor loss = total_loss(terms, options.weights);
      loss.backward();
      sgd.step(params, epoch);
      sums.add(terms.values(), loss.item());
    }
    EpochRecord record;
    record.stage = options.name;
    record.stage_index = options.index;
    record.epoch = epoch;
    record.losses = sums.means(attribute_active);
    record.total = sums.total / static_cast<double>(sums.batches);
    record.learning_rate = learning_rate_at(options.sgd, epoch);
    log.records.push_back(std::move(record));
  }
  return log;
}

void TrainPlan::validate() const {
  if (stages.empty()) throw ConfigError("train.stages is empty");
  if (stages.front() != Branch::kConv) throw ConfigError("the first stage must add the conv branch");
  std::set<Branch> seen;
  for (Branch b : stages) {
    if (!seen.insert(b).second) {
      throw ConfigError("branch " + std::string(branch_name(b)) + " appears twice in train.stages");
    }
  }
  if (epochs_per_stage < 0) throw ConfigError("train.epochs_per_stage must be non-negative");
  if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
  sgd.validate();
  weights.validate();
}

TrainPlan TrainPlan::from_config(const KeyValueConfig& c) {
  TrainPlan plan;
  plan.stages.clear();
  for (const std::string& s : c.get_list("train.stages")) plan.stages.push_back(parse_branch(s));
  plan.epochs_per_stage = static_cast<int>(c.get_int("train.epochs_per_stage"));
  plan.batch_size = c.get_size("train.batch_size");
  plan.sgd.learning_rate = c.get_double("train.learning_rate");
  plan.sgd.decay_factor = c.get_double("train.lr_decay");
  plan.sgd.decay_epoch_period = static_cast<int>(c.get_int("train.lr_decay_epochs"));
  plan.sgd.momentum = c.get_double("train.momentum");
  plan.weights.lambda1 = c.get_double("train.lambda1");
  plan.weights.lambda2 = c.get_double("train.lambda2");
  plan.weights.lambda3 = c.get_double("train.lambda3");
  plan.weights.region = parse_region_loss(c.get_string("train.region_loss"));
  plan.seed = static_cast<std::uint64_t>(c.get_int("train.seed"));
  plan.validate();
  return plan;
}

std::string stage_checkpoint_name(const BranchSet& branches) {
  using B = Branch;
  if (branches == BranchSet{B::kConv}) return "baseline";
  if (branches == BranchSet{B::kConv, B::kBn}) return "BN";
  if (branches == BranchSet{B::kConv, B::kBn, B::kRegion}) return "BN+R";
  if (branches == BranchSet{B::kConv, B::kBn, B::kRegion, B::kAttribute}) return "RAM";
  std::string name;
  for (Branch b : branches.list()) {
    if (!name.empty()) name += '+';
    name += branch_name(b);
  }
  return name;
}

RamConfig model_config_for(const KeyValueConfig& config, const DatasetManifest& manifest) {
  RamConfig rc = RamConfig::from_config(config);
  rc.num_ids = manifest.num_train_ids();
  for (AttributeSpec& a : rc.attributes) a.classes = manifest.attribute_classes(a.name);
  rc.branches = BranchSet{Branch::kConv};
  return rc;
}

PlanResult run_plan(const TrainPlan& plan, const RamConfig& base, const Dataset& data,
                    const std::function<void(const StageCheckpoint&)>& on_stage) {
  plan.validate();
  PlanResult result;
  RamConfig initial = base;
  initial.branches = BranchSet{Branch::kConv};
  RamModel model = RamModel::create(initial, plan.seed);
  for (std::size_t s = 0; s < plan.stages.size(); ++s) {
    if (s > 0) model = model.add_branch(plan.stages[s], plan.seed);
    StageOptions opts;
    opts.name = stage_checkpoint_name(model.config().branches);
    opts.index = s;
    opts.epochs = plan.epochs_per_stage;
    opts.batch_size = plan.batch_size;
    opts.sgd = plan.sgd;
    opts.weights = plan.weights;
    opts.shuffle_seed = mix_seed(plan.seed, kShuffleStream + s);
    try {
      result.log.append(train_stage(model, data, opts));
    } catch (const Error& e) {
      throw_error(e.kind(), "stage " + opts.name + ": " + e.what());
    }
    result.checkpoints.push_back({opts.name, model.clone()});
    if (on_stage) on_stage(result.checkpoints.back());
  }
  return result;
}

}  // namespace ramreid
