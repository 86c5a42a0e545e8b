#include "ramreid/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

#include "ramreid/checkpoint.hpp"
#include "ramreid/error.hpp"
#include "ramreid/ops.hpp"
#include "ramreid/rng.hpp"

namespace ramreid {

namespace {

constexpr std::uint64_t kStemStream = 100;
constexpr std::uint64_t kBranchStreamBase = 200;

Tensor deep_copy(const Tensor& t) {
  if (!t.defined()) return t;
  return Tensor::from_data(t.shape(), std::vector<double>(t.data().begin(), t.data().end()),
                           t.requires_grad());
}

std::size_t parse_count(const std::string& text, std::string_view what) {
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return static_cast<std::size_t>(v);
  } catch (const std::logic_error&) {
    throw ConfigError("bad " + std::string(what) + " `" + text + "`");
  }
}

const char* region_alias(std::size_t i, std::size_t count) {
  static constexpr const char* kNames[] = {"f_rt", "f_rm", "f_rb"};
  return count == 3 ? kNames[i] : nullptr;
}

}  // namespace

std::string_view branch_name(Branch branch) {
  switch (branch) {
    case Branch::kConv: return "conv";
    case Branch::kBn: return "bn";
    case Branch::kRegion: return "region";
    case Branch::kAttribute: return "attribute";
  }
  return "unknown";
}

Branch parse_branch(std::string_view name) {
  for (Branch b : kAllBranches) {
    if (branch_name(b) == name) return b;
  }
  throw ConfigError("unknown branch `" + std::string(name) + "`");
}

BranchSet::BranchSet(std::initializer_list<Branch> branches) {
  for (Branch b : branches) insert(b);
}

std::vector<Branch> BranchSet::list() const {
  std::vector<Branch> out;
  for (Branch b : kAllBranches) {
    if (contains(b)) out.push_back(b);
  }
  return out;
}

std::string BranchSet::to_string() const {
  std::string out;
  for (Branch b : list()) {
    if (!out.empty()) out += ',';
    out += branch_name(b);
  }
  return out;
}

BranchSet BranchSet::parse(std::string_view text) {
  BranchSet set;
  for (const std::string& part : split(text, ',')) {
    if (!part.empty()) set.insert(parse_branch(part));
  }
  return set;
}

std::vector<StemLayerSpec> parse_stem(std::string_view text) {
  std::vector<StemLayerSpec> stem;
  for (const std::string& item : split(text, ',')) {
    const std::vector<std::string> f = split(item, ':');
    StemLayerSpec layer;
    if (f[0] == "relu" && f.size() == 1) {
      layer.kind = StemLayerSpec::Kind::kRelu;
    } else if (f[0] == "conv" && f.size() == 5) {
      layer.kind = StemLayerSpec::Kind::kConv;
      layer.out_channels = parse_count(f[1], "conv channels");
      layer.kernel = parse_count(f[2], "conv kernel");
      layer.stride = parse_count(f[3], "conv stride");
      layer.padding = parse_count(f[4], "conv padding");
    } else if (f[0] == "maxpool" && f.size() == 3) {
      layer.kind = StemLayerSpec::Kind::kMaxPool;
      layer.kernel = parse_count(f[1], "pool kernel");
      layer.stride = parse_count(f[2], "pool stride");
    } else {
      throw ConfigError("bad stem layer `" + item + "`");
    }
    if (layer.kind != StemLayerSpec::Kind::kRelu && (layer.kernel == 0 || layer.stride == 0)) {
      throw ConfigError("stem layer `" + item + "` needs positive kernel and stride");
    }
    if (layer.kind == StemLayerSpec::Kind::kConv && layer.out_channels == 0) {
      throw ConfigError("stem layer `" + item + "` needs positive channels");
    }
    stem.push_back(layer);
  }
  return stem;
}

std::string format_stem(const std::vector<StemLayerSpec>& stem) {
  std::string out;
  for (const StemLayerSpec& l : stem) {
    if (!out.empty()) out += ',';
    switch (l.kind) {
      case StemLayerSpec::Kind::kRelu: out += "relu"; break;
      case StemLayerSpec::Kind::kConv:
        out += "conv:" + std::to_string(l.out_channels) + ':' + std::to_string(l.kernel) + ':' +
               std::to_string(l.stride) + ':' + std::to_string(l.padding);
        break;
      case StemLayerSpec::Kind::kMaxPool:
        out += "maxpool:" + std::to_string(l.kernel) + ':' + std::to_string(l.stride);
        break;
    }
  }
  return out;
}

std::array<std::size_t, 3> RamConfig::map_dims() const {
  std::size_t c = input_c, h = input_h, w = input_w;
  for (std::size_t i = 0; i < stem.size(); ++i) {
    const StemLayerSpec& l = stem[i];
    try {
      if (l.kind == StemLayerSpec::Kind::kConv) {
        h = conv_output_size(h, l.kernel, l.stride, l.padding);
        w = conv_output_size(w, l.kernel, l.stride, l.padding);
        c = l.out_channels;
      } else if (l.kind == StemLayerSpec::Kind::kMaxPool) {
        h = conv_output_size(h, l.kernel, l.stride, 0);
        w = conv_output_size(w, l.kernel, l.stride, 0);
      }
    } catch (const ShapeError& e) {
      throw ShapeError("stem layer " + std::to_string(i) + ": " + e.what());
    }
  }
  return {c, h, w};
}

RegionSpec RamConfig::region_spec() const {
  const auto [c, h, w] = map_dims();
  RegionSpec spec;
  spec.count = region_count;
  spec.map_c = c;
  spec.map_h = h;
  spec.map_w = w;
  spec.region_h = region_h;
  spec.overlap_h = region_overlap;
  return spec;
}

void RamConfig::validate() const {
  if (input_c == 0 || input_h == 0 || input_w == 0) throw ConfigError("input dims must be positive");
  if (fc_dim == 0) throw ConfigError("fc_dim must be positive");
  if (num_ids < 2) throw ConfigError("num_ids must be at least 2");
  if (!branches.contains(Branch::kConv)) throw ConfigError("the conv branch is always required");
  if (branches.contains(Branch::kAttribute)) {
    if (attributes.empty()) throw ConfigError("attribute branch needs at least one attribute");
    for (const AttributeSpec& a : attributes) {
      if (a.classes < 1) throw ConfigError("attribute " + a.name + " needs at least one class");
    }
  }
  const auto [c, h, w] = map_dims();
  conv_output_size(h, pool_kernel, pool_stride, 0);
  conv_output_size(w, pool_kernel, pool_stride, 0);
  if (branches.contains(Branch::kRegion)) {
    region_spec().validate();
    conv_output_size(region_h, pool_kernel, pool_stride, 0);
  }
  (void)c;
}

KeyValueConfig RamConfig::to_config() const {
  KeyValueConfig c;
  c.set("model.input_c", std::to_string(input_c));
  c.set("model.input_h", std::to_string(input_h));
  c.set("model.input_w", std::to_string(input_w));
  c.set("model.stem", format_stem(stem));
  c.set("model.pool_kernel", std::to_string(pool_kernel));
  c.set("model.pool_stride", std::to_string(pool_stride));
  c.set("model.regions", std::to_string(region_count));
  c.set("model.region_h", std::to_string(region_h));
  c.set("model.region_overlap", std::to_string(region_overlap));
  c.set("model.fc_dim", std::to_string(fc_dim));
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", bn_momentum);
  c.set("model.bn_momentum", buf);
  std::snprintf(buf, sizeof buf, "%.17g", bn_epsilon);
  c.set("model.bn_epsilon", buf);
  c.set("model.normalize_features", normalize_features ? "true" : "false");
  std::string names, classes;
  for (const AttributeSpec& a : attributes) {
    if (!names.empty()) {
      names += ',';
      classes += ',';
    }
    names += a.name;
    classes += a.name + ':' + std::to_string(a.classes);
  }
  c.set("model.attributes", names);
  c.set("model.attribute_classes", classes);
  c.set("model.num_ids", std::to_string(num_ids));
  c.set("model.branches", branches.to_string());
  return c;
}

RamConfig RamConfig::from_config(const KeyValueConfig& c) {
  RamConfig r;
  r.input_c = c.get_size("model.input_c");
  r.input_h = c.get_size("model.input_h");
  r.input_w = c.get_size("model.input_w");
  r.stem = parse_stem(c.get_string("model.stem"));
  r.pool_kernel = c.get_size("model.pool_kernel");
  r.pool_stride = c.get_size("model.pool_stride");
  r.region_count = c.get_size("model.regions");
  r.region_h = c.get_size("model.region_h");
  r.region_overlap = c.get_size("model.region_overlap");
  r.fc_dim = c.get_size("model.fc_dim");
  r.bn_momentum = c.get_double("model.bn_momentum");
  r.bn_epsilon = c.get_double("model.bn_epsilon");
  r.normalize_features = c.get_bool("model.normalize_features");
  if (c.contains("model.attribute_classes")) {
    for (const std::string& item : c.get_list("model.attribute_classes")) {
      const auto parts = split(item, ':');
      if (parts.size() != 2) throw ConfigError("bad attribute class entry `" + item + "`");
      r.attributes.push_back({parts[0], parse_count(parts[1], "attribute class count")});
    }
  } else {
    for (const std::string& name : c.get_list("model.attributes")) r.attributes.push_back({name, 0});
  }
  if (c.contains("model.num_ids")) r.num_ids = c.get_size("model.num_ids");
  if (c.contains("model.branches")) r.branches = BranchSet::parse(c.get_string("model.branches"));
  return r;
}

std::size_t RamModel::pooled_features(std::size_t h, std::size_t w) const {
  const std::size_t c = config_.map_dims()[0];
  return c * conv_output_size(h, config_.pool_kernel, config_.pool_stride, 0) *
         conv_output_size(w, config_.pool_kernel, config_.pool_stride, 0);
}

RamModel::Head RamModel::make_head(std::size_t in_features, Rng& rng) const {
  Head head;
  head.fc1 = FcLayer::create(in_features, config_.fc_dim, rng);
  head.fc2 = FcLayer::create(config_.fc_dim, config_.fc_dim, rng);
  head.classifier = FcLayer::create(config_.fc_dim, config_.num_ids, rng);
  return head;
}

void RamModel::init_branch(Branch branch, std::uint64_t seed) {
  Rng rng(mix_seed(seed, kBranchStreamBase + static_cast<std::uint64_t>(branch)));
  const auto [c, h, w] = config_.map_dims();
  switch (branch) {
    case Branch::kConv:
      conv_head_ = make_head(pooled_features(h, w), rng);
      break;
    case Branch::kBn:
      bn_norm_ = BatchNormLayer::create(c, config_.bn_momentum, config_.bn_epsilon);
      bn_head_ = make_head(pooled_features(h, w), rng);
      break;
    case Branch::kRegion:
      region_heads_.clear();
      for (std::size_t i = 0; i < config_.region_count; ++i) {
        region_heads_.push_back(make_head(pooled_features(config_.region_h, w), rng));
      }
      break;
    case Branch::kAttribute: {
      AttributeHead head;
      head.fc = FcLayer::create(config_.fc_dim, config_.fc_dim, rng);
      for (const AttributeSpec& a : config_.attributes) {
        head.classifiers.push_back(FcLayer::create(config_.fc_dim, a.classes, rng));
      }
      attribute_head_ = std::move(head);
      break;
    }
  }
}

RamModel RamModel::create(RamConfig config, std::uint64_t seed) {
  config.validate();
  RamModel model;
  model.config_ = std::move(config);
  Rng rng(mix_seed(seed, kStemStream));
  std::size_t channels = model.config_.input_c;
  for (const StemLayerSpec& l : model.config_.stem) {
    if (l.kind != StemLayerSpec::Kind::kConv) continue;
    model.stem_convs_.push_back(
        ConvLayer::create(channels, l.out_channels, l.kernel, l.stride, l.padding, rng));
    channels = l.out_channels;
  }
  for (Branch b : model.config_.branches.list()) model.init_branch(b, seed);
  return model;
}

Tensor RamModel::stem_forward(const Tensor& x) const {
  if (x.rank() != 4 || x.dim(1) != config_.input_c || x.dim(2) != config_.input_h ||
      x.dim(3) != config_.input_w) {
    throw ShapeError("model input " + shape_to_string(x.shape()) + " does not match configured (N, " +
                     std::to_string(config_.input_c) + ", " + std::to_string(config_.input_h) +
                     ", " + std::to_string(config_.input_w) + ")");
  }
  Tensor h = x;
  std::size_t conv_index = 0;
  for (std::size_t i = 0; i < config_.stem.size(); ++i) {
    const StemLayerSpec& l = config_.stem[i];
    try {
      switch (l.kind) {
        case StemLayerSpec::Kind::kConv: h = stem_convs_[conv_index++].forward(h); break;
        case StemLayerSpec::Kind::kRelu: h = relu(h); break;
        case StemLayerSpec::Kind::kMaxPool: h = max_pool2d(h, l.kernel, l.stride); break;
      }
    } catch (const ShapeError& e) {
      throw ShapeError("stem layer " + std::to_string(i) + ": " + e.what());
    }
  }
  return h;
}

ForwardOutput RamModel::forward(const Tensor& x, Mode mode) {
  const bool training = mode == Mode::kTrain;
  const Tensor map = stem_forward(x);
  const std::size_t n = x.dim(0);

  auto flatten_pool = [&](const Tensor& t) {
    Tensor pooled = max_pool2d(t, config_.pool_kernel, config_.pool_stride);
    return reshape(pooled, {n, pooled.numel() / n});
  };
  auto run_head = [](const Head& head, const Tensor& in, Tensor& feature, Tensor& logits,
                     Tensor* hidden) {
    Tensor h1 = relu(head.fc1.forward(in));
    if (hidden) *hidden = h1;
    feature = relu(head.fc2.forward(h1));
    logits = head.classifier.forward(feature);
  };

  ForwardOutput out;
  Tensor conv_hidden;
  if (conv_head_) {
    Tensor feature;
    run_head(*conv_head_, flatten_pool(map), feature, out.conv_logits, &conv_hidden);
    out.features.conv = feature;
  }
  if (bn_head_) {
    Tensor normalized;
    try {
      normalized = bn_norm_->forward(map, training);
    } catch (const Error& e) {
      throw ValueError(std::string("bn.norm: ") + e.what());
    }
    Tensor feature;
    run_head(*bn_head_, flatten_pool(normalized), feature, out.bn_logits, nullptr);
    out.features.bn = feature;
  }
  if (!region_heads_.empty()) {
    const std::vector<Tensor> regions = split_regions(map, config_.region_spec());
    for (std::size_t i = 0; i < regions.size(); ++i) {
      Tensor feature, logits;
      run_head(region_heads_[i], flatten_pool(regions[i]), feature, logits, nullptr);
      out.features.regions.push_back(feature);
      out.region_logits.push_back(logits);
    }
  }
  if (attribute_head_) {
    Tensor feature = relu(attribute_head_->fc.forward(conv_hidden));
    out.features.attribute = feature;
    for (const FcLayer& cls : attribute_head_->classifiers) {
      out.attribute_logits.push_back(cls.forward(feature));
    }
  }
  return out;
}

std::vector<RamModel::TensorSlot> RamModel::slots() {
  std::vector<TensorSlot> refs;
  auto add_fc = [&refs](const std::string& prefix, FcLayer& fc) {
    refs.push_back({prefix + ".weight", &fc.weight, true});
    refs.push_back({prefix + ".bias", &fc.bias, true});
  };
  auto add_head = [&](const std::string& prefix, Head& head) {
    add_fc(prefix + ".fc1", head.fc1);
    add_fc(prefix + ".fc2", head.fc2);
    add_fc(prefix + ".classifier", head.classifier);
  };
  for (std::size_t i = 0; i < stem_convs_.size(); ++i) {
    const std::string prefix = "stem.conv" + std::to_string(i);
    refs.push_back({prefix + ".weight", &stem_convs_[i].weight, true});
    refs.push_back({prefix + ".bias", &stem_convs_[i].bias, true});
  }
  if (conv_head_) add_head("conv", *conv_head_);
  if (bn_norm_) {
    refs.push_back({"bn.norm.gamma", &bn_norm_->gamma, true});
    refs.push_back({"bn.norm.beta", &bn_norm_->beta, true});
    refs.push_back({"bn.norm.running_mean", &bn_norm_->running_mean, false});
    refs.push_back({"bn.norm.running_var", &bn_norm_->running_var, false});
  }
  if (bn_head_) add_head("bn", *bn_head_);
  for (std::size_t i = 0; i < region_heads_.size(); ++i) {
    add_head("region.r" + std::to_string(i), region_heads_[i]);
  }
  if (attribute_head_) {
    add_fc("attribute.fc", attribute_head_->fc);
    for (std::size_t i = 0; i < attribute_head_->classifiers.size(); ++i) {
      add_fc("attribute." + config_.attributes[i].name + ".classifier",
             attribute_head_->classifiers[i]);
    }
  }
  return refs;
}

std::vector<NamedTensor> RamModel::parameters() const {
  std::vector<NamedTensor> out;
  for (const TensorSlot& r : const_cast<RamModel*>(this)->slots()) {
    if (r.trainable) out.push_back({r.name, *r.tensor});
  }
  return out;
}

std::vector<NamedTensor> RamModel::buffers() const {
  std::vector<NamedTensor> out;
  for (const TensorSlot& r : const_cast<RamModel*>(this)->slots()) {
    if (!r.trainable) out.push_back({r.name, *r.tensor});
  }
  return out;
}

std::vector<NamedTensor> RamModel::state() const {
  std::vector<NamedTensor> out;
  for (const TensorSlot& r : const_cast<RamModel*>(this)->slots()) out.push_back({r.name, *r.tensor});
  return out;
}

std::size_t RamModel::parameter_count() const {
  std::size_t total = 0;
  for (const NamedTensor& p : parameters()) total += p.tensor.numel();
  return total;
}

RamModel RamModel::clone() const {
  RamModel copy = *this;
  for (const TensorSlot& r : copy.slots()) *r.tensor = deep_copy(*r.tensor);
  return copy;
}

RamModel RamModel::add_branch(Branch branch, std::uint64_t seed) const {
  if (config_.branches.contains(branch)) {
    throw StateError("branch " + std::string(branch_name(branch)) + " is already active");
  }
  if (branch == Branch::kAttribute && !config_.branches.contains(Branch::kConv)) {
    throw StateError("the attribute branch requires the conv branch");
  }
  RamModel next = clone();
  next.config_.branches.insert(branch);
  next.config_.validate();
  next.init_branch(branch, seed);
  return next;
}

void RamModel::zero_grad() {
  for (NamedTensor& p : parameters()) p.tensor.zero_grad();
}

void save_model(const RamModel& model, const std::filesystem::path& dir) {
  const std::vector<NamedTensor> tensors = model.state();
  save_tensor_dir(dir, tensors);
  model.config().to_config().save(dir / "config.txt");
}

RamModel load_model(const std::filesystem::path& dir) {
  const RamConfig config = RamConfig::from_config(KeyValueConfig::load(dir / "config.txt"));
  RamModel model = RamModel::create(config, 0);
  std::map<std::string, Tensor> stored;
  for (NamedTensor& t : load_tensor_dir(dir)) stored.emplace(t.name, std::move(t.tensor));
  std::vector<NamedTensor> state = model.state();
  if (stored.size() != state.size()) {
    throw ParseError("checkpoint " + dir.string() + " holds " + std::to_string(stored.size()) +
                     " tensors, model expects " + std::to_string(state.size()));
  }
  for (NamedTensor& t : state) {
    auto it = stored.find(t.name);
    if (it == stored.end()) throw ParseError("checkpoint " + dir.string() + " lacks tensor " + t.name);
    if (it->second.shape() != t.tensor.shape()) {
      throw ParseError("checkpoint tensor " + t.name + " has shape " +
                       shape_to_string(it->second.shape()) + ", expected " +
                       shape_to_string(t.tensor.shape()));
    }
    auto dst = t.tensor.mutable_data();
    auto src = it->second.data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
  return model;
}

FeatureSelection FeatureSelection::parse(std::string_view text, std::size_t region_count) {
  FeatureSelection sel;
  std::vector<std::pair<FeatureKey, std::string>> parts;
  for (const std::string& token : split(text, '+')) {
    using Kind = FeatureKey::Kind;
    if (token == "f_c") {
      parts.push_back({{Kind::kConv, 0}, token});
    } else if (token == "f_b") {
      parts.push_back({{Kind::kBn, 0}, token});
    } else if (token == "f_a") {
      parts.push_back({{Kind::kAttribute, 0}, token});
    } else if (token == "f_r") {
      for (std::size_t i = 0; i < region_count; ++i) parts.push_back({{Kind::kRegion, i}, token});
    } else {
      bool matched = false;
      for (std::size_t i = 0; i < region_count && !matched; ++i) {
        const char* alias = region_alias(i, region_count);
        if ((alias && token == alias) || token == "f_r" + std::to_string(i)) {
          parts.push_back({{Kind::kRegion, i}, token});
          matched = true;
        }
      }
      if (!matched) throw ConfigError("unknown feature `" + token + "` in selection `" + std::string(text) + "`");
    }
  }
  std::stable_sort(parts.begin(), parts.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i > 0 && parts[i].first == parts[i - 1].first) {
      throw ConfigError("feature `" + parts[i].second + "` selected twice in `" + std::string(text) + "`");
    }
    sel.keys_.push_back(parts[i].first);
    if (sel.parts_.empty() || sel.parts_.back() != parts[i].second) sel.parts_.push_back(parts[i].second);
  }
  for (const std::string& p : sel.parts_) {
    if (!sel.name_.empty()) sel.name_ += '+';
    sel.name_ += p;
  }
  return sel;
}

std::string FeatureSelection::label() const {
  if (parts_.size() == 1) return parts_[0];
  std::string out = "[";
  for (std::size_t i = 0; i < parts_.size(); ++i) {
    if (i) out += ';';
    out += parts_[i];
  }
  return out + "]";
}

Tensor concat_features(const BranchFeatures& features, const FeatureSelection& selection,
                       bool normalize) {
  std::vector<const Tensor*> blocks;
  for (const FeatureKey& key : selection.keys()) {
    const Tensor* block = nullptr;
    std::string missing;
    switch (key.kind) {
      case FeatureKey::Kind::kConv:
        block = features.conv ? &*features.conv : nullptr;
        missing = "f_c";
        break;
      case FeatureKey::Kind::kBn:
        block = features.bn ? &*features.bn : nullptr;
        missing = "f_b";
        break;
      case FeatureKey::Kind::kRegion:
        block = key.region < features.regions.size() ? &features.regions[key.region] : nullptr;
        missing = "region feature " + std::to_string(key.region);
        break;
      case FeatureKey::Kind::kAttribute:
        block = features.attribute ? &*features.attribute : nullptr;
        missing = "f_a";
        break;
    }
    if (!block) throw StateError("selection " + selection.label() + " needs " + missing +
                                 " but that branch is not active");
    blocks.push_back(block);
  }
  if (blocks.empty()) throw ValueError("empty feature selection");
  const std::size_t n = blocks[0]->dim(0);
  std::size_t total = 0;
  for (const Tensor* b : blocks) {
    if (b->rank() != 2 || b->dim(0) != n) throw ShapeError("feature blocks disagree on batch size");
    total += b->dim(1);
  }
  std::vector<double> out(n * total);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t offset = 0;
    for (const Tensor* b : blocks) {
      const std::size_t d = b->dim(1);
      const double* row = b->data().data() + i * d;
      double norm = 0.0;
      if (normalize) {
        for (std::size_t k = 0; k < d; ++k) norm += row[k] * row[k];
        norm = std::sqrt(norm);
      }
      const double inv = normalize && norm > 0.0 ? 1.0 / norm : 1.0;
      for (std::size_t k = 0; k < d; ++k) out[i * total + offset + k] = row[k] * inv;
      offset += d;
    }
  }
  return Tensor::from_data({n, total}, std::move(out));
}

}  // namespace ramreid
