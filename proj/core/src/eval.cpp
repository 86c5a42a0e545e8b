#include "ramreid/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <numeric>
#include <sstream>

#include "ramreid/error.hpp"
#include "ramreid/rng.hpp"
#include "ramreid/serialize.hpp"

namespace ramreid {

namespace {

constexpr char kFeatureMagic[4] = {'R', 'A', 'M', 'F'};

std::filesystem::path sidecar_path(const std::filesystem::path& file) {
  std::filesystem::path p = file;
  p += ".csv";
  return p;
}

TrialMetrics metrics_for(const RankingResult& ranking, std::size_t k_max) {
  TrialMetrics m;
  for (const QueryRanking& q : ranking.queries) {
    if (q.has_match()) {
      ++m.queries;
    } else {
      ++m.dropped_queries;
    }
  }
  if (m.queries == 0) throw ValueError("no query has a matching gallery entry");
  m.map = mean_average_precision(ranking);
  m.cmc = cmc(ranking, k_max);
  return m;
}

}  // namespace

std::string protocol_kind_name(ProtocolKind kind) {
  return kind == ProtocolKind::kFixedSplit ? "fixed_split" : "random_gallery";
}

ProtocolKind parse_protocol_kind(std::string_view name) {
  if (name == "fixed_split") return ProtocolKind::kFixedSplit;
  if (name == "random_gallery") return ProtocolKind::kRandomGallery;
  throw ConfigError("unknown protocol `" + std::string(name) + "` (expected fixed_split or random_gallery)");
}

std::string distance_name(Distance d) { return d == Distance::kEuclidean ? "euclidean" : "cosine"; }

Distance parse_distance(std::string_view name) {
  if (name == "euclidean") return Distance::kEuclidean;
  if (name == "cosine") return Distance::kCosine;
  throw ConfigError("unknown distance `" + std::string(name) + "` (expected euclidean or cosine)");
}

void ProtocolSpec::validate() const {
  if (kind == ProtocolKind::kRandomGallery && trials < 1) {
    throw ConfigError("random_gallery needs at least one trial");
  }
  if (k_max < 1) throw ConfigError("k_max must be at least 1");
  if (subset_ids == 1) throw ConfigError("a random_gallery subset needs at least two ids");
}

ProtocolSpec ProtocolSpec::from_config(const KeyValueConfig& c) {
  ProtocolSpec p;
  p.kind = parse_protocol_kind(c.get_string("eval.protocol"));
  p.trials = c.get_size("eval.trials");
  p.seed = static_cast<std::uint64_t>(c.get_int("eval.seed"));
  p.exclude_same_camera = c.get_bool("eval.exclude_same_camera");
  p.distance = parse_distance(c.get_string("eval.distance"));
  p.k_max = c.get_size("eval.k_max");
  p.subset_ids = c.get_size("eval.subset_ids");
  p.validate();
  return p;
}

void FeatureTable::validate() const {
  if (values.size() != rows.size() * dim) {
    throw ShapeError("feature table holds " + std::to_string(values.size()) + " values for " +
                     std::to_string(rows.size()) + " rows of dimension " + std::to_string(dim));
  }
  for (double v : values) {
    if (!std::isfinite(v)) throw ValueError("feature table contains a non-finite value");
  }
}

FeatureTable FeatureTable::subset(std::span<const std::size_t> indices) const {
  FeatureTable out;
  out.dim = dim;
  for (std::size_t i : indices) {
    if (i >= rows.size()) throw ValueError("feature row index out of range");
    out.rows.push_back(rows[i]);
    auto r = row(i);
    out.values.insert(out.values.end(), r.begin(), r.end());
  }
  return out;
}

void save_feature_table(const FeatureTable& table, const std::filesystem::path& file) {
  table.validate();
  {
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write feature table " + file.string());
    out.write(kFeatureMagic, 4);
    write_u64_le(out, table.rows.size());
    write_u64_le(out, table.dim);
    write_f64_le(out, table.values);
    if (!out) throw IoError("failed writing feature table " + file.string());
  }
  std::ofstream csv(sidecar_path(file), std::ios::trunc);
  if (!csv) throw IoError("cannot write " + sidecar_path(file).string());
  csv << "row,path,id,camera,split\n";
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const FeatureRow& r = table.rows[i];
    csv << i << ',' << r.image_path << ',' << r.vehicle_id << ','
        << (r.camera_id ? std::to_string(*r.camera_id) : std::string()) << ','
        << split_name(r.split) << '\n';
  }
}

FeatureTable load_feature_table(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open feature table " + file.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || !std::equal(magic, magic + 4, kFeatureMagic)) {
    throw ParseError(file.string() + " is not a feature table");
  }
  FeatureTable table;
  const std::uint64_t count = read_u64_le(in);
  table.dim = read_u64_le(in);
  if (!in) throw ParseError(file.string() + ": truncated header");
  if (table.dim == 0 || count > (1ull << 32) || table.dim > (1ull << 24)) {
    throw ParseError(file.string() + ": implausible table size");
  }
  table.values.resize(count * table.dim);
  read_f64_le(in, table.values);
  if (!in) throw ParseError(file.string() + ": truncated payload");

  std::ifstream csv(sidecar_path(file));
  if (!csv) throw IoError("cannot open " + sidecar_path(file).string());
  std::string line;
  std::getline(csv, line);
  std::size_t line_no = 1;
  while (std::getline(csv, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split(line, ',');
    const std::string where = sidecar_path(file).string() + ":" + std::to_string(line_no);
    if (fields.size() != 5) throw ParseError(where + ": expected 5 fields");
    FeatureRow row;
    row.image_path = fields[1];
    try {
      row.vehicle_id = std::stoi(fields[2]);
      if (!fields[3].empty()) row.camera_id = std::stoi(fields[3]);
      row.split = parse_split(fields[4]);
    } catch (const std::logic_error&) {
      throw ParseError(where + ": malformed row");
    } catch (const ParseError& e) {
      throw ParseError(where + ": " + e.what());
    }
    table.rows.push_back(std::move(row));
  }
  if (table.rows.size() != count) {
    throw ParseError(file.string() + ": sidecar lists " + std::to_string(table.rows.size()) +
                     " rows, table holds " + std::to_string(count));
  }
  table.validate();
  return table;
}

void check_selection(const RamConfig& config, const FeatureSelection& selection) {
  for (const FeatureKey& key : selection.keys()) {
    Branch needed = Branch::kConv;
    const char* name = "f_c";
    switch (key.kind) {
      case FeatureKey::Kind::kConv: break;
      case FeatureKey::Kind::kBn: needed = Branch::kBn; name = "f_b"; break;
      case FeatureKey::Kind::kRegion: needed = Branch::kRegion; name = "f_r"; break;
      case FeatureKey::Kind::kAttribute: needed = Branch::kAttribute; name = "f_a"; break;
    }
    if (!config.branches.contains(needed)) {
      throw ValueError("feature " + std::string(name) + " requested by selection " +
                       selection.label() + " needs the " + std::string(branch_name(needed)) +
                       " branch, but the model only has " + config.branches.to_string());
    }
  }
}

FeatureTable extract_features(RamModel& model, const Dataset& data,
                              std::span<const std::size_t> samples,
                              const FeatureSelection& selection, std::size_t batch_size) {
  check_selection(model.config(), selection);
  if (samples.empty()) throw ValueError("no samples to extract features from");
  if (batch_size == 0) throw ValueError("batch size must be positive");
  NoGradGuard no_grad;
  FeatureTable table;
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const auto chunk = samples.subspan(start, std::min(batch_size, samples.size() - start));
    const ForwardOutput out = model.forward(data.images(chunk), Mode::kEval);
    const Tensor feats = concat_features(out.features, selection, model.config().normalize_features);
    table.dim = feats.dim(1);
    auto v = feats.data();
    table.values.insert(table.values.end(), v.begin(), v.end());
    for (std::size_t s : chunk) {
      const Sample& sample = data.manifest().samples[s];
      table.rows.push_back({sample.image_path, sample.vehicle_id, sample.camera_id, sample.split});
    }
  }
  table.validate();
  return table;
}

bool QueryRanking::has_match() const {
  return std::find(matches.begin(), matches.end(), 1) != matches.end();
}

double distance(std::span<const double> a, std::span<const double> b, Distance d) {
  if (a.size() != b.size()) throw ShapeError("distance between vectors of different length");
  if (d == Distance::kEuclidean) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double diff = a[i] - b[i];
      s += diff * diff;
    }
    return std::sqrt(s);
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 1.0;
  return 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
}

RankingResult rank(const FeatureTable& queries, const FeatureTable& gallery, Distance d,
                   bool exclude_same_camera) {
  if (queries.dim != gallery.dim) {
    throw ShapeError("query features have dimension " + std::to_string(queries.dim) +
                     ", gallery features " + std::to_string(gallery.dim));
  }
  RankingResult result;
  std::vector<std::pair<double, std::size_t>> scored;
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const FeatureRow& qrow = queries.rows[q];
    scored.clear();
    for (std::size_t g = 0; g < gallery.size(); ++g) {
      const FeatureRow& grow = gallery.rows[g];
      if (exclude_same_camera && qrow.camera_id && grow.camera_id &&
          *qrow.camera_id == *grow.camera_id && qrow.vehicle_id == grow.vehicle_id) {
        continue;
      }
      scored.emplace_back(distance(queries.row(q), gallery.row(g), d), g);
    }
    if (scored.empty()) {
      throw ValueError("gallery is empty for query " + std::to_string(q) + " (" + qrow.image_path + ")");
    }
    // Pairs compare by distance, then by index.
    std::sort(scored.begin(), scored.end());
    QueryRanking qr;
    for (const auto& [dist, g] : scored) {
      qr.gallery.push_back(g);
      qr.matches.push_back(gallery.rows[g].vehicle_id == qrow.vehicle_id ? 1 : 0);
    }
    result.queries.push_back(std::move(qr));
  }
  return result;
}

double average_precision(std::span<const std::uint8_t> flags) {
  std::size_t hits = 0;
  double sum = 0.0;
  for (std::size_t i = 0; i < flags.size(); ++i) {
    if (flags[i]) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(i + 1);
    }
  }
  if (hits == 0) throw ValueError("average precision is undefined without a positive");
  return sum / static_cast<double>(hits);
}

double mean_average_precision(const RankingResult& result) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const QueryRanking& q : result.queries) {
    if (!q.has_match()) continue;
    sum += average_precision(q.matches);
    ++n;
  }
  if (n == 0) throw ValueError("no query has a matching gallery entry");
  return sum / static_cast<double>(n);
}

std::vector<double> cmc(const RankingResult& result, std::size_t k_max) {
  if (k_max < 1) throw ValueError("k_max must be at least 1");
  std::vector<std::size_t> first_hit_counts(k_max, 0);
  std::size_t n = 0;
  for (const QueryRanking& q : result.queries) {
    auto it = std::find(q.matches.begin(), q.matches.end(), 1);
    if (it == q.matches.end()) continue;
    ++n;
    const auto pos = static_cast<std::size_t>(it - q.matches.begin());
    if (pos < k_max) ++first_hit_counts[pos];
  }
  if (n == 0) throw ValueError("no query has a matching gallery entry");
  std::vector<double> out(k_max);
  std::size_t cumulative = 0;
  for (std::size_t k = 0; k < k_max; ++k) {
    cumulative += first_hit_counts[k];
    out[k] = static_cast<double>(cumulative) / static_cast<double>(n);
  }
  return out;
}

std::string MetricsReport::to_json() const {
  nlohmann::json trial_list = nlohmann::json::array();
  for (const TrialMetrics& t : trials) {
    trial_list.push_back({{"map", t.map},
                          {"cmc", t.cmc},
                          {"queries", t.queries},
                          {"dropped_queries", t.dropped_queries}});
  }
  nlohmann::json j = {
      {"selection", selection},
      {"map", map},
      {"cmc", cmc},
      {"top1", cmc.empty() ? 0.0 : cmc[0]},
      {"top5", cmc.size() >= 5 ? cmc[4] : (cmc.empty() ? 0.0 : cmc.back())},
      {"protocol",
       {{"kind", protocol_kind_name(protocol.kind)},
        {"trials", protocol.trials},
        {"exclude_same_camera", protocol.exclude_same_camera},
        {"distance", distance_name(protocol.distance)},
        {"k_max", protocol.k_max},
        {"subset_ids", protocol.subset_ids}}},
      {"seed", protocol.seed},
      {"trials", trial_list},
  };
  return j.dump(2) + "\n";
}

MetricsReport evaluate_protocol(const FeatureTable& table, const ProtocolSpec& spec) {
  spec.validate();
  table.validate();
  MetricsReport report;
  report.protocol = spec;

  if (spec.kind == ProtocolKind::kFixedSplit) {
    std::vector<std::size_t> q, g;
    for (std::size_t i = 0; i < table.size(); ++i) {
      if (table.rows[i].split == Split::kQuery) q.push_back(i);
      if (table.rows[i].split == Split::kGallery) g.push_back(i);
    }
    if (q.empty() || g.empty()) throw ValueError("fixed_split needs query and gallery rows");
    const RankingResult ranking =
        rank(table.subset(q), table.subset(g), spec.distance, spec.exclude_same_camera);
    report.trials.push_back(metrics_for(ranking, spec.k_max));
  } else {
    std::map<int, std::vector<std::size_t>> by_id;
    for (std::size_t i = 0; i < table.size(); ++i) by_id[table.rows[i].vehicle_id].push_back(i);
    for (const auto& [id, rows] : by_id) {
      if (rows.size() < 2) {
        throw ValueError("random_gallery needs two or more images per id; id " + std::to_string(id) +
                         " has one");
      }
    }
    if (spec.subset_ids > by_id.size()) {
      throw ValueError("subset of " + std::to_string(spec.subset_ids) + " ids requested from " +
                       std::to_string(by_id.size()));
    }
    std::vector<int> ids;
    for (const auto& entry : by_id) ids.push_back(entry.first);
    for (std::size_t t = 0; t < spec.trials; ++t) {
      Rng rng(mix_seed(spec.seed, t));
      std::vector<int> chosen = ids;
      if (spec.subset_ids > 0) {
        const auto perm = rng.permutation(ids.size());
        chosen.clear();
        for (std::size_t i = 0; i < spec.subset_ids; ++i) chosen.push_back(ids[perm[i]]);
        std::sort(chosen.begin(), chosen.end());
      }
      std::vector<std::size_t> q, g;
      for (int id : chosen) {
        const auto& rows = by_id[id];
        const std::size_t pick = rng.index(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) (i == pick ? g : q).push_back(rows[i]);
      }
      const RankingResult ranking =
          rank(table.subset(q), table.subset(g), spec.distance, spec.exclude_same_camera);
      report.trials.push_back(metrics_for(ranking, spec.k_max));
    }
  }

  report.cmc.assign(spec.k_max, 0.0);
  for (const TrialMetrics& t : report.trials) {
    report.map += t.map;
    for (std::size_t k = 0; k < spec.k_max; ++k) report.cmc[k] += t.cmc[k];
  }
  const double n = static_cast<double>(report.trials.size());
  report.map /= n;
  for (double& v : report.cmc) v /= n;
  return report;
}

}  // namespace ramreid
