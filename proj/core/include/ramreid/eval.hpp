#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ramreid/config.hpp"
#include "ramreid/data.hpp"
#include "ramreid/model.hpp"

namespace ramreid {

enum class Distance { kEuclidean, kCosine };
enum class ProtocolKind { kFixedSplit, kRandomGallery };

struct ProtocolSpec {
  ProtocolKind kind = ProtocolKind::kFixedSplit;
  std::size_t trials = 10;  // random_gallery only
  std::uint64_t seed = 1;
  // Drops gallery entries sharing both id and camera with the query. Entries
  // without a camera id are never dropped.
  bool exclude_same_camera = true;
  Distance distance = Distance::kEuclidean;
  std::size_t k_max = 10;
  // random_gallery: evaluate on this many randomly drawn ids per trial (0 = all).
  std::size_t subset_ids = 0;

  void validate() const;
  static ProtocolSpec from_config(const KeyValueConfig& config);
};

std::string protocol_kind_name(ProtocolKind kind);
ProtocolKind parse_protocol_kind(std::string_view name);
std::string distance_name(Distance d);
Distance parse_distance(std::string_view name);

struct FeatureRow {
  std::string image_path;
  int vehicle_id = 0;
  std::optional<int> camera_id;
  Split split = Split::kTrain;
};

struct FeatureTable {
  std::size_t dim = 0;
  std::vector<FeatureRow> rows;
  std::vector<double> values;  // rows.size() x dim, row-major

  std::size_t size() const { return rows.size(); }
  std::span<const double> row(std::size_t i) const { return {values.data() + i * dim, dim}; }
  // Uniform dimension and finite values.
  void validate() const;
  FeatureTable subset(std::span<const std::size_t> indices) const;
};

// "RAMF", u64 count, u64 dim, little-endian float64 rows; the sidecar
// `<file>.csv` maps each row back to its sample.
void save_feature_table(const FeatureTable& table, const std::filesystem::path& file);
FeatureTable load_feature_table(const std::filesystem::path& file);

// Throws ValueError naming the first selected feature whose branch is inactive.
void check_selection(const RamConfig& config, const FeatureSelection& selection);

// Eval-mode features for the given samples, computed in batches.
FeatureTable extract_features(RamModel& model, const Dataset& data,
                              std::span<const std::size_t> samples,
                              const FeatureSelection& selection, std::size_t batch_size = 32);

struct QueryRanking {
  std::vector<std::size_t> gallery;  // gallery row indices, best first
  std::vector<std::uint8_t> matches;  // 1 where the gallery id equals the query id
  bool has_match() const;
};

struct RankingResult {
  std::vector<QueryRanking> queries;
};

double distance(std::span<const double> a, std::span<const double> b, Distance d);

// Orders the gallery by ascending distance, ties by ascending index.
RankingResult rank(const FeatureTable& queries, const FeatureTable& gallery, Distance d,
                   bool exclude_same_camera);

// Mean over positive positions of precision at that position.
double average_precision(std::span<const std::uint8_t> flags);
// Averages over queries with at least one match.
double mean_average_precision(const RankingResult& result);
// Element k-1 is the fraction of matched queries whose first match is within rank k.
std::vector<double> cmc(const RankingResult& result, std::size_t k_max);

struct TrialMetrics {
  double map = 0.0;
  std::vector<double> cmc;
  std::size_t queries = 0;
  std::size_t dropped_queries = 0;
};

struct MetricsReport {
  std::string selection;
  ProtocolSpec protocol;
  double map = 0.0;
  std::vector<double> cmc;
  std::vector<TrialMetrics> trials;

  double top(std::size_t k) const { return cmc.at(k - 1); }
  std::string to_json() const;
};

// fixed_split compares query rows against gallery rows. random_gallery pools
// every row, then per trial keeps one random gallery image per id and uses
// the rest as queries; the report averages the trials.
MetricsReport evaluate_protocol(const FeatureTable& table, const ProtocolSpec& spec);

}  // namespace ramreid
