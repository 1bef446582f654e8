#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "neurocap/rng.hpp"

namespace neurocap::data {

inline constexpr std::array<std::string_view, 8> kObjects{"ball", "cat", "car", "tree", "cup", "dog", "boat", "sign"};
inline constexpr std::array<std::string_view, 4> kColors{"red", "blue", "green", "yellow"};
inline constexpr std::array<std::string_view, 4> kScenes{"park", "room", "street", "beach"};
inline constexpr std::size_t kNuisanceDim = 8;
/// Categorical values across all three attributes (8 + 4 + 4).
inline constexpr std::size_t kCategoricalValues = kObjects.size() + kColors.size() + kScenes.size();
inline constexpr int kFormatVersion = 1;

struct LatentConcept {
  std::size_t object = 0;
  std::size_t color = 0;
  std::size_t scene = 0;
  std::array<double, kNuisanceDim> nuisance{};

  /// Index into the 16 categorical values: objects, then colors, then scenes.
  std::size_t object_slot() const { return object; }
  std::size_t color_slot() const { return kObjects.size() + color; }
  std::size_t scene_slot() const { return kObjects.size() + kColors.size() + scene; }
  /// Throws ParameterError for out-of-range ids or non-finite nuisance.
  void validate() const;
  bool same_categories(const LatentConcept& o) const {
    return object == o.object && color == o.color && scene == o.scene;
  }
};

LatentConcept sample_latent(Rng& rng);

/// Generator tunables; defaults keep all three attributes linearly decodable.
struct GeneratorConfig {
  std::size_t n_voxels = 512;
  std::size_t image_dim = 32;
  double voxel_noise = 0.1;
  double feature_noise = 0.05;
  double nuisance_leakage = 0.1;
  std::uint64_t seed = 0;
};

/// Fixed seeded sparse dictionary mapping latents to voxel patterns. Every
/// categorical value owns a disjoint random voxel support with positive
/// loadings; the nuisance vector leaks densely through a small random matrix.
class VoxelDictionary {
 public:
  VoxelDictionary(std::uint64_t seed, std::size_t n_voxels, double nuisance_leakage = 0.1);

  /// Loading + leakage, before noise and normalization.
  std::vector<double> raw(const LatentConcept& latent) const;
  /// raw() z-scored; what the linear-decodability oracle sees.
  std::vector<double> clean(const LatentConcept& latent) const;
  /// raw() plus Gaussian noise, z-scored.
  std::vector<double> sample(const LatentConcept& latent, Rng& noise, double noise_std) const;

  const std::vector<std::size_t>& support(std::size_t categorical_slot) const { return supports_.at(categorical_slot); }
  std::size_t n_voxels() const { return n_voxels_; }

 private:
  std::size_t n_voxels_;
  std::vector<std::vector<std::size_t>> supports_;
  std::vector<std::vector<double>> loadings_;
  std::vector<double> leakage_;  // [n_voxels x kNuisanceDim]
};

/// Fixed seeded linear map of [one-hot(16) ; nuisance(8)] to D_img features.
class ImageFeatureMap {
 public:
  ImageFeatureMap(std::uint64_t seed, std::size_t image_dim);

  std::vector<double> clean(const LatentConcept& latent) const;
  std::vector<double> sample(const LatentConcept& latent, Rng& noise, double noise_std) const;
  std::size_t image_dim() const { return image_dim_; }

 private:
  std::size_t image_dim_;
  std::vector<double> weights_;  // [(16 + 8) x image_dim]
};

/// "a {color} {object} in the {scene} ."
std::string primary_caption(const LatentConcept& latent);
/// Primary caption followed by up to two seeded paraphrases (1-3 references).
std::vector<std::string> latent_to_caption(const LatentConcept& latent, Rng& rng);

struct QaPair {
  std::string question;
  std::string answer;
  bool operator==(const QaPair&) const = default;
};

/// Color, object and scene questions, in that order.
std::vector<QaPair> gen_qa(const LatentConcept& latent);

/// Global answer table: the 16 categorical value names (objects, colors, scenes).
const std::vector<std::string>& answer_table();
/// Index of `answer` in answer_table(); throws IndexError when absent.
std::size_t answer_class(std::string_view answer);

struct SyntheticSample {
  std::size_t id = 0;
  LatentConcept latent;
  std::vector<double> voxels;
  std::vector<double> image_feats;
  std::vector<std::string> caption_refs;
  std::vector<QaPair> qa;
};

struct DatasetManifest {
  int format_version = kFormatVersion;
  std::size_t n_samples = 0;
  std::size_t n_voxels = 0;
  std::size_t image_dim = 0;
  std::size_t n_pool = 0;
  std::uint64_t seed = 0;
  std::vector<std::size_t> train_ids;
  std::vector<std::size_t> test_ids;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<SyntheticSample> samples;
  /// Unlabeled voxel vectors from the same dictionary, used only for
  /// pretraining corpora that exclude the captioned samples.
  std::vector<std::vector<double>> pool_voxels;

  const SyntheticSample& sample(std::size_t id) const { return samples.at(id); }
};

/// Generates sample `index` of a dataset; pure in (config, index).
SyntheticSample generate_sample(const GeneratorConfig& cfg, const VoxelDictionary& dict,
                                const ImageFeatureMap& features, std::size_t index);

/// n labeled samples (n >= 8) with a seeded 90/10 train/test split, plus n_pool
/// unlabeled voxel vectors. Deterministic in (cfg, n, n_pool).
Dataset generate_dataset(const GeneratorConfig& cfg, std::size_t n, std::size_t n_pool = 0);

// On-disk layout of a dataset directory.
inline constexpr std::string_view kManifestFile = "manifest.json";
inline constexpr std::string_view kVoxelFile = "voxels.bcf";
inline constexpr std::string_view kImageFile = "image_feats.bcf";
inline constexpr std::string_view kPoolFile = "pool_voxels.bcf";
inline constexpr std::string_view kRecordsFile = "records.jsonl";

void write_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

/// Matrix blob: magic "BCF1", u32 rows, u32 cols, rows*cols little-endian f32.
void write_bcf(const std::filesystem::path& path, const std::vector<std::vector<double>>& rows, std::size_t cols);
std::vector<std::vector<double>> read_bcf(const std::filesystem::path& path, std::size_t* cols = nullptr);

}  // namespace neurocap::data
