#include "neurocap/data/synthetic.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <span>
#include <nlohmann/json.hpp>

#include "neurocap/error.hpp"

namespace neurocap::data {

namespace {

// Seed streams; distinct constants keep the sub-generators independent.
constexpr std::uint64_t kDictionaryStream = 1;
constexpr std::uint64_t kFeatureStream = 2;
constexpr std::uint64_t kSplitStream = 3;
constexpr std::uint64_t kSampleStreamBase = 1'000'000;

std::vector<double> zscore(std::vector<double> v) {
  double mu = 0.0;
  for (double x : v) mu += x;
  mu /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mu) * (x - mu);
  var /= static_cast<double>(v.size());
  const double sd = std::sqrt(var);
  if (!(sd > 0.0)) throw NumericError("zscore: constant voxel vector");
  for (double& x : v) x = (x - mu) / sd;
  return v;
}

// Values go to disk as f32; rounding here keeps memory and disk identical.
void round_to_f32(std::vector<double>& v) {
  for (double& x : v) x = static_cast<double>(static_cast<float>(x));
}

std::string fill_template(std::string_view tmpl, const LatentConcept& l) {
  std::string out;
  for (std::size_t i = 0; i < tmpl.size(); ++i) {
    if (tmpl[i] == '{') {
      const std::size_t close = tmpl.find('}', i);
      const std::string_view key = tmpl.substr(i + 1, close - i - 1);
      if (key == "color") out += kColors[l.color];
      if (key == "object") out += kObjects[l.object];
      if (key == "scene") out += kScenes[l.scene];
      i = close;
    } else {
      out += tmpl[i];
    }
  }
  return out;
}

constexpr std::array<std::string_view, 3> kCaptionTemplates{
    "a {color} {object} in the {scene} .",
    "there is a {color} {object} in the {scene} .",
    "the {object} in the {scene} is {color} .",
};

std::size_t index_of(std::span<const std::string_view> names, std::string_view value, const char* what) {
  auto it = std::ranges::find(names, value);
  if (it == names.end()) throw FormatError(std::string("unknown ") + what + " '" + std::string(value) + "'");
  return static_cast<std::size_t>(it - names.begin());
}

template <std::size_t N>
std::size_t index_of(const std::array<std::string_view, N>& names, std::string_view value, const char* what) {
  return index_of(std::span<const std::string_view>(names), value, what);
}

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(const unsigned char* b) {
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

nlohmann::ordered_json latent_json(const LatentConcept& l) {
  nlohmann::ordered_json j;
  j["object"] = kObjects[l.object];
  j["color"] = kColors[l.color];
  j["scene"] = kScenes[l.scene];
  j["nuisance"] = l.nuisance;
  return j;
}

LatentConcept latent_from_json(const nlohmann::json& j) {
  LatentConcept l;
  l.object = index_of(kObjects, j.at("object").get<std::string>(), "object");
  l.color = index_of(kColors, j.at("color").get<std::string>(), "color");
  l.scene = index_of(kScenes, j.at("scene").get<std::string>(), "scene");
  const auto nuisance = j.at("nuisance").get<std::vector<double>>();
  if (nuisance.size() != kNuisanceDim) throw FormatError("latent nuisance must have 8 entries");
  std::ranges::copy(nuisance, l.nuisance.begin());
  return l;
}

}  // namespace

void LatentConcept::validate() const {
  if (object >= kObjects.size() || color >= kColors.size() || scene >= kScenes.size()) {
    throw ParameterError("LatentConcept: categorical id out of range");
  }
  for (double v : nuisance) {
    if (!std::isfinite(v)) throw ParameterError("LatentConcept: non-finite nuisance");
  }
}

LatentConcept sample_latent(Rng& rng) {
  LatentConcept l;
  l.object = rng.below(kObjects.size());
  l.color = rng.below(kColors.size());
  l.scene = rng.below(kScenes.size());
  for (double& v : l.nuisance) v = rng.normal();
  return l;
}

VoxelDictionary::VoxelDictionary(std::uint64_t seed, std::size_t n_voxels, double nuisance_leakage)
    : n_voxels_(n_voxels) {
  if (n_voxels < 64) throw ParameterError("VoxelDictionary: need at least 64 voxels");
  Rng rng(mix_seed(seed, kDictionaryStream));
  std::vector<std::size_t> order(n_voxels);
  for (std::size_t i = 0; i < n_voxels; ++i) order[i] = i;
  rng.shuffle(order);
  // Half of the voxels carry categorical signal; the rest only nuisance and noise.
  const std::size_t per_value = n_voxels / (2 * kCategoricalValues);
  for (std::size_t slot = 0; slot < kCategoricalValues; ++slot) {
    std::vector<std::size_t> sup(order.begin() + slot * per_value, order.begin() + (slot + 1) * per_value);
    std::ranges::sort(sup);
    std::vector<double> load(sup.size());
    for (double& w : load) w = rng.uniform(1.0, 2.0);
    supports_.push_back(std::move(sup));
    loadings_.push_back(std::move(load));
  }
  leakage_.resize(n_voxels * kNuisanceDim);
  for (double& w : leakage_) w = rng.normal(0.0, nuisance_leakage);
}

std::vector<double> VoxelDictionary::raw(const LatentConcept& latent) const {
  latent.validate();
  std::vector<double> v(n_voxels_, 0.0);
  for (std::size_t slot : {latent.object_slot(), latent.color_slot(), latent.scene_slot()}) {
    for (std::size_t k = 0; k < supports_[slot].size(); ++k) v[supports_[slot][k]] += loadings_[slot][k];
  }
  for (std::size_t i = 0; i < n_voxels_; ++i) {
    for (std::size_t d = 0; d < kNuisanceDim; ++d) v[i] += leakage_[i * kNuisanceDim + d] * latent.nuisance[d];
  }
  return v;
}

std::vector<double> VoxelDictionary::clean(const LatentConcept& latent) const { return zscore(raw(latent)); }

std::vector<double> VoxelDictionary::sample(const LatentConcept& latent, Rng& noise, double noise_std) const {
  std::vector<double> v = raw(latent);
  for (double& x : v) x += noise.normal(0.0, noise_std);
  return zscore(std::move(v));
}

ImageFeatureMap::ImageFeatureMap(std::uint64_t seed, std::size_t image_dim) : image_dim_(image_dim) {
  if (image_dim < 16) throw ParameterError("ImageFeatureMap: need at least 16 feature dimensions");
  Rng rng(mix_seed(seed, kFeatureStream));
  const std::size_t in = kCategoricalValues + kNuisanceDim;
  weights_.resize(in * image_dim);
  const double scale = 1.0 / std::sqrt(static_cast<double>(in));
  for (double& w : weights_) w = rng.normal(0.0, scale);
}

std::vector<double> ImageFeatureMap::clean(const LatentConcept& latent) const {
  latent.validate();
  std::vector<double> f(image_dim_, 0.0);
  auto add_row = [&](std::size_t row, double coeff) {
    for (std::size_t c = 0; c < image_dim_; ++c) f[c] += coeff * weights_[row * image_dim_ + c];
  };
  add_row(latent.object_slot(), 1.0);
  add_row(latent.color_slot(), 1.0);
  add_row(latent.scene_slot(), 1.0);
  for (std::size_t d = 0; d < kNuisanceDim; ++d) add_row(kCategoricalValues + d, latent.nuisance[d]);
  return f;
}

std::vector<double> ImageFeatureMap::sample(const LatentConcept& latent, Rng& noise, double noise_std) const {
  std::vector<double> f = clean(latent);
  for (double& x : f) x += noise.normal(0.0, noise_std);
  return f;
}

std::string primary_caption(const LatentConcept& latent) { return fill_template(kCaptionTemplates[0], latent); }

std::vector<std::string> latent_to_caption(const LatentConcept& latent, Rng& rng) {
  latent.validate();
  const std::size_t n_refs = 1 + rng.below(kCaptionTemplates.size());
  std::vector<std::size_t> extra{1, 2};
  rng.shuffle(extra);
  std::vector<std::string> refs{primary_caption(latent)};
  for (std::size_t i = 0; i + 1 < n_refs; ++i) refs.push_back(fill_template(kCaptionTemplates[extra[i]], latent));
  return refs;
}

std::vector<QaPair> gen_qa(const LatentConcept& latent) {
  latent.validate();
  return {
      {fill_template("what color is the {object} ?", latent), std::string(kColors[latent.color])},
      {fill_template("what is in the {scene} ?", latent), std::string(kObjects[latent.object])},
      {fill_template("where is the {object} ?", latent), std::string(kScenes[latent.scene])},
  };
}

const std::vector<std::string>& answer_table() {
  static const std::vector<std::string> table = [] {
    std::vector<std::string> t;
    for (auto s : kObjects) t.emplace_back(s);
    for (auto s : kColors) t.emplace_back(s);
    for (auto s : kScenes) t.emplace_back(s);
    return t;
  }();
  return table;
}

std::size_t answer_class(std::string_view answer) {
  const auto& t = answer_table();
  auto it = std::ranges::find(t, answer);
  if (it == t.end()) throw IndexError("answer '" + std::string(answer) + "' not in the answer table");
  return static_cast<std::size_t>(it - t.begin());
}

SyntheticSample generate_sample(const GeneratorConfig& cfg, const VoxelDictionary& dict,
                                const ImageFeatureMap& features, std::size_t index) {
  Rng rng(mix_seed(cfg.seed, kSampleStreamBase + index));
  SyntheticSample s;
  s.id = index;
  s.latent = sample_latent(rng);
  s.voxels = dict.sample(s.latent, rng, cfg.voxel_noise);
  round_to_f32(s.voxels);
  s.image_feats = features.sample(s.latent, rng, cfg.feature_noise);
  round_to_f32(s.image_feats);
  s.caption_refs = latent_to_caption(s.latent, rng);
  s.qa = gen_qa(s.latent);
  return s;
}

Dataset generate_dataset(const GeneratorConfig& cfg, std::size_t n, std::size_t n_pool) {
  if (n < 8) throw ParameterError("generate_dataset: need at least 8 samples");
  VoxelDictionary dict(cfg.seed, cfg.n_voxels, cfg.nuisance_leakage);
  ImageFeatureMap features(cfg.seed, cfg.image_dim);

  Dataset ds;
  ds.manifest.n_samples = n;
  ds.manifest.n_voxels = cfg.n_voxels;
  ds.manifest.image_dim = cfg.image_dim;
  ds.manifest.n_pool = n_pool;
  ds.manifest.seed = cfg.seed;
  ds.samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) ds.samples.push_back(generate_sample(cfg, dict, features, i));
  for (std::size_t j = 0; j < n_pool; ++j) {
    // Pool entries continue the sample index space so they never repeat a labeled sample.
    ds.pool_voxels.push_back(generate_sample(cfg, dict, features, n + j).voxels);
  }

  std::vector<std::size_t> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = i;
  Rng split_rng(mix_seed(cfg.seed, kSplitStream));
  split_rng.shuffle(ids);
  const std::size_t n_test = n / 10;
  ds.manifest.test_ids.assign(ids.begin(), ids.begin() + n_test);
  ds.manifest.train_ids.assign(ids.begin() + n_test, ids.end());
  std::ranges::sort(ds.manifest.test_ids);
  std::ranges::sort(ds.manifest.train_ids);
  return ds;
}

void write_bcf(const std::filesystem::path& path, const std::vector<std::vector<double>>& rows, std::size_t cols) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os.write("BCF1", 4);
  put_u32(os, static_cast<std::uint32_t>(rows.size()));
  put_u32(os, static_cast<std::uint32_t>(cols));
  for (const auto& row : rows) {
    if (row.size() != cols) throw DimensionError("write_bcf: ragged rows");
    for (double v : row) {
      put_u32(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
  }
  if (!os) throw IoError("write failed for " + path.string());
}

std::vector<std::vector<double>> read_bcf(const std::filesystem::path& path, std::size_t* cols_out) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "BCF1", 4) != 0) {
    throw FormatError(path.string() + ": missing BCF1 header");
  }
  const std::size_t rows = get_u32(bytes.data() + 4);
  const std::size_t cols = get_u32(bytes.data() + 8);
  if (bytes.size() != 12 + rows * cols * 4) {
    throw FormatError(path.string() + ": expected " + std::to_string(12 + rows * cols * 4) + " bytes, found " +
                      std::to_string(bytes.size()));
  }
  std::vector<std::vector<double>> out(rows, std::vector<double>(cols));
  const unsigned char* p = bytes.data() + 12;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c, p += 4) out[r][c] = std::bit_cast<float>(get_u32(p));
  }
  if (cols_out) *cols_out = cols;
  return out;
}

void write_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  nlohmann::ordered_json m;
  m["format_version"] = ds.manifest.format_version;
  m["n_samples"] = ds.manifest.n_samples;
  m["n_voxels"] = ds.manifest.n_voxels;
  m["image_dim"] = ds.manifest.image_dim;
  m["n_pool"] = ds.manifest.n_pool;
  m["seed"] = ds.manifest.seed;
  m["train_ids"] = ds.manifest.train_ids;
  m["test_ids"] = ds.manifest.test_ids;
  {
    std::ofstream os(dir / kManifestFile);
    if (!os) throw IoError("cannot write manifest in " + dir.string());
    os << m.dump(2) << '\n';
  }

  std::vector<std::vector<double>> voxels, feats;
  for (const auto& s : ds.samples) {
    voxels.push_back(s.voxels);
    feats.push_back(s.image_feats);
  }
  write_bcf(dir / kVoxelFile, voxels, ds.manifest.n_voxels);
  write_bcf(dir / kImageFile, feats, ds.manifest.image_dim);
  if (!ds.pool_voxels.empty()) write_bcf(dir / kPoolFile, ds.pool_voxels, ds.manifest.n_voxels);

  std::ofstream os(dir / kRecordsFile);
  if (!os) throw IoError("cannot write records in " + dir.string());
  for (const auto& s : ds.samples) {
    nlohmann::ordered_json r;
    r["id"] = s.id;
    r["caption_refs"] = s.caption_refs;
    r["qa"] = nlohmann::ordered_json::array();
    for (const auto& qa : s.qa) r["qa"].push_back({{"q", qa.question}, {"a", qa.answer}});
    r["latent"] = latent_json(s.latent);
    os << r.dump() << '\n';
  }
  if (!os) throw IoError("write failed in " + dir.string());
}

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  {
    std::ifstream is(dir / kManifestFile);
    if (!is) throw IoError("no manifest in " + dir.string());
    nlohmann::json m;
    try {
      m = nlohmann::json::parse(is);
      ds.manifest.format_version = m.at("format_version").get<int>();
      ds.manifest.n_samples = m.at("n_samples").get<std::size_t>();
      ds.manifest.n_voxels = m.at("n_voxels").get<std::size_t>();
      ds.manifest.image_dim = m.at("image_dim").get<std::size_t>();
      ds.manifest.n_pool = m.value("n_pool", std::size_t{0});
      ds.manifest.seed = m.at("seed").get<std::uint64_t>();
      ds.manifest.train_ids = m.at("train_ids").get<std::vector<std::size_t>>();
      ds.manifest.test_ids = m.at("test_ids").get<std::vector<std::size_t>>();
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("malformed manifest: " + std::string(e.what()));
    }
  }
  if (ds.manifest.format_version != kFormatVersion) {
    throw FormatError("dataset format version " + std::to_string(ds.manifest.format_version) + " unsupported");
  }

  std::size_t cols = 0;
  auto voxels = read_bcf(dir / kVoxelFile, &cols);
  if (voxels.size() != ds.manifest.n_samples || cols != ds.manifest.n_voxels) {
    throw FormatError("voxel blob does not match manifest");
  }
  auto feats = read_bcf(dir / kImageFile, &cols);
  if (feats.size() != ds.manifest.n_samples || cols != ds.manifest.image_dim) {
    throw FormatError("image feature blob does not match manifest");
  }
  if (ds.manifest.n_pool > 0) {
    ds.pool_voxels = read_bcf(dir / kPoolFile, &cols);
    if (ds.pool_voxels.size() != ds.manifest.n_pool || cols != ds.manifest.n_voxels) {
      throw FormatError("pool blob does not match manifest");
    }
  }

  std::ifstream is(dir / kRecordsFile);
  if (!is) throw IoError("no records in " + dir.string());
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    SyntheticSample s;
    try {
      auto r = nlohmann::json::parse(line);
      s.id = r.at("id").get<std::size_t>();
      s.caption_refs = r.at("caption_refs").get<std::vector<std::string>>();
      for (const auto& qa : r.at("qa")) s.qa.push_back({qa.at("q").get<std::string>(), qa.at("a").get<std::string>()});
      s.latent = latent_from_json(r.at("latent"));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("malformed record: " + std::string(e.what()));
    }
    if (s.id != ds.samples.size()) throw FormatError("records out of order at id " + std::to_string(s.id));
    if (s.id >= voxels.size()) throw FormatError("record id beyond voxel blob");
    s.voxels = std::move(voxels[s.id]);
    s.image_feats = std::move(feats[s.id]);
    ds.samples.push_back(std::move(s));
  }
  if (ds.samples.size() != ds.manifest.n_samples) throw FormatError("record count does not match manifest");
  return ds;
}

}  // namespace neurocap::data
