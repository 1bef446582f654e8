#include "neurocap/train/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <set>

#include "neurocap/error.hpp"

namespace neurocap::train {

namespace {

std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

std::size_t width(Dtype d) { return d == Dtype::kF32 ? 4 : 8; }

void put_le(std::vector<unsigned char>& out, std::uint64_t bits, std::size_t bytes) {
  for (std::size_t i = 0; i < bytes; ++i) out.push_back(static_cast<unsigned char>(bits >> (8 * i)));
}

std::uint64_t get_le(const unsigned char* p, std::size_t bytes) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace

std::string to_string(Dtype d) { return d == Dtype::kF32 ? "f32" : "f64"; }

Dtype parse_dtype(const std::string& s) {
  if (s == "f32") return Dtype::kF32;
  if (s == "f64") return Dtype::kF64;
  throw FormatError("unknown tensor dtype '" + s + "' (expected f32 or f64)");
}

const CheckpointTensor* Checkpoint::find(std::string_view name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

void Checkpoint::add_module(nn::Module& module, const std::string& prefix) {
  for (auto& p : module.named_parameters(prefix)) {
    if (find(p.name)) throw ContractError("checkpoint: tensor '" + p.name + "' added twice");
    tensors.push_back({p.name, p.tensor.shape(), std::vector<double>(p.tensor.data().begin(), p.tensor.data().end())});
  }
}

void Checkpoint::restore_module(nn::Module& module, const std::string& prefix) const {
  // Validate everything before touching the module.
  auto params = module.named_parameters(prefix);
  std::vector<const CheckpointTensor*> src;
  for (auto& p : params) {
    const CheckpointTensor* t = find(p.name);
    if (!t) throw FormatError("checkpoint has no tensor '" + p.name + "'");
    if (t->shape != p.tensor.shape()) {
      throw DimensionError("checkpoint tensor '" + p.name + "' has shape " + shape_str(t->shape) + ", model expects " +
                           shape_str(p.tensor.shape()));
    }
    src.push_back(t);
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    std::ranges::copy(src[i]->values, params[i].tensor.mutable_data().begin());
  }
}

void Checkpoint::add_optimizer(AdamW& opt) {
  const auto& params = opt.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    tensors.push_back({"opt.m." + params[i].name, params[i].tensor.shape(), opt.first_moments()[i]});
    tensors.push_back({"opt.v." + params[i].name, params[i].tensor.shape(), opt.second_moments()[i]});
  }
  extra["optimizer_steps"] = opt.steps_taken();
}

void Checkpoint::restore_optimizer(AdamW& opt) const {
  if (!extra.contains("optimizer_steps")) throw FormatError("checkpoint carries no optimizer state");
  const auto& params = opt.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (auto [tag, buf] : {std::pair{"opt.m.", &opt.first_moments()[i]}, std::pair{"opt.v.", &opt.second_moments()[i]}}) {
      const CheckpointTensor* t = find(tag + params[i].name);
      if (!t) throw FormatError(std::string("checkpoint has no tensor '") + tag + params[i].name + "'");
      if (t->values.size() != buf->size()) {
        throw DimensionError(std::string("optimizer state '") + tag + params[i].name + "' has the wrong size");
      }
      *buf = t->values;
    }
  }
  opt.set_steps_taken(extra["optimizer_steps"].get<std::int64_t>());
}

void Checkpoint::restore_rng(Rng& rng) const {
  if (!rng_state) throw FormatError("checkpoint carries no rng state");
  rng.deserialize(*rng_state);
}

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ck, Dtype dtype) {
  std::set<std::string> names;
  nlohmann::ordered_json entries = nlohmann::ordered_json::array();
  std::vector<unsigned char> blob;
  for (const auto& t : ck.tensors) {
    if (!names.insert(t.name).second) throw ContractError("checkpoint: duplicate tensor '" + t.name + "'");
    if (numel(t.shape) != t.values.size()) {
      throw DimensionError("checkpoint tensor '" + t.name + "' holds " + std::to_string(t.values.size()) +
                           " values for shape " + shape_str(t.shape));
    }
    entries.push_back({{"name", t.name}, {"shape", t.shape}, {"dtype", to_string(dtype)}, {"offset", blob.size()}});
    for (double v : t.values) {
      if (dtype == Dtype::kF32) {
        put_le(blob, std::bit_cast<std::uint32_t>(static_cast<float>(v)), 4);
      } else {
        put_le(blob, std::bit_cast<std::uint64_t>(v), 8);
      }
    }
  }

  nlohmann::ordered_json m;
  m["format_version"] = kCheckpointVersion;
  m["kind"] = ck.kind;
  m["step"] = ck.step;
  m["rng_state"] = ck.rng_state ? nlohmann::ordered_json(*ck.rng_state) : nlohmann::ordered_json(nullptr);
  m["config"] = ck.config;
  m["extra"] = ck.extra;
  m["blob_bytes"] = blob.size();
  m["tensors"] = std::move(entries);

  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());
  std::ofstream bs(dir / kCheckpointBlob, std::ios::binary);
  if (!bs) throw IoError("cannot write " + (dir / kCheckpointBlob).string());
  bs.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
  if (!bs) throw IoError("write failed for " + (dir / kCheckpointBlob).string());
  std::ofstream ms(dir / kCheckpointManifest);
  if (!ms) throw IoError("cannot write " + (dir / kCheckpointManifest).string());
  ms << m.dump(2) << '\n';
  if (!ms) throw IoError("write failed for " + (dir / kCheckpointManifest).string());
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream ms(dir / kCheckpointManifest);
  if (!ms) throw IoError("cannot open " + (dir / kCheckpointManifest).string());
  std::ifstream bs(dir / kCheckpointBlob, std::ios::binary);
  if (!bs) throw IoError("cannot open " + (dir / kCheckpointBlob).string());
  const std::vector<unsigned char> blob((std::istreambuf_iterator<char>(bs)), std::istreambuf_iterator<char>());

  Checkpoint ck;
  try {
    const auto m = nlohmann::ordered_json::parse(ms);
    const int version = m.at("format_version").get<int>();
    if (version != kCheckpointVersion) {
      throw FormatError("checkpoint format version " + std::to_string(version) + ", expected " +
                        std::to_string(kCheckpointVersion));
    }
    const auto expected = m.at("blob_bytes").get<std::size_t>();
    if (blob.size() != expected) {
      throw FormatError("checkpoint blob has " + std::to_string(blob.size()) + " bytes, manifest says " +
                        std::to_string(expected));
    }
    ck.kind = m.at("kind").get<std::string>();
    ck.step = m.at("step").get<std::size_t>();
    if (!m.at("rng_state").is_null()) ck.rng_state = m["rng_state"].get<std::string>();
    ck.config = m.at("config");
    ck.extra = m.at("extra");
    std::size_t cursor = 0;
    for (const auto& e : m.at("tensors")) {
      CheckpointTensor t;
      t.name = e.at("name").get<std::string>();
      t.shape = e.at("shape").get<Shape>();
      const Dtype dtype = parse_dtype(e.at("dtype").get<std::string>());
      const auto offset = e.at("offset").get<std::size_t>();
      const std::size_t n = numel(t.shape);
      const std::size_t w = width(dtype);
      if (offset != cursor || offset + n * w > blob.size()) {
        throw FormatError("checkpoint tensor '" + t.name + "' lies outside the blob or out of order");
      }
      t.values.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        const unsigned char* p = blob.data() + offset + i * w;
        t.values[i] = dtype == Dtype::kF32 ? static_cast<double>(std::bit_cast<float>(static_cast<std::uint32_t>(get_le(p, 4))))
                                           : std::bit_cast<double>(get_le(p, 8));
      }
      cursor = offset + n * w;
      if (ck.find(t.name)) throw FormatError("checkpoint lists tensor '" + t.name + "' twice");
      ck.tensors.push_back(std::move(t));
    }
    if (cursor != blob.size()) throw FormatError("checkpoint blob has trailing bytes");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint manifest " + (dir / kCheckpointManifest).string() + ": " + e.what());
  }
  return ck;
}

}  // namespace neurocap::train
