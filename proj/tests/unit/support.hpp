#pragma once

#include "neurocap/align/model.hpp"
#include "neurocap/data/synthetic.hpp"
#include "neurocap/train/config.hpp"

namespace testing_support {

// Smallest geometry the generator accepts; four fMRI patches.
inline neurocap::align::ModelConfig tiny_model() {
  neurocap::align::ModelConfig m;
  m.n_voxels = 64;
  m.patch_size = 16;
  m.fmri_encoder = {16, 2, 2, 3};
  m.brain_decoder = {16, 2, 2, 1};
  m.text_encoder = {16, 2, 2, 1};
  m.image_dim = 16;
  return m;
}

inline neurocap::data::Dataset tiny_dataset(std::size_t n = 24, std::uint64_t seed = 5, std::size_t pool = 0) {
  neurocap::data::GeneratorConfig g;
  g.n_voxels = 64;
  g.image_dim = 16;
  g.seed = seed;
  return neurocap::data::generate_dataset(g, n, pool);
}

inline neurocap::train::TrainConfig tiny_align_config() {
  auto c = neurocap::train::TrainConfig::defaults(neurocap::train::Stage::kAlign);
  c.model = tiny_model();
  c.batch_size = 8;
  c.steps = 4;
  c.mbm_decoder = {8, 2, 2, 1};
  return c;
}

}  // namespace testing_support
