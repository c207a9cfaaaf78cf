#pragma once

#include "lcl/data/corpus_io.hpp"
#include "lcl/data/packed_io.hpp"
#include "lcl/train/checkpoint.hpp"

namespace lcl::golden {

inline Corpus corpus_fixture() {
  CorpusSpec spec;
  spec.num_docs = 2;
  spec.image_size = 8;
  spec.max_images = 2;
  return generate_synthetic_corpus(spec, 7);
}

inline PackedFile packed_fixture() {
  const Corpus c = corpus_fixture();
  PackOptions o;
  o.max_len = 64;
  o.patches_per_image = 4;
  return PackedFile{PackMode::Document, o, c.vocab.size(), pack_corpus(c, PackMode::Document, o)};
}

inline TrainConfig checkpoint_config() {
  return TrainConfig::parse(
      "seed=3\nvision.image_size=8\nvision.patch_size=4\nvision.hidden_dim=4\nvision.depth=1\nvision.num_heads=2\n"
      "vision.mlp_ratio=1\nlm.hidden_dim=4\nlm.depth=1\nlm.num_heads=2\nlm.mlp_ratio=1\nlm.max_seq_len=8\n"
      "max_len=8\nembed_dim=4\ncorpus.num_docs=2\ncorpus.colors=red,blue\ncorpus.shapes=circle,square",
      "golden checkpoint config");
}

/// Freshly initialized model with zero optimizer moments.
inline std::vector<std::uint8_t> checkpoint_bytes() {
  const TrainConfig cfg = checkpoint_config();
  LCLModel<float> model(cfg.model, 5);
  AdamW<float> opt(model.parameters(), AdamWConfig{});
  return serialize_checkpoint(model, &opt, 0, &cfg);
}

}  // namespace lcl::golden
