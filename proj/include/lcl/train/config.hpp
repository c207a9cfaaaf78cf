#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

#include "lcl/core/keyvalue.hpp"
#include "lcl/data/corpus.hpp"
#include "lcl/data/packing.hpp"
#include "lcl/lm/causal_lm.hpp"
#include "lcl/vision/encoder.hpp"

namespace lcl {

enum class Precision { F32, F64 };

inline Precision parse_precision(const std::string& s) {
  if (s == "f32" || s == "float32") return Precision::F32;
  if (s == "f64" || s == "float64") return Precision::F64;
  throw ConfigError("unknown precision '" + s + "' (expected f32 or f64)");
}

inline std::string to_string(Precision p) { return p == Precision::F32 ? "f32" : "f64"; }

/// Architecture of the joint model. Everything here must agree between a
/// checkpoint and the configuration that loads it.
struct ModelConfig {
  VisionConfig vision;
  LMConfig lm;
  std::size_t embed_dim = 32;      // contrastive projection width
  bool normalize_embeddings = true;

  ModelConfig() {
    vision.image_size = 32;
    vision.patch_size = 16;
    vision.hidden_dim = 32;
    vision.depth = 2;
    vision.num_heads = 2;
    vision.mlp_ratio = 2;
    vision.drop_path_max = 0.0;
    vision.layer_scale_init = 0.1;
    lm.hidden_dim = 32;
    lm.depth = 2;
    lm.num_heads = 2;
    lm.mlp_ratio = 2;
    lm.max_seq_len = 256;
    lm.layer_scale_init = 0.1;
    lm.visual_dim = vision.hidden_dim;
  }

  std::size_t patches_per_image() const { return vision.num_patches(); }

  void validate() const {
    vision.validate();
    lm.validate();
    if (lm.visual_dim != vision.hidden_dim) throw ConfigError("model: lm.visual_dim must equal vision.hidden_dim");
    if (embed_dim == 0) throw ConfigError("model: embed_dim must be positive");
  }

  /// Ordered key=value echo used by checkpoint manifests.
  std::vector<std::pair<std::string, std::string>> fields() const {
    auto s = [](auto v) {
      std::ostringstream o;
      o.precision(17);
      o << v;
      return o.str();
    };
    return {{"vision.image_size", s(vision.image_size)},
            {"vision.patch_size", s(vision.patch_size)},
            {"vision.channels", s(vision.channels)},
            {"vision.hidden_dim", s(vision.hidden_dim)},
            {"vision.depth", s(vision.depth)},
            {"vision.num_heads", s(vision.num_heads)},
            {"vision.mlp_ratio", s(vision.mlp_ratio)},
            {"lm.vocab_size", s(lm.vocab_size)},
            {"lm.hidden_dim", s(lm.hidden_dim)},
            {"lm.depth", s(lm.depth)},
            {"lm.num_heads", s(lm.num_heads)},
            {"lm.mlp_ratio", s(lm.mlp_ratio)},
            {"lm.max_seq_len", s(lm.max_seq_len)},
            {"lm.visual_dim", s(lm.visual_dim)},
            {"embed_dim", s(embed_dim)},
            {"normalize_embeddings", s(normalize_embeddings ? 1 : 0)}};
  }
};

struct TrainConfig {
  std::uint64_t seed = 0;
  std::size_t total_steps = 2000;
  std::size_t warmup_steps = 100;
  double peak_lr = 3e-4;
  double min_lr = 0.0;
  std::size_t batch_images = 32;
  std::size_t batch_rows = 8;  // batch size for image-free data
  double lambda = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double adam_eps = 1e-8;
  double weight_decay = 0.1;
  double grad_clip = 1.0;  // global norm; 0 disables
  Precision precision = Precision::F32;
  PackMode packing = PackMode::Document;
  std::size_t max_len = 256;
  std::size_t max_images = 6;
  bool gen_specials = true;
  bool exclude_same_doc_negatives = false;
  bool prefetch = true;
  std::size_t prefetch_depth = 4;
  std::size_t log_every = 1;
  std::size_t metrics_every = 10;  // collapse metrics cadence
  std::size_t checkpoint_every = 0;
  std::string data;      // corpus file; empty means generate from `corpus` and data_seed
  std::uint64_t data_seed = 1;
  std::string out_dir;   // log and checkpoints; empty keeps everything in memory
  CorpusSpec corpus;
  ModelConfig model;

  TrainConfig() { corpus.image_size = model.vision.image_size; }

  void validate() const {
    if (!(peak_lr > 0)) throw ConfigError("train: peak_lr must be positive");
    if (!(min_lr >= 0 && min_lr <= peak_lr)) throw ConfigError("train: min_lr must lie in [0, peak_lr]");
    if (total_steps == 0 || warmup_steps >= total_steps) throw ConfigError("train: warmup_steps must be below total_steps");
    if (!(lambda >= 0)) throw ConfigError("train: lambda must be non-negative");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw ConfigError("train: betas must lie in [0, 1)");
    if (!(weight_decay >= 0)) throw ConfigError("train: weight_decay must be non-negative");
    if (!(grad_clip >= 0)) throw ConfigError("train: grad_clip must be non-negative");
    if (batch_images == 0 || batch_rows == 0) throw ConfigError("train: batch sizes must be positive");
    if (max_len > model.lm.max_seq_len) throw ConfigError("train: max_len exceeds lm.max_seq_len");
    if (log_every == 0) throw ConfigError("train: log_every must be positive");
    model.validate();
  }

  PackOptions pack_options() const {
    PackOptions o;
    o.max_len = max_len;
    o.max_images = max_images;
    o.patches_per_image = model.patches_per_image();
    o.seed = derive_seed(seed, "packing");
    o.specials = model.lm.specials;
    return o;
  }

  CollateOptions collate_options() const {
    CollateOptions o;
    o.max_seq_len = max_len;
    o.patches_per_image = model.patches_per_image();
    o.gen_specials = gen_specials;
    o.specials = model.lm.specials;
    return o;
  }

  static TrainConfig from_key_values(KeyValues& kv) {
    TrainConfig c;
    kv.read("seed", c.seed);
    kv.read("total_steps", c.total_steps);
    kv.read("warmup_steps", c.warmup_steps);
    kv.read("peak_lr", c.peak_lr);
    kv.read("min_lr", c.min_lr);
    kv.read("batch_images", c.batch_images);
    kv.read("batch_rows", c.batch_rows);
    kv.read("lambda", c.lambda);
    kv.read("beta1", c.beta1);
    kv.read("beta2", c.beta2);
    kv.read("adam_eps", c.adam_eps);
    kv.read("weight_decay", c.weight_decay);
    kv.read("grad_clip", c.grad_clip);
    std::string s;
    if (kv.has("precision")) {
      kv.read("precision", s);
      c.precision = parse_precision(s);
    }
    if (kv.has("packing")) {
      kv.read("packing", s);
      c.packing = parse_pack_mode(s);
    }
    kv.read("max_len", c.max_len);
    kv.read("max_images", c.max_images);
    kv.read("gen_specials", c.gen_specials);
    kv.read("exclude_same_doc_negatives", c.exclude_same_doc_negatives);
    kv.read("prefetch", c.prefetch);
    kv.read("prefetch_depth", c.prefetch_depth);
    kv.read("log_every", c.log_every);
    kv.read("metrics_every", c.metrics_every);
    kv.read("checkpoint_every", c.checkpoint_every);
    kv.read("data", c.data);
    kv.read("data_seed", c.data_seed);
    kv.read("out_dir", c.out_dir);

    auto& cs = c.corpus;
    kv.read("corpus.num_docs", cs.num_docs);
    kv.read("corpus.min_images", cs.min_images);
    kv.read("corpus.max_images", cs.max_images);
    kv.read("corpus.distractor_rate", cs.distractor_rate);
    kv.read("corpus.min_distractor_words", cs.min_distractor_words);
    kv.read("corpus.max_distractor_words", cs.max_distractor_words);
    kv.read("corpus.text_only_sentences", cs.text_only_sentences);
    kv.read("corpus.noise", cs.noise);
    if (kv.has("corpus.colors")) kv.read_list("corpus.colors", cs.colors);
    if (kv.has("corpus.shapes")) kv.read_list("corpus.shapes", cs.shapes);

    auto& v = c.model.vision;
    kv.read("vision.image_size", v.image_size);
    kv.read("vision.patch_size", v.patch_size);
    kv.read("vision.hidden_dim", v.hidden_dim);
    kv.read("vision.depth", v.depth);
    kv.read("vision.num_heads", v.num_heads);
    kv.read("vision.mlp_ratio", v.mlp_ratio);
    kv.read("vision.drop_path", v.drop_path_max);
    kv.read("vision.layer_scale_init", v.layer_scale_init);
    auto& l = c.model.lm;
    kv.read("lm.hidden_dim", l.hidden_dim);
    kv.read("lm.depth", l.depth);
    kv.read("lm.num_heads", l.num_heads);
    kv.read("lm.mlp_ratio", l.mlp_ratio);
    kv.read("lm.max_seq_len", l.max_seq_len);
    kv.read("lm.drop_path", l.drop_path_max);
    kv.read("lm.layer_scale_init", l.layer_scale_init);
    kv.read("embed_dim", c.model.embed_dim);
    kv.read("normalize_embeddings", c.model.normalize_embeddings);
    kv.finish();

    cs.image_size = v.image_size;
    l.visual_dim = v.hidden_dim;
    l.vocab_size = cs.vocabulary().size();
    cs.validate();
    c.validate();
    return c;
  }

  static TrainConfig parse(const std::string& text, const std::string& source = "<train config>") {
    KeyValues kv = KeyValues::parse(text, source);
    return from_key_values(kv);
  }

  static TrainConfig load(const std::string& path) {
    KeyValues kv = KeyValues::load(path);
    return from_key_values(kv);
  }

  /// Defaults with the corpus-derived fields filled in.
  static TrainConfig defaults() { return parse(""); }

  /// Every key in parse order; `parse(to_text())` reproduces the config.
  std::string to_text() const {
    std::ostringstream o;
    o.precision(17);
    auto b = [](bool x) { return x ? "true" : "false"; };
    auto join = [](const std::vector<std::string>& v) {
      std::string s;
      for (const auto& w : v) s += (s.empty() ? "" : ",") + w;
      return s;
    };
    o << "seed=" << seed << "\ntotal_steps=" << total_steps << "\nwarmup_steps=" << warmup_steps
      << "\npeak_lr=" << peak_lr << "\nmin_lr=" << min_lr << "\nbatch_images=" << batch_images
      << "\nbatch_rows=" << batch_rows << "\nlambda=" << lambda << "\nbeta1=" << beta1 << "\nbeta2=" << beta2
      << "\nadam_eps=" << adam_eps << "\nweight_decay=" << weight_decay << "\ngrad_clip=" << grad_clip
      << "\nprecision=" << lcl::to_string(precision) << "\npacking=" << lcl::to_string(packing)
      << "\nmax_len=" << max_len << "\nmax_images=" << max_images << "\ngen_specials=" << b(gen_specials)
      << "\nexclude_same_doc_negatives=" << b(exclude_same_doc_negatives) << "\nprefetch=" << b(prefetch)
      << "\nprefetch_depth=" << prefetch_depth << "\nlog_every=" << log_every << "\nmetrics_every=" << metrics_every
      << "\ncheckpoint_every=" << checkpoint_every << "\ndata=" << data << "\ndata_seed=" << data_seed
      << "\nout_dir=" << out_dir;
    o << "\ncorpus.num_docs=" << corpus.num_docs << "\ncorpus.min_images=" << corpus.min_images
      << "\ncorpus.max_images=" << corpus.max_images << "\ncorpus.distractor_rate=" << corpus.distractor_rate
      << "\ncorpus.min_distractor_words=" << corpus.min_distractor_words
      << "\ncorpus.max_distractor_words=" << corpus.max_distractor_words
      << "\ncorpus.text_only_sentences=" << corpus.text_only_sentences << "\ncorpus.noise=" << corpus.noise
      << "\ncorpus.colors=" << join(corpus.colors) << "\ncorpus.shapes=" << join(corpus.shapes);
    const auto& v = model.vision;
    o << "\nvision.image_size=" << v.image_size << "\nvision.patch_size=" << v.patch_size
      << "\nvision.hidden_dim=" << v.hidden_dim << "\nvision.depth=" << v.depth << "\nvision.num_heads=" << v.num_heads
      << "\nvision.mlp_ratio=" << v.mlp_ratio << "\nvision.drop_path=" << v.drop_path_max
      << "\nvision.layer_scale_init=" << v.layer_scale_init;
    const auto& l = model.lm;
    o << "\nlm.hidden_dim=" << l.hidden_dim << "\nlm.depth=" << l.depth << "\nlm.num_heads=" << l.num_heads
      << "\nlm.mlp_ratio=" << l.mlp_ratio << "\nlm.max_seq_len=" << l.max_seq_len << "\nlm.drop_path=" << l.drop_path_max
      << "\nlm.layer_scale_init=" << l.layer_scale_init << "\nembed_dim=" << model.embed_dim
      << "\nnormalize_embeddings=" << b(model.normalize_embeddings) << "\n";
    return o.str();
  }
};

}  // namespace lcl
