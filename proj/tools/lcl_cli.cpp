#include <chrono>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "lcl/data/packed_io.hpp"
#include "lcl/theory/mi_oracle.hpp"
#include "lcl/train/grad_suite.hpp"
#include "lcl/train/probes.hpp"
#include "lcl/train/trainer.hpp"

using namespace lcl;

namespace {

constexpr int kCheckFailed = 1;
constexpr int kBadInput = 2;

int gen_data(const std::string& spec_path, std::uint64_t seed, const std::string& out) {
  const CorpusSpec spec = CorpusSpec::load(spec_path);
  const Corpus corpus = generate_synthetic_corpus(spec, seed);
  save_corpus(corpus, out);
  std::size_t images = 0;
  for (const auto& d : corpus.docs) images += d.image_count();
  std::cout << "wrote " << corpus.docs.size() << " documents, " << images << " images, vocabulary "
            << corpus.vocab.size() << " to " << out << "\n";
  return 0;
}

struct PackArgs {
  std::string mode = "document", in, out;
  std::size_t max_len = 2048, max_images = 6, patch_size = 16;
  std::uint64_t seed = 0;
};

int pack(const PackArgs& a) {
  const Corpus corpus = load_corpus(a.in);
  if (a.patch_size == 0 || corpus.spec.image_size % a.patch_size != 0) {
    throw std::invalid_argument("patch size " + std::to_string(a.patch_size) + " does not divide the " +
                                std::to_string(corpus.spec.image_size) + "px images");
  }
  const std::size_t side = corpus.spec.image_size / a.patch_size;
  PackedFile f;
  f.mode = parse_pack_mode(a.mode);
  f.options.max_len = a.max_len;
  f.options.max_images = a.max_images;
  f.options.patches_per_image = side * side;
  f.options.seed = a.seed;
  f.vocab_size = corpus.vocab.size();
  f.sequences = pack_corpus(corpus, f.mode, f.options);
  save_packed(f, a.out);
  std::size_t images = 0, tokens = 0;
  for (const auto& s : f.sequences) {
    images += s.images.size();
    tokens += s.size();
  }
  std::cout << "packed " << f.sequences.size() << " sequences, " << images << " images, " << tokens
            << " positions (" << a.mode << ") to " << a.out << "\n";
  return 0;
}

struct TrainArgs {
  std::string config, packing, out_dir;
  std::optional<double> lambda;
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
};

int train(const TrainArgs& a) {
  TrainConfig cfg = TrainConfig::load(a.config);
  if (a.lambda) cfg.lambda = *a.lambda;
  if (!a.packing.empty()) cfg.packing = parse_pack_mode(a.packing);
  if (a.seed) cfg.seed = *a.seed;
  if (!a.out_dir.empty()) cfg.out_dir = a.out_dir;
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  const TrainSummary sum = run_training(cfg, a.deterministic, &std::cout);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (sum.diverged) {
    std::cerr << "diverged after " << sum.steps << " steps: " << sum.divergence << "\n";
    if (!sum.final_checkpoint.empty()) std::cerr << "last good state: " << sum.final_checkpoint << "\n";
    return kCheckFailed;
  }
  std::cerr << sum.steps << " steps in " << secs << " s";
  if (!sum.final_checkpoint.empty()) std::cerr << ", checkpoint " << sum.final_checkpoint;
  std::cerr << "\n";
  return 0;
}

struct ProbeArgs {
  std::string ckpt, task, label = "shape";
  std::size_t pairs = 128, train_count = 512, test_count = 256;
  std::uint64_t seed = 1234;
};

template <typename T>
int probe_with(const Checkpoint& ck, const ProbeArgs& a) {
  const TrainConfig cfg = ck.train_config();
  LCLModel<T> model(checkpoint_model_config(ck), 0);
  restore_checkpoint(ck, model);
  std::printf("checkpoint %s step %zu\n", a.ckpt.c_str(), ck.step());
  if (a.task == "retrieval") {
    const auto pairs = make_eval_pairs(cfg.corpus, cfg.corpus.vocabulary(), a.pairs, a.seed);
    const auto r = eval_retrieval_probe(model, pairs);
    std::printf("TR@1 %.6f\nIR@1 %.6f\ncandidates %zu (chance %.6f)\n", r.text_to_image, r.image_to_text,
                r.candidates, 1.0 / static_cast<double>(r.candidates));
    return 0;
  }
  const auto sets = make_probe_sets(cfg.corpus, parse_probe_label(a.label), a.train_count, a.test_count, a.seed);
  const double acc = eval_linear_probe(model, sets);
  std::printf("%s accuracy %.6f over %zu test images (chance %.6f)\n", a.label.c_str(), acc, a.test_count,
              1.0 / static_cast<double>(sets.train.classes));
  return 0;
}

int probe(const ProbeArgs& a) {
  const Checkpoint ck = load_checkpoint(a.ckpt);
  return ck.dtype() == DType::F64 ? probe_with<double>(ck, a) : probe_with<float>(ck, a);
}

int grad_check(std::size_t seeds, double tol) {
  const auto start = std::chrono::steady_clock::now();
  bool ok = true;
  auto show = [&](const GradCaseResult& r) {
    const bool pass = r.max_relative_error <= tol;
    ok = ok && pass;
    std::printf("%-4s %-18s max_rel %.3e  worst seed %llu  elements %zu\n", pass ? "ok" : "FAIL", r.name.c_str(),
                r.max_relative_error, static_cast<unsigned long long>(r.worst_seed), r.elements);
  };
  for (const auto& c : op_grad_cases()) show(check_grad_case(c, seeds));
  show(check_full_objective(seeds));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::printf("%s in %.1f s\n", ok ? "all gradients match" : "gradient mismatch", secs);
  return ok ? 0 : kCheckFailed;
}

int verify_mi(std::size_t seeds, std::size_t alphabet, std::size_t positions, std::uint64_t first, double tol) {
  const auto s = mi::verify_mi_sweep(first, seeds, alphabet, positions, tol);
  std::printf("models %zu  failures %zu  worst deviation %.3e (seed %llu)\n", s.models, s.failures,
              s.worst_deviation, static_cast<unsigned long long>(s.worst_seed));
  for (auto seed : s.failed_seeds) {
    std::printf("  seed %llu: %s\n", static_cast<unsigned long long>(seed),
                mi::verify_mi_decomposition(mi::random_model(seed, alphabet, positions), tol).describe().c_str());
  }
  const auto c = mi::collapse_counterexample();
  const bool collapse_ok = c.mi_id > c.mi_const && c.mi_const == 0.0;
  std::printf("constant encoder: cross-entropy %.6f  I %.6f\nidentity encoder: cross-entropy %.6f  I %.6f\n",
              c.cross_entropy_const, c.mi_const, c.cross_entropy_id, c.mi_id);
  return s.failures == 0 && collapse_ok ? 0 : kCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent compression learning toolkit"};
  app.require_subcommand(1);

  std::string spec_path, out;
  std::uint64_t seed = 0;
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic interleaved corpus");
  gen->add_option("--spec", spec_path, "Corpus spec (key=value)")->required()->check(CLI::ExistingFile);
  gen->add_option("--seed", seed, "Generation seed")->required();
  gen->add_option("--out", out, "Output corpus file")->required();

  PackArgs pa;
  auto* pk = app.add_subcommand("pack", "Pack a corpus into fixed-length sequences");
  pk->add_option("--mode", pa.mode, "pair-random, document or window")
      ->check(CLI::IsMember({"pair-random", "document", "window"}))
      ->capture_default_str();
  pk->add_option("--in", pa.in, "Corpus file")->required()->check(CLI::ExistingFile);
  pk->add_option("--out", pa.out, "Packed output file")->required();
  pk->add_option("--max-len", pa.max_len, "Positions per sequence")->capture_default_str();
  pk->add_option("--max-images", pa.max_images, "Images per sequence")->capture_default_str();
  pk->add_option("--patch-size", pa.patch_size, "Vision patch size")->capture_default_str();
  pk->add_option("--seed", pa.seed, "Packing seed")->capture_default_str();

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Train a model");
  tr->add_option("--config", ta.config, "Training config (key=value)")->required()->check(CLI::ExistingFile);
  tr->add_flag("--deterministic", ta.deterministic, "Disable the prefetch thread");
  tr->add_option("--lambda", ta.lambda, "Contrastive loss weight");
  tr->add_option("--packing", ta.packing, "pair-random, document or window")
      ->check(CLI::IsMember({"pair-random", "document", "window"}));
  tr->add_option("--seed", ta.seed, "Model and batching seed");
  tr->add_option("--out-dir", ta.out_dir, "Log and checkpoint directory");

  ProbeArgs pr;
  auto* pb = app.add_subcommand("probe", "Evaluate a checkpoint");
  pb->add_option("--ckpt", pr.ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  pb->add_option("--task", pr.task, "retrieval or classify")
      ->required()
      ->check(CLI::IsMember({"retrieval", "classify"}));
  pb->add_option("--label", pr.label, "shape, color or quadrant")
      ->check(CLI::IsMember({"shape", "color", "quadrant"}))
      ->capture_default_str();
  pb->add_option("--pairs", pr.pairs, "Retrieval candidates")->capture_default_str();
  pb->add_option("--train", pr.train_count, "Probe training images")->capture_default_str();
  pb->add_option("--test", pr.test_count, "Probe test images")->capture_default_str();
  pb->add_option("--seed", pr.seed, "Eval set seed")->capture_default_str();

  std::size_t gc_seeds = 10;
  double gc_tol = 1e-4;
  auto* gc = app.add_subcommand("grad-check", "Finite-difference gradient checks");
  gc->add_option("--seeds", gc_seeds, "Seeds per case")->capture_default_str();
  gc->add_option("--tol", gc_tol, "Max relative error")->capture_default_str();

  std::size_t mi_seeds = 100, alphabet = 8, positions = 2;
  std::uint64_t first_seed = 0;
  double mi_tol = 1e-9;
  auto* vm = app.add_subcommand("verify-mi", "Check the mutual information identities on random discrete models");
  vm->add_option("--seeds", mi_seeds, "Random models")->capture_default_str();
  vm->add_option("--alphabet", alphabet, "Alphabet size")->check(CLI::Range(1, 16))->capture_default_str();
  vm->add_option("--positions", positions, "Positions")->check(CLI::Range(1, 3))->capture_default_str();
  vm->add_option("--first-seed", first_seed, "First seed")->capture_default_str();
  vm->add_option("--tol", mi_tol, "Tolerance")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return gen_data(spec_path, seed, out);
    if (*pk) return pack(pa);
    if (*tr) return train(ta);
    if (*pb) return probe(pr);
    if (*gc) return grad_check(gc_seeds, gc_tol);
    if (*vm) return verify_mi(mi_seeds, alphabet, positions, first_seed, mi_tol);
  } catch (const CheckpointMismatchError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kBadInput;
  } catch (const CorruptFileError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kBadInput;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kBadInput;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kCheckFailed;
  }
  return 0;
}
