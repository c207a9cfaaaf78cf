#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "lcl/objective/report.hpp"
#include "lcl/train/checkpoint.hpp"
#include "lcl/train/data.hpp"
#include "lcl/train/model.hpp"
#include "lcl/train/optimizer.hpp"

namespace lcl {

struct TrainSummary {
  std::size_t steps = 0;  // optimizer updates applied
  bool diverged = false;
  std::string divergence;  // what went non-finite
  std::vector<LossReport> reports;
  std::string final_checkpoint;  // empty without out_dir
};

inline Schedule schedule_of(const TrainConfig& cfg) {
  return {cfg.peak_lr, cfg.min_lr, cfg.warmup_steps, cfg.total_steps};
}

inline AdamWConfig adamw_of(const TrainConfig& cfg) {
  return {cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay};
}

inline std::uint64_t model_seed(const TrainConfig& cfg) { return derive_seed(cfg.seed, "model"); }

/// Joint optimization of the vision encoder, causal model and contrastive
/// head. Steps are numbered from 1; step s uses lr_at_step(s).
template <typename T>
class Trainer {
 public:
  Trainer(TrainConfig cfg, const Corpus& corpus, bool deterministic = false)
      : cfg_(std::move(cfg)),
        plan_(make_batch_plan(corpus, cfg_)),
        stream_(std::make_unique<BatchStream>(plan_, cfg_.collate_options(), cfg_.prefetch && !deterministic,
                                              cfg_.prefetch_depth)),
        model_(std::make_unique<LCLModel<T>>(cfg_.model, model_seed(cfg_))),
        opt_(model_->parameters(), adamw_of(cfg_)),
        rng_(derive_seed(cfg_.seed, "stochastic-depth")) {
    cfg_.validate();
  }

  /// One update. Throws NumericError when the loss or a gradient is not
  /// finite; parameters are untouched in that case.
  LossReport step() {
    const std::size_t s = step_ + 1;
    if (s > cfg_.total_steps) throw std::out_of_range("Trainer: all " + std::to_string(cfg_.total_steps) + " steps done");
    const BatchedSequence b = stream_->next();
    const double lr = lr_at_step(s, schedule_of(cfg_));
    nn::ForwardContext ctx{true, &rng_};
    auto& ps = model_->parameters();
    ps.zero_grad();
    const double tau = model_->head().tau();
    StepOutput<T> out = model_->step(b, ctx, {cfg_.lambda, cfg_.exclude_same_doc_negatives});
    const double total = static_cast<double>(out.total.item());
    if (!std::isfinite(total)) throw NumericError("training loss is not finite at step " + std::to_string(s));
    backward(out.total);
    clip_grad_norm(ps, cfg_.grad_clip);
    opt_.step(ps, lr);
    model_->head().clamp_temperature();
    step_ = s;

    LossReport r;
    r.step = s;
    r.total = total;
    r.generation = static_cast<double>(out.generation.item());
    r.contrastive = out.contrastive.loss.defined() ? static_cast<double>(out.contrastive.loss.item()) : std::nan("");
    r.context_to_image =
        out.contrastive.loss.defined() ? static_cast<double>(out.contrastive.context_to_image.item()) : std::nan("");
    r.image_to_context =
        out.contrastive.loss.defined() ? static_cast<double>(out.contrastive.image_to_context.item()) : std::nan("");
    r.tau = tau;
    r.lr = lr;
    r.lambda = cfg_.lambda;
    r.text_targets = out.text_targets;
    r.images = b.num_images();
    if (cfg_.metrics_every > 0 && (s == 1 || s % cfg_.metrics_every == 0) && b.num_images() >= 2) {
      const auto a = out.image_embed.value();
      const auto c = out.context_embed.value();
      r.collapse = collapse_metrics(out.v.value(), &a, &c);
    }
    return r;
  }

  /// Runs to total_steps, writing the log and checkpoints under out_dir
  /// when set. `echo` receives every logged line as well.
  TrainSummary run(std::ostream* echo = nullptr) {
    TrainSummary sum;
    std::ofstream log;
    const bool on_disk = !cfg_.out_dir.empty();
    if (on_disk) {
      std::filesystem::create_directories(cfg_.out_dir);
      log.open(path("loss.jsonl"), std::ios::trunc);
      if (!log) throw std::runtime_error("cannot open '" + path("loss.jsonl") + "' for writing");
    }
    const LossReport* last = nullptr;
    while (step_ < cfg_.total_steps) {
      LossReport r;
      try {
        r = step();
      } catch (const NumericError& e) {
        sum.diverged = true;
        sum.divergence = e.what();
        break;
      }
      sum.reports.push_back(r);
      last = &sum.reports.back();
      if (step_ % cfg_.log_every == 0 || step_ == cfg_.total_steps) {
        const std::string line = r.to_line();
        if (on_disk) log << line << '\n' << std::flush;
        if (echo) *echo << line << '\n';
      }
      if (on_disk && cfg_.checkpoint_every > 0 && step_ % cfg_.checkpoint_every == 0) {
        save(path("step_" + std::to_string(step_) + ".ckpt"), last);
      }
    }
    sum.steps = step_;
    if (on_disk) {
      sum.final_checkpoint = path(sum.diverged ? "last_good.ckpt" : "final.ckpt");
      save(sum.final_checkpoint, last);
    }
    return sum;
  }

  void save(const std::string& file, const LossReport* metrics = nullptr) const {
    save_checkpoint(file, *model_, &opt_, step_, &cfg_, metrics);
  }

  /// Restores parameters, moments and the step counter; the batch stream
  /// is replayed up to that step.
  void resume(const Checkpoint& c) {
    restore_checkpoint(c, *model_, &opt_);
    const std::size_t target = c.step();
    if (target > cfg_.total_steps) throw CheckpointMismatchError({"step"}, "checkpoint step exceeds total_steps");
    while (step_ < target) {
      stream_->next();
      ++step_;
    }
  }

  LCLModel<T>& model() { return *model_; }
  const LCLModel<T>& model() const { return *model_; }
  const AdamW<T>& optimizer() const { return opt_; }
  const TrainConfig& config() const { return cfg_; }
  std::size_t steps_done() const { return step_; }

 private:
  std::string path(const std::string& name) const { return (std::filesystem::path(cfg_.out_dir) / name).string(); }

  TrainConfig cfg_;
  std::shared_ptr<const BatchPlan> plan_;
  std::unique_ptr<BatchStream> stream_;
  std::unique_ptr<LCLModel<T>> model_;
  AdamW<T> opt_;
  Rng rng_;
  std::size_t step_ = 0;
};

/// Plain next-token training of the causal model alone, with the same
/// batches, schedule, clipping and optimizer as Trainer. Returns the loss
/// of every step.
template <typename T>
std::vector<double> train_language_model(const TrainConfig& cfg, const Corpus& corpus) {
  cfg.validate();
  auto plan = make_batch_plan(corpus, cfg);
  BatchStream stream(plan, cfg.collate_options(), false);
  nn::ParameterSet<T> ps(model_seed(cfg));
  CausalLM<T> lm(ps, "lm", cfg.model.lm);
  AdamW<T> opt(ps, adamw_of(cfg));
  Rng rng(derive_seed(cfg.seed, "stochastic-depth"));
  std::vector<double> losses;
  for (std::size_t s = 1; s <= cfg.total_steps; ++s) {
    const BatchedSequence b = stream.next();
    if (b.num_images() > 0) throw std::invalid_argument("train_language_model: corpus contains images");
    nn::ForwardContext ctx{true, &rng};
    ps.zero_grad();
    Tensor<T> loss = generation_loss(lm.forward(b, Tensor<T>(), ctx).text_logits, b);
    losses.push_back(static_cast<double>(loss.item()));
    backward(loss);
    clip_grad_norm(ps, cfg.grad_clip);
    opt.step(ps, lr_at_step(s, schedule_of(cfg)));
  }
  return losses;
}

/// Trains at the precision named by the config.
inline TrainSummary run_training(const TrainConfig& cfg, bool deterministic = false, std::ostream* echo = nullptr) {
  const Corpus corpus = training_corpus(cfg);
  if (cfg.precision == Precision::F64) {
    Trainer<double> t(cfg, corpus, deterministic);
    return t.run(echo);
  }
  Trainer<float> t(cfg, corpus, deterministic);
  return t.run(echo);
}

}  // namespace lcl
