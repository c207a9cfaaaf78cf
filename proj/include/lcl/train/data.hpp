#pragma once

#include <condition_variable>
#include <deque>
#include <memory>
#include <mutex>
#include <numeric>
#include <thread>
#include <vector>

#include "lcl/data/batch.hpp"
#include "lcl/data/corpus_io.hpp"
#include "lcl/data/packing.hpp"
#include "lcl/train/config.hpp"

namespace lcl {

/// The corpus named by the config, or a freshly generated one.
inline Corpus training_corpus(const TrainConfig& cfg) {
  if (!cfg.data.empty()) {
    Corpus c = load_corpus(cfg.data);
    if (c.spec.image_size != cfg.model.vision.image_size) {
      throw ConfigError("corpus '" + cfg.data + "' has " + std::to_string(c.spec.image_size) +
                        "px images but vision.image_size is " + std::to_string(cfg.model.vision.image_size));
    }
    if (c.vocab.size() != cfg.model.lm.vocab_size) {
      throw ConfigError("corpus '" + cfg.data + "' has a vocabulary of " + std::to_string(c.vocab.size()) +
                        " but the model expects " + std::to_string(cfg.model.lm.vocab_size));
    }
    return c;
  }
  return generate_synthetic_corpus(cfg.corpus, cfg.data_seed);
}

/// Groups packed sequences into batches epoch by epoch. Each epoch visits
/// the sequences in a seeded random order; a batch closes when adding the
/// next sequence would exceed `batch_images` images, or at `batch_rows`
/// rows when the data holds no images.
class BatchPlan {
 public:
  BatchPlan(std::vector<InterleavedSequence> seqs, std::size_t batch_images, std::size_t batch_rows, std::uint64_t seed)
      : seqs_(std::move(seqs)), batch_images_(batch_images), batch_rows_(batch_rows), seed_(seed) {
    if (seqs_.empty()) throw std::invalid_argument("BatchPlan: no packed sequences");
    for (const auto& s : seqs_) total_images_ += s.images.size();
  }

  /// Sequence indices of every batch in `epoch`.
  std::vector<std::vector<std::size_t>> epoch_batches(std::size_t epoch) const {
    std::vector<std::size_t> order(seqs_.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(seed_, "epoch-" + std::to_string(epoch)));
    rng.shuffle(order.begin(), order.end());
    std::vector<std::vector<std::size_t>> out;
    std::vector<std::size_t> cur;
    std::size_t images = 0;
    for (auto i : order) {
      const std::size_t n = seqs_[i].images.size();
      const bool full = total_images_ > 0 ? (images + n > batch_images_ && !cur.empty()) : cur.size() >= batch_rows_;
      if (full) {
        out.push_back(std::move(cur));
        cur.clear();
        images = 0;
      }
      cur.push_back(i);
      images += n;
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
  }

  const std::vector<InterleavedSequence>& sequences() const { return seqs_; }
  std::size_t total_images() const { return total_images_; }

 private:
  std::vector<InterleavedSequence> seqs_;
  std::size_t batch_images_, batch_rows_;
  std::uint64_t seed_;
  std::size_t total_images_ = 0;
};

/// Endless batch stream cycling through epochs. With `prefetch` a worker
/// thread collates ahead into a bounded queue; the batches and their order
/// are the same either way.
class BatchStream {
 public:
  BatchStream(std::shared_ptr<const BatchPlan> plan, CollateOptions opt, bool prefetch, std::size_t depth = 4)
      : plan_(std::move(plan)), opt_(opt), depth_(std::max<std::size_t>(depth, 1)) {
    if (prefetch) worker_ = std::thread([this] { produce(); });
  }

  ~BatchStream() {
    {
      std::lock_guard<std::mutex> lk(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    if (worker_.joinable()) worker_.join();
  }

  BatchStream(const BatchStream&) = delete;
  BatchStream& operator=(const BatchStream&) = delete;

  BatchedSequence next() {
    if (!worker_.joinable()) return make_next();
    std::unique_lock<std::mutex> lk(mu_);
    cv_.wait(lk, [this] { return !queue_.empty() || error_; });
    if (queue_.empty() && error_) std::rethrow_exception(error_);
    BatchedSequence b = std::move(queue_.front());
    queue_.pop_front();
    lk.unlock();
    cv_.notify_all();
    return b;
  }

  std::size_t epoch() const { return epoch_; }

 private:
  BatchedSequence make_next() {
    while (cursor_ >= current_.size()) {
      current_ = plan_->epoch_batches(next_epoch_);
      epoch_ = next_epoch_++;
      cursor_ = 0;
    }
    std::vector<InterleavedSequence> rows;
    for (auto i : current_[cursor_]) rows.push_back(plan_->sequences()[i]);
    ++cursor_;
    return collate_batch(rows, opt_);
  }

  void produce() {
    try {
      for (;;) {
        {
          std::unique_lock<std::mutex> lk(mu_);
          cv_.wait(lk, [this] { return stop_ || queue_.size() < depth_; });
          if (stop_) return;
        }
        BatchedSequence b = make_next();
        {
          std::lock_guard<std::mutex> lk(mu_);
          queue_.push_back(std::move(b));
        }
        cv_.notify_all();
      }
    } catch (...) {
      std::lock_guard<std::mutex> lk(mu_);
      error_ = std::current_exception();
      cv_.notify_all();
    }
  }

  std::shared_ptr<const BatchPlan> plan_;
  CollateOptions opt_;
  std::size_t depth_;
  std::vector<std::vector<std::size_t>> current_;
  std::size_t cursor_ = 0, next_epoch_ = 0, epoch_ = 0;
  std::thread worker_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<BatchedSequence> queue_;
  bool stop_ = false;
  std::exception_ptr error_;
};

inline std::shared_ptr<const BatchPlan> make_batch_plan(const Corpus& corpus, const TrainConfig& cfg) {
  return std::make_shared<const BatchPlan>(pack_corpus(corpus, cfg.packing, cfg.pack_options()), cfg.batch_images,
                                           cfg.batch_rows, derive_seed(cfg.seed, "batches"));
}

}  // namespace lcl
