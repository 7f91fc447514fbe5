// SPDX-License-Identifier: Apache-2.0

#ifndef DAPINN_THREADING_HPP
#define DAPINN_THREADING_HPP

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace dapinn {

// Work is always split into the same fixed-size chunks regardless of how many
// threads execute them; threads only change scheduling, never the arithmetic.
// This keeps results bit-identical for 1 and N workers.
//
// Kernels here are ~50us-1ms, so workers spin briefly before sleeping and the
// caller spins on completion; the handshake stays in the sub-microsecond
// range while a training loop is hot.
class ThreadPool {
 public:
  static constexpr long kChunkRows = 1024;

  explicit ThreadPool(int threads) {
    for (int i = 0; i + 1 < threads; ++i)
      workers_.emplace_back([this] { worker_loop(); });
  }

  ThreadPool(const ThreadPool&) = delete;
  ThreadPool& operator=(const ThreadPool&) = delete;

  ~ThreadPool() {
    stop_.store(true, std::memory_order_release);
    {
      std::lock_guard<std::mutex> lk(mu_);
    }
    cv_.notify_all();
    for (auto& w : workers_) w.join();
  }

  int size() const { return static_cast<int>(workers_.size()) + 1; }

  // Runs fn(chunk) for chunk in [0, nchunks); the calling thread participates
  // and the call does not return until every chunk has finished and no worker
  // is still inside the claim loop.
  void run_chunks(int nchunks, const std::function<void(int)>& fn) {
    if (nchunks <= 0) return;
    if (workers_.empty() || nchunks == 1) {
      for (int c = 0; c < nchunks; ++c) fn(c);
      return;
    }
    task_ = &fn;
    nchunks_ = nchunks;
    next_.store(0, std::memory_order_relaxed);
    remaining_.store(nchunks, std::memory_order_relaxed);
    generation_.fetch_add(1, std::memory_order_release);
    if (sleepers_.load(std::memory_order_acquire) > 0) {
      std::lock_guard<std::mutex> lk(mu_);
      cv_.notify_all();
    }
    claim(fn);
    // Completion spin: chunks are short and the caller has nothing else to do.
    while (remaining_.load(std::memory_order_acquire) != 0 ||
           claimers_.load(std::memory_order_acquire) != 0) {
      cpu_relax();
    }
    task_ = nullptr;
  }

 private:
  static void cpu_relax() {
#if defined(__x86_64__) || defined(__i386__)
    __builtin_ia32_pause();
#else
    std::this_thread::yield();
#endif
  }

  void claim(const std::function<void(int)>& fn) {
    int done = 0;
    for (;;) {
      const int c = next_.fetch_add(1, std::memory_order_relaxed);
      if (c >= nchunks_) break;
      fn(c);
      ++done;
    }
    if (done > 0) remaining_.fetch_sub(done, std::memory_order_acq_rel);
  }

  void worker_loop() {
    std::uint64_t seen = 0;
    for (;;) {
      // Spin for a new generation, then fall back to the condition variable.
      std::uint64_t gen = generation_.load(std::memory_order_acquire);
      int spins = 0;
      while (gen == seen && !stop_.load(std::memory_order_acquire)) {
        if (++spins > 20000) {
          std::unique_lock<std::mutex> lk(mu_);
          sleepers_.fetch_add(1, std::memory_order_acq_rel);
          cv_.wait_for(lk, std::chrono::milliseconds(50), [&] {
            return stop_.load(std::memory_order_acquire) ||
                   generation_.load(std::memory_order_acquire) != seen;
          });
          sleepers_.fetch_sub(1, std::memory_order_acq_rel);
          spins = 0;
        } else {
          cpu_relax();
        }
        gen = generation_.load(std::memory_order_acquire);
      }
      if (stop_.load(std::memory_order_acquire)) return;

      // Adopt the generation before claiming so run_chunks cannot reset the
      // counters while this thread is inside the claim loop.
      claimers_.fetch_add(1, std::memory_order_acq_rel);
      if (generation_.load(std::memory_order_acquire) == gen &&
          remaining_.load(std::memory_order_acquire) > 0) {
        const std::function<void(int)>* task = task_;
        if (task != nullptr) claim(*task);
      }
      claimers_.fetch_sub(1, std::memory_order_acq_rel);
      seen = gen;
    }
  }

  std::vector<std::thread> workers_;
  std::mutex mu_;
  std::condition_variable cv_;
  const std::function<void(int)>* task_ = nullptr;
  std::atomic<int> next_{0};
  std::atomic<int> remaining_{0};
  std::atomic<int> claimers_{0};
  std::atomic<int> sleepers_{0};
  int nchunks_ = 0;
  std::atomic<std::uint64_t> generation_{0};
  std::atomic<bool> stop_{false};
};

// Splits [0, n) into fixed-size row chunks and applies fn(begin, len) to each.
// pool may be null (serial); the decomposition is identical either way.
inline void parallel_rows(ThreadPool* pool, long n,
                          const std::function<void(long, long)>& fn) {
  if (n <= 0) return;
  const long chunk = ThreadPool::kChunkRows;
  const int nchunks = static_cast<int>((n + chunk - 1) / chunk);
  auto body = [&](int c) {
    const long begin = static_cast<long>(c) * chunk;
    fn(begin, std::min(chunk, n - begin));
  };
  if (pool == nullptr || nchunks == 1) {
    for (int c = 0; c < nchunks; ++c) body(c);
  } else {
    pool->run_chunks(nchunks, body);
  }
}

}  // namespace dapinn
#endif  // DAPINN_THREADING_HPP
