#pragma once

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <optional>
#include <thread>
#include <vector>

namespace ctxlens {

/**
 * Runs work(i) for i in [0, n) on up to `threads` workers and hands each
 * result to emit(i, result) on the calling thread in index order, as soon
 * as every earlier index is done. Output order never depends on scheduling.
 *
 * If work or emit throws, no further items are started, results before the
 * failed index are still emitted, and the exception is rethrown.
 */
template <class Result>
void ordered_parallel_map(std::size_t n, std::size_t threads, const std::function<Result(std::size_t)>& work,
                          const std::function<void(std::size_t, Result&)>& emit) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) {
      Result r = work(i);
      emit(i, r);
    }
    return;
  }

  std::vector<std::optional<Result>> slots(n);
  std::vector<std::exception_ptr> errors(n);
  std::vector<char> done(n, 0);
  std::mutex mu;
  std::condition_variable cv;
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};

  auto worker = [&] {
    for (;;) {
      if (stop.load()) return;
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      std::optional<Result> r;
      std::exception_ptr err;
      try {
        r.emplace(work(i));
      } catch (...) {
        err = std::current_exception();
        stop.store(true);
      }
      {
        std::lock_guard lock(mu);
        slots[i] = std::move(r);
        errors[i] = err;
        done[i] = 1;
      }
      cv.notify_all();
    }
  };

  std::vector<std::jthread> pool;
  const std::size_t count = std::min(threads, n);
  pool.reserve(count);
  for (std::size_t t = 0; t < count; ++t) pool.emplace_back(worker);

  std::exception_ptr failure;
  for (std::size_t i = 0; i < n; ++i) {
    std::unique_lock lock(mu);
    // once stopped, items never started will not complete
    cv.wait(lock, [&] { return done[i] || (stop.load() && i >= next.load()); });
    if (!done[i]) break;
    if (errors[i]) {
      failure = errors[i];
      break;
    }
    Result r = std::move(*slots[i]);
    slots[i].reset();
    lock.unlock();
    try {
      emit(i, r);
    } catch (...) {
      failure = std::current_exception();
      break;
    }
  }
  stop.store(true);
  pool.clear();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace ctxlens
