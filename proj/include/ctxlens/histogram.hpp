#pragma once

#include <cstddef>
#include <map>
#include <utility>
#include <vector>

namespace ctxlens {

/// Counts per integer key (grid point), kept in ascending key order.
class Histogram {
 public:
  void add(std::size_t key, std::size_t count = 1) {
    counts_[key] += count;
    total_ += count;
  }

  std::vector<std::pair<std::size_t, std::size_t>> bins() const {
    return {counts_.begin(), counts_.end()};
  }
  std::size_t count(std::size_t key) const {
    auto it = counts_.find(key);
    return it == counts_.end() ? 0 : it->second;
  }
  std::size_t total() const noexcept { return total_; }
  bool empty() const noexcept { return total_ == 0; }

  bool operator==(const Histogram&) const = default;

 private:
  std::map<std::size_t, std::size_t> counts_;
  std::size_t total_ = 0;
};

}  // namespace ctxlens
