#pragma once

#include <cstdint>

namespace elm {

// Tally of scalar multiplies executed by the math kernels. attn_scores
// counts only multiplies inside attention score products (the Q.K^T work),
// which is the quantity the analytic attention cost model predicts.
struct MulCounter {
  uint64_t total = 0;
  uint64_t attn_scores = 0;
};

MulCounter* active_counter();

// Routes kernel multiply counts into c for the current thread.
class CounterScope {
 public:
  explicit CounterScope(MulCounter& c);
  ~CounterScope();
  CounterScope(const CounterScope&) = delete;
  CounterScope& operator=(const CounterScope&) = delete;

 private:
  MulCounter* prev_;
};

// Brackets a region whose multiplies belong to the attention-score bucket.
class ScoreRegion {
 public:
  ScoreRegion();
  ~ScoreRegion();
  ScoreRegion(const ScoreRegion&) = delete;
  ScoreRegion& operator=(const ScoreRegion&) = delete;
  static bool active();

 private:
  bool prev_;
};

// Called by kernels; no-op unless a counter is in scope.
void count_muls(uint64_t n);

}  // namespace elm
