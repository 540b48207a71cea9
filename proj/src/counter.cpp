#include "elm/counter.hpp"

namespace elm {

namespace {
thread_local MulCounter* g_counter = nullptr;
thread_local bool g_in_score_region = false;
}

MulCounter* active_counter() { return g_counter; }

CounterScope::CounterScope(MulCounter& c) : prev_(g_counter) { g_counter = &c; }
CounterScope::~CounterScope() { g_counter = prev_; }

ScoreRegion::ScoreRegion() : prev_(g_in_score_region) { g_in_score_region = true; }
ScoreRegion::~ScoreRegion() { g_in_score_region = prev_; }
bool ScoreRegion::active() { return g_in_score_region; }

void count_muls(uint64_t n) {
  if (!g_counter) return;
  g_counter->total += n;
  if (g_in_score_region) g_counter->attn_scores += n;
}

}  // namespace elm
