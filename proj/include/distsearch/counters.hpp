#pragma once

#include <cstdint>

namespace distsearch {

// Global instrumentation counters. Single-threaded by design: reset before a
// measured region, read after. Network forwards are attributed via the
// network's role tag; backward_passes counts full graph backward sweeps;
// pathway counters track per-pathway loss evaluations and clip skips.
struct EvalCounters {
  int64_t forward_student = 0;
  int64_t forward_teacher = 0;
  int64_t backward_passes = 0;
  int64_t pathway_evals = 0;
  int64_t pathway_skips = 0;

  void reset() { *this = EvalCounters{}; }
};

EvalCounters& counters();

}  // namespace distsearch
