#include "distsearch/counters.hpp"

namespace distsearch {

EvalCounters& counters() {
  static EvalCounters c;
  return c;
}

}  // namespace distsearch
