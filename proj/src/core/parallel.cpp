#include "rcan/parallel.hpp"

#include <cstdlib>
#include <string>
#include <thread>

namespace rcan {

int thread_count() noexcept {
  static const int count = [] {
    if (const char* env = std::getenv("RCAN_NUM_THREADS")) {
      try {
        const int n = std::stoi(env);
        if (n > 0) return n;
      } catch (...) {
      }
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
  }();
  return count;
}

}  // namespace rcan
