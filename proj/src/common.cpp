#include "pipebench/common.hpp"

#include <cstdlib>
#include <thread>

namespace pipebench {

namespace {
int g_threads = 0;
}

void set_threads(int n) { g_threads = n; }

int threads() {
    if (g_threads > 0) return g_threads;
    if (const char* env = std::getenv("PIPEBENCH_THREADS")) {
        int n = std::atoi(env);
        if (n > 0) return n;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? static_cast<int>(hw) : 1;
}

}  // namespace pipebench
