#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace pipebench {

// Error categories map 1:1 onto CLI exit codes.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfigError = 2;
inline constexpr int kExitDataError = 3;
inline constexpr int kExitDivergence = 4;
inline constexpr int kExitInternal = 5;

// Worker cap shared by generation, training and sweeps.
// Resolution order: explicit set_threads() > PIPEBENCH_THREADS > hardware.
int threads();
void set_threads(int n);  // n <= 0 restores automatic resolution

}  // namespace pipebench
