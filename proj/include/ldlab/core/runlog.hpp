#pragma once

// Streaming JSON-lines log for training runs: one line per gradient step
// carrying step index, loss, learning rate, and wall time in milliseconds.
// A default-constructed log is inactive and swallows lines.

#include <chrono>
#include <fstream>
#include <string>

#include <json.hpp>

#include "ldlab/core/error.hpp"

namespace ldlab {

class RunLog {
  public:
    RunLog() = default;
    explicit RunLog(const std::string& path) {
        f_.open(path, std::ios::binary | std::ios::trunc);
        require(f_.good(), Err::IoError, "cannot open run log for write: " + path);
    }

    bool active() const { return f_.is_open(); }

    void line(int step, double loss, double lr, double wall_ms) {
        if (!f_.is_open()) return;
        f_ << nlohmann::json{{"step", step}, {"loss", loss}, {"lr", lr}, {"wall_ms", wall_ms}}
                  .dump()
           << "\n";
        f_.flush();
        require(f_.good(), Err::IoError, "run log write failed");
    }

  private:
    std::ofstream f_;
};

// Milliseconds elapsed since `start`.
inline double wall_ms_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
        .count();
}

}  // namespace ldlab
