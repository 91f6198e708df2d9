#pragma once

#include "uwb/engine/sim_time.hpp"

#include <cstdint>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <string_view>

namespace uwb::engine {

/// Append-only event trace.
///
/// Record format, one per line, tab separated:
///
///     <time_ps>\t<node>\t<kind>\t<details>
///
/// `node` is the decimal node id or `-` for network-wide records. `details`
/// is a space separated list of key=value pairs. Every record also feeds a
/// running FNV-1a digest so determinism can be checked without a file.
class Trace {
public:
    enum class Level { off, protocol, full };

    Trace() = default;
    explicit Trace(Level level) : level_(level) {}

    /// Streams records to `path`. The file is written under a temporary name
    /// and renamed into place by `close()`.
    void open(const std::string& path);
    void close();
    ~Trace();

    Trace(const Trace&) = delete;
    Trace& operator=(const Trace&) = delete;

    [[nodiscard]] Level level() const { return level_; }
    void set_level(Level level) { level_ = level; }
    [[nodiscard]] bool enabled(Level at) const {
        return level_ != Level::off && static_cast<int>(at) <= static_cast<int>(level_);
    }

    void record(SimTime t, std::optional<NodeId> node, std::string_view kind,
                std::string_view details, Level at = Level::protocol);

    [[nodiscard]] std::uint64_t digest() const { return digest_; }
    [[nodiscard]] std::uint64_t records() const { return records_; }

private:
    Level level_ = Level::protocol;
    std::ofstream out_;
    std::string path_;
    std::string tmp_path_;
    std::uint64_t digest_ = 1469598103934665603ULL;
    std::uint64_t records_ = 0;
    std::string line_;
};

} // namespace uwb::engine
