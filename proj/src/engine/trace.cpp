#include "uwb/engine/trace.hpp"

#include <cstdio>
#include <filesystem>
#include <stdexcept>

namespace uwb::engine {

void Trace::open(const std::string& path) {
    close();
    path_ = path;
    tmp_path_ = path + ".tmp";
    out_.open(tmp_path_, std::ios::out | std::ios::trunc | std::ios::binary);
    if (!out_) throw std::runtime_error("cannot open trace file " + tmp_path_);
}

void Trace::close() {
    if (!out_.is_open()) return;
    out_.flush();
    out_.close();
    std::filesystem::rename(tmp_path_, path_);
    path_.clear();
    tmp_path_.clear();
}

Trace::~Trace() {
    try {
        close();
    } catch (...) {
    }
}

void Trace::record(SimTime t, std::optional<NodeId> node, std::string_view kind,
                   std::string_view details, Level at) {
    if (!enabled(at)) return;
    line_.clear();
    line_ += std::to_string(ticks(t));
    line_ += '\t';
    line_ += node ? std::to_string(*node) : std::string("-");
    line_ += '\t';
    line_ += kind;
    line_ += '\t';
    line_ += details;
    line_ += '\n';
    for (unsigned char c : line_) {
        digest_ ^= c;
        digest_ *= 1099511628211ULL;
    }
    ++records_;
    if (out_.is_open()) out_.write(line_.data(), static_cast<std::streamsize>(line_.size()));
}

} // namespace uwb::engine
