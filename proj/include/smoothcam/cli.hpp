#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "smoothcam/cam.hpp"

namespace smoothcam::cli {

enum ExitCode : int {
    exit_ok = 0,
    exit_usage = 2,
    exit_model_or_file = 3,
    exit_numeric = 4,
};

struct BuildOptions {
    // Set only by the negative-control build of the tool.
    bool corrupt_gradient = false;
};

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err, const BuildOptions& build = {});

/// "(i,j);(i,j)" <-> coordinates. Whitespace around tokens is ignored.
std::vector<Coord> parse_subset(std::string_view text);
std::string format_subset(const std::vector<Coord>& subset);

/// "k1,k2,..." <-> filter indices.
std::vector<std::size_t> parse_filters(std::string_view text);
std::string format_filters(const std::vector<std::size_t>& filters);

/// Ordered "key: value" lines.
class RunManifest {
public:
    void set(std::string key, std::string value);
    const std::string* find(std::string_view key) const;
    const std::string& at(std::string_view key) const;
    std::string str() const;
    static RunManifest parse(std::string_view text);
    static RunManifest read(const std::filesystem::path& path);

private:
    std::vector<std::pair<std::string, std::string>> entries_;
};

/// Inputs of one `cam` invocation; everything needed to reproduce it.
struct CamInvocation {
    std::filesystem::path model;
    std::filesystem::path image;
    CamRequest request;
    double overlay_alpha = 0.5;
};

/// Rebuilds an invocation from a run manifest written by `cam`.
CamInvocation invocation_from_manifest(const RunManifest& manifest);

/// Raw map as text: one row per line, values separated by single spaces,
/// shortest round-trip decimal form.
std::string format_grid(const Tensor& map);

}  // namespace smoothcam::cli
