#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "citras/tensor.hpp"

namespace citras {

enum class Role { target, observed, known };

const char* role_name(Role role) noexcept;

// Column roles for one CSV file.
struct RoleManifest {
    std::string timestamp;
    std::vector<std::string> targets;
    std::vector<std::string> observed;
    std::vector<std::string> known;

    // Non-empty target list and pairwise-disjoint roles.
    void validate() const;

    static RoleManifest from_json(const nlohmann::json& j);
    static RoleManifest load(const std::filesystem::path& path);
    nlohmann::json to_json() const;
};

// One vector per variate, all of equal length.
using Columns = std::vector<std::vector<double>>;

// A complete multivariate series grouped by role. Immutable once built.
class SeriesFrame {
public:
    SeriesFrame() = default;
    SeriesFrame(RoleManifest roles, std::vector<std::int64_t> timestamps, Columns targets, Columns observed, Columns known);

    const RoleManifest& roles() const noexcept { return roles_; }
    const std::vector<std::int64_t>& timestamps() const noexcept { return timestamps_; }
    const Columns& targets() const noexcept { return targets_; }
    const Columns& observed() const noexcept { return observed_; }
    const Columns& known() const noexcept { return known_; }
    const Columns& columns(Role role) const noexcept;

    std::size_t length() const noexcept { return timestamps_.size(); }
    std::size_t target_count() const noexcept { return targets_.size(); }
    std::size_t observed_count() const noexcept { return observed_.size(); }
    std::size_t known_count() const noexcept { return known_.size(); }

    // True when every timestamp step equals the first one.
    bool regular_interval() const noexcept { return regular_; }
    const std::vector<std::string>& warnings() const noexcept { return warnings_; }

    SeriesFrame slice(std::size_t begin, std::size_t end) const;

    // Returns a copy with every column mapped through fn(role, variate, column).
    template <typename Fn>
    SeriesFrame transformed(Fn&& fn) const {
        SeriesFrame out = *this;
        for (std::size_t c = 0; c < out.targets_.size(); ++c) fn(Role::target, c, out.targets_[c]);
        for (std::size_t c = 0; c < out.observed_.size(); ++c) fn(Role::observed, c, out.observed_[c]);
        for (std::size_t c = 0; c < out.known_.size(); ++c) fn(Role::known, c, out.known_[c]);
        return out;
    }

private:
    RoleManifest roles_;
    std::vector<std::int64_t> timestamps_;
    Columns targets_;
    Columns observed_;
    Columns known_;
    bool regular_ = true;
    std::vector<std::string> warnings_;
};

// Parses a CSV file with a header row. Timestamps may be integers or
// ISO-8601 date-times ("YYYY-MM-DD[ HH:MM[:SS]]", also with 'T').
SeriesFrame load_series(const std::filesystem::path& path, const RoleManifest& manifest);
SeriesFrame parse_series(std::istream& in, const RoleManifest& manifest, const std::string& source = "<stream>");

struct SplitSizes {
    std::size_t train = 0;
    std::size_t val = 0;
    std::size_t test = 0;
};

// Contiguous, ordered, non-overlapping segments. The begin offsets index the
// source frame so evaluation windows can borrow lookback rows from earlier
// segments.
struct ChronologicalSplit {
    SeriesFrame train;
    SeriesFrame val;
    SeriesFrame test;
    std::size_t train_begin = 0;
    std::size_t val_begin = 0;
    std::size_t test_begin = 0;
    std::size_t end = 0;
};

ChronologicalSplit chronological_split(const SeriesFrame& frame, SplitSizes sizes);

// One training / evaluation sample. Columns are per variate.
struct Window {
    Columns lookback_target;    // C_tgt x T
    Columns lookback_observed;  // C_obs x T
    Columns known_extended;     // C_knw x (T + S)
    Columns horizon_target;     // C_tgt x S
    std::size_t origin = 0;

    std::size_t lookback() const;
    std::size_t horizon() const;
};

// Extracts the window whose lookback starts at `origin`; no divisibility check.
Window make_window(const SeriesFrame& frame, std::size_t origin, std::size_t lookback, std::size_t horizon);

struct WindowOptions {
    std::size_t lookback = 168;
    std::size_t horizon = 24;
    std::size_t stride = 1;
    std::size_t patch = 24;
    bool drop_last = false;
    // Only consulted when drop_last is set: trailing windows that do not fill
    // a complete batch are dropped.
    std::size_t batch_size = 1;
    // Evaluation windows may carry a horizon that is not a patch multiple;
    // rolling forecasts truncate to it.
    bool whole_patches = true;
};

std::size_t window_count(std::size_t length, const WindowOptions& options);
std::vector<Window> window_iter(const SeriesFrame& frame, const WindowOptions& options);

enum class Segment { train, val, test };

// Windows whose horizon lies inside the chosen segment. Lookback rows may
// reach back into earlier segments; train windows never leave the train rows.
std::vector<Window> segment_windows(const SeriesFrame& frame, const ChronologicalSplit& split, Segment segment,
                                    const WindowOptions& options);

// Splits x into consecutive non-overlapping rows of length `patch`.
Tensor patchify(std::span<const double> x, std::size_t patch);
std::vector<double> flatten(const Tensor& patches);

// Per-variate z-scoring with statistics from a reference segment.
struct Standardizer {
    std::vector<double> mean;  // targets, then observed, then known
    std::vector<double> std;

    static Standardizer fit(const SeriesFrame& reference, double eps = 1e-5);
    SeriesFrame apply(const SeriesFrame& frame) const;
};

}  // namespace citras
