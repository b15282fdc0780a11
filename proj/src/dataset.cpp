#include "citras/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

#include "citras/errors.hpp"

namespace citras {

const char* role_name(Role role) noexcept {
    switch (role) {
        case Role::target: return "target";
        case Role::observed: return "observed";
        case Role::known: return "known";
    }
    return "?";
}

void RoleManifest::validate() const {
    if (targets.empty()) throw ManifestError("manifest must name at least one target column");
    std::set<std::string> seen;
    auto check = [&](const std::vector<std::string>& names, const char* role) {
        for (const auto& n : names) {
            if (n == timestamp) throw ManifestError(std::string("column '") + n + "' is both the timestamp and a " + role + " column");
            if (!seen.insert(n).second) throw ManifestError("column '" + n + "' is assigned to more than one role");
        }
    };
    check(targets, "target");
    check(observed, "observed");
    check(known, "known");
}

RoleManifest RoleManifest::from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ManifestError("manifest must be a JSON object");
    RoleManifest m;
    auto names = [&](const char* key, bool required) {
        std::vector<std::string> out;
        if (!j.contains(key)) {
            if (required) throw ManifestError(std::string("manifest is missing key '") + key + "'");
            return out;
        }
        const auto& arr = j.at(key);
        if (!arr.is_array()) throw ManifestError(std::string("manifest key '") + key + "' must be an array of names");
        for (const auto& v : arr) {
            if (!v.is_string()) throw ManifestError(std::string("manifest key '") + key + "' must contain strings");
            out.push_back(v.get<std::string>());
        }
        return out;
    };
    if (!j.contains("timestamp") || !j.at("timestamp").is_string()) {
        throw ManifestError("manifest is missing key 'timestamp'");
    }
    m.timestamp = j.at("timestamp").get<std::string>();
    m.targets = names("targets", true);
    m.observed = names("observed", false);
    m.known = names("known", false);
    m.validate();
    return m;
}

RoleManifest RoleManifest::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ManifestError("cannot open manifest '" + path.string() + "'");
    try {
        return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
        throw ManifestError("malformed manifest '" + path.string() + "': " + e.what());
    }
}

nlohmann::json RoleManifest::to_json() const {
    return {{"timestamp", timestamp}, {"targets", targets}, {"observed", observed}, {"known", known}};
}

SeriesFrame::SeriesFrame(RoleManifest roles, std::vector<std::int64_t> timestamps, Columns targets, Columns observed,
                         Columns known)
    : roles_(std::move(roles)),
      timestamps_(std::move(timestamps)),
      targets_(std::move(targets)),
      observed_(std::move(observed)),
      known_(std::move(known)) {
    const std::size_t n = timestamps_.size();
    auto check = [&](const Columns& cols, Role role) {
        for (const auto& c : cols) {
            if (c.size() != n) {
                throw IngestionError(std::string(role_name(role)) + " column length " + std::to_string(c.size()) +
                                     " differs from timestamp count " + std::to_string(n));
            }
        }
    };
    check(targets_, Role::target);
    check(observed_, Role::observed);
    check(known_, Role::known);
    if (targets_.empty()) throw ManifestError("a series frame needs at least one target");
    for (std::size_t i = 1; i < n; ++i) {
        if (timestamps_[i] <= timestamps_[i - 1]) {
            throw IngestionError("timestamps must be strictly increasing (row " + std::to_string(i) + ")");
        }
    }
    for (std::size_t i = 2; i < n; ++i) {
        if (timestamps_[i] - timestamps_[i - 1] != timestamps_[1] - timestamps_[0]) {
            regular_ = false;
            warnings_.push_back("irregular sampling interval first seen at row " + std::to_string(i));
            break;
        }
    }
}

const Columns& SeriesFrame::columns(Role role) const noexcept {
    switch (role) {
        case Role::observed: return observed_;
        case Role::known: return known_;
        default: return targets_;
    }
}

SeriesFrame SeriesFrame::slice(std::size_t begin, std::size_t end) const {
    if (begin > end || end > length()) throw SplitError("slice [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of range");
    auto cut = [&](const Columns& cols) {
        Columns out;
        out.reserve(cols.size());
        for (const auto& c : cols) out.emplace_back(c.begin() + begin, c.begin() + end);
        return out;
    };
    SeriesFrame out;
    out.roles_ = roles_;
    out.timestamps_.assign(timestamps_.begin() + begin, timestamps_.begin() + end);
    out.targets_ = cut(targets_);
    out.observed_ = cut(observed_);
    out.known_ = cut(known_);
    out.regular_ = regular_;
    out.warnings_ = warnings_;
    return out;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char ch = line[i];
        if (quoted) {
            if (ch == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field.push_back(ch);
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            out.push_back(std::move(field));
            field.clear();
        } else if (ch != '\r') {
            field.push_back(ch);
        }
    }
    out.push_back(std::move(field));
    return out;
}

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t");
    return std::string(s.substr(b, e - b + 1));
}

bool is_missing(const std::string& cell) {
    static const std::set<std::string> tokens = {"", "NA", "N/A", "NaN", "nan", "NAN", "null", "NULL", "None"};
    return tokens.contains(cell);
}

std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
    y -= m <= 2;
    const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
    const char* first = s.data();
    const char* last = s.data() + s.size();
    if (first != last && *first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc() && ptr == last;
}

bool parse_timestamp(const std::string& s, std::int64_t& out) {
    if (parse_number(s, out)) return true;
    double real = 0.0;
    if (parse_number(s, real) && std::isfinite(real)) {
        out = static_cast<std::int64_t>(std::llround(real));
        return true;
    }
    // YYYY-MM-DD[( |T)HH:MM[:SS]]
    int y = 0, mo = 0, d = 0, h = 0, mi = 0, sec = 0;
    if (s.size() < 10 || s[4] != '-' || s[7] != '-') return false;
    if (!parse_number(std::string_view(s).substr(0, 4), y) || !parse_number(std::string_view(s).substr(5, 2), mo) ||
        !parse_number(std::string_view(s).substr(8, 2), d)) {
        return false;
    }
    if (s.size() > 10) {
        if ((s[10] != ' ' && s[10] != 'T') || s.size() < 16 || s[13] != ':') return false;
        if (!parse_number(std::string_view(s).substr(11, 2), h) || !parse_number(std::string_view(s).substr(14, 2), mi)) return false;
        if (s.size() > 16) {
            if (s[16] != ':' || s.size() < 19) return false;
            if (!parse_number(std::string_view(s).substr(17, 2), sec)) return false;
            if (s.size() > 19) return false;
        }
    }
    if (mo < 1 || mo > 12 || d < 1 || d > 31 || h > 23 || mi > 59 || sec > 60) return false;
    out = days_from_civil(y, static_cast<unsigned>(mo), static_cast<unsigned>(d)) * 86400 + h * 3600 + mi * 60 + sec;
    return true;
}

}  // namespace

SeriesFrame parse_series(std::istream& in, const RoleManifest& manifest, const std::string& source) {
    manifest.validate();
    std::string line;
    if (!std::getline(in, line)) throw IngestionError(source + ": missing header row");
    if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF && static_cast<unsigned char>(line[1]) == 0xBB &&
        static_cast<unsigned char>(line[2]) == 0xBF) {
        line.erase(0, 3);
    }
    std::vector<std::string> header = split_csv_line(line);
    for (auto& h : header) h = trim(h);
    std::unordered_map<std::string, std::size_t> position;
    for (std::size_t i = 0; i < header.size(); ++i) position.emplace(header[i], i);

    auto locate = [&](const std::string& name) {
        auto it = position.find(name);
        if (it == position.end()) throw ManifestError("column '" + name + "' named in the manifest is absent from " + source);
        return it->second;
    };
    const std::size_t ts_col = locate(manifest.timestamp);
    auto locate_all = [&](const std::vector<std::string>& names) {
        std::vector<std::size_t> cols;
        for (const auto& n : names) cols.push_back(locate(n));
        return cols;
    };
    const auto tgt_cols = locate_all(manifest.targets);
    const auto obs_cols = locate_all(manifest.observed);
    const auto knw_cols = locate_all(manifest.known);

    struct Row {
        std::int64_t ts;
        std::vector<double> values;  // targets, observed, known
    };
    std::vector<Row> rows;
    std::vector<std::size_t> value_cols = tgt_cols;
    value_cols.insert(value_cols.end(), obs_cols.begin(), obs_cols.end());
    value_cols.insert(value_cols.end(), knw_cols.begin(), knw_cols.end());
    std::vector<std::string> value_names = manifest.targets;
    value_names.insert(value_names.end(), manifest.observed.begin(), manifest.observed.end());
    value_names.insert(value_names.end(), manifest.known.begin(), manifest.known.end());

    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty() || line == "\r") continue;
        const auto cells = split_csv_line(line);
        if (cells.size() != header.size()) {
            throw IngestionError(source + ": row " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                                 " cells, header has " + std::to_string(header.size()));
        }
        Row row;
        const std::string ts = trim(cells[ts_col]);
        if (is_missing(ts)) throw IngestionError(source + ": missing timestamp at row " + std::to_string(line_no));
        if (!parse_timestamp(ts, row.ts)) {
            throw IngestionError(source + ": unparsable timestamp '" + ts + "' at row " + std::to_string(line_no));
        }
        row.values.reserve(value_cols.size());
        for (std::size_t k = 0; k < value_cols.size(); ++k) {
            const std::string cell = trim(cells[value_cols[k]]);
            if (is_missing(cell)) {
                throw IngestionError(source + ": missing value at row " + std::to_string(line_no) + ", column '" + value_names[k] + "'");
            }
            double v = 0.0;
            if (!parse_number(cell, v) || !std::isfinite(v)) {
                throw IngestionError(source + ": cannot parse '" + cell + "' at row " + std::to_string(line_no) + ", column '" +
                                     value_names[k] + "'");
            }
            row.values.push_back(v);
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw IngestionError(source + ": no data rows");

    std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.ts < b.ts; });
    for (std::size_t i = 1; i < rows.size(); ++i) {
        if (rows[i].ts == rows[i - 1].ts) throw IngestionError(source + ": duplicate timestamp in data rows");
    }

    const std::size_t n = rows.size();
    std::vector<std::int64_t> ts(n);
    auto columns = [&](std::size_t offset, std::size_t count) {
        Columns out(count, std::vector<double>(n));
        for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t c = 0; c < count; ++c) out[c][r] = rows[r].values[offset + c];
        }
        return out;
    };
    for (std::size_t r = 0; r < n; ++r) ts[r] = rows[r].ts;
    const std::size_t nt = tgt_cols.size(), no = obs_cols.size(), nk = knw_cols.size();
    return SeriesFrame(manifest, std::move(ts), columns(0, nt), columns(nt, no), columns(nt + no, nk));
}

SeriesFrame load_series(const std::filesystem::path& path, const RoleManifest& manifest) {
    std::ifstream in(path);
    if (!in) throw IngestionError("cannot open '" + path.string() + "'");
    return parse_series(in, manifest, path.string());
}

ChronologicalSplit chronological_split(const SeriesFrame& frame, SplitSizes sizes) {
    const std::size_t total = sizes.train + sizes.val + sizes.test;
    if (total > frame.length()) {
        throw SplitError("split sizes (" + std::to_string(sizes.train) + ", " + std::to_string(sizes.val) + ", " +
                         std::to_string(sizes.test) + ") exceed frame length " + std::to_string(frame.length()));
    }
    ChronologicalSplit s;
    s.train_begin = 0;
    s.val_begin = sizes.train;
    s.test_begin = sizes.train + sizes.val;
    s.end = total;
    s.train = frame.slice(0, s.val_begin);
    s.val = frame.slice(s.val_begin, s.test_begin);
    s.test = frame.slice(s.test_begin, s.end);
    return s;
}

std::size_t Window::lookback() const { return lookback_target.empty() ? 0 : lookback_target.front().size(); }
std::size_t Window::horizon() const { return horizon_target.empty() ? 0 : horizon_target.front().size(); }

Window make_window(const SeriesFrame& frame, std::size_t origin, std::size_t lookback, std::size_t horizon) {
    if (origin + lookback + horizon > frame.length()) {
        throw AlignmentError("window at origin " + std::to_string(origin) + " with length " + std::to_string(lookback + horizon) +
                             " exceeds frame length " + std::to_string(frame.length()));
    }
    auto cut = [](const Columns& cols, std::size_t b, std::size_t e) {
        Columns out;
        out.reserve(cols.size());
        for (const auto& c : cols) out.emplace_back(c.begin() + b, c.begin() + e);
        return out;
    };
    const std::size_t t_end = origin + lookback;
    Window w;
    w.origin = origin;
    w.lookback_target = cut(frame.targets(), origin, t_end);
    w.lookback_observed = cut(frame.observed(), origin, t_end);
    w.known_extended = cut(frame.known(), origin, t_end + horizon);
    w.horizon_target = cut(frame.targets(), t_end, t_end + horizon);
    return w;
}

namespace {

void check_window_options(const WindowOptions& o) {
    if (o.patch == 0) throw DivisibilityError("patch length must be >= 1");
    if (o.lookback % o.patch != 0) {
        throw DivisibilityError("lookback T=" + std::to_string(o.lookback) + " is not divisible by patch length P=" + std::to_string(o.patch));
    }
    if (o.whole_patches && o.horizon % o.patch != 0) {
        throw DivisibilityError("horizon S=" + std::to_string(o.horizon) + " is not divisible by patch length P=" + std::to_string(o.patch));
    }
    if (o.stride == 0) throw ContractError("window stride must be >= 1");
    if (o.drop_last && o.batch_size == 0) throw ContractError("batch size must be >= 1");
}

std::size_t apply_drop_last(std::size_t count, const WindowOptions& o) {
    return o.drop_last ? count - count % o.batch_size : count;
}

}  // namespace

std::size_t window_count(std::size_t length, const WindowOptions& o) {
    const std::size_t span = o.lookback + o.horizon;
    if (length < span || o.stride == 0) return 0;
    return apply_drop_last((length - span) / o.stride + 1, o);
}

std::vector<Window> window_iter(const SeriesFrame& frame, const WindowOptions& o) {
    check_window_options(o);
    if (o.lookback + o.horizon > frame.length()) {
        throw ContractError("T+S=" + std::to_string(o.lookback + o.horizon) + " exceeds frame length " + std::to_string(frame.length()));
    }
    const std::size_t count = window_count(frame.length(), o);
    std::vector<Window> out;
    out.reserve(count);
    for (std::size_t k = 0; k < count; ++k) out.push_back(make_window(frame, k * o.stride, o.lookback, o.horizon));
    return out;
}

std::vector<Window> segment_windows(const SeriesFrame& frame, const ChronologicalSplit& split, Segment segment,
                                    const WindowOptions& o) {
    check_window_options(o);
    std::size_t seg_begin = 0, seg_end = 0, first_origin = 0;
    switch (segment) {
        case Segment::train:
            seg_begin = split.train_begin;
            seg_end = split.val_begin;
            first_origin = seg_begin;
            break;
        case Segment::val:
            seg_begin = split.val_begin;
            seg_end = split.test_begin;
            first_origin = seg_begin >= o.lookback ? seg_begin - o.lookback : 0;
            break;
        case Segment::test:
            seg_begin = split.test_begin;
            seg_end = split.end;
            first_origin = seg_begin >= o.lookback ? seg_begin - o.lookback : 0;
            break;
    }
    std::vector<Window> out;
    if (seg_end < first_origin + o.lookback + o.horizon) return out;
    const std::size_t count = apply_drop_last((seg_end - first_origin - o.lookback - o.horizon) / o.stride + 1, o);
    out.reserve(count);
    for (std::size_t k = 0; k < count; ++k) out.push_back(make_window(frame, first_origin + k * o.stride, o.lookback, o.horizon));
    return out;
}

Tensor patchify(std::span<const double> x, std::size_t patch) {
    if (patch == 0) throw DivisibilityError("patch length must be >= 1");
    if (x.empty() || x.size() % patch != 0) {
        throw DivisibilityError("series length T=" + std::to_string(x.size()) + " is not divisible by patch length P=" +
                                std::to_string(patch));
    }
    return Tensor({x.size() / patch, patch}, std::vector<double>(x.begin(), x.end()));
}

std::vector<double> flatten(const Tensor& patches) { return patches.storage(); }

Standardizer Standardizer::fit(const SeriesFrame& reference, double eps) {
    if (reference.length() == 0) throw ContractError("cannot fit a standardizer on an empty segment");
    Standardizer s;
    auto add = [&](const Columns& cols) {
        for (const auto& c : cols) {
            double mu = 0.0;
            for (double v : c) mu += v;
            mu /= static_cast<double>(c.size());
            double var = 0.0;
            for (double v : c) var += (v - mu) * (v - mu);
            var /= static_cast<double>(c.size());
            s.mean.push_back(mu);
            s.std.push_back(std::max(std::sqrt(var), eps));
        }
    };
    add(reference.targets());
    add(reference.observed());
    add(reference.known());
    return s;
}

SeriesFrame Standardizer::apply(const SeriesFrame& frame) const {
    const std::size_t nt = frame.target_count(), no = frame.observed_count();
    if (mean.size() != nt + no + frame.known_count()) throw ContractError("standardizer variate count does not match the frame");
    return frame.transformed([&](Role role, std::size_t c, std::vector<double>& col) {
        const std::size_t k = role == Role::target ? c : role == Role::observed ? nt + c : nt + no + c;
        for (double& v : col) v = (v - mean[k]) / std[k];
    });
}

}  // namespace citras
