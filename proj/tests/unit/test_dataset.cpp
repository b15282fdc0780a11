#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "citras/dataset.hpp"
#include "citras/errors.hpp"
#include "reference.hpp"

using namespace citras;

namespace {

SeriesFrame parse(const std::string& csv, const RoleManifest& m) {
    std::istringstream in(csv);
    return parse_series(in, m, "test.csv");
}

// Every column holds its row index plus an offset, so windows can be audited.
SeriesFrame indexed_frame(std::size_t n, std::size_t targets = 1, std::size_t observed = 1, std::size_t known = 1) {
    RoleManifest m{"ts", {}, {}, {}};
    auto cols = [&](std::size_t count, double offset, std::vector<std::string>& names, const char* prefix) {
        Columns out;
        for (std::size_t c = 0; c < count; ++c) {
            std::vector<double> v(n);
            for (std::size_t t = 0; t < n; ++t) v[t] = static_cast<double>(t) + offset + 1000.0 * static_cast<double>(c);
            out.push_back(std::move(v));
            names.push_back(prefix + std::to_string(c));
        }
        return out;
    };
    Columns t = cols(targets, 0.0, m.targets, "y");
    Columns o = cols(observed, 0.25, m.observed, "o");
    Columns k = cols(known, 0.5, m.known, "k");
    std::vector<std::int64_t> ts(n);
    std::iota(ts.begin(), ts.end(), 0);
    return SeriesFrame(m, ts, t, o, k);
}

std::string message_of(auto&& fn) {
    try {
        fn();
    } catch (const std::exception& e) {
        return e.what();
    }
    return {};
}

}  // namespace

TEST_SUITE("manifest") {
    TEST_CASE("json keys") {
        const auto m = RoleManifest::from_json(nlohmann::json::parse(R"({"timestamp":"ts","targets":["y"],"observed":[],"known":["h"]})"));
        CHECK(m.timestamp == "ts");
        CHECK(m.targets == std::vector<std::string>{"y"});
        CHECK(m.known == std::vector<std::string>{"h"});
        CHECK(RoleManifest::from_json(m.to_json()).targets == m.targets);
    }

    TEST_CASE("invalid manifests") {
        CHECK_THROWS_AS((RoleManifest{"ts", {}, {}, {}}.validate()), ManifestError);
        CHECK_THROWS_AS((RoleManifest{"ts", {"y"}, {"y"}, {}}.validate()), ManifestError);
        CHECK_THROWS_AS((RoleManifest{"ts", {"y"}, {}, {"ts"}}.validate()), ManifestError);
        CHECK_THROWS_AS(RoleManifest::from_json(nlohmann::json::parse(R"({"targets":["y"]})")), ManifestError);
    }
}

TEST_SUITE("load_series") {
    const RoleManifest ym{"ts", {"y"}, {}, {"holiday"}};

    TEST_CASE("three-row file") {
        const auto f = parse("ts,y,holiday\n0,1.5,0\n1,2.5,1\n2,3.5,0\n", ym);
        CHECK(f.length() == 3);
        CHECK(f.target_count() == 1);
        CHECK(f.known_count() == 1);
        CHECK(f.observed_count() == 0);
        CHECK(f.targets()[0] == std::vector<double>{1.5, 2.5, 3.5});
        CHECK(f.regular_interval());
    }

    TEST_CASE("price file with two known covariates") {
        const RoleManifest m{"date", {"price"}, {}, {"load_forecast", "wind_forecast"}};
        const auto f = parse("date,price,load_forecast,wind_forecast\n2018-01-01 00:00,30.1,1000,12\n2018-01-01 01:00,29.5,990,13\n", m);
        CHECK(f.target_count() == 1);
        CHECK(f.observed_count() == 0);
        CHECK(f.known_count() == 2);
        CHECK(f.timestamps()[1] - f.timestamps()[0] == 3600);
    }

    TEST_CASE("absent manifest column names the column") {
        const RoleManifest m{"ts", {"y"}, {"load"}, {}};
        const std::string msg = message_of([&] { parse("ts,y\n0,1\n", m); });
        CHECK(msg.find("load") != std::string::npos);
        CHECK_THROWS_AS(parse("ts,y\n0,1\n", m), ManifestError);
    }

    TEST_CASE("unparsable cell names row and column") {
        CHECK_THROWS_AS(parse("ts,y,holiday\n0,1,0\n1,abc,0\n", ym), IngestionError);
        const std::string msg = message_of([&] { parse("ts,y,holiday\n0,1,0\n1,abc,0\n", ym); });
        CHECK(msg.find("row 3") != std::string::npos);
        CHECK(msg.find("'y'") != std::string::npos);
    }

    TEST_CASE("missing values are not imputed") {
        CHECK_THROWS_AS(parse("ts,y,holiday\n0,1,0\n1,,0\n", ym), IngestionError);
        CHECK_THROWS_AS(parse("ts,y,holiday\n0,NA,0\n", ym), IngestionError);
        CHECK_THROWS_AS(parse("ts,y,holiday\n0,1\n", ym), IngestionError);
    }

    TEST_CASE("rows are ordered by timestamp, duplicates rejected") {
        const auto f = parse("ts,y,holiday\n2,3,0\n0,1,0\n1,2,1\n", ym);
        CHECK(f.targets()[0] == std::vector<double>{1, 2, 3});
        CHECK(f.known()[0] == std::vector<double>{0, 1, 0});
        CHECK_THROWS_AS(parse("ts,y,holiday\n0,1,0\n0,2,0\n", ym), IngestionError);
    }

    TEST_CASE("irregular sampling is a warning") {
        const auto f = parse("ts,y,holiday\n0,1,0\n1,2,0\n5,3,0\n", ym);
        CHECK_FALSE(f.regular_interval());
        CHECK(f.warnings().size() == 1);
    }

    TEST_CASE("quoted fields, BOM and extra columns") {
        const auto f = parse("\xEF\xBB\xBF\"ts\",y,note,holiday\n0,1,\"a, b\",0\n1,2,x,1\n", ym);
        CHECK(f.length() == 2);
        CHECK(f.known()[0] == std::vector<double>{0, 1});
    }

    TEST_CASE("reads from disk without modifying the file") {
        const auto path = std::filesystem::temp_directory_path() / "citras_load_series.csv";
        const std::string text = "ts,y,holiday\n0,1,0\n1,2,1\n";
        std::ofstream(path) << text;
        const auto f = load_series(path, ym);
        CHECK(f.length() == 2);
        std::ifstream in(path);
        const std::string after((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        CHECK(after == text);
        std::filesystem::remove(path);
        CHECK_THROWS_AS(load_series(path, ym), IngestionError);
    }
}

TEST_SUITE("chronological_split") {
    TEST_CASE("benchmark sizes") {
        const auto f = indexed_frame(36500 + 5219 + 10460, 1, 0, 2);
        const auto s = chronological_split(f, {36500, 5219, 10460});
        CHECK(s.train.length() == 36500);
        CHECK(s.val.length() == 5219);
        CHECK(s.test.length() == 10460);
        CHECK(s.val_begin == 36500);
        CHECK(s.test_begin == 41719);
        CHECK(s.val.targets()[0].front() == 36500.0);
        CHECK(s.test.targets()[0].back() == 52178.0);
    }

    TEST_CASE("degenerate split") {
        const auto f = indexed_frame(10);
        const auto s = chronological_split(f, {10, 0, 0});
        CHECK(s.train.length() == 10);
        CHECK(s.val.length() == 0);
        CHECK(s.test.length() == 0);
    }

    TEST_CASE("oversized request") { CHECK_THROWS_AS(chronological_split(indexed_frame(10), {5, 5, 1}), SplitError); }

    TEST_CASE("property: disjoint ordered segments, deterministic") {
        std::mt19937_64 rng(3);
        for (int trial = 0; trial < 100; ++trial) {
            const std::size_t n = std::uniform_int_distribution<std::size_t>(1, 60)(rng);
            std::uniform_int_distribution<std::size_t> part(0, n);
            SplitSizes sz{part(rng), 0, 0};
            sz.val = std::uniform_int_distribution<std::size_t>(0, n - sz.train)(rng);
            sz.test = std::uniform_int_distribution<std::size_t>(0, n - sz.train - sz.val)(rng);
            const auto f = indexed_frame(n, 1, 0, 0);
            const auto a = chronological_split(f, sz), b = chronological_split(f, sz);
            CHECK(a.train_begin <= a.val_begin);
            CHECK(a.val_begin <= a.test_begin);
            CHECK(a.test_begin <= a.end);
            CHECK(a.train.length() + a.val.length() + a.test.length() == a.end);
            CHECK(a.val_begin == b.val_begin);
            CHECK(a.test_begin == b.test_begin);
        }
    }
}

TEST_SUITE("windows") {
    TEST_CASE("length 216 with stride 24 gives origins 0 and 24") {
        const auto f = indexed_frame(216);
        const auto w = window_iter(f, {168, 24, 24, 24});
        REQUIRE(w.size() == 2);
        CHECK(w[0].origin == 0);
        CHECK(w[1].origin == 24);
    }

    TEST_CASE("exact fit gives one window") { CHECK(window_iter(indexed_frame(192), {168, 24, 1, 24}).size() == 1); }

    TEST_CASE("length 200 with stride 1 gives 9 windows") { CHECK(window_iter(indexed_frame(200), {168, 24, 1, 24}).size() == 9); }

    TEST_CASE("window contents are aligned") {
        const auto f = indexed_frame(216);
        const Window w = window_iter(f, {168, 24, 24, 24})[1];
        CHECK(w.lookback_target[0].size() == 168);
        CHECK(w.lookback_target[0].front() == 24.0);
        CHECK(w.lookback_observed[0].back() == 24.0 + 167.0 + 0.25);
        CHECK(w.known_extended[0].size() == 192);
        CHECK(w.known_extended[0].back() == 215.5);
        CHECK(w.horizon_target[0].front() == 192.0);
        CHECK(w.horizon_target[0].size() == 24);
    }

    TEST_CASE("indivisible lookback or horizon") {
        const auto f = indexed_frame(300);
        CHECK_THROWS_AS(window_iter(f, {100, 24, 1, 24}), DivisibilityError);
        CHECK_THROWS_AS(window_iter(f, {168, 20, 1, 24}), DivisibilityError);
        CHECK_THROWS_AS(window_iter(indexed_frame(100), {168, 24, 1, 24}), ContractError);
    }

    TEST_CASE("property: count formula against enumeration for lengths up to 64") {
        for (std::size_t len = 1; len <= 64; ++len) {
            for (std::size_t T : {2u, 4u, 8u}) {
                for (std::size_t S : {2u, 4u}) {
                    for (std::size_t stride = 1; stride <= 5; ++stride) {
                        std::size_t enumerated = 0;
                        for (std::size_t o = 0; o + T + S <= len; o += stride) ++enumerated;
                        const WindowOptions opts{T, S, stride, 2};
                        if (len >= T + S) {
                            CHECK(window_count(len, opts) == (len - (T + S)) / stride + 1);
                            CHECK(window_iter(indexed_frame(len, 1, 0, 0), opts).size() == enumerated);
                        } else {
                            CHECK(enumerated == 0);
                        }
                    }
                }
            }
        }
    }

    TEST_CASE("drop_last keeps whole batches only") {
        WindowOptions o{8, 4, 1, 4};
        CHECK(window_count(22, o) == 11);
        o.drop_last = true;
        o.batch_size = 4;
        CHECK(window_count(22, o) == 8);
        CHECK(window_iter(indexed_frame(22), o).size() == 8);
    }

    TEST_CASE("property: no value comes from beyond origin + T + S") {
        std::mt19937_64 rng(9);
        for (int trial = 0; trial < 50; ++trial) {
            const std::size_t n = std::uniform_int_distribution<std::size_t>(24, 120)(rng);
            const std::size_t stride = std::uniform_int_distribution<std::size_t>(1, 7)(rng);
            const auto f = indexed_frame(n, 2, 1, 1);
            for (const auto& w : window_iter(f, {16, 8, stride, 4})) {
                const double limit = static_cast<double>(w.origin + 24);
                for (const auto* cols : {&w.lookback_target, &w.lookback_observed, &w.known_extended, &w.horizon_target}) {
                    for (const auto& c : *cols) {
                        for (double v : c) CHECK(std::fmod(v, 1000.0) < limit);
                    }
                }
            }
        }
    }

    TEST_CASE("evaluation windows borrow lookback from earlier segments") {
        const auto f = indexed_frame(400);
        const auto s = chronological_split(f, {200, 100, 100});
        const WindowOptions o{48, 24, 1, 24};
        const auto train = segment_windows(f, s, Segment::train, o);
        const auto val = segment_windows(f, s, Segment::val, o);
        const auto test = segment_windows(f, s, Segment::test, o);
        CHECK(train.size() == 200 - 72 + 1);
        CHECK(train.back().horizon_target[0].back() == 199.0);
        REQUIRE(val.size() == 100 - 24 + 1);
        CHECK(val.front().origin == 200 - 48);
        CHECK(val.front().horizon_target[0].front() == 200.0);
        CHECK(val.back().horizon_target[0].back() == 299.0);
        CHECK(test.front().horizon_target[0].front() == 300.0);
        CHECK(test.back().horizon_target[0].back() == 399.0);
    }

    TEST_CASE("evaluation horizons need not be patch multiples") {
        const auto f = indexed_frame(400, 1, 0, 0);
        const auto s = chronological_split(f, {200, 100, 100});
        WindowOptions o{48, 30, 1, 24};
        CHECK_THROWS_AS(segment_windows(f, s, Segment::test, o), DivisibilityError);
        o.whole_patches = false;
        CHECK(segment_windows(f, s, Segment::test, o).front().horizon() == 30);
    }
}

TEST_SUITE("patchify") {
    TEST_CASE("168 by 24 gives 7 rows") {
        std::vector<double> x(168);
        std::iota(x.begin(), x.end(), 0.0);
        const Tensor p = patchify(x, 24);
        CHECK(p.shape() == Shape{7, 24});
        CHECK(p.at(3, 5) == 77.0);
    }

    TEST_CASE("single patch") {
        const std::vector<double> x{1, 2, 3};
        const Tensor p = patchify(x, 3);
        CHECK(p.shape() == Shape{1, 3});
        CHECK(flatten(p) == x);
    }

    TEST_CASE("indivisible length names T and P") {
        const std::vector<double> x(10);
        CHECK_THROWS_AS(patchify(x, 4), DivisibilityError);
        const std::string msg = message_of([&] { patchify(x, 4); });
        CHECK(msg.find("T=10") != std::string::npos);
        CHECK(msg.find("P=4") != std::string::npos);
    }

    TEST_CASE("property: flatten and patchify are mutual inverses") {
        std::mt19937_64 rng(13);
        for (int trial = 0; trial < 100; ++trial) {
            const std::size_t P = std::uniform_int_distribution<std::size_t>(1, 8)(rng);
            const std::size_t N = std::uniform_int_distribution<std::size_t>(1, 8)(rng);
            const auto x = gen::normal_vector(rng, N * P);
            CHECK(flatten(patchify(x, P)) == x);
            const Tensor m = gen::normal_tensor(rng, {N, P});
            CHECK(patchify(flatten(m), P) == m);
        }
    }
}

TEST_CASE("standardizer uses reference statistics") {
    const auto f = indexed_frame(10, 1, 0, 1);
    const auto s = chronological_split(f, {4, 3, 3});
    const auto z = Standardizer::fit(s.train);
    CHECK(z.mean[0] == doctest::Approx(1.5));
    CHECK(z.std[0] == doctest::Approx(std::sqrt(1.25)));
    const auto out = z.apply(f);
    CHECK(out.targets()[0][0] == doctest::Approx(-1.5 / std::sqrt(1.25)));
    CHECK(out.known()[0][9] == doctest::Approx((9.5 - 2.0) / std::sqrt(1.25)));
}
