#include <doctest.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "qtewma/datagen.hpp"
#include "qtewma/errors.hpp"
#include "qtewma/quanttree.hpp"
#include "qtewma/rng.hpp"

using namespace qtewma;

namespace {

double norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) {
        s += x * x;
    }
    return std::sqrt(s);
}

// Random symmetric positive definite matrix A A' + d I.
std::vector<double> random_spd(std::size_t d, Rng& rng) {
    std::vector<double> a(d * d);
    for (auto& v : a) {
        v = rng.normal();
    }
    std::vector<double> s(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            for (std::size_t k = 0; k < d; ++k) {
                s[i * d + j] += a[i * d + k] * a[j * d + k];
            }
        }
        s[i * d + i] += static_cast<double>(d);
    }
    return s;
}

std::filesystem::path write_temp(const std::string& name, const std::string& body) {
    const auto path = std::filesystem::temp_directory_path() / name;
    std::ofstream(path) << body;
    return path;
}

}  // namespace

TEST_CASE("mean shift with identity covariance") {
    const auto id = GaussianLaw::standard(2);
    const std::vector<double> zero(2, 0.0);
    const auto m1 = gaussian_change_mean_shift(zero, id.covariance, 1.0, 3);
    CHECK(norm(m1) == doctest::Approx(1.0).epsilon(1e-12));
    const auto m4 = gaussian_change_mean_shift(zero, id.covariance, 4.0, 3);
    CHECK(norm(m4) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK_THROWS_AS(gaussian_change_mean_shift(zero, id.covariance, 0.0, 3), InvalidArgumentError);
}

TEST_CASE("mean shift hits the sKL target") {
    Rng rng(99);
    for (int i = 0; i < 100; ++i) {
        const std::size_t d = 1 + rng.below(12);
        GaussianLaw a;
        a.covariance = random_spd(d, rng);
        a.mean.resize(d);
        for (auto& m : a.mean) {
            m = rng.normal();
        }
        const double target = 0.1 + 5.0 * rng.uniform();
        GaussianLaw b = a;
        b.mean = gaussian_change_mean_shift(a.mean, a.covariance, target, rng());
        CHECK(std::abs(gaussian_symmetric_kl(a, b) - target) < 1e-9);
    }
}

TEST_CASE("symmetric KL closed form") {
    GaussianLaw a = GaussianLaw::standard(1);
    GaussianLaw b = a;
    b.covariance = {4.0};
    // KL(N(0,1)||N(0,4)) = 0.5 (1/4 - 1 + ln 4); reverse: 0.5 (4 - 1 - ln 4).
    CHECK(gaussian_symmetric_kl(a, b) == doctest::Approx(0.5 * (0.25 - 1.0) + 0.5 * 3.0));
}

TEST_CASE("stream spec validation") {
    StreamSpec spec;
    spec.dim = 2;
    spec.phi0 = UniformLaw::unit_cube(2);
    spec.length = 100;
    spec.change = ChangeSpec{50, MeanShift{1.0}};
    CHECK_THROWS_AS(spec.validate(), InvalidArgumentError);
    spec.phi0 = GaussianLaw::standard(2);
    CHECK_NOTHROW(spec.validate());
    spec.change = ChangeSpec{50, MeanShift{0.0}};
    CHECK_THROWS_AS(spec.validate(), InvalidArgumentError);
    spec.change = ChangeSpec{0, MeanShift{1.0}};
    CHECK_THROWS_AS(spec.validate(), InvalidArgumentError);
    spec.change = ChangeSpec{100, MeanShift{1.0}};
    CHECK_THROWS_AS(spec.validate(), InvalidArgumentError);
}

TEST_CASE("streams are reproducible from the seed") {
    StreamSpec spec;
    spec.dim = 3;
    spec.phi0 = GaussianLaw::equicorrelated(3, 0.5);
    spec.change = ChangeSpec{40, MeanShift{2.0}};
    spec.length = 100;
    spec.seed = 5;
    const StreamFactory f(spec);
    const auto a = collect(f.stream());
    const auto b = collect(f.stream());
    CHECK(a.rows() == 100);
    CHECK(a.values() == b.values());
    spec.seed = 6;
    CHECK(collect(StreamFactory(spec).stream()).values() != a.values());
}

TEST_CASE("no change and full change") {
    StreamSpec spec;
    spec.dim = 1;
    spec.phi0 = UniformLaw::unit_cube(1);
    spec.length = 2000;
    const auto pre = collect(StreamFactory(spec).stream());
    CHECK(std::all_of(pre.values().begin(), pre.values().end(), [](double v) { return v >= 0.0 && v < 1.0; }));

    spec.change = ChangeSpec{1, Law{UniformLaw{{5.0}, {6.0}}}};
    const auto post = collect(StreamFactory(spec).stream());
    CHECK(std::all_of(post.values().begin(), post.values().end(), [](double v) { return v >= 5.0 && v < 6.0; }));
}

TEST_CASE("change point placement") {
    StreamSpec spec;
    spec.dim = 2;
    spec.phi0 = GaussianLaw{{1.0, -1.0}, {1.0, 0.3, 0.3, 2.0}};
    spec.change = ChangeSpec{10, Law{GaussianLaw{{-2.0, 3.0}, {1.0, 0.0, 0.0, 1.0}}}};
    spec.length = 12;
    const StreamFactory f(spec);
    const std::size_t n = 100000;
    std::vector<double> before(2, 0.0), after(2, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        auto run = f.make_run(i, 0);
        std::vector<double> x(2);
        for (std::size_t t = 1; t <= 10; ++t) {
            run.stream.next(x);
            if (t == 9) {
                before[0] += x[0];
                before[1] += x[1];
            }
        }
        after[0] += x[0];
        after[1] += x[1];
    }
    const double sn = std::sqrt(static_cast<double>(n));
    CHECK(std::abs(before[0] / n - 1.0) < 3.0 * 1.0 / sn);
    CHECK(std::abs(before[1] / n + 1.0) < 3.0 * std::sqrt(2.0) / sn);
    CHECK(std::abs(after[0] / n + 2.0) < 3.0 / sn);
    CHECK(std::abs(after[1] / n - 3.0) < 3.0 / sn);
}

TEST_CASE("gaussian sampler reproduces the covariance") {
    const auto law = GaussianLaw::equicorrelated(3, 0.6);
    const LawSampler sampler(law, 3);
    CHECK(sampler.total_variance() == doctest::Approx(3.0));
    Rng rng(4);
    const std::size_t n = 200000;
    std::vector<double> x(3);
    double s01 = 0.0, s00 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sampler.sample(rng, x);
        s01 += x[0] * x[1];
        s00 += x[0] * x[0];
    }
    CHECK(s01 / n == doctest::Approx(0.6).epsilon(0.03));
    CHECK(s00 / n == doctest::Approx(1.0).epsilon(0.03));
}

TEST_CASE("random shift is scaled by total variance") {
    StreamSpec spec;
    spec.dim = 4;
    spec.phi0 = GaussianLaw{std::vector<double>(4, 0.0), {2, 0, 0, 0, 0, 2, 0, 0, 0, 0, 2, 0, 0, 0, 0, 2}};
    spec.change = ChangeSpec{1, RandomShift{0.5}};
    spec.length = 5000;
    // With scale 0.5 and trace 8 the shift is 4 * N(0, I); recover it from the stream mean.
    double sq = 0.0;
    const std::size_t reps = 200;
    for (std::size_t s = 0; s < reps; ++s) {
        spec.seed = s;
        const auto m = collect(StreamFactory(spec).stream());
        for (std::size_t k = 0; k < 4; ++k) {
            double mean = 0.0;
            for (std::size_t i = 0; i < m.rows(); ++i) {
                mean += m(i, k);
            }
            mean /= static_cast<double>(m.rows());
            sq += mean * mean;
        }
    }
    // E[shift_k^2] = 16 per coordinate.
    CHECK(sq / (4.0 * reps) == doctest::Approx(16.0).epsilon(0.15));
}

TEST_CASE("csv ingestion") {
    SUBCASE("header and standardization") {
        const auto ds = parse_csv("a,b\n1,10\n2,20\n3,31\n4,39\n", true, 0.0, 1);
        CHECK(ds.header == std::vector<std::string>{"a", "b"});
        REQUIRE(ds.data.rows() == 4);
        for (std::size_t k = 0; k < 2; ++k) {
            double m = 0.0, v = 0.0;
            for (std::size_t i = 0; i < 4; ++i) {
                m += ds.data(i, k);
            }
            m /= 4.0;
            for (std::size_t i = 0; i < 4; ++i) {
                v += (ds.data(i, k) - m) * (ds.data(i, k) - m);
            }
            v /= 4.0;
            CHECK(std::abs(m) < 1e-9);
            CHECK(std::abs(v - 1.0) < 1e-9);
        }
        CHECK(ds.column_mean[0] == doctest::Approx(2.5));
    }
    SUBCASE("headerless") {
        const auto ds = parse_csv("1,2\n3,4\n", false, 0.0, 1);
        CHECK(ds.header.empty());
        CHECK(ds.data(1, 1) == 4.0);
    }
    SUBCASE("bad cells name their position") {
        try {
            (void)parse_csv("a,b\n1,2\n3,x\n", false, 0.0, 1);
            FAIL("expected a parse error");
        } catch (const ParseError& e) {
            const std::string what = e.what();
            CHECK(what.find("row") != std::string::npos);
            CHECK(what.find("column") != std::string::npos);
        }
        CHECK_THROWS_AS(parse_csv("1,2\n3\n", false, 0.0, 1), ParseError);
        CHECK_THROWS_AS(parse_csv("1,2\n1,3\n", true, 0.0, 1), InvalidArgumentError);
    }
    SUBCASE("duplicates without jitter make degenerate cuts") {
        std::string body;
        for (int i = 0; i < 64; ++i) {
            body += std::to_string(i % 8) + "," + std::to_string(i % 8) + "\n";
        }
        const auto raw = parse_csv(body, true, 0.0, 1);
        CHECK_THROWS_AS(build_partition(raw.data, uniform_probs(8), 3), DegenerateCutError);
        const auto jittered = parse_csv(body, true, 1e-6, 1);
        CHECK_NOTHROW(build_partition(jittered.data, uniform_probs(8), 3));
        CHECK(std::abs(jittered.data(0, 0) - raw.data(0, 0)) < 1e-4);
    }
    SUBCASE("split is disjoint") {
        std::string body;
        for (int i = 0; i < 100; ++i) {
            body += std::to_string(i) + "\n";
        }
        const auto ds = parse_csv(body, false, 0.0, 1);
        const auto s = ds.split(30, 7);
        CHECK(s.train.size() == 30);
        CHECK(s.test.size() == 70);
        std::set<std::size_t> all(s.train.begin(), s.train.end());
        for (auto i : s.test) {
            CHECK(all.insert(i).second);
        }
        CHECK(*all.rbegin() < 100);
        CHECK_THROWS_AS(ds.split(101, 1), InvalidArgumentError);
    }
    SUBCASE("file source") {
        std::string body = "x,y\n";
        for (int i = 0; i < 50; ++i) {
            body += std::to_string(i) + "," + std::to_string(i * i % 17) + "\n";
        }
        const auto path = write_temp("qtewma_ingest.csv", body);
        CHECK(ingest_csv(path, false, 0.0, 1).data.rows() == 50);
        CHECK_THROWS_AS(ingest_csv("/nonexistent/file.csv", false, 0.0, 1), IoError);

        StreamSpec spec;
        spec.dim = 2;
        spec.phi0 = CsvLaw{path, true, 1e-6};
        spec.length = 40;
        const StreamFactory f(spec);
        auto run = f.make_run(3, 10);
        CHECK(run.train.rows() == 10);
        const auto stream = collect(std::move(run.stream));
        CHECK(stream.rows() == 40);
        for (std::size_t i = 0; i < stream.rows(); ++i) {
            for (std::size_t j = 0; j < run.train.rows(); ++j) {
                CHECK(std::bit_cast<std::uint64_t>(stream(i, 0)) != std::bit_cast<std::uint64_t>(run.train(j, 0)));
            }
        }
        spec.length = 45;
        auto longer = StreamFactory(spec).make_run(3, 10);
        std::vector<double> x(2);
        CHECK_THROWS_AS(
            [&] {
                while (longer.stream.next(x)) {
                }
            }(),
            ExhaustedError);
        std::filesystem::remove(path);
    }
}
