#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "transma/csv.hpp"
#include "transma/rng.hpp"
#include "transma/simlab.hpp"

using namespace transma;
using Catch::Approx;

namespace {

struct TempFile {
    std::string path;
    explicit TempFile(const std::string& name) {
        path = (std::filesystem::temp_directory_path() / name).string();
    }
    ~TempFile() { std::remove(path.c_str()); }
};

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
}

}  // namespace

TEST_CASE("ingest a two-row file with one covariate") {
    TempFile f("transma_small.csv");
    write_text(f.path, "y,x1\n1.5,2.0\n-0.5,0.25\n");
    const DomainData d = io::ingest_csv(f.path, 0);
    CHECK(d.n() == 2);
    CHECK(d.p() == 1);
    CHECK(d.y[0] == Approx(1.5));
    CHECK(d.X(1, 0) == Approx(0.25));
}

TEST_CASE("header must be y,x1,...,xp") {
    TempFile f("transma_header.csv");
    write_text(f.path, "y,x1,x3\n1,2,3\n");
    CHECK_THROWS_AS(io::ingest_csv(f.path), HeaderMismatchError);

    write_text(f.path, "z,x1\n1,2\n");
    CHECK_THROWS_AS(io::ingest_csv(f.path), HeaderMismatchError);

    write_text(f.path, "");
    CHECK_THROWS_AS(io::ingest_csv(f.path), HeaderMismatchError);
}

TEST_CASE("parse errors carry line and column") {
    TempFile f("transma_bad.csv");
    write_text(f.path, "y,x1\n1.0,oops\n");
    try {
        io::ingest_csv(f.path);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line == 2);
        CHECK(e.column == 2);
    }

    write_text(f.path, "y,x1\n1.0\n");
    CHECK_THROWS_AS(io::ingest_csv(f.path), ParseError);

    write_text(f.path, "y,x1\n1.0,\n");
    CHECK_THROWS_AS(io::ingest_csv(f.path), ParseError);
}

TEST_CASE("write-then-read round trip preserves values") {
    simlab::ExperimentConfig cfg = simlab::default_config(simlab::ExperimentKind::Exp1);
    cfg.target_n = 23;
    cfg.test_n = 5;
    const auto g = simlab::gen_experiment(cfg, 4);

    TempFile f("transma_roundtrip.csv");
    io::write_domain_csv(f.path, g.domains[0]);
    const DomainData back = io::ingest_csv(f.path, 0);
    REQUIRE(back.n() == g.domains[0].n());
    REQUIRE(back.p() == g.domains[0].p());
    // %.17g output round-trips doubles exactly
    CHECK((back.y - g.domains[0].y).lpNorm<Eigen::Infinity>() == 0.0);
    CHECK((back.X - g.domains[0].X).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("format_double uses 17 significant digits") {
    CHECK(io::format_double(1.0) == "1");
    CHECK(io::format_double(0.1) == "0.10000000000000001");
    const double value = 0.123456789012345678;
    CHECK(std::stod(io::format_double(value)) == value);
}
