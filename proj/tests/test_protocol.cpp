#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "spinres/errors.hpp"
#include "spinres/protocol.hpp"
#include "spinres/svgplot.hpp"
#include "test_paths.hpp"

using namespace spinres;
namespace fs = std::filesystem;

namespace {

std::string spec_path(const std::string& name) {
    return std::string(SPINRES_SOURCE_DIR) + "/data/specs/" + name;
}

std::string tmp_dir() {
    auto d = fs::temp_directory_path() / "spinres_test_out";
    fs::create_directories(d);
    return d.string();
}

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("shipped specs validate cleanly") {
    for (const char* name :
         {"fig1c_4um.json", "fig3.json", "fig3_inset.json", "fig2a.json",
          "fig2b.json", "fig2c.json", "fig4.json", "s21_4um.json"}) {
        auto spec = load_spec(spec_path(name));
        auto v = validate(spec);
        for (const auto& msg : v) MESSAGE(name, ": ", msg);
        CHECK(v.empty());
    }
}

TEST_CASE("deer spec with an early pump position is rejected with the source") {
    auto spec = load_spec(spec_path("fig4.json"));
    spec.parameters["t_start_us"] = 4.0;
    auto v = validate(spec);
    REQUIRE(!v.empty());
    CHECK(v[0].find("t < t_min") != std::string::npos);
}

TEST_CASE("bias beyond the critical current is rejected by name") {
    auto spec = load_spec(spec_path("fig2b.json"));
    spec.parameters["bias_ma"] = 6.0;
    auto v = validate(spec);
    REQUIRE(!v.empty());
    CHECK(v[0].find("i_critical") != std::string::npos);
}

TEST_CASE("fig1c spec reproduces the tuning curve endpoint") {
    auto spec = load_spec(spec_path("fig1c_4um.json"));
    auto out = run(spec, tmp_dir());
    const auto& rows = out.result.rows;
    REQUIRE(!rows.empty());
    CHECK(rows.back()[1] == doctest::Approx(-52.0).epsilon(0.01));
    CHECK(std::stod(out.result.metadata.at("i2_star_ma")) ==
          doctest::Approx(62.5).epsilon(0.005));
}

TEST_CASE("fig3 spec lands the 270 ns tuning time") {
    auto spec = load_spec(spec_path("fig3.json"));
    auto out = run(spec, tmp_dir());
    double t_ns = std::stod(out.result.metadata.at("tuning_time_ns"));
    CHECK(t_ns == doctest::Approx(270.0).epsilon(30.0 / 270.0));
}

TEST_CASE("rerunning a seeded spec is byte-identical") {
    auto spec = load_spec(spec_path("fig4.json"));
    spec.parameters["observers"] = 500;
    std::string dir_a = tmp_dir() + "/a", dir_b = tmp_dir() + "/b";
    auto a = run(spec, dir_a);
    auto b = run(spec, dir_b);
    CHECK(slurp(a.csv_path) == slurp(b.csv_path));
    CHECK(!slurp(a.csv_path).empty());
}

TEST_CASE("overrides reject unknown keys and type mismatches") {
    nlohmann::json j = {{"kind", "deer"},
                        {"seed", 1},
                        {"parameters", {{"t_points", 5}, {"mode", "analytic"}}}};
    CHECK_THROWS_AS(apply_override(j, "parameters.nope", "1"), ParseError);
    CHECK_THROWS_AS(apply_override(j, "parameters.mode.deep", "1"), ParseError);
    apply_override(j, "parameters.t_points", "7");
    CHECK(j["parameters"]["t_points"] == 7.0);
    apply_override(j, "parameters.mode", "full");
    CHECK(j["parameters"]["mode"] == "full");
}

TEST_CASE("override via --set equals editing the spec directly") {
    auto base = load_spec(spec_path("fig1c_4um.json"));
    base.parameters["points"] = 12;
    auto direct = run(base, tmp_dir() + "/direct");

    nlohmann::json j;
    {
        std::ifstream in(spec_path("fig1c_4um.json"));
        j = nlohmann::json::parse(in);
    }
    apply_override(j, "parameters.points", "12");
    auto overridden = parse_spec(j, fs::path(spec_path("x")).parent_path().string());
    auto via_set = run(overridden, tmp_dir() + "/set");
    CHECK(slurp(direct.csv_path) == slurp(via_set.csv_path));
}

TEST_CASE("SI suffix parsing is exact") {
    CHECK(parse_si_number("3.9mA") == 3.9e-3);
    CHECK(parse_si_number("31.2MHz") == 31.2e6);
    CHECK(parse_si_number("60us") == 60e-6);
    CHECK(parse_si_number("274.78mT") == 274.78e-3);
    CHECK(parse_si_number("-15dBm") == -15.0);
    CHECK(parse_si_number("42") == 42.0);
    CHECK_THROWS_AS(parse_si_number("12parsecs"), ParseError);
    CHECK_THROWS_AS(parse_si_number("abc"), ParseError);
}

TEST_CASE("result CSV schema is stable") {
    auto spec = load_spec(spec_path("fig4.json"));
    spec.parameters["observers"] = 200;
    spec.parameters["t_points"] = 3;
    auto out = run(spec, tmp_dir() + "/schema");
    auto table = read_csv(out.csv_path);
    REQUIRE(table.columns.size() == 3);
    CHECK(table.columns[0] == "t_us");
    CHECK(table.columns[1] == "echo_norm_on_res");
    CHECK(table.columns[2] == "echo_norm_off_res");
    CHECK(table.rows.size() == 3);
}

TEST_CASE("svg plot renders any result csv") {
    auto spec = load_spec(spec_path("fig1c_4um.json"));
    spec.parameters["points"] = 10;
    auto out = run(spec, tmp_dir() + "/plot");
    auto table = read_csv(out.csv_path);
    std::string svg = tmp_dir() + "/plot/fig1c.svg";
    write_svg_plot(table, svg, "fig1c");
    std::string content = slurp(svg);
    CHECK(content.find("<svg") != std::string::npos);
    CHECK(content.find("polyline") != std::string::npos);
}
