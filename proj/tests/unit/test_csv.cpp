#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <random>

#include "qrelax/csv.hpp"

using namespace qrelax;

TEST_CASE("format_double round trips") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  for (int i = 0; i < 10000; ++i) {
    const double v = u(rng) * std::pow(10.0, static_cast<int>(rng() % 40) - 20);
    CHECK(std::stod(format_double(v)) == v);
  }
  CHECK(format_double(0.5) == "0.5");
  CHECK(format_double(3.0) == "3");
  CHECK(format_double(std::numeric_limits<double>::denorm_min()) == "5e-324");
}

TEST_CASE("split and read") {
  CHECK(split_csv_line("a,b,,c") == std::vector<std::string>{"a", "b", "", "c"});
  CHECK(split_csv_line("x") == std::vector<std::string>{"x"});
  const auto p = std::filesystem::temp_directory_path() / "qrelax_csv_test" / "nested" / "f.csv";
  {
    auto out = open_output(p);
    out << "h1,h2\r\n1,2\n";
  }
  const auto rows = read_csv(p);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0] == std::vector<std::string>{"h1", "h2"});
  CHECK(rows[1] == std::vector<std::string>{"1", "2"});
  std::filesystem::remove_all(p.parent_path().parent_path());
  CHECK_THROWS(read_csv(p));
}
