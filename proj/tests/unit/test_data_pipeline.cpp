#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "mtf/error.hpp"
#include "mtf/grid_mapping.hpp"
#include "mtf/pipeline.hpp"
#include "mtf/synthetic.hpp"
#include "mtf/timeutil.hpp"
#include "mtf/traffic.hpp"
#include "support.hpp"

using namespace mtf;

namespace {

const char* kHeader = "timestamp_utc,antenna_id,lon,lat,service_id,bytes_up,bytes_down\n";

std::string write_traffic(const std::string& name, const std::string& body) {
  const auto dir = test::scratch_dir(name);
  const auto path = dir / "traffic.csv";
  test::write_file(path, body);
  return path.string();
}

// Hand-built series: T bins, S services, A antennas on a line.
TrafficSeries make_series(std::size_t T, std::size_t S, std::size_t A, const std::function<double(std::size_t, std::size_t, std::size_t)>& v) {
  TrafficSeries s;
  s.start_epoch = utc_seconds(2024, 3, 1);
  s.step_seconds = kBinSeconds;
  for (std::size_t a = 0; a < A; ++a) s.antennas.push_back(AntennaSite{"ant" + std::to_string(a), double(a) * 100.0, 0.0, 9.0 + 0.001 * double(a), 45.0});
  for (std::size_t k = 0; k < S; ++k) s.services.push_back(ServiceInfo{"s" + std::to_string(k), "svc" + std::to_string(k), "web"});
  s.volumes = Tensor(Shape{T, S, A});
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t k = 0; k < S; ++k)
      for (std::size_t a = 0; a < A; ++a) s.volumes[(t * S + k) * A + a] = v(t, k, a);
  return s;
}

SyntheticConfig small_synthetic() {
  SyntheticConfig c;
  c.services = 4;
  c.days = 3;
  c.grid_rows = 3;
  c.grid_cols = 3;
  c.sporadic = 1;
  c.hotspots = 2;
  return c;
}

}  // namespace

TEST_CASE("ingest sums uplink and downlink per bin") {
  const std::string path = write_traffic("ingest_sum", std::string("# comment line\n") + kHeader +
                                                           "2024-01-01T00:00:00Z,A,9.1,45.4,web,3,4\n"
                                                           "2024-01-01T00:05:00Z,A,9.1,45.4,web,10,0\n");
  const TrafficSeries s = ingest_csv(path);
  CHECK(s.length() == 2);
  CHECK(s.at(0, 0, 0) == 7.0);
  CHECK(s.at(1, 0, 0) == 10.0);
  CHECK(s.start_epoch == utc_seconds(2024, 1, 1));
  CHECK(s.services[0].category == "miscellaneous");
}

TEST_CASE("ingest of an empty file is a parse error") {
  CHECK_THROWS_AS(ingest_csv(write_traffic("ingest_empty", "")), ParseError);
  CHECK_THROWS_AS(ingest_csv(write_traffic("ingest_header_only", kHeader)), ParseError);
  CHECK_THROWS_AS(ingest_csv("/nonexistent/traffic.csv"), IoError);
}

TEST_CASE("shuffled rows ingest to the same series as sorted rows") {
  std::vector<std::string> rows;
  for (int t = 0; t < 4; ++t)
    for (const char* a : {"B", "A"})
      for (const char* svc : {"y", "x"})
        rows.push_back(fmt::format("2024-01-01T00:{:02d}:00Z,{},{},45.4,{},{},{}\n", t * 5, a, a[0] == 'A' ? "9.1" : "9.2",
                                   svc, t + 1, a[0] == 'A' ? 10 : 20));
  std::string sorted = kHeader;
  for (const auto& r : rows) sorted += r;
  Rng rng(41);
  rng.shuffle(rows);
  std::string shuffled = kHeader;
  for (const auto& r : rows) shuffled += r;
  const TrafficSeries a = ingest_csv(write_traffic("ingest_sorted", sorted));
  const TrafficSeries b = ingest_csv(write_traffic("ingest_shuffled", shuffled));
  CHECK(a.volumes == b.volumes);
  CHECK(a.antennas[0].id == "A");
  CHECK(a.services[0].id == "x");
  CHECK(b.antennas[1].x == a.antennas[1].x);
}

TEST_CASE("malformed rows report their line") {
  const std::string bad = std::string(kHeader) + "2024-01-01T00:00:00Z,A,9.1,45.4,web,3,4\n" +
                          "2024-01-01T00:05:00Z,A,9.1,45.4,web,x,4\n";
  try {
    ingest_csv(write_traffic("ingest_bad", bad));
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }
  const std::string dup = std::string(kHeader) + "2024-01-01T00:00:00Z,A,9.1,45.4,web,3,4\n" +
                          "2024-01-01T00:00:00Z,A,9.1,45.4,web,1,1\n";
  try {
    ingest_csv(write_traffic("ingest_dup", dup));
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }
  CHECK_THROWS_AS(ingest_csv(write_traffic("ingest_offgrid", std::string(kHeader) +
                                                                 "2024-01-01T00:01:00Z,A,9.1,45.4,web,3,4\n")),
                  ParseError);
}

TEST_CASE("missing bins raise a gap error listing them") {
  const std::string body = std::string(kHeader) + "2024-01-01T00:00:00Z,A,9.1,45.4,web,1,1\n" +
                           "2024-01-01T00:15:00Z,A,9.1,45.4,web,1,1\n";
  try {
    ingest_csv(write_traffic("ingest_gap", body));
    FAIL("expected GapError");
  } catch (const GapError& e) {
    const std::int64_t t0 = utc_seconds(2024, 1, 1);
    CHECK(e.missing_bins() == std::vector<std::int64_t>{t0 + 300, t0 + 600});
  }
}

TEST_CASE("activity filter uses an inclusive threshold") {
  // ant0 always active, ant1 active in 9 of 10 bins, ant2 in 5 of 10.
  const TrafficSeries s = make_series(10, 2, 3, [](std::size_t t, std::size_t k, std::size_t a) {
    if (a == 1 && t == 4) return 0.0;
    if (a == 2 && t % 2 == 1) return 0.0;
    return 1.0 + double(k);
  });
  const auto frac = activity_fractions(s);
  CHECK(frac == std::vector<double>{1.0, 0.9, 0.5});
  CHECK(filter_active_antennas(s, 0.9).antenna_count() == 2);
  CHECK(filter_active_antennas(s, 0.5).antenna_count() == 3);
  CHECK(filter_active_antennas(s, 1.0).antenna_count() == 1);
  const TrafficSeries dead = make_series(10, 1, 2, [](std::size_t, std::size_t, std::size_t) { return 0.0; });
  CHECK_THROWS_AS(filter_active_antennas(dead, 0.9), ContractError);
  CHECK_THROWS_AS(filter_active_antennas(s, 0.0), ContractError);
}

TEST_CASE("normalization uses per-service population statistics") {
  const TrafficSeries s = make_series(2, 2, 1, [](std::size_t t, std::size_t k, std::size_t) {
    return k == 0 ? 2.0 * double(t) : 5.0;  // service 0: {0, 2}; service 1 constant
  });
  const NormalizationStats st = compute_stats(s);
  CHECK(st.mean == std::vector<double>{1.0, 5.0});
  CHECK(st.stddev[0] == 1.0);
  CHECK(st.stddev[1] == NormalizationStats::kStdFloor);
  const Tensor z = normalize(s.volumes, st);
  CHECK(z.at({0, 0, 0}) == -1.0);
  CHECK(z.at({1, 0, 0}) == 1.0);
  CHECK(z.at({0, 1, 0}) == 0.0);
  CHECK(z.at({1, 1, 0}) == 0.0);
}

TEST_CASE("denormalize inverts normalize") {
  const TrafficSeries s = synthesize_traffic(small_synthetic());
  const NormalizationStats st = compute_stats(s);
  const Tensor back = denormalize(normalize(s.volumes, st), st);
  double worst = 0.0;
  for (std::size_t i = 0; i < back.size(); ++i) worst = std::max(worst, std::abs(back[i] - s.volumes[i]) / std::max(1.0, s.volumes[i]));
  CHECK(worst < 1e-9);
}

TEST_CASE("window counts follow the sliding-window formula") {
  const TrafficSeries s = make_series(30, 1, 4, [](std::size_t t, std::size_t, std::size_t a) { return double(t + a); });
  const AntennaGrid grid = map_antennas_to_grid(s.antennas, 2, 2);
  const NormalizationStats st = compute_stats(s);
  CHECK(window_dataset(s.slice(0, 7), grid, st, 4, 3).size() == 1);
  CHECK(window_dataset(s.slice(0, 9), grid, st, 4, 3).size() == 3);
  CHECK(window_dataset(s, grid, st, 4, 3).size() == 30 - 7 + 1);
  CHECK(window_dataset(s, grid, st, 4, 3, 5).size() == 5);  // starts 0,5,10,15,20
  CHECK_THROWS_AS(window_dataset(s.slice(0, 6), grid, st, 4, 3), ContractError);
}

TEST_CASE("window tensors equal direct lookups through the assignment") {
  const SyntheticConfig cfg = small_synthetic();
  const TrafficSeries s = filter_active_antennas(synthesize_traffic(cfg), 0.9);
  const auto [rows, cols] = choose_grid_dims(s.antennas);
  const AntennaGrid grid = map_antennas_to_grid(s.antennas, rows + 1, cols);  // leaves masked cells
  const NormalizationStats st = compute_stats(s);
  const WindowedDataset ds = window_dataset(s, grid, st, 5, 3, 7);
  const std::size_t S = s.service_count();
  for (std::size_t w : {std::size_t{0}, ds.size() / 2, ds.size() - 1}) {
    const ForecastWindow win = ds.window(w);
    const std::size_t start = ds.start_bin(w);
    CHECK(win.start_epoch == s.timestamp(start));
    for (std::size_t a = 0; a < s.antenna_count(); ++a) {
      const CellIndex cell = *grid.cell_of(s.antennas[a].id);
      for (std::size_t k = 0; k < S; ++k) {
        const auto z = [&](std::size_t t) { return (s.at(t, k, a) - st.mean[k]) / st.stddev[k]; };
        CHECK(win.input.at({2, k, cell.row, cell.col}) == doctest::Approx(z(start + 2)).epsilon(1e-12));
        CHECK(win.target.at({1, k, cell.row, cell.col}) == doctest::Approx(z(start + 6)).epsilon(1e-12));
      }
    }
    for (std::size_t r = 0; r < grid.rows(); ++r)
      for (std::size_t c = 0; c < grid.cols(); ++c)
        if (grid.masked(r, c))
          for (std::size_t k = 0; k < S; ++k) {
            CHECK(win.input.at({0, k, r, c}) == 0.0);
            CHECK(win.target.at({0, k, r, c}) == 0.0);
          }
  }
}

TEST_CASE("scattering onto the grid conserves total volume exactly") {
  const TrafficSeries s = filter_active_antennas(synthesize_traffic(small_synthetic()), 0.9);
  const AntennaGrid grid = map_antennas_to_grid(s.antennas, 4, 4);
  const Tensor g = scatter_to_grid(s.volumes, s.antennas, grid);
  const std::size_t T = s.length(), S = s.service_count(), A = s.antenna_count();
  for (std::size_t t = 0; t < T; t += 97)
    for (std::size_t k = 0; k < S; ++k) {
      double by_antenna = 0.0, by_cell = 0.0;
      for (std::size_t a = 0; a < A; ++a) by_antenna += s.at(t, k, a);
      for (std::size_t c = 0; c < 16; ++c) by_cell += g[(t * S + k) * 16 + c];
      CHECK(by_antenna == by_cell);
    }
  CHECK(gather_from_grid(g, s.antennas, grid) == s.volumes);
}

TEST_CASE("normalization statistics ignore the test split") {
  const TrafficSeries s = synthesize_traffic(small_synthetic());
  const auto [train, test_part] = chronological_split(s, 0.8);
  TrafficSeries altered = s;
  for (std::size_t i = train.volumes.size(); i < altered.volumes.size(); ++i) altered.volumes[i] *= 3.0;
  const auto [train2, test2] = chronological_split(altered, 0.8);
  CHECK(compute_stats(train) == compute_stats(train2));
  CHECK_FALSE(test2.volumes == test_part.volumes);
}

TEST_CASE("chronological split is a contiguous prefix and suffix") {
  const TrafficSeries s = make_series(100, 1, 1, [](std::size_t t, std::size_t, std::size_t) { return double(t); });
  const auto [a, b] = chronological_split(s, 0.8, 20);
  CHECK(a.length() == 80);
  CHECK(b.length() == 20);
  CHECK(b.at(0, 0, 0) == 80.0);
  CHECK(b.start_epoch == s.timestamp(80));
  CHECK_THROWS_AS(chronological_split(s, 0.8, 24), ContractError);
  CHECK_THROWS_AS(chronological_split(s, 1.0, 1), ContractError);
}

TEST_CASE("an 85-day series splits into 17 test days") {
  const std::size_t bins = 85 * 288;
  const TrafficSeries s = make_series(bins, 1, 1, [](std::size_t, std::size_t, std::size_t) { return 1.0; });
  const auto [train, test_part] = chronological_split(s, 0.8);
  CHECK(test_part.length() == 17 * 288);
  CHECK(train.length() == 68 * 288);
}

TEST_CASE("noise-free synthetic traffic without sporadic sites repeats daily") {
  SyntheticConfig c = small_synthetic();
  c.noise = 0.0;
  c.sporadic = 0;
  const TrafficSeries s = synthesize_traffic(c);
  const std::size_t S = s.service_count(), A = s.antenna_count();
  for (std::size_t t = 0; t + 288 < s.length(); t += 13)
    for (std::size_t k = 0; k < S; ++k)
      for (std::size_t a = 0; a < A; ++a) CHECK(s.at(t, k, a) == s.at(t + 288, k, a));
}

TEST_CASE("service shares follow the power law") {
  const auto shares = service_shares(5, 1.0);
  const double h5 = 1.0 + 1.0 / 2 + 1.0 / 3 + 1.0 / 4 + 1.0 / 5;
  CHECK(shares[0] == doctest::Approx(1.0 / h5));
  CHECK(shares[4] == doctest::Approx(0.2 / h5));
  CHECK(std::accumulate(shares.begin(), shares.end(), 0.0) == doctest::Approx(1.0));
  const double alpha = alpha_for_top_share(8, 0.5);
  CHECK(service_shares(8, alpha)[0] == doctest::Approx(0.5).epsilon(1e-9));

  for (std::size_t sporadic : {0u, 2u}) {
    SyntheticConfig c;
    c.days = 28;
    c.alpha = alpha;
    c.sporadic = sporadic;
    c.noise = sporadic == 0 ? 0.0 : c.noise;
    const TrafficSeries s = synthesize_traffic(c);
    std::vector<double> totals(c.services, 0.0);
    for (std::size_t t = 0; t < s.length(); ++t)
      for (std::size_t k = 0; k < c.services; ++k)
        for (std::size_t a = 0; a < s.antenna_count(); ++a) totals[k] += s.at(t, k, a);
    const double all = std::accumulate(totals.begin(), totals.end(), 0.0);
    const auto want = service_shares(c.services, alpha);
    for (std::size_t k = 0; k < c.services; ++k) {
      CAPTURE(k);
      CAPTURE(sporadic);
      CHECK(std::abs(totals[k] / all - want[k]) / want[k] < 0.02);
      if (sporadic == 0 && k > 0) CHECK(totals[k] <= totals[k - 1]);
    }
  }
}

TEST_CASE("synthetic traffic is determined by the seed") {
  const SyntheticConfig c = small_synthetic();
  const TrafficSeries a = synthesize_traffic(c);
  CHECK(a.volumes == synthesize_traffic(c).volumes);
  SyntheticConfig other = c;
  other.seed += 1;
  CHECK_FALSE(a.volumes == synthesize_traffic(other).volumes);
  for (double v : a.volumes.data()) CHECK(v >= 0.0);
  CHECK(a.length() == c.days * 288);
  CHECK(a.antenna_count() == 10);
}

TEST_CASE("synthetic series survive a CSV round trip exactly") {
  const SyntheticConfig c = small_synthetic();
  const TrafficSeries s = synthesize_traffic(c);
  const auto dir = test::scratch_dir("synthetic_roundtrip");
  write_csv(s, (dir / "t.csv").string(), {"seed=7"});
  write_catalog(s.services, (dir / "c.csv").string());
  TrafficSeries back = ingest_csv((dir / "t.csv").string());
  apply_catalog(back, read_catalog((dir / "c.csv").string()));
  CHECK(back.volumes == s.volumes);
  CHECK(back.services == s.services);
  CHECK(back.start_epoch == s.start_epoch);
  for (std::size_t a = 0; a < s.antenna_count(); ++a) {
    CHECK(back.antennas[a].id == s.antennas[a].id);
    CHECK(back.antennas[a].x == doctest::Approx(s.antennas[a].x).epsilon(1e-12));
  }
}

TEST_CASE("catalogs reject unknown categories and missing services") {
  const auto dir = test::scratch_dir("catalog_errors");
  test::write_file(dir / "bad.csv", "service_id,service_name,category\nx,X,radio\n");
  CHECK_THROWS_AS(read_catalog((dir / "bad.csv").string()), ParseError);
  TrafficSeries s = make_series(3, 2, 1, [](std::size_t, std::size_t, std::size_t) { return 1.0; });
  CHECK_THROWS_AS(apply_catalog(s, {ServiceInfo{"s0", "a", "web"}}), ContractError);
  apply_catalog(s, {ServiceInfo{"s1", "b", "chat"}, ServiceInfo{"s0", "a", "streaming"}});
  CHECK(s.services[0].category == "streaming");
  CHECK(s.services[1].name == "b");
}

TEST_CASE("prepared data takes statistics from the training portion only") {
  SyntheticConfig c = small_synthetic();
  c.days = 4;
  const TrafficSeries s = filter_active_antennas(synthesize_traffic(c), 0.9);
  const auto [rows, cols] = choose_grid_dims(s.antennas);
  const AntennaGrid grid = map_antennas_to_grid(s.antennas, rows, cols);
  PipelineConfig p;
  p.train_stride = 3;
  p.eval_stride = 5;
  const PreparedData d = prepare_data(s, grid, p);
  const std::size_t training = d.train_bins + d.validation_bins;
  CHECK(training + d.test_bins == s.length());
  CHECK(training == static_cast<std::size_t>(std::llround(0.8 * double(s.length()))));
  CHECK(d.validation_bins == static_cast<std::size_t>(std::llround(p.validation_frac * double(training))));
  CHECK(d.stats == compute_stats(s.slice(0, training)));
  CHECK(d.test.size() == (d.test_bins - 24) / 5 + 1);
  CHECK(d.validation_bins > 0);
  CHECK(d.test.start_bin(0) == 0);
}
