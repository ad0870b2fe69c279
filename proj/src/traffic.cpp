#include "mtf/traffic.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <unordered_map>

#include <fmt/format.h>

#include "mtf/error.hpp"
#include "mtf/timeutil.hpp"

namespace mtf {

bool is_known_category(std::string_view category) {
  return std::find(kServiceCategories.begin(), kServiceCategories.end(), category) != kServiceCategories.end();
}

double TrafficSeries::total_volume() const {
  double total = 0.0;
  for (double v : volumes.data()) total += v;
  return total;
}

TrafficSeries TrafficSeries::slice(std::size_t begin, std::size_t count) const {
  if (count == 0 || begin + count > length()) {
    throw ContractError(fmt::format("series slice [{}, {}) outside length {}", begin, begin + count, length()));
  }
  TrafficSeries out;
  out.start_epoch = timestamp(begin);
  out.step_seconds = step_seconds;
  out.antennas = antennas;
  out.services = services;
  const std::size_t row = services.size() * antennas.size();
  const auto first = volumes.data().begin() + static_cast<std::ptrdiff_t>(begin * row);
  out.volumes = Tensor(Shape{count, services.size(), antennas.size()},
                       std::vector<double>(first, first + static_cast<std::ptrdiff_t>(count * row)));
  return out;
}

void TrafficSeries::validate() const {
  if (step_seconds <= 0) throw ContractError("series step must be positive");
  if (volumes.shape() != Shape{length(), services.size(), antennas.size()} || length() == 0) {
    throw DimensionError("series volumes shape " + to_string(volumes.shape()) + " inconsistent with " +
                         std::to_string(services.size()) + " services and " + std::to_string(antennas.size()) +
                         " antennas");
  }
  for (double v : volumes.data()) {
    if (!std::isfinite(v) || v < 0.0) throw ContractError("series volumes must be finite and nonnegative");
  }
}

namespace {

// Splits on commas without allocating; fields may not contain commas.
std::size_t split_fields(std::string_view line, std::string_view* out, std::size_t max_fields) {
  std::size_t n = 0;
  std::size_t start = 0;
  while (n < max_fields) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out[n++] = line.substr(start);
      return n;
    }
    out[n++] = line.substr(start, comma - start);
    start = comma + 1;
  }
  return n + 1;  // too many fields
}

double to_double(std::string_view text, std::size_t line, const char* field) {
  double v = 0.0;
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end || text.empty()) {
    throw ParseError(fmt::format("invalid {} '{}'", field, text), line);
  }
  return v;
}

struct Record {
  std::int64_t time;
  std::uint32_t antenna;
  std::uint32_t service;
  std::uint32_t line;
  double volume;
};

struct Coordinates {
  double lon, lat;
  std::size_t line;
};

std::vector<std::uint32_t> sorted_ranks(const std::vector<std::string>& ids) {
  std::vector<std::uint32_t> order(ids.size());
  std::iota(order.begin(), order.end(), 0u);
  std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) { return ids[a] < ids[b]; });
  std::vector<std::uint32_t> rank(ids.size());
  for (std::uint32_t r = 0; r < order.size(); ++r) rank[order[r]] = r;
  return rank;
}

}  // namespace

TrafficSeries ingest_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read traffic file " + path);
  static constexpr std::string_view header = "timestamp_utc,antenna_id,lon,lat,service_id,bytes_up,bytes_down";

  std::unordered_map<std::string, std::uint32_t> antenna_index, service_index;
  std::vector<std::string> antenna_ids, service_ids;
  std::vector<Coordinates> coords;
  std::vector<Record> records;
  std::string line;
  std::string last_stamp;
  std::int64_t last_time = 0;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (!have_header) {
      if (line != header) throw ParseError(fmt::format("expected header '{}'", header), line_no);
      have_header = true;
      continue;
    }
    std::string_view f[7];
    if (split_fields(line, f, 7) != 7) throw ParseError("expected 7 comma-separated fields", line_no);
    if (f[0] != last_stamp) {
      const auto t = parse_iso8601(f[0]);
      if (!t) throw ParseError(fmt::format("invalid timestamp '{}'", f[0]), line_no);
      if (*t % kBinSeconds != 0) throw ParseError(fmt::format("timestamp {} not on a 5-minute boundary", f[0]), line_no);
      last_stamp.assign(f[0]);
      last_time = *t;
    }
    if (f[1].empty() || f[4].empty()) throw ParseError("empty antenna or service id", line_no);
    const double lon = to_double(f[2], line_no, "lon");
    const double lat = to_double(f[3], line_no, "lat");
    const double up = to_double(f[5], line_no, "bytes_up");
    const double down = to_double(f[6], line_no, "bytes_down");
    if (!std::isfinite(up + down) || up < 0.0 || down < 0.0) {
      throw ParseError("byte counts must be finite and nonnegative", line_no);
    }
    if (!(lon >= -180.0 && lon <= 180.0 && lat >= -90.0 && lat <= 90.0)) {
      throw ParseError("coordinates out of range", line_no);
    }
    const auto [ait, new_antenna] = antenna_index.try_emplace(std::string(f[1]), antenna_ids.size());
    if (new_antenna) {
      antenna_ids.emplace_back(f[1]);
      coords.push_back(Coordinates{lon, lat, line_no});
    } else if (coords[ait->second].lon != lon || coords[ait->second].lat != lat) {
      throw ParseError(fmt::format("antenna {} changes coordinates (first seen on line {})", f[1],
                                   coords[ait->second].line),
                       line_no);
    }
    const auto [sit, new_service] = service_index.try_emplace(std::string(f[4]), service_ids.size());
    if (new_service) service_ids.emplace_back(f[4]);
    records.push_back(Record{last_time, ait->second, sit->second, static_cast<std::uint32_t>(line_no), up + down});
  }
  if (!have_header) throw ParseError("traffic file " + path + " is empty", line_no);
  if (records.empty()) throw ParseError("traffic file " + path + " has no data rows", line_no);

  std::int64_t t0 = records[0].time, t1 = records[0].time;
  for (const Record& r : records) {
    t0 = std::min(t0, r.time);
    t1 = std::max(t1, r.time);
  }
  const auto bins = static_cast<std::size_t>((t1 - t0) / kBinSeconds + 1);
  std::vector<char> present(bins, 0);
  for (const Record& r : records) present[static_cast<std::size_t>((r.time - t0) / kBinSeconds)] = 1;
  std::vector<std::int64_t> missing;
  for (std::size_t b = 0; b < bins; ++b) {
    if (!present[b]) missing.push_back(t0 + static_cast<std::int64_t>(b) * kBinSeconds);
  }
  if (!missing.empty()) {
    std::string listed;
    for (std::size_t i = 0; i < missing.size() && i < 5; ++i) listed += (i ? ", " : "") + format_iso8601(missing[i]);
    if (missing.size() > 5) listed += ", ...";
    throw GapError(fmt::format("{} missing 5-minute bins: {}", missing.size(), listed), std::move(missing));
  }

  const auto antenna_rank = sorted_ranks(antenna_ids);
  const auto service_rank = sorted_ranks(service_ids);
  TrafficSeries series;
  series.start_epoch = t0;
  series.antennas.resize(antenna_ids.size());
  for (std::size_t i = 0; i < antenna_ids.size(); ++i) {
    AntennaSite& a = series.antennas[antenna_rank[i]];
    a.id = antenna_ids[i];
    a.lon = coords[i].lon;
    a.lat = coords[i].lat;
  }
  project_local(series.antennas);
  series.services.resize(service_ids.size());
  for (std::size_t i = 0; i < service_ids.size(); ++i) {
    series.services[service_rank[i]] = ServiceInfo{service_ids[i], service_ids[i], "miscellaneous"};
  }
  const std::size_t S = service_ids.size(), A = antenna_ids.size();
  series.volumes = Tensor(Shape{bins, S, A});
  std::vector<char> seen(bins * S * A, 0);
  for (const Record& r : records) {
    const std::size_t flat =
        (static_cast<std::size_t>((r.time - t0) / kBinSeconds) * S + service_rank[r.service]) * A +
        antenna_rank[r.antenna];
    if (seen[flat]) {
      throw ParseError(fmt::format("duplicate row for {} antenna {} service {}", format_iso8601(r.time),
                                   antenna_ids[r.antenna], service_ids[r.service]),
                       r.line);
    }
    seen[flat] = 1;
    series.volumes[flat] = r.volume;
  }
  return series;
}

void write_csv(const TrafficSeries& series, const std::string& path, const std::vector<std::string>& preamble,
               double up_share) {
  series.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write traffic file " + path);
  for (const std::string& line : preamble) out << "# " << line << '\n';
  out << "timestamp_utc,antenna_id,lon,lat,service_id,bytes_up,bytes_down\n";
  std::vector<std::string> coords;
  for (const AntennaSite& a : series.antennas) coords.push_back(fmt::format("{:.6f},{:.6f}", a.lon, a.lat));
  std::string buffer;
  for (std::size_t t = 0; t < series.length(); ++t) {
    const std::string stamp = format_iso8601(series.timestamp(t));
    bool wrote = false;
    for (std::size_t a = 0; a < series.antenna_count(); ++a) {
      for (std::size_t s = 0; s < series.service_count(); ++s) {
        const double v = series.at(t, s, a);
        // Zero rows are implied; a fully idle bin still gets one row so it is not read as a gap.
        const bool last = a + 1 == series.antenna_count() && s + 1 == series.service_count();
        if (v == 0.0 && !(last && !wrote)) continue;
        const double up = std::floor(v * up_share);
        fmt::format_to(std::back_inserter(buffer), "{},{},{},{},{},{}\n", stamp, series.antennas[a].id, coords[a],
                       series.services[s].id, up, v - up);
        wrote = true;
      }
    }
    if (buffer.size() > (1u << 20)) {
      out << buffer;
      buffer.clear();
    }
  }
  out << buffer;
  if (!out) throw IoError("failed writing traffic file " + path);
}

std::vector<ServiceInfo> read_catalog(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read catalog " + path);
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  std::vector<ServiceInfo> out;
  std::map<std::string, std::size_t> seen;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (!have_header) {
      if (line != "service_id,service_name,category") throw ParseError("expected catalog header", line_no);
      have_header = true;
      continue;
    }
    std::string_view f[3];
    if (split_fields(line, f, 3) != 3) throw ParseError("expected 3 comma-separated fields", line_no);
    if (f[0].empty()) throw ParseError("empty service id", line_no);
    if (!is_known_category(f[2])) throw ParseError(fmt::format("unknown category '{}'", f[2]), line_no);
    if (!seen.emplace(std::string(f[0]), line_no).second) {
      throw ParseError(fmt::format("duplicate service id '{}'", f[0]), line_no);
    }
    out.push_back(ServiceInfo{std::string(f[0]), std::string(f[1]), std::string(f[2])});
  }
  if (out.empty()) throw ParseError("catalog " + path + " lists no services", line_no);
  return out;
}

void write_catalog(const std::vector<ServiceInfo>& services, const std::string& path,
                   const std::vector<std::string>& preamble) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write catalog " + path);
  for (const std::string& line : preamble) out << "# " << line << '\n';
  out << "service_id,service_name,category\n";
  for (const ServiceInfo& s : services) out << s.id << ',' << s.name << ',' << s.category << '\n';
  if (!out) throw IoError("failed writing catalog " + path);
}

void apply_catalog(TrafficSeries& series, const std::vector<ServiceInfo>& catalog) {
  for (ServiceInfo& s : series.services) {
    const auto it = std::find_if(catalog.begin(), catalog.end(), [&](const ServiceInfo& c) { return c.id == s.id; });
    if (it == catalog.end()) throw ContractError("service " + s.id + " is missing from the catalog");
    if (!is_known_category(it->category)) throw ContractError("unknown category " + it->category);
    s = *it;
  }
}

std::vector<double> activity_fractions(const TrafficSeries& series) {
  const std::size_t T = series.length(), S = series.service_count(), A = series.antenna_count();
  std::vector<double> fraction(A, 0.0);
  for (std::size_t a = 0; a < A; ++a) {
    std::size_t active = 0;
    for (std::size_t t = 0; t < T; ++t) {
      double total = 0.0;
      for (std::size_t s = 0; s < S; ++s) total += series.at(t, s, a);
      if (total > 0.0) ++active;
    }
    fraction[a] = static_cast<double>(active) / static_cast<double>(T);
  }
  return fraction;
}

TrafficSeries filter_active_antennas(const TrafficSeries& series, double threshold) {
  if (!(threshold > 0.0 && threshold <= 1.0)) throw ContractError("activity threshold must lie in (0, 1]");
  series.validate();
  const std::vector<double> fraction = activity_fractions(series);
  std::vector<std::size_t> keep;
  for (std::size_t a = 0; a < fraction.size(); ++a) {
    if (fraction[a] >= threshold) keep.push_back(a);
  }
  if (keep.empty()) {
    throw ContractError(fmt::format("no antenna is active in at least {:.0f}% of the bins", threshold * 100.0));
  }
  TrafficSeries out;
  out.start_epoch = series.start_epoch;
  out.step_seconds = series.step_seconds;
  out.services = series.services;
  for (std::size_t a : keep) out.antennas.push_back(series.antennas[a]);
  const std::size_t T = series.length(), S = series.service_count();
  out.volumes = Tensor(Shape{T, S, keep.size()});
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t s = 0; s < S; ++s) {
      for (std::size_t i = 0; i < keep.size(); ++i) {
        out.volumes[(t * S + s) * keep.size() + i] = series.at(t, s, keep[i]);
      }
    }
  }
  return out;
}

NormalizationStats compute_stats(const TrafficSeries& series) {
  series.validate();
  const std::size_t T = series.length(), S = series.service_count(), A = series.antenna_count();
  NormalizationStats stats;
  stats.mean.assign(S, 0.0);
  stats.stddev.assign(S, 0.0);
  const double n = static_cast<double>(T * A);
  for (std::size_t s = 0; s < S; ++s) {
    double sum = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t a = 0; a < A; ++a) sum += series.at(t, s, a);
    }
    const double mean = sum / n;
    double ss = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t a = 0; a < A; ++a) {
        const double d = series.at(t, s, a) - mean;
        ss += d * d;
      }
    }
    stats.mean[s] = mean;
    stats.stddev[s] = std::max(std::sqrt(ss / n), NormalizationStats::kStdFloor);
  }
  return stats;
}

namespace {

template <class F>
Tensor map_service_axis(const Tensor& x, const NormalizationStats& stats, std::size_t axis, F&& f) {
  if (axis >= x.rank() || x.dim(axis) != stats.mean.size() || stats.stddev.size() != stats.mean.size()) {
    throw DimensionError(fmt::format("normalization stats for {} services do not fit axis {} of {}",
                                     stats.mean.size(), axis, to_string(x.shape())));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t S = x.dim(axis);
  Tensor out(x.shape());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t s = 0; s < S; ++s) {
      const std::size_t base = (o * S + s) * inner;
      for (std::size_t i = 0; i < inner; ++i) out[base + i] = f(x[base + i], stats.mean[s], stats.stddev[s]);
    }
  }
  return out;
}

}  // namespace

Tensor normalize(const Tensor& x, const NormalizationStats& stats, std::size_t service_axis) {
  return map_service_axis(x, stats, service_axis, [](double v, double m, double s) { return (v - m) / s; });
}

Tensor denormalize(const Tensor& x, const NormalizationStats& stats, std::size_t service_axis) {
  return map_service_axis(x, stats, service_axis, [](double v, double m, double s) { return v * s + m; });
}

}  // namespace mtf
