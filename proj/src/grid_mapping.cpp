#include "mtf/grid_mapping.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "mtf/error.hpp"

namespace mtf {

std::vector<Point> GridGeometry::centers() const {
  std::vector<Point> out;
  out.reserve(cells());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out.push_back(center(r, c));
  }
  return out;
}

AntennaGrid::AntennaGrid(GridGeometry geometry, std::vector<std::string> antenna_ids, std::vector<CellIndex> cells,
                         std::vector<double> displacement_m)
    : geometry_(geometry),
      ids_(std::move(antenna_ids)),
      cells_(std::move(cells)),
      displacement_(std::move(displacement_m)),
      owner_(geometry.cells(), -1) {
  if (cells_.size() != ids_.size() || displacement_.size() != ids_.size()) {
    throw ContractError("AntennaGrid: ids, cells and displacements differ in length");
  }
  if (ids_.size() > geometry_.cells()) throw ContractError("AntennaGrid: more antennas than cells");
  std::set<std::string> seen;
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    const CellIndex& c = cells_[i];
    if (c.row >= geometry_.rows || c.col >= geometry_.cols) {
      throw ContractError(fmt::format("AntennaGrid: cell ({}, {}) outside the {}x{} grid", c.row, c.col,
                                      geometry_.rows, geometry_.cols));
    }
    std::ptrdiff_t& owner = owner_[c.row * geometry_.cols + c.col];
    if (owner >= 0) {
      throw ContractError(fmt::format("AntennaGrid: antennas {} and {} share cell ({}, {})", ids_[owner], ids_[i],
                                      c.row, c.col));
    }
    if (!seen.insert(ids_[i]).second) throw ContractError("AntennaGrid: duplicate antenna id " + ids_[i]);
    owner = static_cast<std::ptrdiff_t>(i);
  }
}

double AntennaGrid::total_displacement() const {
  return std::accumulate(displacement_.begin(), displacement_.end(), 0.0);
}

double AntennaGrid::mean_displacement() const {
  return ids_.empty() ? 0.0 : total_displacement() / static_cast<double>(ids_.size());
}

std::optional<CellIndex> AntennaGrid::cell_of(const std::string& antenna_id) const {
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (ids_[i] == antenna_id) return cells_[i];
  }
  return std::nullopt;
}

std::size_t AntennaGrid::masked_count() const {
  return static_cast<std::size_t>(std::count(owner_.begin(), owner_.end(), -1));
}

std::vector<double> AntennaGrid::mask() const {
  std::vector<double> m(owner_.size());
  for (std::size_t i = 0; i < owner_.size(); ++i) m[i] = owner_[i] >= 0 ? 1.0 : 0.0;
  return m;
}

CostMatrix build_cost_matrix(const std::vector<AntennaSite>& antennas, const std::vector<Point>& cells) {
  if (antennas.empty()) throw ContractError("build_cost_matrix: no antennas");
  if (cells.size() < antennas.size()) {
    throw ContractError(fmt::format("build_cost_matrix: {} cells cannot host {} antennas", cells.size(),
                                    antennas.size()));
  }
  const std::size_t n = cells.size();
  CostMatrix cost(n, n);
  double max_cost = 0.0;
  for (std::size_t i = 0; i < antennas.size(); ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double d = std::hypot(antennas[i].x - cells[j].x, antennas[i].y - cells[j].y);
      cost(i, j) = d;
      max_cost = std::max(max_cost, d);
    }
  }
  for (std::size_t i = antennas.size(); i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) cost(i, j) = max_cost + 1.0;
  }
  return cost;
}

namespace {

void check_square(const CostMatrix& cost, const char* who) {
  if (cost.rows != cost.cols) {
    throw ContractError(fmt::format("{}: cost matrix is {}x{}, not square", who, cost.rows, cost.cols));
  }
  if (cost.values.size() != cost.rows * cost.cols) throw ContractError(std::string(who) + ": malformed matrix");
  for (double v : cost.values) {
    if (!std::isfinite(v)) throw ContractError(std::string(who) + ": non-finite cost");
  }
}

double total_of(const CostMatrix& cost, const std::vector<std::size_t>& column_of_row) {
  double total = 0.0;
  for (std::size_t r = 0; r < column_of_row.size(); ++r) total += cost(r, column_of_row[r]);
  return total;
}

}  // namespace

Assignment hungarian_assign(const CostMatrix& cost) {
  check_square(cost, "hungarian_assign");
  const std::size_t n = cost.rows;
  Assignment result;
  if (n == 0) return result;
  constexpr double inf = std::numeric_limits<double>::infinity();
  // Potentials u (rows) and v (columns), 1-based with column 0 as the virtual root.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), min_slack(n + 1);
  std::vector<std::size_t> row_of_col(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    row_of_col[0] = i;
    std::size_t j0 = 0;
    std::fill(min_slack.begin(), min_slack.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = row_of_col[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < min_slack[j]) {
          min_slack[j] = cur;
          way[j] = j0;
        }
        if (min_slack[j] < delta) {
          delta = min_slack[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[row_of_col[j]] += delta;
          v[j] -= delta;
        } else {
          min_slack[j] -= delta;
        }
      }
      j0 = j1;
    } while (row_of_col[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      row_of_col[j0] = row_of_col[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  result.column_of_row.assign(n, 0);
  for (std::size_t j = 1; j <= n; ++j) result.column_of_row[row_of_col[j] - 1] = j - 1;
  result.total = total_of(cost, result.column_of_row);
  return result;
}

Assignment brute_force_assign(const CostMatrix& cost) {
  check_square(cost, "brute_force_assign");
  const std::size_t n = cost.rows;
  if (n > 8) throw ContractError(fmt::format("brute_force_assign: n = {} exceeds the limit of 8", n));
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Assignment best{perm, total_of(cost, perm)};
  while (std::next_permutation(perm.begin(), perm.end())) {
    const double t = total_of(cost, perm);
    if (t < best.total) best = Assignment{perm, t};
  }
  return best;
}

namespace {

struct Bounds {
  double min_x, max_x, min_y, max_y;
};

Bounds bounds_of(const std::vector<AntennaSite>& antennas) {
  if (antennas.empty()) throw ContractError("no antennas to map");
  Bounds b{antennas[0].x, antennas[0].x, antennas[0].y, antennas[0].y};
  for (const AntennaSite& a : antennas) {
    b.min_x = std::min(b.min_x, a.x);
    b.max_x = std::max(b.max_x, a.x);
    b.min_y = std::min(b.min_y, a.y);
    b.max_y = std::max(b.max_y, a.y);
  }
  return b;
}

}  // namespace

GridGeometry grid_over(const std::vector<AntennaSite>& antennas, std::size_t rows, std::size_t cols) {
  if (rows == 0 || cols == 0) throw ContractError("grid dimensions must be positive");
  const Bounds b = bounds_of(antennas);
  GridGeometry g;
  g.rows = rows;
  g.cols = cols;
  g.origin_x = b.min_x;
  g.origin_y = b.max_y;
  // A single row or column collapses onto the box edge; keep a unit spacing so centres stay distinct.
  g.spacing_x = cols > 1 ? (b.max_x - b.min_x) / static_cast<double>(cols - 1) : 1.0;
  g.spacing_y = rows > 1 ? (b.max_y - b.min_y) / static_cast<double>(rows - 1) : 1.0;
  if (g.spacing_x <= 0.0) g.spacing_x = 1.0;
  if (g.spacing_y <= 0.0) g.spacing_y = 1.0;
  return g;
}

std::pair<std::size_t, std::size_t> choose_grid_dims(const std::vector<AntennaSite>& antennas) {
  const Bounds b = bounds_of(antennas);
  const std::size_t n = antennas.size();
  const double width = std::max(b.max_x - b.min_x, 1.0);
  const double height = std::max(b.max_y - b.min_y, 1.0);
  const double aspect = width / height;  // cols / rows
  const double target = std::sqrt(static_cast<double>(n) / aspect);
  const auto centre = static_cast<std::ptrdiff_t>(std::llround(std::max(1.0, target)));
  std::pair<std::size_t, std::size_t> best{0, 0};
  std::size_t best_cells = std::numeric_limits<std::size_t>::max();
  double best_dev = std::numeric_limits<double>::infinity();
  for (std::ptrdiff_t r = std::max<std::ptrdiff_t>(1, centre - 2); r <= centre + 2; ++r) {
    const auto rows = static_cast<std::size_t>(r);
    if (rows > n) break;
    const std::size_t cols = (n + rows - 1) / rows;
    const double dev = std::abs(std::log(static_cast<double>(cols) / static_cast<double>(rows)) - std::log(aspect));
    const std::size_t cells = rows * cols;
    if (cells < best_cells || (cells == best_cells && dev < best_dev)) {
      best = {rows, cols};
      best_cells = cells;
      best_dev = dev;
    }
  }
  return best;
}

AntennaGrid map_antennas_to_grid(const std::vector<AntennaSite>& antennas, std::size_t rows, std::size_t cols) {
  if (antennas.empty()) throw ContractError("map_antennas_to_grid: no antennas");
  if (rows * cols < antennas.size()) {
    const auto [r, c] = choose_grid_dims(antennas);
    throw ContractError(fmt::format("grid {}x{} has {} cells for {} antennas; try {}x{}", rows, cols, rows * cols,
                                    antennas.size(), r, c));
  }
  const GridGeometry g = grid_over(antennas, rows, cols);
  const std::vector<Point> centers = g.centers();
  const Assignment a = hungarian_assign(build_cost_matrix(antennas, centers));
  std::vector<std::string> ids;
  std::vector<CellIndex> cells;
  std::vector<double> disp;
  for (std::size_t i = 0; i < antennas.size(); ++i) {
    const std::size_t cell = a.column_of_row[i];
    ids.push_back(antennas[i].id);
    cells.push_back(CellIndex{cell / cols, cell % cols});
    disp.push_back(std::hypot(antennas[i].x - centers[cell].x, antennas[i].y - centers[cell].y));
  }
  return AntennaGrid(g, std::move(ids), std::move(cells), std::move(disp));
}

void project_local(std::vector<AntennaSite>& antennas) {
  if (antennas.empty()) return;
  constexpr double earth_radius_m = 6371008.8;
  constexpr double deg = std::numbers::pi / 180.0;
  double lon0 = 0.0, lat0 = 0.0;
  for (const AntennaSite& a : antennas) {
    lon0 += a.lon;
    lat0 += a.lat;
  }
  lon0 /= static_cast<double>(antennas.size());
  lat0 /= static_cast<double>(antennas.size());
  const double kx = earth_radius_m * deg * std::cos(lat0 * deg);
  for (AntennaSite& a : antennas) {
    a.x = (a.lon - lon0) * kx;
    a.y = (a.lat - lat0) * earth_radius_m * deg;
  }
}

void write_mapping(const AntennaGrid& grid, const std::string& path, const std::vector<std::string>& preamble) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write mapping file " + path);
  for (const std::string& line : preamble) out << "# " << line << '\n';
  const GridGeometry& g = grid.geometry();
  out << fmt::format("grid,rows={},cols={},origin_x_m={},origin_y_m={},spacing_x_m={},spacing_y_m={}\n", g.rows,
                     g.cols, g.origin_x, g.origin_y, g.spacing_x, g.spacing_y);
  out << fmt::format("displacement,total_m={},mean_m={}\n", grid.total_displacement(), grid.mean_displacement());
  out << "antenna_id,row,col,displacement_m\n";
  for (std::size_t i = 0; i < grid.antenna_count(); ++i) {
    out << fmt::format("{},{},{},{}\n", grid.antenna_ids()[i], grid.cells()[i].row, grid.cells()[i].col,
                       grid.displacements()[i]);
  }
  if (!out) throw IoError("failed writing mapping file " + path);
}

namespace {

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> parts;
  std::stringstream ss(line);
  std::string item;
  while (std::getline(ss, item, ',')) parts.push_back(item);
  if (!line.empty() && line.back() == ',') parts.emplace_back();
  return parts;
}

double parse_number(const std::string& text, std::size_t line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ParseError("invalid number '" + text + "'", line);
  }
}

std::string field_value(const std::string& part, const std::string& key, std::size_t line) {
  const std::string prefix = key + "=";
  if (part.rfind(prefix, 0) != 0) throw ParseError("expected field " + key, line);
  return part.substr(prefix.size());
}

}  // namespace

AntennaGrid read_mapping(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read mapping file " + path);
  std::string line;
  std::size_t line_no = 0;
  GridGeometry g;
  bool have_grid = false, have_header = false;
  std::vector<std::string> ids;
  std::vector<CellIndex> cells;
  std::vector<double> disp;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto parts = split_commas(line);
    if (!have_grid) {
      if (parts.size() != 7 || parts[0] != "grid") throw ParseError("expected grid line", line_no);
      g.rows = static_cast<std::size_t>(parse_number(field_value(parts[1], "rows", line_no), line_no));
      g.cols = static_cast<std::size_t>(parse_number(field_value(parts[2], "cols", line_no), line_no));
      g.origin_x = parse_number(field_value(parts[3], "origin_x_m", line_no), line_no);
      g.origin_y = parse_number(field_value(parts[4], "origin_y_m", line_no), line_no);
      g.spacing_x = parse_number(field_value(parts[5], "spacing_x_m", line_no), line_no);
      g.spacing_y = parse_number(field_value(parts[6], "spacing_y_m", line_no), line_no);
      have_grid = true;
      continue;
    }
    if (parts[0] == "displacement") continue;
    if (!have_header) {
      if (line != "antenna_id,row,col,displacement_m") throw ParseError("expected mapping header", line_no);
      have_header = true;
      continue;
    }
    if (parts.size() != 4 || parts[0].empty()) throw ParseError("expected 4 fields", line_no);
    const double row = parse_number(parts[1], line_no), col = parse_number(parts[2], line_no);
    if (row < 0 || col < 0 || row != std::floor(row) || col != std::floor(col)) {
      throw ParseError("row/col must be nonnegative integers", line_no);
    }
    ids.push_back(parts[0]);
    cells.push_back(CellIndex{static_cast<std::size_t>(row), static_cast<std::size_t>(col)});
    disp.push_back(parse_number(parts[3], line_no));
  }
  if (!have_grid || !have_header) throw ParseError("mapping file is missing its grid or header line", line_no);
  if (ids.empty()) throw ParseError("mapping file lists no antennas", line_no);
  return AntennaGrid(g, std::move(ids), std::move(cells), std::move(disp));
}

}  // namespace mtf
