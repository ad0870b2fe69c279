#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace mtf {

struct AntennaSite {
  std::string id;
  double x = 0.0;  // meters east of the projection centre
  double y = 0.0;  // meters north
  double lon = 0.0;
  double lat = 0.0;
};

/// Row-major square or rectangular matrix of assignment costs.
struct CostMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  CostMatrix() = default;
  CostMatrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), values(r * c, fill) {}
  double& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

struct Point {
  double x = 0.0;
  double y = 0.0;
};

/// Cell centres of a uniform grid. Row 0 is the northernmost row.
struct GridGeometry {
  std::size_t rows = 0;
  std::size_t cols = 0;
  double origin_x = 0.0;  // centre of cell (0, 0)
  double origin_y = 0.0;
  double spacing_x = 0.0;
  double spacing_y = 0.0;

  Point center(std::size_t row, std::size_t col) const {
    return Point{origin_x + static_cast<double>(col) * spacing_x, origin_y - static_cast<double>(row) * spacing_y};
  }
  std::vector<Point> centers() const;
  std::size_t cells() const { return rows * cols; }
  friend bool operator==(const GridGeometry&, const GridGeometry&) = default;
};

struct CellIndex {
  std::size_t row = 0;
  std::size_t col = 0;
  friend bool operator==(const CellIndex&, const CellIndex&) = default;
};

class AntennaGrid {
 public:
  AntennaGrid() = default;
  /// `cells[i]` is the cell of `antenna_ids[i]`; throws when two antennas share a cell.
  AntennaGrid(GridGeometry geometry, std::vector<std::string> antenna_ids, std::vector<CellIndex> cells,
              std::vector<double> displacement_m);

  const GridGeometry& geometry() const { return geometry_; }
  std::size_t rows() const { return geometry_.rows; }
  std::size_t cols() const { return geometry_.cols; }
  std::size_t antenna_count() const { return ids_.size(); }
  const std::vector<std::string>& antenna_ids() const { return ids_; }
  const std::vector<CellIndex>& cells() const { return cells_; }
  const std::vector<double>& displacements() const { return displacement_; }
  double total_displacement() const;
  double mean_displacement() const;
  std::optional<CellIndex> cell_of(const std::string& antenna_id) const;
  /// Flat row-major cell index -> antenna position, or -1 for masked cells.
  const std::vector<std::ptrdiff_t>& cell_owner() const { return owner_; }
  bool masked(std::size_t row, std::size_t col) const { return owner_[row * cols() + col] < 0; }
  std::size_t masked_count() const;
  /// 1.0 on assigned cells, 0.0 on masked cells, row-major.
  std::vector<double> mask() const;

  friend bool operator==(const AntennaGrid&, const AntennaGrid&) = default;

 private:
  GridGeometry geometry_;
  std::vector<std::string> ids_;
  std::vector<CellIndex> cells_;
  std::vector<double> displacement_;
  std::vector<std::ptrdiff_t> owner_;
};

/// Euclidean distances, padded to square with (max real cost + 1) dummy rows.
CostMatrix build_cost_matrix(const std::vector<AntennaSite>& antennas, const std::vector<Point>& cells);

struct Assignment {
  std::vector<std::size_t> column_of_row;
  double total = 0.0;
};

/// O(n^3) shortest-augmenting-path Hungarian method. Ties go to the lowest
/// column index.
Assignment hungarian_assign(const CostMatrix& cost);
/// Exhaustive search over all n! permutations; n <= 8.
Assignment brute_force_assign(const CostMatrix& cost);

/// Grid spanning the antenna bounding box.
GridGeometry grid_over(const std::vector<AntennaSite>& antennas, std::size_t rows, std::size_t cols);
/// Smallest rows*cols >= n whose aspect ratio (cols/rows) is nearest the
/// bounding box's; ties prefer fewer rows.
std::pair<std::size_t, std::size_t> choose_grid_dims(const std::vector<AntennaSite>& antennas);

AntennaGrid map_antennas_to_grid(const std::vector<AntennaSite>& antennas, std::size_t rows, std::size_t cols);

/// Equirectangular projection about the centroid; fills x, y from lon, lat.
void project_local(std::vector<AntennaSite>& antennas);

/// Text table: comment preamble, grid and displacement lines, then
/// `antenna_id,row,col,displacement_m` rows.
void write_mapping(const AntennaGrid& grid, const std::string& path, const std::vector<std::string>& preamble = {});
AntennaGrid read_mapping(const std::string& path);

}  // namespace mtf
