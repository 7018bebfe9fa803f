#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "aaformer/attention.h"

namespace aaformer {

class ExportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // row-major
};

/// One map per part token over the patch grid for the given head. Cells
/// outside Φ_p are 0; members get max(1, round(255·w/max_w)) where w is the
/// part token's attention weight on that patch.
std::vector<GrayImage> render_part_maps(const LayerTrace& trace, std::size_t head, std::size_t grid_rows,
                                        std::size_t grid_cols);

struct MapRow {
  std::size_t set = 0;
  std::size_t part = 0;  // index within the set
  std::size_t patch = 0;
  std::optional<double> plan;  // absent when the mask did not come from a transport plan
  bool assigned = false;
  double weight = 0.0;
};

/// Rows of the CSV sidecar for one head, ordered by (set, part, patch).
std::vector<MapRow> map_rows(const LayerTrace& trace, std::size_t head);

struct ExportedMaps {
  std::vector<std::string> images;  // one PGM per part token
  std::string table;                // CSV sidecar
};

/// Writes `layerLL_headHH_partPP.pgm` for every part and `layerLL_headHH.csv`
/// into `out_dir`. Throws ExportError when layer or head is out of range.
ExportedMaps export_maps(const std::vector<LayerTrace>& traces, std::size_t layer, std::size_t head,
                         std::size_t grid_rows, std::size_t grid_cols, const std::string& out_dir);

void write_pgm(const GrayImage& image, const std::string& path);
GrayImage read_pgm(const std::string& path);

std::string format_map_csv(const std::vector<MapRow>& rows);
std::vector<MapRow> parse_map_csv(const std::string& text);
std::vector<MapRow> read_map_csv(const std::string& path);

}  // namespace aaformer
