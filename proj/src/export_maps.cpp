#include "aaformer/export_maps.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace aaformer {

namespace {

std::vector<const AlignmentTrace*> head_alignments(const LayerTrace& trace, std::size_t head) {
  if (head >= trace.heads) {
    throw ExportError("head " + std::to_string(head) + " out of range (layer has " + std::to_string(trace.heads) +
                      ")");
  }
  std::vector<const AlignmentTrace*> out;
  for (const auto& a : trace.alignments) {
    if (a.head == head) out.push_back(&a);
  }
  std::sort(out.begin(), out.end(), [](const auto* a, const auto* b) { return a->set < b->set; });
  return out;
}

std::string numbered(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%02zu", prefix, i);
  return buf;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ExportError("cannot open " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

std::vector<GrayImage> render_part_maps(const LayerTrace& trace, std::size_t head, std::size_t grid_rows,
                                        std::size_t grid_cols) {
  if (grid_rows * grid_cols != trace.num_patches) throw ExportError("grid does not match the traced patch count");
  std::vector<GrayImage> maps;
  for (const auto* a : head_alignments(trace, head)) {
    for (std::size_t p = 0; p < a->parts; ++p) {
      const std::size_t part = a->part_offset + p;
      GrayImage img{grid_cols, grid_rows, std::vector<std::uint8_t>(trace.num_patches, 0)};
      const auto& phi = a->members[p];
      double max_w = 0.0;
      for (auto j : phi) max_w = std::max(max_w, trace.part_weight(head, part, j));
      for (auto j : phi) {
        const double w = trace.part_weight(head, part, j);
        const double scaled = max_w > 0.0 ? std::round(255.0 * w / max_w) : 255.0;
        img.pixels[j] = static_cast<std::uint8_t>(std::clamp(scaled, 1.0, 255.0));
      }
      maps.push_back(std::move(img));
    }
  }
  return maps;
}

std::vector<MapRow> map_rows(const LayerTrace& trace, std::size_t head) {
  std::vector<MapRow> rows;
  for (const auto* a : head_alignments(trace, head)) {
    for (std::size_t p = 0; p < a->parts; ++p) {
      for (std::size_t j = 0; j < trace.num_patches; ++j) {
        MapRow r;
        r.set = a->set;
        r.part = p;
        r.patch = j;
        if (a->plan) r.plan = a->plan->values.at(p, j);
        r.assigned = std::binary_search(a->members[p].begin(), a->members[p].end(), j);
        r.weight = trace.part_weight(head, a->part_offset + p, j);
        rows.push_back(r);
      }
    }
  }
  return rows;
}

ExportedMaps export_maps(const std::vector<LayerTrace>& traces, std::size_t layer, std::size_t head,
                         std::size_t grid_rows, std::size_t grid_cols, const std::string& out_dir) {
  if (layer >= traces.size()) {
    throw ExportError("layer " + std::to_string(layer) + " out of range (" + std::to_string(traces.size()) +
                      " traced layers)");
  }
  const auto& trace = traces[layer];
  const auto maps = render_part_maps(trace, head, grid_rows, grid_cols);
  std::filesystem::create_directories(out_dir);
  const auto stem = (std::filesystem::path(out_dir) / (numbered("layer", layer) + "_" + numbered("head", head))).string();
  ExportedMaps out;
  for (std::size_t p = 0; p < maps.size(); ++p) {
    out.images.push_back(stem + "_" + numbered("part", p) + ".pgm");
    write_pgm(maps[p], out.images.back());
  }
  out.table = stem + ".csv";
  std::ofstream csv(out.table, std::ios::binary | std::ios::trunc);
  if (!csv) throw ExportError("cannot write " + out.table);
  csv << format_map_csv(map_rows(trace, head));
  return out;
}

void write_pgm(const GrayImage& image, const std::string& path) {
  if (image.pixels.size() != image.width * image.height) throw ExportError("image size mismatch");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ExportError("cannot write " + path);
  out << "P5\n" << image.width << " " << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
}

GrayImage read_pgm(const std::string& path) {
  const auto bytes = read_file(path);
  std::istringstream in(bytes);
  std::string magic;
  std::size_t maxval = 0;
  GrayImage img;
  in >> magic >> img.width >> img.height >> maxval;
  if (!in || magic != "P5" || maxval != 255) throw ExportError(path + ": not an 8-bit binary PGM");
  in.get();
  const auto offset = static_cast<std::size_t>(in.tellg());
  if (bytes.size() - offset != img.width * img.height) throw ExportError(path + ": pixel data size mismatch");
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(offset), bytes.end());
  return img;
}

std::string format_map_csv(const std::vector<MapRow>& rows) {
  std::string out = "set,part,patch,plan,assigned,weight\n";
  char buf[160];
  for (const auto& r : rows) {
    char plan[40] = "";
    if (r.plan) std::snprintf(plan, sizeof(plan), "%.17g", *r.plan);
    std::snprintf(buf, sizeof(buf), "%zu,%zu,%zu,%s,%d,%.17g\n", r.set, r.part, r.patch, plan, r.assigned ? 1 : 0,
                  r.weight);
    out += buf;
  }
  return out;
}

std::vector<MapRow> parse_map_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "set,part,patch,plan,assigned,weight") {
    throw ExportError("map CSV: unexpected header");
  }
  std::vector<MapRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::istringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
    if (line.back() == ',') f.emplace_back();
    if (f.size() != 6) throw ExportError("map CSV: expected 6 fields in '" + line + "'");
    try {
      MapRow r;
      r.set = std::stoul(f[0]);
      r.part = std::stoul(f[1]);
      r.patch = std::stoul(f[2]);
      if (!f[3].empty()) r.plan = std::strtod(f[3].c_str(), nullptr);
      r.assigned = f[4] == "1";
      r.weight = std::strtod(f[5].c_str(), nullptr);
      rows.push_back(r);
    } catch (const std::logic_error&) {
      throw ExportError("map CSV: malformed row '" + line + "'");
    }
  }
  return rows;
}

std::vector<MapRow> read_map_csv(const std::string& path) { return parse_map_csv(read_file(path)); }

}  // namespace aaformer
