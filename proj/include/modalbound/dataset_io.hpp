#pragma once

#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "modalbound/modality.hpp"

namespace modalbound {

// Datasets are stored as a CSV of feature columns plus a final label
// column, with a JSON sidecar holding the schema and provenance. An absent
// block is written as empty cells across all of its columns.

inline std::string sidecar_path(const std::string& csv_path) {
  return csv_path + ".meta.json";
}

inline void write_dataset_csv(const Dataset& ds, const std::string& csv_path) {
  std::ofstream out(csv_path);
  if (!out) throw Error("cannot open for write: " + csv_path);
  const ModalitySchema& schema = ds.schema();
  for (int k = 0; k < schema.modality_count(); ++k)
    for (int j = 0; j < schema.dim(k); ++j)
      out << "m" << (k + 1) << "_" << j << ",";
  out << "y\n";
  for (const auto& s : ds.samples()) {
    for (int k = 0; k < schema.modality_count(); ++k) {
      const auto& b = s.blocks[static_cast<std::size_t>(k)];
      for (int j = 0; j < schema.dim(k); ++j) {
        if (b) out << format_double((*b)[j]);
        out << ",";
      }
    }
    out << format_double(s.label) << "\n";
  }
  if (!out) throw Error("write failed: " + csv_path);

  nlohmann::json meta;
  meta["schema"] = {{"modalities", schema.modality_count()},
                    {"dims", schema.dims()}};
  meta["n_samples"] = ds.size();
  meta["provenance"] = {{"generator", ds.meta().generator},
                        {"seed", ds.meta().seed},
                        {"config_digest", ds.meta().config_digest},
                        {"split", ds.meta().split},
                        {"parent_digest", ds.meta().parent_digest}};
  meta["digest"] = ds.digest();
  std::ofstream mout(sidecar_path(csv_path));
  if (!mout) throw Error("cannot open for write: " + sidecar_path(csv_path));
  mout << meta.dump(2) << "\n";
}

namespace iodetail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  bool quoted = false;
  for (char c : line) {
    if (c == '"') {
      quoted = !quoted;
    } else if (c == ',' && !quoted) {
      cells.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  cells.push_back(cur);
  return cells;
}

}  // namespace iodetail

inline Dataset read_dataset_csv(const std::string& csv_path) {
  std::ifstream min(sidecar_path(csv_path));
  if (!min) throw Error("missing sidecar: " + sidecar_path(csv_path));
  nlohmann::json meta = nlohmann::json::parse(min);

  ModalitySchema schema(meta.at("schema").at("dims").get<std::vector<int>>());
  DatasetMeta dm;
  const auto& prov = meta.at("provenance");
  dm.generator = prov.at("generator").get<std::string>();
  dm.seed = prov.at("seed").get<std::uint64_t>();
  dm.config_digest = prov.at("config_digest").get<std::string>();
  dm.split = prov.at("split").get<std::string>();
  dm.parent_digest = prov.at("parent_digest").get<std::string>();

  std::ifstream in(csv_path);
  if (!in) throw Error("cannot open: " + csv_path);
  std::string line;
  if (!std::getline(in, line)) throw SchemaMismatchError("empty csv");
  auto header = iodetail::split_csv_line(line);
  if (static_cast<int>(header.size()) != schema.total_dim() + 1)
    throw SchemaMismatchError("csv column count does not match sidecar schema");
  if (header.back() != "y")
    throw SchemaMismatchError("last csv column must be y");

  Dataset ds(schema, dm);
  int expected = meta.at("n_samples").get<int>();
  ds.reserve(expected);
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    auto cells = iodetail::split_csv_line(line);
    if (static_cast<int>(cells.size()) != schema.total_dim() + 1)
      throw SchemaMismatchError("row " + std::to_string(row) +
                                ": wrong cell count");
    MultiModalSample s;
    s.blocks.resize(static_cast<std::size_t>(schema.modality_count()));
    int col = 0;
    for (int k = 0; k < schema.modality_count(); ++k) {
      int empties = 0;
      for (int j = 0; j < schema.dim(k); ++j)
        if (cells[static_cast<std::size_t>(col + j)].empty()) ++empties;
      if (empties == schema.dim(k)) {
        col += schema.dim(k);
        continue;
      }
      if (empties != 0)
        throw SchemaMismatchError("row " + std::to_string(row) + ": block m" +
                                  std::to_string(k + 1) +
                                  " is only partially absent");
      Eigen::VectorXd b(schema.dim(k));
      for (int j = 0; j < schema.dim(k); ++j)
        b[j] = std::stod(cells[static_cast<std::size_t>(col + j)]);
      s.blocks[static_cast<std::size_t>(k)] = std::move(b);
      col += schema.dim(k);
    }
    s.label = std::stod(cells.back());
    ds.add(std::move(s));
  }
  if (ds.size() != expected)
    throw SchemaMismatchError("csv row count does not match sidecar");
  return ds;
}

}  // namespace modalbound
