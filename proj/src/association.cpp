#include "assoc/association.h"

#include <cstdio>
#include <fstream>

#include <json.hpp>

namespace assoc {

namespace {

void write_matrix_csv(const std::filesystem::path& path, const NdArray<double>& m) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  std::size_t rows = m.shape.size() == 2 ? m.shape[0] : 1;
  std::size_t cols = m.shape.size() == 2 ? m.shape[1] : m.shape[0];
  char buf[40];
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      std::snprintf(buf, sizeof buf, "%.9g", m.data[i * cols + j]);
      if (j) out << ',';
      out << buf;
    }
    out << '\n';
  }
  if (!out) throw IoError("short write to " + path.string());
}

}  // namespace

void write_association_dump(const std::filesystem::path& dir, const AssociationDump& dump) {
  std::filesystem::create_directories(dir);
  write_matrix_csv(dir / "M.csv", dump.m);
  write_matrix_csv(dir / "Pab.csv", dump.pab);
  write_matrix_csv(dir / "Pba.csv", dump.pba);
  write_matrix_csv(dir / "Paba.csv", dump.paba);
  write_matrix_csv(dir / "Pvisit.csv", dump.pvisit);
  nlohmann::ordered_json j;
  j["step"] = dump.step;
  j["batch_a"] = dump.batch_a;
  j["batch_b"] = dump.batch_b;
  j["L_walker"] = dump.walker;
  j["L_visit"] = dump.visit;
  j["L_classification"] = dump.classification;
  j["L_total"] = dump.total;
  std::ofstream meta(dir / "meta.json");
  if (!meta) throw IoError("cannot write " + (dir / "meta.json").string());
  meta << j.dump(2) << '\n';
}

}  // namespace assoc
