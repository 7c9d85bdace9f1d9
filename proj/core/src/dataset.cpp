#include "esd/dataset.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace esd {

namespace {

constexpr std::uint32_t kMagic = 0x45534431;  // "ESD1"

[[noreturn]] void parse_fail(const std::filesystem::path& path, std::size_t row,
                             std::size_t col, const std::string& what) {
  std::ostringstream os;
  os << path.string() << ": parse error at row " << row << ", column " << col << ": " << what;
  throw std::runtime_error(os.str());
}

void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
         (std::uint32_t(b[3]) << 24);
}

}  // namespace

Eigen::VectorXd JointDataset::joint_row(Eigen::Index k) const {
  Eigen::VectorXd x(dim_x());
  x.head(dim_u()) = u.row(k).transpose();
  x.tail(dim_v()) = v.row(k).transpose();
  return x;
}

Eigen::MatrixXd JointDataset::joint() const {
  Eigen::MatrixXd x(size(), dim_x());
  x.leftCols(dim_u()) = u;
  x.rightCols(dim_v()) = v;
  return x;
}

void JointDataset::validate() const {
  if (u.rows() != v.rows())
    throw std::invalid_argument("JointDataset: u and v row counts differ");
  if (u.rows() < 1) throw std::invalid_argument("JointDataset: K must be >= 1");
  if (!u.allFinite() || !v.allFinite())
    throw std::invalid_argument("JointDataset: non-finite entries");
}

namespace {

JointDataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string header;
  std::getline(in, header);
  int du = -1, dv = -1;
  if (std::sscanf(header.c_str(), "# du=%d dv=%d", &du, &dv) != 2 || du < 1 || dv < 0)
    throw std::runtime_error(path.string() +
                             ": schema error: expected header '# du=<int> dv=<int>'");

  std::vector<double> values;
  std::size_t row = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++row;
    std::size_t col = 0;
    std::size_t pos = 0;
    while (pos <= line.size()) {
      const std::size_t comma = line.find(',', pos);
      const std::string field =
          line.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
      ++col;
      try {
        std::size_t used = 0;
        const double x = std::stod(field, &used);
        // Reject trailing junk and non-finite tokens ("NaN", "inf").
        while (used < field.size() && std::isspace(static_cast<unsigned char>(field[used])))
          ++used;
        if (used != field.size()) parse_fail(path, row, col, "trailing characters");
        if (!std::isfinite(x)) parse_fail(path, row, col, "non-finite value");
        values.push_back(x);
      } catch (const std::invalid_argument&) {
        parse_fail(path, row, col, "not a number: '" + field + "'");
      } catch (const std::out_of_range&) {
        parse_fail(path, row, col, "out of double range");
      }
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    if (col != static_cast<std::size_t>(du + dv))
      parse_fail(path, row, col, "expected " + std::to_string(du + dv) + " fields, got " +
                                     std::to_string(col));
  }
  if (row == 0) throw std::runtime_error(path.string() + ": schema error: no data rows");

  JointDataset data;
  data.u.resize(static_cast<Eigen::Index>(row), du);
  data.v.resize(static_cast<Eigen::Index>(row), dv);
  for (std::size_t r = 0; r < row; ++r) {
    for (int j = 0; j < du; ++j) data.u(static_cast<Eigen::Index>(r), j) = values[r * (du + dv) + j];
    for (int j = 0; j < dv; ++j)
      data.v(static_cast<Eigen::Index>(r), j) = values[r * (du + dv) + du + j];
  }
  data.validate();
  return data;
}

JointDataset load_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  const std::uint32_t magic = read_u32(in);
  if (magic != kMagic)
    throw std::runtime_error(path.string() + ": schema error: bad magic");
  const std::uint32_t k = read_u32(in);
  const std::uint32_t du = read_u32(in);
  const std::uint32_t dv = read_u32(in);
  if (!in || k < 1 || du < 1)
    throw std::runtime_error(path.string() + ": schema error: bad header counts");

  JointDataset data;
  data.u.resize(k, du);
  data.v.resize(k, dv);
  std::vector<double> row(du + dv);
  for (std::uint32_t r = 0; r < k; ++r) {
    in.read(reinterpret_cast<char*>(row.data()),
            static_cast<std::streamsize>(row.size() * sizeof(double)));
    if (!in) throw std::runtime_error(path.string() + ": truncated data section");
    for (std::uint32_t j = 0; j < du; ++j) data.u(r, j) = row[j];
    for (std::uint32_t j = 0; j < dv; ++j) data.v(r, j) = row[du + j];
  }
  data.validate();
  return data;
}

}  // namespace

JointDataset load_joint_dataset(const std::filesystem::path& path, DatasetFormat format) {
  if (format == DatasetFormat::kAuto) {
    std::ifstream probe(path, std::ios::binary);
    if (!probe) throw std::runtime_error("cannot open " + path.string());
    const std::uint32_t magic = read_u32(probe);
    format = (probe && magic == kMagic) ? DatasetFormat::kBinary : DatasetFormat::kCsv;
  }
  return format == DatasetFormat::kCsv ? load_csv(path) : load_binary(path);
}

void save_joint_dataset(const JointDataset& data, const std::filesystem::path& path,
                        DatasetFormat format) {
  data.validate();
  if (format == DatasetFormat::kAuto)
    format = path.extension() == ".csv" ? DatasetFormat::kCsv : DatasetFormat::kBinary;
  if (format == DatasetFormat::kCsv) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "# du=" << data.dim_u() << " dv=" << data.dim_v() << "\n";
    out.precision(std::numeric_limits<double>::max_digits10);
    for (Eigen::Index r = 0; r < data.size(); ++r) {
      for (Eigen::Index j = 0; j < data.dim_u(); ++j) {
        if (j) out << ',';
        out << data.u(r, j);
      }
      for (Eigen::Index j = 0; j < data.dim_v(); ++j) out << ',' << data.v(r, j);
      out << '\n';
    }
  } else {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    write_u32(out, kMagic);
    write_u32(out, static_cast<std::uint32_t>(data.size()));
    write_u32(out, static_cast<std::uint32_t>(data.dim_u()));
    write_u32(out, static_cast<std::uint32_t>(data.dim_v()));
    std::vector<double> row(static_cast<std::size_t>(data.dim_x()));
    for (Eigen::Index r = 0; r < data.size(); ++r) {
      for (Eigen::Index j = 0; j < data.dim_u(); ++j) row[static_cast<std::size_t>(j)] = data.u(r, j);
      for (Eigen::Index j = 0; j < data.dim_v(); ++j)
        row[static_cast<std::size_t>(data.dim_u() + j)] = data.v(r, j);
      out.write(reinterpret_cast<const char*>(row.data()),
                static_cast<std::streamsize>(row.size() * sizeof(double)));
    }
  }
}

}  // namespace esd
