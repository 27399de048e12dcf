#include "sysrisk/network_io.hpp"

#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace sysrisk {

std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_network(std::ostream& os, const FinancialNetwork& net) {
  const Index n = net.size();
  os << n << '\n';
  for (Index i = 0; i < n; ++i) os << (i ? " " : "") << format_real(net.assets()(i));
  os << '\n';
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) os << (j ? " " : "") << format_real(net.liabilities()(i, j));
    os << '\n';
  }
}

void write_networks(std::ostream& os, const std::vector<FinancialNetwork>& nets) {
  for (std::size_t k = 0; k < nets.size(); ++k) {
    if (k) os << '\n';
    write_network(os, nets[k]);
  }
}

namespace {

bool next_content_line(std::istream& is, std::string& line, int& lineno) {
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") != std::string::npos) return true;
  }
  return false;
}

Eigen::VectorXd parse_row(const std::string& line, Index n, int lineno) {
  std::istringstream ss(line);
  Eigen::VectorXd row(n);
  for (Index j = 0; j < n; ++j)
    if (!(ss >> row(j)))
      throw FormatError("line " + std::to_string(lineno) + ": expected " + std::to_string(n) +
                        " numbers");
  std::string extra;
  if (ss >> extra)
    throw FormatError("line " + std::to_string(lineno) + ": trailing content '" + extra + "'");
  return row;
}

}  // namespace

std::vector<FinancialNetwork> read_networks(std::istream& is) {
  std::vector<FinancialNetwork> out;
  std::string line;
  int lineno = 0;
  while (next_content_line(is, line, lineno)) {
    long long n = 0;
    {
      std::istringstream ss(line);
      std::string extra;
      if (!(ss >> n) || n < 1 || (ss >> extra))
        throw FormatError("line " + std::to_string(lineno) + ": expected a positive node count");
    }
    if (!next_content_line(is, line, lineno))
      throw FormatError("unexpected end of input: missing asset line");
    Eigen::VectorXd assets = parse_row(line, n, lineno);
    Eigen::MatrixXd liab(n, n);
    for (Index i = 0; i < n; ++i) {
      if (!next_content_line(is, line, lineno))
        throw FormatError("unexpected end of input: missing liability row " + std::to_string(i));
      liab.row(i) = parse_row(line, n, lineno).transpose();
    }
    try {
      out.emplace_back(std::move(assets), std::move(liab));
    } catch (const NetworkError& e) {
      throw FormatError("record ending at line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void save_networks(const std::string& path, const std::vector<FinancialNetwork>& nets) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot open " + path + " for writing");
  write_networks(os, nets);
  if (!os) throw FormatError("write failed: " + path);
}

std::vector<FinancialNetwork> load_networks(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open " + path);
  return read_networks(is);
}

}  // namespace sysrisk
