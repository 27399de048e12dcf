#pragma once

// Plain-text network records:
//
//   N
//   a_1 ... a_N
//   l_11 ... l_1N
//   ...
//   l_N1 ... l_NN
//
// Records are separated by blank lines.  Numbers are written with 17
// significant digits so a write/read cycle is exact.

#include <iosfwd>
#include <string>
#include <vector>

#include "sysrisk/network.hpp"

namespace sysrisk {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_network(std::ostream& os, const FinancialNetwork& net);
void write_networks(std::ostream& os, const std::vector<FinancialNetwork>& nets);
std::vector<FinancialNetwork> read_networks(std::istream& is);

void save_networks(const std::string& path, const std::vector<FinancialNetwork>& nets);
std::vector<FinancialNetwork> load_networks(const std::string& path);

/// "%.17g" rendering used by every text artifact in the project.
std::string format_real(double v);

}  // namespace sysrisk
