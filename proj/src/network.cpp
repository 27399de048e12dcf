#include "sysrisk/network.hpp"

#include <numeric>

namespace sysrisk {

Permutation::Permutation(std::vector<Index> mapping) : mapping_(std::move(mapping)) {
  std::vector<bool> seen(mapping_.size(), false);
  for (Index m : mapping_) {
    if (m < 0 || m >= size() || seen[static_cast<std::size_t>(m)])
      throw NetworkError("permutation mapping is not a bijection");
    seen[static_cast<std::size_t>(m)] = true;
  }
}

Permutation Permutation::identity(Index n) {
  std::vector<Index> m(static_cast<std::size_t>(n));
  std::iota(m.begin(), m.end(), Index{0});
  return Permutation(std::move(m));
}

Permutation Permutation::random(Index n, std::mt19937_64& rng) {
  std::vector<Index> m(static_cast<std::size_t>(n));
  std::iota(m.begin(), m.end(), Index{0});
  std::shuffle(m.begin(), m.end(), rng);
  return Permutation(std::move(m));
}

Permutation Permutation::inverse() const {
  std::vector<Index> inv(mapping_.size());
  for (Index i = 0; i < size(); ++i) inv[static_cast<std::size_t>((*this)(i))] = i;
  return Permutation(std::move(inv));
}

}  // namespace sysrisk
