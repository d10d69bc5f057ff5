#include <iostream>

#include "moelab/verify/acceptance.hpp"

int main() {
  const auto results = moelab::acceptance::run({}, std::cout);
  std::size_t passed = 0;
  for (const auto& r : results) passed += r.passed ? 1 : 0;
  std::cout << passed << "/" << results.size() << " criteria passed\n";
  return passed == results.size() ? 0 : 1;
}
