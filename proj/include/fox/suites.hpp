#ifndef FOX_SUITES_HPP_
#define FOX_SUITES_HPP_

// Self-check suites behind the `gradcheck`, `equiv` and `bench` commands.

#include <cstdint>
#include <string>
#include <vector>

#include "fox/tensor.hpp"

namespace fox {

struct CheckResult {
  std::string group;
  Index cases = 0;
  double worst = 0.0;  // worst error observed across cases
  double tolerance = 0.0;
  bool pass() const { return worst <= tolerance; }
};

// max|a - b| / max(max|a|, max|b|); 0 when both are zero.
template <typename A, typename B>
double max_rel_error(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  const auto ad = a.template cast<double>();
  const auto bd = b.template cast<double>();
  const double diff = (ad - bd).cwiseAbs().maxCoeff();
  const double scale = std::max(ad.cwiseAbs().maxCoeff(), bd.cwiseAbs().maxCoeff());
  return scale > 0.0 ? diff / scale : diff;
}

template <typename A, typename B>
double max_abs_error(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  return (a.template cast<double>() - b.template cast<double>()).cwiseAbs().maxCoeff();
}

// Central differences of loss() with respect to every entry of m.
template <typename F>
Matrix<double> numeric_grad(Matrix<double>& m, F&& loss, double h = 1e-6) {
  Matrix<double> g(m.rows(), m.cols());
  for (Index i = 0; i < m.size(); ++i) {
    const double keep = m.data()[i];
    m.data()[i] = keep + h;
    const double up = loss();
    m.data()[i] = keep - h;
    const double down = loss();
    m.data()[i] = keep;
    g.data()[i] = (up - down) / (2.0 * h);
  }
  return g;
}

std::vector<CheckResult> run_gradcheck(std::uint64_t seed);
std::vector<CheckResult> run_equiv(std::uint64_t seed);

struct BenchRow {
  Index length = 0;
  Index tile = 0;
  std::size_t naive_peak_bytes = 0;
  std::size_t tiled_peak_bytes = 0;
  double naive_ms = 0.0;
  double tiled_ms = 0.0;
};

// Forward-pass transient memory and wall time, f32, d_head = 64.
std::vector<BenchRow> run_bench(const std::vector<Index>& lengths, const std::vector<Index>& tiles,
                                std::uint64_t seed, Index d_head = 64);

}  // namespace fox

#endif  // FOX_SUITES_HPP_
