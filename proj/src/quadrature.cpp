#include <cmath>
#include <queue>
#include <sstream>
#include <vector>

#include "fbridge/numerics.hpp"

namespace fbridge {
namespace {

// 15-point Kronrod extension of the 7-point Gauss-Legendre rule (QUADPACK qk15).
constexpr double kKronrodNodes[8] = {
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000};
constexpr double kKronrodWeights[8] = {
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
constexpr double kGaussWeights[4] = {
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

struct Segment {
  double a;
  double b;
  double estimate;
  double error;
  int depth;
  bool operator<(const Segment& other) const { return error < other.error; }
};

Segment kronrod15(const std::function<double(double)>& f, double a, double b, int depth) {
  const double center = 0.5 * (a + b);
  const double half = 0.5 * (b - a);
  const double fc = f(center);
  double kronrod = fc * kKronrodWeights[7];
  double gauss = fc * kGaussWeights[3];
  for (int j = 0; j < 7; ++j) {
    const double dx = half * kKronrodNodes[j];
    const double sum = f(center - dx) + f(center + dx);
    kronrod += kKronrodWeights[j] * sum;
    if (j % 2 == 1) gauss += kGaussWeights[j / 2] * sum;
  }
  kronrod *= half;
  gauss *= half;
  if (!std::isfinite(kronrod)) {
    throw NoConvergence("quadrature: non-finite integrand value");
  }
  return Segment{a, b, kronrod, std::abs(kronrod - gauss), depth};
}

}  // namespace

double quadrature(const std::function<double(double)>& f, double a, double b, double tol,
                  int max_depth) {
  if (a == b) return 0.0;
  if (b < a) return -quadrature(f, b, a, tol, max_depth);

  std::priority_queue<Segment> work;
  work.push(kronrod15(f, a, b, 0));
  double total = work.top().estimate;
  double error = work.top().error;

  // Rounding puts a floor under the achievable error; stop there instead of
  // splitting forever.
  constexpr double kRoundoff = 50.0 * 2.220446049250313e-16;
  while (error > tol && error > kRoundoff * std::abs(total)) {
    Segment worst = work.top();
    work.pop();
    if (worst.depth >= max_depth) {
      std::ostringstream msg;
      msg << "quadrature: error estimate " << error << " above tolerance " << tol
          << " at maximal subdivision depth " << max_depth;
      throw NoConvergence(msg.str());
    }
    const double mid = 0.5 * (worst.a + worst.b);
    Segment left = kronrod15(f, worst.a, mid, worst.depth + 1);
    Segment right = kronrod15(f, mid, worst.b, worst.depth + 1);
    total += left.estimate + right.estimate - worst.estimate;
    error += left.error + right.error - worst.error;
    work.push(left);
    work.push(right);
  }

  // Re-sum from the leaves so the running update does not accumulate drift.
  double sum = 0.0;
  while (!work.empty()) {
    sum += work.top().estimate;
    work.pop();
  }
  return sum;
}

}  // namespace fbridge
