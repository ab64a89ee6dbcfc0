#include "neso/spline_basis.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "neso/error.hpp"

namespace neso {

namespace {

void check_unit(double u) {
  if (!(u >= 0.0 && u <= 1.0)) {
    std::ostringstream msg;
    msg << "normalized coordinate " << u << " outside [0, 1]";
    throw Error(ErrorKind::Domain, msg.str());
  }
}

}  // namespace

KnotVector::KnotVector(std::vector<double> knots, int order)
    : knots_(std::move(knots)), order_(order) {
  if (order_ < 0 || order_ > kMaxOrder) {
    throw Error(ErrorKind::InvalidSpec, "spline order out of supported range");
  }
  const int n = static_cast<int>(knots_.size());
  if (n < 2 * (order_ + 1)) {
    throw Error(ErrorKind::InvalidSpec, "too few control points for the spline order");
  }
  for (int i = 0; i <= order_; ++i) {
    if (knots_[i] != 0.0 || knots_[n - 1 - i] != 1.0) {
      throw Error(ErrorKind::InvalidSpec, "knot vector is not clamped to [0, 1]");
    }
  }
  if (!std::is_sorted(knots_.begin(), knots_.end())) {
    throw Error(ErrorKind::InvalidSpec, "knot vector must be non-decreasing");
  }
}

int KnotVector::find_span(double u) const {
  check_unit(u);
  const int last = count() - 1;
  if (u >= 1.0) {
    // Last nonempty span: largest s <= last with knots[s] < knots[s+1].
    int s = last;
    while (s > order_ && knots_[s] == knots_[s + 1]) --s;
    return s;
  }
  auto it = std::upper_bound(knots_.begin() + order_, knots_.begin() + last + 1, u);
  return static_cast<int>(it - knots_.begin()) - 1;
}

std::vector<double> KnotVector::greville() const {
  std::vector<double> out(count());
  for (int i = 0; i < count(); ++i) {
    if (order_ == 0) {
      out[i] = 0.5 * (knots_[i] + knots_[i + 1]);
      continue;
    }
    double sum = 0.0;
    for (int j = 1; j <= order_; ++j) sum += knots_[i + j];
    out[i] = sum / order_;
  }
  return out;
}

double KnotVector::min_span() const {
  double best = 1.0;
  for (std::size_t i = 0; i + 1 < knots_.size(); ++i) {
    const double w = knots_[i + 1] - knots_[i];
    if (w > 0.0) best = std::min(best, w);
  }
  return best;
}

KnotVector make_knots(int count, int order, Interval domain) {
  if (order < 0) throw Error(ErrorKind::InvalidSpec, "negative spline order");
  if (count <= order) {
    std::ostringstream msg;
    msg << "count " << count << " must exceed order " << order;
    throw Error(ErrorKind::InvalidSpec, msg.str());
  }
  if (!(domain.hi > domain.lo)) throw Error(ErrorKind::InvalidSpec, "empty spline domain");

  std::vector<double> knots(count + order + 1, 0.0);
  const int spans = count - order;
  for (int i = 0; i <= spans; ++i) {
    knots[order + i] = static_cast<double>(i) / spans;
  }
  std::fill(knots.end() - (order + 1), knots.end(), 1.0);
  return KnotVector(std::move(knots), order);
}

// Piegl & Tiller, The NURBS Book, A2.3. The knot differences it divides by
// always straddle the nonempty span, so the 0/0 := 0 convention for repeated
// knots never has to be applied explicitly.
LocalBasis eval_local(const KnotVector& kv, double u, int max_deriv) {
  const int p = kv.order();
  const auto U = kv.knots();
  const int span = kv.find_span(u);

  LocalBasis out;
  out.first = span - p;
  out.order = p;
  out.max_deriv = max_deriv;

  std::array<std::array<double, kMaxOrder + 1>, kMaxOrder + 1> ndu{};
  std::array<double, kMaxOrder + 1> left{};
  std::array<double, kMaxOrder + 1> right{};
  ndu[0][0] = 1.0;
  for (int j = 1; j <= p; ++j) {
    left[j] = u - U[span + 1 - j];
    right[j] = U[span + j] - u;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      ndu[j][r] = right[r + 1] + left[j - r];
      const double temp = ndu[r][j - 1] / ndu[j][r];
      ndu[r][j] = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    ndu[j][j] = saved;
  }
  for (int j = 0; j <= p; ++j) out.ders[0][j] = ndu[j][p];

  const int n = std::min(max_deriv, p);
  std::array<std::array<double, kMaxOrder + 1>, 2> a{};
  for (int r = 0; r <= p; ++r) {
    int s1 = 0;
    int s2 = 1;
    a[0][0] = 1.0;
    for (int k = 1; k <= n; ++k) {
      double d = 0.0;
      const int rk = r - k;
      const int pk = p - k;
      if (r >= k) {
        a[s2][0] = a[s1][0] / ndu[pk + 1][rk];
        d = a[s2][0] * ndu[rk][pk];
      }
      const int j1 = rk >= -1 ? 1 : -rk;
      const int j2 = (r - 1 <= pk) ? k - 1 : p - r;
      for (int j = j1; j <= j2; ++j) {
        a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][rk + j];
        d += a[s2][j] * ndu[rk + j][pk];
      }
      if (r <= pk) {
        a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
        d += a[s2][k] * ndu[r][pk];
      }
      out.ders[k][r] = d;
      std::swap(s1, s2);
    }
  }
  double factor = p;
  for (int k = 1; k <= n; ++k) {
    for (int j = 0; j <= p; ++j) out.ders[k][j] *= factor;
    factor *= (p - k);
  }
  return out;
}

std::vector<double> eval_all(const KnotVector& kv, double u) {
  const LocalBasis local = eval_local(kv, u, 0);
  std::vector<double> out(kv.count(), 0.0);
  for (int j = 0; j <= local.order; ++j) out[local.first + j] = local.ders[0][j];
  return out;
}

std::vector<double> eval_derivative(const KnotVector& kv, int p, double u) {
  if (p < 1 || p > kv.order()) {
    std::ostringstream msg;
    msg << "derivative order " << p << " not in [1, " << kv.order() << "]";
    throw Error(ErrorKind::InvalidOrder, msg.str());
  }
  const LocalBasis local = eval_local(kv, u, p);
  std::vector<double> out(kv.count(), 0.0);
  for (int j = 0; j <= local.order; ++j) out[local.first + j] = local.ders[p][j];
  return out;
}

Rescaled rescale(double x, Interval domain) {
  const double width = domain.width();
  if (!(width > 0.0)) throw Error(ErrorKind::Domain, "empty domain");
  const double slack = 1e-12 * width;
  if (!(x >= domain.lo - slack && x <= domain.hi + slack)) {
    std::ostringstream msg;
    msg << "coordinate " << x << " outside [" << domain.lo << ", " << domain.hi << "]";
    throw Error(ErrorKind::Domain, msg.str());
  }
  const double u = std::clamp((x - domain.lo) / width, 0.0, 1.0);
  return {u, 1.0 / width};
}

}  // namespace neso
