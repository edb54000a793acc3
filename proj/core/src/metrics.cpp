#include "hdformer/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace hdf {

namespace {

void check_pair(const Tensor& pred, const Tensor& gt) {
  if (pred.shape() != gt.shape())
    throw ShapeError(format_msg("metric shapes disagree: ",
                                shape_str(pred.shape()), " vs ",
                                shape_str(gt.shape())));
  if (pred.rank() < 2 || pred.extent(-1) != 3)
    throw ShapeError(format_msg("metrics expect [..., J, 3], got ",
                                shape_str(pred.shape())));
}

// Per-joint Euclidean errors, flattened over all leading axes.
std::vector<double> joint_errors(const Tensor& pred, const Tensor& gt) {
  check_pair(pred, gt);
  const std::int64_t n = pred.numel() / 3;
  std::vector<double> errs(static_cast<std::size_t>(n));
  const auto& p = pred.raw();
  const auto& g = gt.raw();
  for (std::int64_t i = 0; i < n; ++i) {
    double d2 = 0.0;
    for (int c = 0; c < 3; ++c) {
      const double d = p[static_cast<std::size_t>(3 * i + c)] -
                       g[static_cast<std::size_t>(3 * i + c)];
      d2 += d * d;
    }
    errs[static_cast<std::size_t>(i)] = std::sqrt(d2);
  }
  return errs;
}

// Cyclic Jacobi eigendecomposition of a symmetric 3x3 matrix.
// Eigenvalues come out descending; eigenvectors are the matching columns.
void sym_eig3(const double a_in[9], double eigval[3], double eigvec[9]) {
  double a[9];
  std::copy_n(a_in, 9, a);
  double v[9] = {1, 0, 0, 0, 1, 0, 0, 0, 1};
  for (int sweep = 0; sweep < 50; ++sweep) {
    double off = std::abs(a[1]) + std::abs(a[2]) + std::abs(a[5]);
    if (off < 1e-15) break;
    const int pairs[3][2] = {{0, 1}, {0, 2}, {1, 2}};
    for (const auto& pq : pairs) {
      const int p = pq[0], q = pq[1];
      const double apq = a[p * 3 + q];
      if (std::abs(apq) < 1e-300) continue;
      const double app = a[p * 3 + p], aqq = a[q * 3 + q];
      const double tau = (aqq - app) / (2.0 * apq);
      const double t = (tau >= 0 ? 1.0 : -1.0) /
                       (std::abs(tau) + std::sqrt(1.0 + tau * tau));
      const double c = 1.0 / std::sqrt(1.0 + t * t);
      const double s = t * c;
      for (int k = 0; k < 3; ++k) {
        const double akp = a[k * 3 + p], akq = a[k * 3 + q];
        a[k * 3 + p] = c * akp - s * akq;
        a[k * 3 + q] = s * akp + c * akq;
      }
      for (int k = 0; k < 3; ++k) {
        const double apk = a[p * 3 + k], aqk = a[q * 3 + k];
        a[p * 3 + k] = c * apk - s * aqk;
        a[q * 3 + k] = s * apk + c * aqk;
      }
      for (int k = 0; k < 3; ++k) {
        const double vkp = v[k * 3 + p], vkq = v[k * 3 + q];
        v[k * 3 + p] = c * vkp - s * vkq;
        v[k * 3 + q] = s * vkp + c * vkq;
      }
    }
  }
  int order[3] = {0, 1, 2};
  double lam[3] = {a[0], a[4], a[8]};
  std::sort(order, order + 3, [&](int x, int y) { return lam[x] > lam[y]; });
  for (int i = 0; i < 3; ++i) {
    eigval[i] = lam[order[i]];
    for (int k = 0; k < 3; ++k) eigvec[k * 3 + i] = v[k * 3 + order[i]];
  }
}

double det3(const double m[9]) {
  return m[0] * (m[4] * m[8] - m[5] * m[7]) -
         m[1] * (m[3] * m[8] - m[5] * m[6]) +
         m[2] * (m[3] * m[7] - m[4] * m[6]);
}

void cross3(const double x[3], const double y[3], double out[3]) {
  out[0] = x[1] * y[2] - x[2] * y[1];
  out[1] = x[2] * y[0] - x[0] * y[2];
  out[2] = x[0] * y[1] - x[1] * y[0];
}

// Mean joint error of one frame after the optimal similarity alignment of
// pred onto gt. Returns false when the frame is degenerate (pred has no
// spread around its centroid).
bool procrustes_frame_error(const double* pred, const double* gt,
                            std::int64_t joints, double* mean_err) {
  double mp[3] = {0, 0, 0}, mg[3] = {0, 0, 0};
  for (std::int64_t j = 0; j < joints; ++j)
    for (int c = 0; c < 3; ++c) {
      mp[c] += pred[j * 3 + c];
      mg[c] += gt[j * 3 + c];
    }
  for (int c = 0; c < 3; ++c) {
    mp[c] /= static_cast<double>(joints);
    mg[c] /= static_cast<double>(joints);
  }
  double norm_x2 = 0.0;
  double h[9] = {0};
  for (std::int64_t j = 0; j < joints; ++j) {
    double x[3], y[3];
    for (int c = 0; c < 3; ++c) {
      x[c] = pred[j * 3 + c] - mp[c];
      y[c] = gt[j * 3 + c] - mg[c];
      norm_x2 += x[c] * x[c];
    }
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) h[a * 3 + b] += x[a] * y[b];
  }
  if (norm_x2 < 1e-24) return false;

  // SVD of h via the eigendecomposition of h^T h.
  double hth[9] = {0};
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b)
      for (int k = 0; k < 3; ++k) hth[a * 3 + b] += h[k * 3 + a] * h[k * 3 + b];
  double lam[3], vmat[9];
  sym_eig3(hth, lam, vmat);
  double sigma[3];
  for (int i = 0; i < 3; ++i) sigma[i] = std::sqrt(std::max(lam[i], 0.0));

  double umat[9] = {0};
  const double tol = std::max(sigma[0], 1e-300) * 1e-12;
  int solid = 0;
  for (int i = 0; i < 3; ++i) {
    if (sigma[i] > tol) {
      for (int k = 0; k < 3; ++k) {
        double acc = 0.0;
        for (int c = 0; c < 3; ++c) acc += h[k * 3 + c] * vmat[c * 3 + i];
        umat[k * 3 + i] = acc / sigma[i];
      }
      ++solid;
    }
  }
  if (solid == 2) {
    // complete the third left singular vector orthogonally
    double u0[3] = {umat[0], umat[3], umat[6]};
    double u1[3] = {umat[1], umat[4], umat[7]};
    double u2[3];
    cross3(u0, u1, u2);
    for (int k = 0; k < 3; ++k) umat[k * 3 + 2] = u2[k];
  } else if (solid < 2) {
    // collinear or worse: fall back to the unaligned error
    return false;
  }

  const double d = det3(umat) * det3(vmat) < 0.0 ? -1.0 : 1.0;
  // r = v * diag(1,1,d) * u^T maps centered pred onto centered gt
  double r[9];
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) {
      double acc = 0.0;
      for (int k = 0; k < 3; ++k) {
        const double dk = k == 2 ? d : 1.0;
        acc += vmat[a * 3 + k] * dk * umat[b * 3 + k];
      }
      r[a * 3 + b] = acc;
    }
  const double scale = (sigma[0] + sigma[1] + d * sigma[2]) / norm_x2;

  double err = 0.0;
  for (std::int64_t j = 0; j < joints; ++j) {
    double x[3];
    for (int c = 0; c < 3; ++c) x[c] = pred[j * 3 + c] - mp[c];
    double d2 = 0.0;
    for (int a = 0; a < 3; ++a) {
      double rx = 0.0;
      for (int b = 0; b < 3; ++b) rx += r[a * 3 + b] * x[b];
      const double e = scale * rx - (gt[j * 3 + a] - mg[a]);
      d2 += e * e;
    }
    err += std::sqrt(d2);
  }
  *mean_err = err / static_cast<double>(joints);
  return true;
}

}  // namespace

double mpjpe(const Tensor& pred, const Tensor& gt) {
  auto errs = joint_errors(pred, gt);
  double acc = 0.0;
  for (double e : errs) acc += e;
  return acc / static_cast<double>(errs.size());
}

PMpjpeResult p_mpjpe_detailed(const Tensor& pred, const Tensor& gt) {
  check_pair(pred, gt);
  const std::int64_t joints = pred.extent(-2);
  const std::int64_t frames = pred.numel() / (joints * 3);
  const auto& p = pred.raw();
  const auto& g = gt.raw();
  PMpjpeResult res;
  double acc = 0.0;
  for (std::int64_t f = 0; f < frames; ++f) {
    const double* pf = p.data() + f * joints * 3;
    const double* gf = g.data() + f * joints * 3;
    double err = 0.0;
    if (!procrustes_frame_error(pf, gf, joints, &err)) {
      ++res.degenerate_frames;
      double d = 0.0;
      for (std::int64_t j = 0; j < joints; ++j) {
        double d2 = 0.0;
        for (int c = 0; c < 3; ++c) {
          const double e = pf[j * 3 + c] - gf[j * 3 + c];
          d2 += e * e;
        }
        d += std::sqrt(d2);
      }
      err = d / static_cast<double>(joints);
    }
    acc += err;
  }
  res.value = acc / static_cast<double>(frames);
  return res;
}

double p_mpjpe(const Tensor& pred, const Tensor& gt) {
  return p_mpjpe_detailed(pred, gt).value;
}

double pck(const Tensor& pred, const Tensor& gt, double threshold) {
  auto errs = joint_errors(pred, gt);
  std::int64_t hits = 0;
  for (double e : errs)
    if (e <= threshold) ++hits;
  return 100.0 * static_cast<double>(hits) / static_cast<double>(errs.size());
}

double auc(const Tensor& pred, const Tensor& gt, double max_threshold,
           double step) {
  if (step <= 0.0 || max_threshold < 0.0)
    throw ValueError("auc: bad threshold grid");
  auto errs = joint_errors(pred, gt);
  double acc = 0.0;
  std::int64_t count = 0;
  for (double thr = 0.0; thr <= max_threshold + 1e-9; thr += step) {
    std::int64_t hits = 0;
    for (double e : errs)
      if (e <= thr) ++hits;
    acc += 100.0 * static_cast<double>(hits) / static_cast<double>(errs.size());
    ++count;
  }
  return acc / static_cast<double>(count);
}

EvalReport evaluate(std::span<const EvalSample> samples, double pck_threshold) {
  if (samples.empty()) throw ValueError("evaluate: no samples");
  EvalReport report;
  for (const auto& s : samples) {
    check_pair(s.pred, s.gt);
    ActionMetrics& am = report.per_action[s.action];
    const std::int64_t n = s.pred.numel() / 3;
    const double w_old = static_cast<double>(am.samples);
    const double w_new = static_cast<double>(n);
    const double w_tot = w_old + w_new;
    am.mpjpe = (am.mpjpe * w_old + mpjpe(s.pred, s.gt) * w_new) / w_tot;
    am.p_mpjpe = (am.p_mpjpe * w_old + p_mpjpe(s.pred, s.gt) * w_new) / w_tot;
    am.pck =
        (am.pck * w_old + pck(s.pred, s.gt, pck_threshold) * w_new) / w_tot;
    am.auc = (am.auc * w_old + auc(s.pred, s.gt) * w_new) / w_tot;
    am.samples += n;
  }
  double total = 0.0;
  for (const auto& [name, am] : report.per_action)
    total += static_cast<double>(am.samples);
  for (const auto& [name, am] : report.per_action) {
    const double w = static_cast<double>(am.samples) / total;
    report.overall.mpjpe += w * am.mpjpe;
    report.overall.p_mpjpe += w * am.p_mpjpe;
    report.overall.pck += w * am.pck;
    report.overall.auc += w * am.auc;
    report.overall.samples += am.samples;
  }
  return report;
}

std::string EvalReport::to_text() const {
  std::ostringstream os;
  os << "action              mpjpe    p-mpjpe  pck      auc      samples\n";
  auto row = [&os](const std::string& name, const ActionMetrics& am) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-18s %8.3f %8.3f %8.3f %8.3f %10lld\n",
                  name.c_str(), am.mpjpe, am.p_mpjpe, am.pck, am.auc,
                  static_cast<long long>(am.samples));
    os << buf;
  };
  for (const auto& [name, am] : per_action) row(name, am);
  row("overall", overall);
  return os.str();
}

std::string EvalReport::to_json() const {
  std::ostringstream os;
  auto entry = [&os](const std::string& name, const ActionMetrics& am,
                     bool last) {
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "  \"%s\": {\"mpjpe\": %.17g, \"p_mpjpe\": %.17g, "
                  "\"pck\": %.17g, \"auc\": %.17g, \"samples\": %lld}%s\n",
                  name.c_str(), am.mpjpe, am.p_mpjpe, am.pck, am.auc,
                  static_cast<long long>(am.samples), last ? "" : ",");
    os << buf;
  };
  os << "{\n";
  for (const auto& [name, am] : per_action) entry(name, am, false);
  entry("overall", overall, true);
  os << "}\n";
  return os.str();
}

}  // namespace hdf
