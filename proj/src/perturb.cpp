#include "isolab/perturb.hpp"

#include <cmath>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "isolab/holder.hpp"

namespace isolab {

namespace {
using SmallVec = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, 16, 1>;
constexpr int kMaxDir = 6;

bool stencil_fits4(const GridSpec& g, const std::array<int, 3>& idx) {
  for (int a = 0; a < g.n; ++a)
    if (idx[a] < 4 || idx[a] > g.points_per_axis - 5) return false;
  return true;
}
}  // namespace

MetricField metric_error_h(const MetricField& g, const MetricField& g_ell, double d1, double d2,
                           double theta, double holder_exponent, MetricErrorReport* report) {
  if (!(d1 > d2 && d2 > 0.0))
    throw Error(ErrorCode::config, "metric_error_h: need delta_{q+1} > delta_{q+2} > 0");
  const int n = g.grid.n;
  MetricField h = make_sym(g.grid);
  h.grid.radius = std::min(g.grid.radius, g_ell.grid.radius);
  h.grid.margin_cells = std::max(g.grid.margin_cells, g_ell.grid.margin_cells);
  const long long total = g.grid.num_points();
  for (long long p = 0; p < total; ++p)
    for (int i = 0; i < n; ++i)
      for (int j = i; j < n; ++j)
        h.sym_at(p, i, j) =
            (g.sym_at(p, i, j) - g_ell.sym_at(p, i, j) - (i == j ? d2 : 0.0)) / d1;

  double mineig = std::numeric_limits<double>::infinity();
  std::array<int, 3> worst{0, 0, 0};
  for_each_valid(h.grid, [&](long long p, const std::array<int, 3>& idx) {
    Eigen::MatrixXd m = h.sym_matrix(p);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
    if (es.eigenvalues()(0) < mineig) {
      mineig = es.eigenvalues()(0);
      worst = idx;
    }
  });
  if (mineig <= 1e-12) {
    std::ostringstream msg;
    msg << "metric_error_h: h not positive definite (min eig " << mineig << " at";
    for (int a = 0; a < n; ++a) msg << " " << h.grid.coord(a, worst[a]);
    msg << ")";
    throw Error(ErrorCode::stage_hypothesis, msg.str());
  }

  if (report) {
    report->min_eig = mineig;
    report->holder_exponent = holder_exponent;
    GridField dev = h;
    for (long long p = 0; p < total; ++p)
      for (int i = 0; i < n; ++i) dev.sym_at(p, i, i) -= 1.0;
    report->h_minus_id_norm = holder_norm(dev, 0, holder_exponent).value;
    report->theta_ok = report->h_minus_id_norm < theta;
  }
  return h;
}

// ---------------------------------------------------------------------------

struct StageOps::PointData {
  double s1[kMaxDir], c1[kMaxDir], s2[kMaxDir], c2[kMaxDir];
  SmallVec df[3];
  SmallVec nu1[kMaxDir], nu2[kMaxDir];
  SmallVec dnu1[3][kMaxDir], dnu2[3][kMaxDir];
  double A[kMaxDir] = {0};
  double dA[3][kMaxDir] = {{0}};
};

StageOps::StageOps(const GridField& f_ell, const FrameField& frames, const DirectionSet& dirs,
                   double lambda, double delta)
    : f_ell_(f_ell), frames_(frames), dirs_(dirs), lambda_(lambda), delta_(delta) {
  for (int a = 0; a < f_ell.grid.n; ++a) df_.push_back(partial(f_ell, a));
}

void StageOps::gather(long long p, const std::array<int, 3>& idx, const GridField* A,
                      PointData& pd) const {
  const GridSpec& g = f_ell_.grid;
  const int n = g.n;
  const int m = frames_.m;
  const int nd = frames_.ndir;
  const double inv12h = 1.0 / (12.0 * g.spacing);

  double x[3];
  for (int a = 0; a < n; ++a) x[a] = g.coord(a, idx[a]) - g.center[a];
  for (int k = 0; k < nd; ++k) {
    double ph = 0.0;
    for (int a = 0; a < n; ++a) ph += x[a] * dirs_.dirs[k][a];
    ph *= lambda_;
    pd.s1[k] = std::sin(ph);
    pd.c1[k] = std::cos(ph);
    pd.s2[k] = std::sin(2.0 * ph);
    pd.c2[k] = std::cos(2.0 * ph);
  }
  for (int a = 0; a < n; ++a) {
    pd.df[a].resize(m);
    for (int c = 0; c < m; ++c) pd.df[a][c] = df_[a].at(p, c);
  }

  long long stride = 1;
  for (int a = 0; a < n; ++a) {
    const long long o1 = stride, o2 = 2 * stride;
    for (int k = 0; k < nd; ++k) {
      pd.dnu1[a][k].resize(m);
      pd.dnu2[a][k].resize(m);
      for (int c = 0; c < m; ++c) {
        const int cc = k * m + c;
        pd.dnu1[a][k][c] = (-frames_.nu1.at(p + o2, cc) + 8.0 * frames_.nu1.at(p + o1, cc) -
                            8.0 * frames_.nu1.at(p - o1, cc) + frames_.nu1.at(p - o2, cc)) *
                           inv12h;
        pd.dnu2[a][k][c] = (-frames_.nu2.at(p + o2, cc) + 8.0 * frames_.nu2.at(p + o1, cc) -
                            8.0 * frames_.nu2.at(p - o1, cc) + frames_.nu2.at(p - o2, cc)) *
                           inv12h;
      }
    }
    if (A) {
      for (int k = 0; k < nd; ++k)
        pd.dA[a][k] = (-A->at(p + o2, k) + 8.0 * A->at(p + o1, k) - 8.0 * A->at(p - o1, k) +
                       A->at(p - o2, k)) *
                      inv12h;
    }
    stride *= g.points_per_axis;
  }
  for (int k = 0; k < nd; ++k) {
    pd.nu1[k].resize(m);
    pd.nu2[k].resize(m);
    for (int c = 0; c < m; ++c) {
      pd.nu1[k][c] = frames_.nu1.at(p, k * m + c);
      pd.nu2[k][c] = frames_.nu2.at(p, k * m + c);
    }
    if (A) pd.A[k] = A->at(p, k);
  }
}

namespace {

// tau_k and tau_kk' assembled with every i<->j mirror included, so that
// b(a,a) reproduces the linear and bilinear ledger content exactly. `prob`
// is reshaped only when its dimensions changed; the pointwise loop reuses it.
void fill_taus(const StageOps::PointData& pd, const DirectionSet& dirs, FrameVariant variant,
               double lambda, double delta, int n, PointProblem& prob) {
  const int nd = dirs.ndir();
  const double sqrt_delta = std::sqrt(delta);
  if (int(prob.tau_k.size()) != nd || prob.tau_k[0].rows() != n) {
    prob.tau_k.assign(nd, Eigen::MatrixXd::Zero(n, n));
    prob.tau_kk.assign(nd, std::vector<Eigen::MatrixXd>(nd, Eigen::MatrixXd::Zero(n, n)));
  }
  double X[3][3], Y[3][3];

  if (variant == FrameVariant::Spiral) {
    for (int k = 0; k < nd; ++k) {
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
          X[i][j] = pd.df[i].dot(pd.s1[k] * pd.dnu1[j][k] + pd.c1[k] * pd.dnu2[j][k]) /
                    (lambda * sqrt_delta);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) prob.tau_k[k](i, j) = X[i][j] + X[j][i];
      for (int l = 0; l < nd; ++l) {
        for (int i = 0; i < n; ++i) {
          SmallVec bi = pd.s1[k] * pd.dnu1[i][k] + pd.c1[k] * pd.dnu2[i][k];
          double dot = bi.dot(pd.c1[l] * pd.nu1[l] - pd.s1[l] * pd.nu2[l]) / lambda;
          for (int j = 0; j < n; ++j) Y[i][j] = dot * dirs.dirs[l][j];
        }
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j) prob.tau_kk[k][l](i, j) = Y[i][j] + Y[j][i];
      }
    }
  } else {
    const double r2 = std::sqrt(2.0);
    for (int k = 0; k < nd; ++k) {
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
          X[i][j] = r2 * pd.c1[k] * pd.df[i].dot(pd.dnu2[j][k]) / (lambda * sqrt_delta);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) prob.tau_k[k](i, j) = X[i][j] + X[j][i];
      for (int l = 0; l < nd; ++l) {
        for (int i = 0; i < n; ++i) {
          double dot = -2.0 * pd.c1[k] * pd.s1[l] * pd.dnu2[i][k].dot(pd.nu2[l]) / lambda;
          for (int j = 0; j < n; ++j) Y[i][j] = dot * dirs.dirs[l][j];
        }
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j) prob.tau_kk[k][l](i, j) = Y[i][j] + Y[j][i];
      }
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
          X[i][j] = pd.df[i].dot(pd.dnu1[j][k]) * pd.s2[k] / (4.0 * lambda);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) prob.tau_kk[k][k](i, j) += X[i][j] + X[j][i];
    }
  }
}

}  // namespace

ProblemSource StageOps::tau_source(const MetricField& h) const {
  const int n = f_ell_.grid.n;
  return [this, &h, n](long long p, PointProblem& prob) {
    PointData pd;
    gather(p, unflatten(f_ell_.grid, p), nullptr, pd);
    prob.tau = h.sym_matrix(p);
    fill_taus(pd, dirs_, frames_.variant, lambda_, delta_, n, prob);
  };
}

void StageOps::tau_norms(double* tau_k_max, double* tau_kk_max) const {
  const int n = f_ell_.grid.n;
  double tk = 0.0, tkk = 0.0;
  GridSpec probe = f_ell_.grid;
  probe.radius = ledger_radius_probe();
  probe.margin_cells = f_ell_.grid.margin_cells + 4;
  PointProblem prob;
  prob.tau = Eigen::MatrixXd::Identity(n, n);
  for_each_valid(probe, [&](long long p, const std::array<int, 3>& idx) {
    if (!stencil_fits4(f_ell_.grid, idx)) return;
    PointData pd;
    gather(p, idx, nullptr, pd);
    fill_taus(pd, dirs_, frames_.variant, lambda_, delta_, n, prob);
    for (const auto& t : prob.tau_k) tk = std::max(tk, t.norm());
    for (const auto& row : prob.tau_kk)
      for (const auto& t : row) tkk = std::max(tkk, t.norm());
  });
  if (tau_k_max) *tau_k_max = tk;
  if (tau_kk_max) *tau_kk_max = tkk;
}

double StageOps::ledger_radius(const CoefficientField& A) const {
  double r = std::min({df_[0].grid.radius, frames_.nu1.grid.radius, frames_.nu2.grid.radius,
                       A.A.grid.radius});
  return r - 2.0 * f_ell_.grid.spacing;
}

// Radius used when no coefficient field is in play (tau norms).
double StageOps::ledger_radius_probe() const {
  return std::min({df_[0].grid.radius, frames_.nu1.grid.radius, frames_.nu2.grid.radius}) -
         2.0 * f_ell_.grid.spacing;
}

KallenForms StageOps::kallen_forms(const MetricField& h, const NewtonOptions& opt,
                                   int apron_cells) const {
  KallenForms forms;
  const DirectionSet& dirs = dirs_;
  GridSpec domain = h.grid;
  // The tau source differentiates the frames, so the solve domain must stay
  // two stencils clear of the frame fields' own margin.
  domain.margin_cells = std::max(h.grid.margin_cells, f_ell_.grid.margin_cells + 4);

  forms.solve = [this, dirs, domain, opt, apron_cells](
                    const MetricField& T, const CoefficientField* warm) -> CoefficientField {
    return decompose_field(domain, tau_source(T), dirs, opt, warm, apron_cells);
  };

  forms.b_eval = [this, dirs, domain](const CoefficientField& a) -> MetricField {
    const int n = domain.n;
    const int nd = dirs.ndir();
    MetricField out = make_sym(domain);
    out.grid.radius = ledger_radius(a);
    const long long total = domain.num_points();
    PointProblem prob;
    prob.tau = Eigen::MatrixXd::Zero(n, n);
    for (long long p = 0; p < total; ++p) {
      auto idx = unflatten(domain, p);
      if (!stencil_fits4(domain, idx)) continue;
      PointData pd;
      gather(p, idx, &a.A, pd);
      fill_taus(pd, dirs, frames_.variant, lambda_, delta_, n, prob);
      Eigen::VectorXd A(nd);
      for (int k = 0; k < nd; ++k) A[k] = pd.A[k];
      out.set_sym_matrix(p, decomposition_value(prob, dirs, A));
    }
    return out;
  };

  forms.R_bilinear = [this, domain](const CoefficientField& a,
                                    const CoefficientField& b) -> MetricField {
    const int n = domain.n;
    const int nd = dirs_.ndir();
    const int m = frames_.m;
    MetricField out = make_sym(domain);
    out.grid.radius = std::min(ledger_radius(a), ledger_radius(b));
    const long long total = domain.num_points();
    const double r2 = std::sqrt(2.0);
    PointData pa, pb;
    for (long long p = 0; p < total; ++p) {
      auto idx = unflatten(domain, p);
      if (!stencil_fits4(domain, idx)) continue;
      gather(p, idx, &a.A, pa);
      if (&b == &a)
        pb = pa;
      else
        gather(p, idx, &b.A, pb);

      Eigen::MatrixXd R(n, n);
      if (frames_.variant == FrameVariant::Spiral) {
        // (U+V)(a)_i . (U+V)(b)_j covers R2 + R3 + both R4 mirrors.
        SmallVec ua[3], ub[3];
        for (int i = 0; i < n; ++i) {
          ua[i] = SmallVec::Zero(m);
          ub[i] = SmallVec::Zero(m);
          for (int k = 0; k < nd; ++k) {
            ua[i] += (pa.A[k] / lambda_) * (pa.s1[k] * pa.dnu1[i][k] + pa.c1[k] * pa.dnu2[i][k]) +
                     (pa.dA[i][k] / lambda_) * (pa.s1[k] * pa.nu1[k] + pa.c1[k] * pa.nu2[k]);
            ub[i] += (pb.A[k] / lambda_) * (pb.s1[k] * pb.dnu1[i][k] + pb.c1[k] * pb.dnu2[i][k]) +
                     (pb.dA[i][k] / lambda_) * (pb.s1[k] * pb.nu1[k] + pb.c1[k] * pb.nu2[k]);
          }
        }
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j) R(i, j) = ua[i].dot(ub[j]);
      } else {
        // Bilinear brackets only: sqrt2 (a/λ) cos dnu2 and sqrt2 (da/λ) cos nu2.
        SmallVec fa[3], fb[3];
        for (int i = 0; i < n; ++i) {
          fa[i] = SmallVec::Zero(m);
          fb[i] = SmallVec::Zero(m);
          for (int k = 0; k < nd; ++k) {
            fa[i] += r2 * ((pa.A[k] / lambda_) * pa.c1[k] * pa.dnu2[i][k] +
                           (pa.dA[i][k] / lambda_) * pa.c1[k] * pa.nu2[k]);
            fb[i] += r2 * ((pb.A[k] / lambda_) * pb.c1[k] * pb.dnu2[i][k] +
                           (pb.dA[i][k] / lambda_) * pb.c1[k] * pb.nu2[k]);
          }
        }
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j) R(i, j) = fa[i].dot(fb[j]);
      }
      out.set_sym_matrix(p, 0.5 * (R + R.transpose()));
    }
    return out;
  };

  forms.bR_eval = [this, dirs, domain](const CoefficientField& a)
      -> std::pair<MetricField, MetricField> {
    const int n = domain.n;
    const int nd = dirs.ndir();
    const int m = frames_.m;
    const double r2 = std::sqrt(2.0);
    MetricField bout = make_sym(domain);
    bout.grid.radius = ledger_radius(a);
    MetricField Rout = bout;
    const long long total = domain.num_points();
    PointProblem prob;
    prob.tau = Eigen::MatrixXd::Zero(n, n);
    PointData pd;
    Eigen::VectorXd A(nd);
    Eigen::MatrixXd Rm(n, n);
    for (long long p = 0; p < total; ++p) {
      auto idx = unflatten(domain, p);
      if (!stencil_fits4(domain, idx)) continue;
      gather(p, idx, &a.A, pd);
      fill_taus(pd, dirs, frames_.variant, lambda_, delta_, n, prob);
      for (int k = 0; k < nd; ++k) A[k] = pd.A[k];
      bout.set_sym_matrix(p, decomposition_value(prob, dirs, A));

      SmallVec u[3];
      if (frames_.variant == FrameVariant::Spiral) {
        for (int i = 0; i < n; ++i) {
          u[i] = SmallVec::Zero(m);
          for (int k = 0; k < nd; ++k)
            u[i] += (pd.A[k] / lambda_) * (pd.s1[k] * pd.dnu1[i][k] + pd.c1[k] * pd.dnu2[i][k]) +
                    (pd.dA[i][k] / lambda_) * (pd.s1[k] * pd.nu1[k] + pd.c1[k] * pd.nu2[k]);
        }
      } else {
        for (int i = 0; i < n; ++i) {
          u[i] = SmallVec::Zero(m);
          for (int k = 0; k < nd; ++k)
            u[i] += r2 * ((pd.A[k] / lambda_) * pd.c1[k] * pd.dnu2[i][k] +
                          (pd.dA[i][k] / lambda_) * pd.c1[k] * pd.nu2[k]);
        }
      }
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) Rm(i, j) = u[i].dot(u[j]);
      Rout.set_sym_matrix(p, Rm);
    }
    return {std::move(bout), std::move(Rout)};
  };
  return forms;
}

GridField StageOps::build_perturbation(const CoefficientField& A,
                                       double min_points_per_rad) const {
  const GridSpec& g = f_ell_.grid;
  const int n = g.n;
  const int m = frames_.m;
  const int nd = frames_.ndir;
  const double osc = (frames_.variant == FrameVariant::Strain) ? 2.0 * lambda_ : lambda_;
  if (g.spacing > 1.0 / (min_points_per_rad * osc))
    throw Error(ErrorCode::resolution,
                "build_perturbation: resolution rule violated, spacing > 1/(20*lambda_osc)");

  GridField w = make_map(g, m);
  w.grid.radius = f_ell_.grid.radius;
  w.grid.margin_cells = g.margin_cells + 2;  // frame values end two cells in
  const double sqrt_delta = std::sqrt(delta_);
  const double r2 = std::sqrt(2.0);
  const double taper_start = f_ell_.grid.radius + 1.0 * g.spacing;
  const double taper_end = f_ell_.grid.radius + 5.0 * g.spacing;

  const long long total = g.num_points();
  for (long long p = 0; p < total; ++p) {
    auto idx = unflatten(g, p);
    bool fits = true;
    for (int a = 0; a < n; ++a)
      if (idx[a] < 2 || idx[a] > g.points_per_axis - 3) { fits = false; break; }
    if (!fits) continue;

    double x[3], rr = 0.0;
    for (int a = 0; a < n; ++a) {
      x[a] = g.coord(a, idx[a]) - g.center[a];
      rr += x[a] * x[a];
    }
    rr = std::sqrt(rr);
    if (rr >= taper_end) continue;
    double taper = 1.0;
    if (rr > taper_start) {
      double t = (rr - taper_start) / (taper_end - taper_start);
      taper = 0.5 * (1.0 + std::cos(M_PI * t));
    }

    for (int k = 0; k < nd; ++k) {
      double ph = 0.0;
      for (int a = 0; a < n; ++a) ph += x[a] * dirs_.dirs[k][a];
      ph *= lambda_;
      const double Ak = A.A.at(p, k);
      double amp1, amp2;
      if (frames_.variant == FrameVariant::Spiral) {
        amp1 = sqrt_delta * (Ak / lambda_) * std::sin(ph);
        amp2 = sqrt_delta * (Ak / lambda_) * std::cos(ph);
      } else {
        amp1 = delta_ * Ak * Ak / (4.0 * lambda_) * std::sin(2.0 * ph);
        amp2 = sqrt_delta * r2 * (Ak / lambda_) * std::cos(ph);
      }
      for (int c = 0; c < m; ++c)
        w.at(p, c) += taper * (amp1 * frames_.nu1.at(p, k * m + c) +
                               amp2 * frames_.nu2.at(p, k * m + c));
    }
  }
  return w;
}

const GridField* ErrorLedger::field(const std::string& name) const {
  for (size_t i = 0; i < field_names.size(); ++i)
    if (field_names[i] == name) return &fields[i];
  return nullptr;
}

std::string ErrorLedger::csv(double lambda_ell) const {
  std::ostringstream o;
  o << "term,norm0,norm1,bound,ratio\n";
  o.precision(17);
  for (const auto& e : entries) {
    double bound = 1.0 / lambda_ell;  // the tau-scale reference 1/(lambda ell)
    o << e.name << "," << e.norm0 << "," << e.norm1 << "," << bound << ","
      << (bound > 0 ? e.norm0 / bound : 0.0) << "\n";
  }
  return o.str();
}

ErrorLedger StageOps::ledger(const CoefficientField& A, const MetricField& g_ell,
                             bool keep_fields) const {
  const GridSpec& g = f_ell_.grid;
  const int n = g.n;
  const int m = frames_.m;
  const int nd = frames_.ndir;
  const double sqrt_delta = std::sqrt(delta_);
  const double r2 = std::sqrt(2.0);
  const bool strain = frames_.variant == FrameVariant::Strain;

  ErrorLedger led;
  led.variant = frames_.variant;
  led.lambda = lambda_;
  led.delta = delta_;
  led.reconstructed = make_sym(g);
  led.reconstructed.grid.radius = ledger_radius(A);
  led.reconstructed.grid.margin_cells = g.margin_cells + 4;

  const std::vector<std::string> names =
      strain ? std::vector<std::string>{"L", "M", "R0", "R1", "R2", "R3", "R4", "R5", "R6", "R7",
                                        "Rt2", "Rt3", "Rt4", "Rt5", "Rt6"}
             : std::vector<std::string>{"L", "M", "R0", "R2", "R3", "R4", "R5", "R6"};
  for (const auto& nm : names) led.entries.push_back({nm, 0.0, -1.0});

  if (keep_fields) {
    led.field_names = names;
    for (size_t i = 0; i < names.size(); ++i) led.fields.push_back(make_full(g));
    for (auto& f : led.fields) f.grid.radius = led.reconstructed.grid.radius;
  }

  GridSpec norm_region = g;
  norm_region.radius = led.reconstructed.grid.radius;
  norm_region.margin_cells = g.margin_cells + 4;

  PointData pd;
  Eigen::MatrixXd Q(n, n), cross(n, n), expand(n, n);
  std::vector<Eigen::MatrixXd> named(names.size(), Eigen::MatrixXd::Zero(n, n));

  const long long total = g.num_points();
  for (long long p = 0; p < total; ++p) {
    auto idx = unflatten(g, p);
    if (!stencil_fits4(g, idx)) continue;
    const bool in_ball = is_valid(norm_region, idx);
    gather(p, idx, &A.A, pd);

    // Per-axis aggregates of dw / delta-normalized channels.
    SmallVec dwn[3];  // full d_i w (ambient vector), for the cross term
    Eigen::MatrixXd Mmat = Eigen::MatrixXd::Zero(n, n);
    if (!strain) {
      SmallVec U[3], V[3], W[3];
      for (int i = 0; i < n; ++i) {
        U[i] = SmallVec::Zero(m);
        V[i] = SmallVec::Zero(m);
        W[i] = SmallVec::Zero(m);
        for (int k = 0; k < nd; ++k) {
          U[i] += (pd.A[k] / lambda_) * (pd.s1[k] * pd.dnu1[i][k] + pd.c1[k] * pd.dnu2[i][k]);
          V[i] += (pd.dA[i][k] / lambda_) * (pd.s1[k] * pd.nu1[k] + pd.c1[k] * pd.nu2[k]);
          W[i] += pd.A[k] * dirs_.dirs[k][i] * (pd.c1[k] * pd.nu1[k] - pd.s1[k] * pd.nu2[k]);
        }
        dwn[i] = sqrt_delta * (U[i] + V[i] + W[i]);
      }
      // Named terms. M keeps all k,k' cross products (frame-tolerance exact).
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          named[1](i, j) = W[i].dot(W[j]);                         // M
          named[3](i, j) = U[i].dot(U[j]);                         // R2
          named[4](i, j) = V[i].dot(V[j]);                         // R3
          named[5](i, j) = U[i].dot(V[j]);                         // R4
          named[6](i, j) = U[i].dot(W[j]);                         // R5
          named[7](i, j) = V[i].dot(W[j]);                         // R6
          named[0](i, j) = pd.df[i].dot(U[j]) / sqrt_delta;        // L
          named[2](i, j) = pd.df[i].dot(V[j] + W[j]) / sqrt_delta; // R0: first-sum terms
          Q(i, j) = (U[i] + V[i] + W[i]).dot(U[j] + V[j] + W[j]);
          cross(i, j) = pd.df[i].dot(dwn[j]) / delta_;
        }
      expand = named[1] + named[3] + named[4] + named[5] + named[5].transpose() + named[6] +
               named[6].transpose() + named[7] + named[7].transpose();
      if (in_ball) {
        led.r6_max = std::max(led.r6_max, named[7].cwiseAbs().maxCoeff());
        led.r0_max = std::max(led.r0_max, named[2].cwiseAbs().maxCoeff());
      }
    } else {
      SmallVec Dt[3], Dn[3], Et[3], En[3], Ft[3], Fn[3];
      for (int i = 0; i < n; ++i) {
        Dt[i] = SmallVec::Zero(m);
        Dn[i] = SmallVec::Zero(m);
        Et[i] = SmallVec::Zero(m);
        En[i] = SmallVec::Zero(m);
        Ft[i] = SmallVec::Zero(m);
        Fn[i] = SmallVec::Zero(m);
        for (int k = 0; k < nd; ++k) {
          const double ak = pd.A[k], dak = pd.dA[i][k], ni = dirs_.dirs[k][i];
          Dt[i] += sqrt_delta * (ak * dak / (2.0 * lambda_)) * pd.s2[k] * pd.nu1[k];
          Dn[i] += r2 * (dak / lambda_) * pd.c1[k] * pd.nu2[k];
          Et[i] += sqrt_delta * (ak * ak / 2.0) * ni * pd.c2[k] * pd.nu1[k];
          En[i] += -r2 * ak * ni * pd.s1[k] * pd.nu2[k];
          Ft[i] += sqrt_delta * (ak * ak / (4.0 * lambda_)) * pd.s2[k] * pd.dnu1[i][k];
          Fn[i] += r2 * (ak / lambda_) * pd.c1[k] * pd.dnu2[i][k];
        }
        dwn[i] = sqrt_delta * (Dt[i] + Dn[i] + Et[i] + En[i] + Ft[i] + Fn[i]);
      }
      Eigen::MatrixXd R6bil(n, n);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          SmallVec Di = Dt[i] + Dn[i], Ej = Et[j] + En[j], Fi = Ft[i] + Fn[i];
          SmallVec Dj = Dt[j] + Dn[j], Ei = Et[i] + En[i], Fj = Ft[j] + Fn[j];
          named[3](i, j) = Ei.dot(Ej) - En[i].dot(En[j]) - Et[i].dot(En[j]) -
                           En[i].dot(Et[j]);                        // R1 = Et.Et
          named[2](i, j) = Et[i].dot(En[j]) + En[i].dot(Et[j]);     // R0 (both mirrors)
          named[4](i, j) = Fi.dot(Fj);                              // R2
          named[5](i, j) = Di.dot(Dj);                              // R3
          named[6](i, j) = Fi.dot(Dj);                              // R4
          named[7](i, j) = Fi.dot(Ej);                              // R5
          named[8](i, j) = Di.dot(Ej);                              // R6
          R6bil(i, j) = Dn[i].dot(En[j]);
          named[10](i, j) = named[4](i, j) - Fn[i].dot(Fn[j]);      // Rt2
          named[11](i, j) = named[5](i, j) - Dn[i].dot(Dn[j]);      // Rt3
          named[12](i, j) = named[6](i, j) - Fn[i].dot(Dn[j]);      // Rt4
          named[13](i, j) = named[7](i, j) - Fn[i].dot(En[j]);      // Rt5
          named[14](i, j) = named[8](i, j) - R6bil(i, j);           // Rt6
          Q(i, j) = (Di + Ei + Fi).dot(Dj + Ej + Fj);
          cross(i, j) = pd.df[i].dot(dwn[j]) / delta_;
          // L and R7 from the cross-term expansion, M from its tangential
          // phase part plus the En.En block.
          double L = 0.0, R7 = 0.0, Mlin = 0.0;
          for (int k = 0; k < nd; ++k) {
            const double ak = pd.A[k];
            L += pd.df[i].dot(pd.dnu1[j][k]) * ak * ak / (4.0 * lambda_) * pd.s2[k] +
                 pd.df[i].dot(pd.dnu2[j][k]) * r2 * ak / (lambda_ * sqrt_delta) * pd.c1[k];
            R7 += pd.df[i].dot(pd.nu1[k]) * ak * pd.dA[j][k] / (2.0 * lambda_) * pd.s2[k];
            Mlin += pd.df[i].dot(pd.nu1[k]) * ak * ak * pd.c2[k] * dirs_.dirs[k][j];
          }
          named[0](i, j) = L;
          named[9](i, j) = R7;
          Mmat(i, j) = Mlin;
        }
      named[1] = 0.5 * (Mmat + Mmat.transpose());
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) named[1](i, j) += En[i].dot(En[j]);  // M
      expand = named[1] - Eigen::MatrixXd(0.5 * (Mmat + Mmat.transpose())) + named[3] +
               named[2] + named[4] + named[5] + named[6] + named[6].transpose() + named[7] +
               named[7].transpose() + named[8] + named[8].transpose();
      if (in_ball) {
        led.r0_max = std::max(led.r0_max, named[2].cwiseAbs().maxCoeff());
        Eigen::MatrixXd idres =
            2.0 * named[9] - Eigen::MatrixXd((named[14] - named[8]).transpose());
        led.r7_identity_residual =
            std::max(led.r7_identity_residual, idres.cwiseAbs().maxCoeff());
        Eigen::MatrixXd joint = named[8] + 2.0 * named[9];
        Eigen::MatrixXd jsym = 0.5 * (joint + joint.transpose());
        led.cancellation_joint = std::max(led.cancellation_joint, jsym.cwiseAbs().maxCoeff());
      }
    }

    // Exact reconstruction: cross + cross^t + quadratic expansion.
    Eigen::MatrixXd S = cross + cross.transpose() + Q;
    led.reconstructed.set_sym_matrix(
        p, Eigen::MatrixXd(g_ell.sym_matrix(p) + delta_ * 0.5 * (S + S.transpose())));

    if (in_ball) {
      double qres = (Q - expand).cwiseAbs().maxCoeff();
      led.quad_identity_residual = std::max(led.quad_identity_residual, qres);
      for (size_t t = 0; t < names.size(); ++t) {
        double nm = named[t].cwiseAbs().maxCoeff();
        led.entries[t].norm0 = std::max(led.entries[t].norm0, nm);
      }
    }
    if (keep_fields)
      for (size_t t = 0; t < names.size(); ++t)
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j) led.fields[t].at(p, i * n + j) = named[t](i, j);
  }

  for (const auto& e : led.entries) led.ledger_scale = std::max(led.ledger_scale, e.norm0);

  if (keep_fields) {
    for (size_t t = 0; t < names.size(); ++t) {
      led.entries[t].norm1 = cr_norm(led.fields[t], 1);
    }
  }
  return led;
}

}  // namespace isolab
