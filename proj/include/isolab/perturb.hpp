#pragma once

#include "isolab/decomp.hpp"
#include "isolab/frames.hpp"
#include "isolab/grid.hpp"
#include "isolab/kallen.hpp"

namespace isolab {

struct MetricErrorReport {
  double min_eig = 0.0;
  double h_minus_id_norm = 0.0;  // Holder norm at the configured exponent
  double holder_exponent = 0.0;
  bool theta_ok = true;
};

// h from delta_{q+1} h = g - g_ell - delta_{q+2} Id. Aborts when h fails to be
// positive definite; the theta check is reported and left to the caller.
MetricField metric_error_h(const MetricField& g, const MetricField& g_ell, double d1, double d2,
                           double theta, double holder_exponent, MetricErrorReport* report);

struct LedgerEntry {
  std::string name;
  double norm0 = 0.0;
  double norm1 = -1.0;  // filled only when term fields are retained
};

// All delta_{q+1}-normalized error tensors of one stage. Non-symmetric terms
// (L, R4, R5, R6, R7) are measured unsymmetrized; the reconstruction applies
// sym exactly once, to the full mirrored sum.
struct ErrorLedger {
  FrameVariant variant = FrameVariant::Spiral;
  double lambda = 0.0, delta = 0.0;
  std::vector<LedgerEntry> entries;

  double quad_identity_residual = 0.0;  // quadratic expansion regrouping check
  double r6_max = 0.0;                  // spiral cancellation
  double r0_max = 0.0;                  // strain orthogonality term
  double r7_identity_residual = 0.0;    // strain: max |2(R7)_ij - (Rt6 - R6)_ji|
  double cancellation_joint = 0.0;      // |sym(R6 + 2 R7)|_0
  double ledger_scale = 0.0;            // max pointwise magnitude across terms

  double master_residual = -1.0;  // filled by the stage after pullback(f_ell + w)
  double master_scale = 0.0;

  MetricField reconstructed;  // g_ell + delta * sym(full mirrored sum)

  std::vector<std::string> field_names;  // retained term fields (small grids)
  std::vector<GridField> fields;

  const GridField* field(const std::string& name) const;
  std::string csv(double lambda_ell) const;
};

// Pointwise machinery of one stage: tangents of f_ell, frames, oscillation
// phases, and every tensor assembled from them.
class StageOps {
 public:
  StageOps(const GridField& f_ell, const FrameField& frames, const DirectionSet& dirs,
           double lambda, double delta);

  FrameVariant variant() const { return frames_.variant; }
  double lambda() const { return lambda_; }
  double delta() const { return delta_; }

  // Decomposition problems tau = h(p) with the stage's tau_k, tau_kk'.
  ProblemSource tau_source(const MetricField& h) const;

  // Forms for Kallen's iteration: F = decompose_field over tau_source,
  // b the decomposition value, R the polarized bilinear error. The solve
  // apron must absorb two cells of dA-stencil creep per iteration step plus
  // the taper reach of the perturbation, hence the generous default.
  KallenForms kallen_forms(const MetricField& h, const NewtonOptions& opt,
                           int apron_cells = 20) const;

  // sup norms of the decomposition tensors inside the ball (r = 0).
  void tau_norms(double* tau_k_max, double* tau_kk_max) const;

  // The stage perturbation w; the caller supplies the resolution rule factor
  // (points per unit phase). Values are cosine-tapered to zero beyond the
  // valid ball so downstream stencils never see a jump.
  GridField build_perturbation(const CoefficientField& A, double min_points_per_rad = 20.0) const;

  ErrorLedger ledger(const CoefficientField& A, const MetricField& g_ell,
                     bool keep_fields = false) const;

  double ledger_radius(const CoefficientField& A) const;

  struct PointData;

 private:
  const GridField& f_ell_;
  const FrameField& frames_;
  const DirectionSet& dirs_;
  double lambda_, delta_;
  std::vector<GridField> df_;  // tangent fields of f_ell

  void gather(long long p, const std::array<int, 3>& idx, const GridField* A,
              PointData& pd) const;
  double ledger_radius_probe() const;
};

}  // namespace isolab
