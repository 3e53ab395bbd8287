#pragma once

#include "isolab/grid.hpp"

#include <optional>

namespace isolab {

// N_dir = n(n+1)/2 unit directions whose rank-one tensors n_k x n_k span
// Sym(n) with the identity strictly inside the positive cone.
struct DirectionSet {
  int n = 2;
  std::vector<Eigen::VectorXd> dirs;
  Eigen::VectorXd id_coeffs_sq;  // c_k^2 with Id = sum c_k^2 n_k x n_k
  double gram_condition = 0.0;

  int ndir() const { return int(dirs.size()); }
};

// n=2: equiangular directions at 0, pi/3, 2pi/3.  n=3: the six antipodal
// representatives of the icosahedron vertices. Both are tight frames.
DirectionSet make_directions(int n);

// Frobenius-orthonormal coordinates on Sym(n): diagonal entries as-is,
// off-diagonal scaled by sqrt(2).
Eigen::VectorXd sym_to_vec(const Eigen::MatrixXd& s);
Eigen::MatrixXd vec_to_sym(int n, const Eigen::VectorXd& v);

enum class FrameVariant { Spiral, Strain };

struct FrameField {
  FrameVariant variant = FrameVariant::Spiral;
  int ndir = 0;
  int m = 0;  // ambient dimension
  // nu1/nu2 stored as maps with ndir*m components, k-major.
  GridField nu1;
  GridField nu2;

  Eigen::VectorXd nu1_at(long long p, int k) const {
    Eigen::VectorXd v(m);
    for (int c = 0; c < m; ++c) v[c] = nu1.at(p, k * m + c);
    return v;
  }
  Eigen::VectorXd nu2_at(long long p, int k) const {
    Eigen::VectorXd v(m);
    for (int c = 0; c < m; ++c) v[c] = nu2.at(p, k * m + c);
    return v;
  }
};

struct FrameQuality {
  double max_tangent_dot = 0.0;   // worst |nu . d_a f| over normals
  double max_gram_residual = 0.0; // worst |nu_i . nu_j - delta_ij|
  double max_identity_residual = 0.0;  // strain: worst |d_i f . nu1_k - (n_k)_i|
};

// d orthonormal fields orthogonal to the tangent space of f, built by
// projecting a fixed ambient reference basis (seeded from `ref` when given)
// and running modified Gram-Schmidt with a reorthogonalization pass.
GridField normal_frame(const GridField& f, int d, const GridField* ref = nullptr);

// Spiral frames: 2*N_dir orthonormal normals split into pairs (nu1_k, nu2_k).
FrameField spiral_frames(const GridField& f, const DirectionSet& dirs,
                         const FrameField* ref = nullptr);

// Strain frames: nu2 normal family plus tangent-derived nu1_k = grad f . g^{-1} n_k,
// which satisfies d_i f . nu1_k = (n_k)_i.
FrameField strain_frames(const GridField& f_ell, const MetricField& g_ell,
                         const DirectionSet& dirs, const FrameField* ref = nullptr);

FrameQuality frame_quality(const FrameField& frames, const GridField& f,
                           const DirectionSet& dirs);

}  // namespace isolab
