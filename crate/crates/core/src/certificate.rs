//! Validation machinery for the consensus gain `P`.
//!
//! The operative pass/fail test is the pairwise goal-state inequality
//! `d_ijᵀ P (f(goal_i) − f(goal_j)) ≤ 0` over the formation edges, together
//! with positive definiteness of `P`. The assembled block inequality is kept
//! as a diagnostic only: its upper-left block is identically zero, so with
//! any nonzero off-diagonal coupling it cannot be negative definite, and the
//! report simply records its eigenvalue extremes. A seeded sampling check of
//! the drift inequality over a state box provides refutation evidence for
//! candidate gains; a non-positive sampled maximum is evidence, not proof.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formation::FormationSpec;
use crate::linalg;
use crate::plant::ControlAffineModel;

/// Slack applied to the pairwise residual comparison.
pub const PAIRWISE_TOL: f64 = 1e-12;

/// Residual of one formation edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeResidual {
    pub i: usize,
    pub j: usize,
    pub residual: f64,
}

/// Eigenvalue diagnostics of the assembled block inequality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmiDiagnostics {
    /// the assembled matrix, row by row
    pub matrix: Vec<Vec<f64>>,
    /// eigenvalue extremes of the symmetric part
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    /// Frobenius norm of the skew part; nonzero when the lower-right block
    /// product is not symmetric
    pub asymmetry: f64,
}

/// Outcome of certifying a candidate gain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub gain: Vec<Vec<f64>>,
    pub gain_positive_definite: bool,
    pub pairwise_residuals: Vec<EdgeResidual>,
    /// max sampled drift residual, when a sampling domain was supplied
    pub sampled_drift_max: Option<f64>,
    pub lmi: Option<LmiDiagnostics>,
    pub pass: bool,
    pub reasons: Vec<String>,
}

pub(crate) fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

pub(crate) fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    if nrows == 0 {
        return Err(Error::Dimension("empty matrix".into()));
    }
    let ncols = rows[0].len();
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Dimension("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// Pairwise goal-state check of a candidate gain over every formation edge.
pub fn pairwise_check(
    p: &DMatrix<f64>,
    spec: &FormationSpec,
    model: &ControlAffineModel,
) -> Result<CertificateReport> {
    if p.nrows() != spec.state_dim() || p.ncols() != spec.state_dim() {
        return Err(Error::Dimension(format!(
            "gain is {}x{}, states have dimension {}",
            p.nrows(),
            p.ncols(),
            spec.state_dim()
        )));
    }
    let tol = linalg::SYMMETRY_TOL * linalg::max_abs(p).max(1.0);
    if !linalg::is_symmetric(p, tol) {
        return Err(Error::NotSymmetric("candidate gain".into()));
    }

    let positive_definite = linalg::is_positive_definite_default(p)?;
    let drifts: Vec<DVector<f64>> = spec
        .goals()
        .iter()
        .map(|g| model.drift(g))
        .collect::<Result<_>>()?;

    let mut residuals = Vec::with_capacity(spec.edges().len());
    for &(i, j) in spec.edges() {
        let d_ij = spec.offset(i, j);
        let gap = &drifts[i] - &drifts[j];
        let residual = (d_ij.transpose() * p * gap)[(0, 0)];
        residuals.push(EdgeResidual { i, j, residual });
    }

    let mut reasons = Vec::new();
    if !positive_definite {
        reasons.push("gain is not positive definite".into());
    }
    for r in &residuals {
        if r.residual > PAIRWISE_TOL {
            reasons.push(format!(
                "edge ({}, {}) residual {:.6e} exceeds tolerance",
                r.i, r.j, r.residual
            ));
        }
    }
    let pass = reasons.is_empty();

    Ok(CertificateReport {
        gain: matrix_rows(p),
        gain_positive_definite: positive_definite,
        pairwise_residuals: residuals,
        sampled_drift_max: None,
        lmi: None,
        pass,
        reasons,
    })
}

/// Assemble the diagnostic block matrix
/// `[[0, S], [S, −Δf Dᵀ]]` with `S` the symmetric square root of
/// `I_N ⊗ P⁻¹`, and report its eigenvalue extremes.
pub fn assemble_lmi(
    p: &DMatrix<f64>,
    spec: &FormationSpec,
    model: &ControlAffineModel,
    follower_order: &[usize],
) -> Result<LmiDiagnostics> {
    let n = spec.state_dim();
    let count = follower_order.len();
    let p_inv = p
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Certificate("gain is not positive definite".into()))?
        .inverse();
    let p_bar = linalg::kron(&DMatrix::identity(count, count), &p_inv);
    let root = linalg::sym_sqrt(&p_bar)?;

    let d = spec.offset_block_matrix(follower_order);
    let gap = spec.drift_gap_matrix(model, follower_order)?;
    let lower_right = -(&gap * d.transpose());

    let dim = count * n;
    let mut k = DMatrix::zeros(2 * dim, 2 * dim);
    k.view_mut((0, dim), (dim, dim)).copy_from(&root);
    k.view_mut((dim, 0), (dim, dim)).copy_from(&root);
    k.view_mut((dim, dim), (dim, dim)).copy_from(&lower_right);

    let asymmetry = 0.5 * (&k - k.transpose()).norm();
    let sym_part = 0.5 * (&k + k.transpose());
    let eigs = linalg::symmetric_eigenvalues_sorted(&sym_part)?;

    Ok(LmiDiagnostics {
        matrix: matrix_rows(&k),
        min_eigenvalue: *eigs.first().unwrap(),
        max_eigenvalue: *eigs.last().unwrap(),
        asymmetry,
    })
}

/// Recover the gain from `p_bar = I_N ⊗ P⁻¹` by inverting its upper-left
/// `n x n` block.
pub fn extract_gain(p_bar: &DMatrix<f64>, n: usize) -> Result<DMatrix<f64>> {
    if p_bar.nrows() < n || p_bar.ncols() < n {
        return Err(Error::Dimension(format!(
            "matrix is {}x{}, cannot take a {n}x{n} block",
            p_bar.nrows(),
            p_bar.ncols()
        )));
    }
    let block: DMatrix<f64> = p_bar.view((0, 0), (n, n)).into();
    block
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .or_else(|| block.lu().try_inverse())
        .ok_or_else(|| Error::Certificate("upper-left block is singular".into()))
}

/// Axis-aligned sampling box for the drift inequality check.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainBox {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl DomainBox {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Dimension("box bounds differ in length".into()));
        }
        if lower.iter().zip(upper.iter()).any(|(l, u)| l > u) {
            return Err(Error::Config("box lower bound exceeds upper bound".into()));
        }
        Ok(Self { lower, upper })
    }

    /// Symmetric box `[-half_width, half_width]^n`.
    pub fn centered(n: usize, half_width: f64) -> Result<Self> {
        Self::new(
            DVector::from_element(n, -half_width),
            DVector::from_element(n, half_width),
        )
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        DVector::from_fn(self.dim(), |i, _| {
            if self.upper[i] > self.lower[i] {
                rng.gen_range(self.lower[i]..self.upper[i])
            } else {
                self.lower[i]
            }
        })
    }
}

/// Max of `(x_i − x_j)ᵀ P (f(x_i) − f(x_j))` over seeded sample pairs drawn
/// from the box. A positive maximum refutes the drift inequality on the box.
pub fn sampled_drift_check(
    p: &DMatrix<f64>,
    model: &ControlAffineModel,
    domain: &DomainBox,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    if samples == 0 {
        return Err(Error::Config("need at least one sample".into()));
    }
    if domain.dim() != model.state_dim() {
        return Err(Error::Dimension(format!(
            "box has dimension {}, plant expects {}",
            domain.dim(),
            model.state_dim()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_residual = f64::NEG_INFINITY;
    for _ in 0..samples {
        let xa = domain.sample(&mut rng);
        let xb = domain.sample(&mut rng);
        let gap = model.drift(&xa)? - model.drift(&xb)?;
        let residual = ((xa - xb).transpose() * p * gap)[(0, 0)];
        max_residual = max_residual.max(residual);
    }
    Ok(max_residual)
}

/// Scan diagonal gain candidates built from the per-entry grid, preferring
/// the identity when it passes. A candidate must pass [`pairwise_check`] and,
/// when a sampling domain is supplied, must not be refuted by
/// [`sampled_drift_check`]. Returns `None` when the grid is exhausted.
pub fn diagonal_gain_search(
    spec: &FormationSpec,
    model: &ControlAffineModel,
    grid: &[f64],
    domain: Option<&DomainBox>,
    samples: usize,
    seed: u64,
) -> Result<Option<DMatrix<f64>>> {
    let n = spec.state_dim();
    if grid.iter().any(|&v| v <= 0.0) {
        return Err(Error::Config("grid values must be positive".into()));
    }
    let admissible = |candidate: &DMatrix<f64>| -> Result<bool> {
        if !pairwise_check(candidate, spec, model)?.pass {
            return Ok(false);
        }
        if let Some(d) = domain {
            if sampled_drift_check(candidate, model, d, samples, seed)? > PAIRWISE_TOL {
                return Ok(false);
            }
        }
        Ok(true)
    };

    let identity = DMatrix::identity(n, n);
    if admissible(&identity)? {
        return Ok(Some(identity));
    }
    if grid.is_empty() {
        return Ok(None);
    }
    // lexicographic walk over the per-entry grid
    let mut indices = vec![0usize; n];
    loop {
        let diag = DVector::from_fn(n, |i, _| grid[indices[i]]);
        let candidate = DMatrix::from_diagonal(&diag);
        if admissible(&candidate)? {
            return Ok(Some(candidate));
        }
        let mut pos = 0;
        loop {
            indices[pos] += 1;
            if indices[pos] < grid.len() {
                break;
            }
            indices[pos] = 0;
            pos += 1;
            if pos == n {
                return Ok(None);
            }
        }
    }
}

/// Full certification: pairwise verdict plus sampled evidence and the
/// assembled block diagnostics.
pub fn certify(
    p: &DMatrix<f64>,
    spec: &FormationSpec,
    model: &ControlAffineModel,
    follower_order: &[usize],
    domain: Option<&DomainBox>,
    samples: usize,
    seed: u64,
) -> Result<CertificateReport> {
    let mut report = pairwise_check(p, spec, model)?;
    if let Some(d) = domain {
        report.sampled_drift_max = Some(sampled_drift_check(p, model, d, samples, seed)?);
    }
    if report.gain_positive_definite {
        report.lmi = Some(assemble_lmi(p, spec, model, follower_order)?);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{self, ThrustFrame};
    use approx::assert_relative_eq;

    fn identity_drift_model(n: usize) -> ControlAffineModel {
        ControlAffineModel::new(
            n,
            n,
            |x| Ok(x.clone()),
            move |_x| Ok(DMatrix::identity(n, n)),
        )
    }

    #[test]
    fn integrator_passes_any_spd_gain() {
        let spec = FormationSpec::triangular(1.0, 0.8, 0.8, 3).unwrap();
        let model = plant::single_integrator(3).unwrap();
        for scale in [0.5, 1.0, 3.0] {
            let p = DMatrix::identity(3, 3) * scale;
            let report = pairwise_check(&p, &spec, &model).unwrap();
            assert!(report.pass);
            assert!(report
                .pairwise_residuals
                .iter()
                .all(|r| r.residual == 0.0));
        }
    }

    #[test]
    fn quadrotor_identity_gain_passes() {
        let spec = FormationSpec::triangular(1.0, 0.8, 0.8, 12).unwrap();
        let model = plant::quadrotor_model(
            &plant::QuadrotorParams::default(),
            ThrustFrame::GravityCompensated,
        )
        .unwrap();
        let report = pairwise_check(&DMatrix::identity(12, 12), &spec, &model).unwrap();
        assert!(report.pass, "reasons: {:?}", report.reasons);
    }

    #[test]
    fn identity_drift_passes_pairwise_at_goals() {
        // with f(x) = x the edge residual is −|d_ij|² ≤ 0
        let spec = FormationSpec::triangular(1.0, 0.8, 0.8, 3).unwrap();
        let model = identity_drift_model(3);
        let report = pairwise_check(&DMatrix::identity(3, 3), &spec, &model).unwrap();
        assert!(report.pass);
        for r in &report.pairwise_residuals {
            let expected = -spec.offset(r.i, r.j).norm_squared();
            assert_relative_eq!(r.residual, expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn indefinite_gain_fails() {
        let spec = FormationSpec::triangular(1.0, 0.8, 0.8, 3).unwrap();
        let model = plant::single_integrator(3).unwrap();
        let mut p = DMatrix::identity(3, 3);
        p[(2, 2)] = -1.0;
        let report = pairwise_check(&p, &spec, &model).unwrap();
        assert!(!report.pass);
        assert!(!report.gain_positive_definite);
    }

    #[test]
    fn pairwise_verdict_invariant_to_positive_scaling() {
        let spec = FormationSpec::triangular(1.0, 0.8, 0.8, 3).unwrap();
        let contraction = ControlAffineModel::new(
            3,
            3,
            |x| Ok(-x),
            |_x| Ok(DMatrix::identity(3, 3)),
        );
        for alpha in [0.01, 1.0, 250.0] {
            let p = DMatrix::identity(3, 3) * alpha;
            assert!(pairwise_check(&p, &spec, &contraction).unwrap().pass);
        }
    }

    #[test]
    fn lmi_zero_gap_for_integrator() {
        let spec = FormationSpec::triangular(1.0, 0.8, 0.8, 3).unwrap();
        let model = plant::single_integrator(3).unwrap();
        let diag = assemble_lmi(&DMatrix::identity(3, 3), &spec, &model, &[1, 2, 3]).unwrap();
        // lower-right block vanishes, so eigenvalues come in ± pairs of the root
        assert_relative_eq!(diag.min_eigenvalue, -1.0, epsilon = 1e-9);
        assert_relative_eq!(diag.max_eigenvalue, 1.0, epsilon = 1e-9);
        assert!(diag.asymmetry <= 1e-12);
        // identity gain means the root block is the identity
        let dim = 9;
        for r in 0..dim {
            assert_relative_eq!(diag.matrix[r][dim + r], 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn extract_gain_round_trip() {
        let p_bar = linalg::kron(
            &DMatrix::identity(2, 2),
            &DMatrix::from_diagonal(&nalgebra::dvector![0.5, 0.25]),
        );
        let p = extract_gain(&p_bar, 2).unwrap();
        assert_relative_eq!(
            p,
            DMatrix::from_diagonal(&nalgebra::dvector![2.0, 4.0]),
            epsilon = 1e-12
        );

        let identity = linalg::kron(&DMatrix::identity(3, 3), &DMatrix::identity(2, 2));
        assert_relative_eq!(
            extract_gain(&identity, 2).unwrap(),
            DMatrix::identity(2, 2),
            epsilon = 1e-12
        );
    }

    #[test]
    fn sampled_check_zero_for_zero_drift() {
        let model = plant::single_integrator(3).unwrap();
        let domain = DomainBox::centered(3, 1.0).unwrap();
        let max = sampled_drift_check(&DMatrix::identity(3, 3), &model, &domain, 64, 7).unwrap();
        assert_eq!(max, 0.0);
    }

    #[test]
    fn sampled_check_contraction_never_positive() {
        let model = ControlAffineModel::new(
            3,
            3,
            |x| Ok(-x),
            |_x| Ok(DMatrix::identity(3, 3)),
        );
        let domain = DomainBox::centered(3, 2.0).unwrap();
        let max = sampled_drift_check(&DMatrix::identity(3, 3), &model, &domain, 128, 11).unwrap();
        assert!(max <= 0.0);
    }

    #[test]
    fn sampled_check_refutes_expanding_drift() {
        let model = identity_drift_model(3);
        let domain = DomainBox::centered(3, 1.0).unwrap();
        let max = sampled_drift_check(&DMatrix::identity(3, 3), &model, &domain, 10, 3).unwrap();
        assert!(max > 0.0, "expected a refuting sample, got {max}");
    }

    #[test]
    fn search_returns_identity_for_integrator() {
        let spec = FormationSpec::triangular(1.0, 0.8, 0.8, 3).unwrap();
        let model = plant::single_integrator(3).unwrap();
        let found = diagonal_gain_search(&spec, &model, &[0.5, 2.0], None, 16, 1)
            .unwrap()
            .unwrap();
        assert_eq!(found, DMatrix::identity(3, 3));
    }

    #[test]
    fn search_exhausts_on_expanding_drift() {
        let spec = FormationSpec::triangular(1.0, 0.8, 0.8, 3).unwrap();
        let model = identity_drift_model(3);
        let domain = DomainBox::centered(3, 1.0).unwrap();
        let found =
            diagonal_gain_search(&spec, &model, &[0.5, 1.0, 2.0], Some(&domain), 32, 5).unwrap();
        assert!(found.is_none());
    }

    #[test]
    fn diagonal_equivalence_of_block_and_pairwise_forms() {
        // the diagonal of Dᵀ (I ⊗ P) Δf matches the pairwise sums
        let spec = FormationSpec::triangular(1.0, 0.8, 0.6, 3).unwrap();
        let model = identity_drift_model(3);
        let p = DMatrix::from_diagonal(&nalgebra::dvector![1.0, 2.0, 0.5]);
        let order = [1usize, 2, 3];
        let d = spec.offset_block_matrix(&order);
        let gap = spec.drift_gap_matrix(&model, &order).unwrap();
        let block = d.transpose() * linalg::kron(&DMatrix::identity(3, 3), &p) * gap;
        for (bi, &i) in order.iter().enumerate() {
            let mut pairwise = 0.0;
            for &j in order.iter() {
                if j == i || !spec.has_edge(i, j) {
                    continue;
                }
                let gap_ij = model.drift(spec.goal(i)).unwrap() - model.drift(spec.goal(j)).unwrap();
                pairwise += (spec.offset(i, j).transpose() * &p * gap_ij)[(0, 0)];
            }
            assert_relative_eq!(block[(bi, bi)], pairwise, epsilon = 1e-10);
        }
    }
}
