//! Weighted point sets for Gaussian moment matching: the unscented
//! transform and the third- and fifth-degree spherical-radial cubature
//! rules, plus the stability measure `sum |W_j|`.
//!
//! Point ordering is fixed so that runs are bit-reproducible:
//! UT emits center, +columns, -columns; CKF3 emits +columns, -columns;
//! CKF5 emits center, +axis, -axis, then the four pairwise blocks in
//! lexicographic `(a, b)` order with `a < b`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{matrix_sqrt_psd, GaussianBelief, StateVec};

/// Which point-set generator to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleKind {
    /// Unscented transform with scaling parameters `alpha` and `kappa`.
    Ut,
    /// Third-degree cubature rule, `2 n` equally weighted points.
    Ckf3,
    /// Fifth-degree cubature rule, `2 n^2 + 1` points.
    Ckf5,
}

/// A fully specified point-set rule for dimension `n_x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuleSpec {
    pub kind: RuleKind,
    /// UT spread parameter, `1e-4 <= alpha <= 1`. Ignored by the cubature rules.
    pub alpha: f64,
    /// UT scaling parameter. Ignored by the cubature rules.
    pub kappa: f64,
    pub n_x: usize,
}

impl RuleSpec {
    pub fn ut(n_x: usize, kappa: f64) -> Self {
        RuleSpec {
            kind: RuleKind::Ut,
            alpha: 1.0,
            kappa,
            n_x,
        }
    }

    pub fn ut_with_alpha(n_x: usize, alpha: f64, kappa: f64) -> Self {
        RuleSpec {
            kind: RuleKind::Ut,
            alpha,
            kappa,
            n_x,
        }
    }

    pub fn ckf3(n_x: usize) -> Self {
        RuleSpec {
            kind: RuleKind::Ckf3,
            alpha: 1.0,
            kappa: 0.0,
            n_x,
        }
    }

    pub fn ckf5(n_x: usize) -> Self {
        RuleSpec {
            kind: RuleKind::Ckf5,
            alpha: 1.0,
            kappa: 0.0,
            n_x,
        }
    }

    /// `lambda = alpha^2 (n_x + kappa) - n_x`.
    pub fn lambda(&self) -> f64 {
        let n = self.n_x as f64;
        self.alpha * self.alpha * (n + self.kappa) - n
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_x == 0 {
            return Err(Error::invalid("n_x", "dimension must be >= 1"));
        }
        if self.kind == RuleKind::Ut {
            if !(1e-4..=1.0).contains(&self.alpha) {
                return Err(Error::invalid("alpha", "must lie in [1e-4, 1]"));
            }
            if !self.kappa.is_finite() {
                return Err(Error::invalid("kappa", "must be finite"));
            }
            let npl = self.n_x as f64 + self.lambda();
            if npl.abs() < 1e-12 || npl < 0.0 {
                return Err(Error::DegenerateRule { n_plus_lambda: npl });
            }
        }
        Ok(())
    }

    /// Number of points the rule emits.
    pub fn point_count(&self) -> usize {
        match self.kind {
            RuleKind::Ut => 2 * self.n_x + 1,
            RuleKind::Ckf3 => 2 * self.n_x,
            RuleKind::Ckf5 => 2 * self.n_x * self.n_x + 1,
        }
    }

    pub fn weights(&self) -> Result<Vec<f64>> {
        self.validate()?;
        let n = self.n_x as f64;
        Ok(match self.kind {
            RuleKind::Ut => {
                let npl = n + self.lambda();
                let w0 = self.lambda() / npl;
                let wj = 1.0 / (2.0 * npl);
                let mut w = Vec::with_capacity(self.point_count());
                w.push(w0);
                w.extend(std::iter::repeat(wj).take(2 * self.n_x));
                w
            }
            RuleKind::Ckf3 => vec![1.0 / (2.0 * n); 2 * self.n_x],
            RuleKind::Ckf5 => {
                let n2 = (n + 2.0) * (n + 2.0);
                let w0 = 2.0 / (n + 2.0);
                let w_axis = (4.0 - n) / (2.0 * n2);
                let w_pair = 1.0 / n2;
                let pairs = 2 * self.n_x * (self.n_x - 1);
                let mut w = Vec::with_capacity(self.point_count());
                w.push(w0);
                w.extend(std::iter::repeat(w_axis).take(2 * self.n_x));
                w.extend(std::iter::repeat(w_pair).take(pairs));
                w
            }
        })
    }
}

/// Sigma/cubature points with signed weights drawn from one belief.
#[derive(Debug, Clone)]
pub struct WeightedPointSet {
    pub points: Vec<StateVec>,
    pub weights: Vec<f64>,
}

impl WeightedPointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `sum_j W_j X_j`.
    pub fn weighted_mean(&self) -> DVector<f64> {
        let dim = self.points[0].dim();
        let mut mean = DVector::zeros(dim);
        for (p, w) in self.points.iter().zip(&self.weights) {
            mean.axpy(*w, p.as_vector(), 1.0);
        }
        mean
    }

    /// `sum_j W_j (X_j - m)(X_j - m)^T`, accumulated symmetrically.
    pub fn weighted_scatter(&self, mean: &DVector<f64>) -> nalgebra::DMatrix<f64> {
        let dim = mean.len();
        let mut scatter = nalgebra::DMatrix::zeros(dim, dim);
        let mut d = DVector::zeros(dim);
        for (p, w) in self.points.iter().zip(&self.weights) {
            d.copy_from(p.as_vector());
            d -= mean;
            for i in 0..dim {
                let wd = w * d[i];
                for j in 0..=i {
                    scatter[(i, j)] += wd * d[j];
                }
            }
        }
        for i in 0..dim {
            for j in (i + 1)..dim {
                scatter[(i, j)] = scatter[(j, i)];
            }
        }
        scatter
    }
}

/// Draws the rule's weighted point set from a belief.
pub fn generate(rule: &RuleSpec, belief: &GaussianBelief) -> Result<WeightedPointSet> {
    rule.validate()?;
    if belief.dim() != rule.n_x {
        return Err(Error::DimensionMismatch {
            context: "generate",
            expected: rule.n_x,
            got: belief.dim(),
        });
    }
    let factor = matrix_sqrt_psd(belief.cov.as_matrix())?;
    let mean = belief.mean.as_vector();
    let n = rule.n_x;
    let weights = rule.weights()?;
    let mut points = Vec::with_capacity(rule.point_count());

    let push = |points: &mut Vec<StateVec>, v: DVector<f64>| -> Result<()> {
        points.push(StateVec::new(v)?);
        Ok(())
    };

    match rule.kind {
        RuleKind::Ut => {
            let gamma = (n as f64 + rule.lambda()).sqrt();
            push(&mut points, mean.clone())?;
            for j in 0..n {
                push(&mut points, mean + gamma * factor.column(j))?;
            }
            for j in 0..n {
                push(&mut points, mean - gamma * factor.column(j))?;
            }
        }
        RuleKind::Ckf3 => {
            let gamma = (n as f64).sqrt();
            for j in 0..n {
                push(&mut points, mean + gamma * factor.column(j))?;
            }
            for j in 0..n {
                push(&mut points, mean - gamma * factor.column(j))?;
            }
        }
        RuleKind::Ckf5 => {
            let gamma = (n as f64 + 2.0).sqrt();
            let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
            push(&mut points, mean.clone())?;
            for j in 0..n {
                push(&mut points, mean + gamma * factor.column(j))?;
            }
            for j in 0..n {
                push(&mut points, mean - gamma * factor.column(j))?;
            }
            // Pairwise directions (col_a +/- col_b)/sqrt(2), a < b lexicographic.
            let mut plus_dirs = Vec::with_capacity(n * (n - 1) / 2);
            let mut minus_dirs = Vec::with_capacity(n * (n - 1) / 2);
            for a in 0..n {
                for b in (a + 1)..n {
                    let ca = factor.column(a);
                    let cb = factor.column(b);
                    plus_dirs.push((ca + cb) * inv_sqrt2);
                    minus_dirs.push((ca - cb) * inv_sqrt2);
                }
            }
            for d in &plus_dirs {
                push(&mut points, mean + gamma * d)?;
            }
            for d in &plus_dirs {
                push(&mut points, mean - gamma * d)?;
            }
            for d in &minus_dirs {
                push(&mut points, mean + gamma * d)?;
            }
            for d in &minus_dirs {
                push(&mut points, mean - gamma * d)?;
            }
        }
    }

    debug_assert_eq!(points.len(), weights.len());
    Ok(WeightedPointSet { points, weights })
}

/// Stability measure `sum_j |W_j|` in closed form.
///
/// UT: `(n + |lambda|) / |n + lambda|`; CKF3: exactly 1;
/// CKF5: `(n |4 - n| + 2 n^2 + 4) / (n + 2)^2`.
pub fn stability_measure(rule: &RuleSpec) -> Result<f64> {
    rule.validate()?;
    let n = rule.n_x as f64;
    Ok(match rule.kind {
        RuleKind::Ut => {
            let lambda = rule.lambda();
            (n + lambda.abs()) / (n + lambda).abs()
        }
        RuleKind::Ckf3 => 1.0,
        RuleKind::Ckf5 => (n * (4.0 - n).abs() + 2.0 * n * n + 4.0) / ((n + 2.0) * (n + 2.0)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::CovMatrix;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;

    fn standard_belief(n: usize) -> GaussianBelief {
        GaussianBelief::initial(
            StateVec::new(DVector::zeros(n)).unwrap(),
            CovMatrix::identity(n),
        )
        .unwrap()
    }

    fn random_belief(n: usize, seed: u64) -> GaussianBelief {
        let mut state = seed.wrapping_mul(0x2545f4914f6cdd1d).wrapping_add(99);
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let a = DMatrix::from_fn(n, n, |_, _| next() * 3.0);
        let cov = &a * a.transpose() + DMatrix::identity(n, n) * 0.5;
        let mean = DVector::from_fn(n, |_, _| next() * 100.0);
        GaussianBelief::initial(
            StateVec::new(mean).unwrap(),
            CovMatrix::new(cov).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn ut_weights_kappa_zero() {
        let rule = RuleSpec::ut(5, 0.0);
        let pts = generate(&rule, &standard_belief(5)).unwrap();
        assert_eq!(pts.len(), 11);
        assert!(pts.weights[0].abs() < 1e-15);
        for w in &pts.weights[1..] {
            assert!((w - 0.1).abs() < 1e-15);
        }
    }

    #[test]
    fn ut_weights_kappa_minus_two() {
        let rule = RuleSpec::ut(5, -2.0);
        let w = rule.weights().unwrap();
        assert!((w[0] + 2.0 / 3.0).abs() < 1e-15);
        for wj in &w[1..] {
            assert!((wj - 1.0 / 6.0).abs() < 1e-15);
        }
    }

    #[test]
    fn ckf5_two_dimensional_weights() {
        let rule = RuleSpec::ckf5(2);
        let pts = generate(&rule, &standard_belief(2)).unwrap();
        assert_eq!(pts.len(), 9);
        assert!((pts.weights[0] - 0.5).abs() < 1e-15);
        for w in &pts.weights[1..] {
            assert!((w - 1.0 / 16.0).abs() < 1e-15);
        }
        let sum: f64 = pts.weights.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_rule_rejected() {
        let rule = RuleSpec::ut(3, -3.0);
        assert!(matches!(
            rule.validate(),
            Err(Error::DegenerateRule { .. })
        ));
    }

    #[test]
    fn point_counts() {
        assert_eq!(RuleSpec::ut(5, 0.0).point_count(), 11);
        assert_eq!(RuleSpec::ckf3(5).point_count(), 10);
        assert_eq!(RuleSpec::ckf5(5).point_count(), 51);
        assert_eq!(RuleSpec::ckf5(2).point_count(), 9);
    }

    fn all_rules(n: usize) -> Vec<RuleSpec> {
        vec![
            RuleSpec::ut(n, 0.0),
            RuleSpec::ut(n, 3.0 - n as f64),
            RuleSpec::ut(n, 2.0),
            RuleSpec::ckf3(n),
            RuleSpec::ckf5(n),
        ]
    }

    #[test]
    fn moments_reproduce_generating_belief() {
        for n in 2..=8usize {
            for rule in all_rules(n) {
                let belief = random_belief(n, 1000 + n as u64);
                let pts = generate(&rule, &belief).unwrap();
                let wsum: f64 = pts.weights.iter().sum();
                assert!((wsum - 1.0).abs() < 1e-12, "{rule:?} weight sum {wsum}");

                let mean = pts.weighted_mean();
                let mean_err = (&mean - belief.mean.as_vector()).norm()
                    / belief.mean.as_vector().norm().max(1.0);
                assert!(mean_err < 1e-10, "{rule:?} mean error {mean_err}");

                let scatter = pts.weighted_scatter(belief.mean.as_vector());
                let cov_err = (&scatter - belief.cov.as_matrix()).norm()
                    / belief.cov.as_matrix().norm();
                assert!(cov_err < 1e-9, "{rule:?} scatter error {cov_err}");
            }
        }
    }

    #[test]
    fn stability_closed_form_matches_brute_force() {
        for n in 2..=8usize {
            let mut rules = vec![RuleSpec::ckf3(n), RuleSpec::ckf5(n)];
            for kappa in -2..=10 {
                if (n as f64 + kappa as f64).abs() > 1e-9 && n as f64 + (kappa as f64) > 0.0 {
                    rules.push(RuleSpec::ut(n, kappa as f64));
                }
            }
            for rule in rules {
                let closed = stability_measure(&rule).unwrap();
                let pts = generate(&rule, &standard_belief(n)).unwrap();
                let brute: f64 = pts.weights.iter().map(|w| w.abs()).sum();
                assert!(
                    (closed - brute).abs() < 1e-12,
                    "{rule:?}: closed {closed} brute {brute}"
                );
            }
        }
    }

    #[test]
    fn stability_known_values() {
        assert!((stability_measure(&RuleSpec::ut(5, -2.0)).unwrap() - 7.0 / 3.0).abs() < 1e-12);
        for kappa in 0..=10 {
            let s = stability_measure(&RuleSpec::ut(5, kappa as f64)).unwrap();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert!((stability_measure(&RuleSpec::ckf5(4)).unwrap() - 1.0).abs() < 1e-12);
        assert!(
            (stability_measure(&RuleSpec::ckf5(5)).unwrap() - 59.0 / 49.0).abs() < 1e-12
        );
        assert!((stability_measure(&RuleSpec::ckf3(7)).unwrap() - 1.0).abs() < 1e-12);
    }

    /// Gaussian moment sums over a standard normal belief.
    fn monomial_sum(pts: &WeightedPointSet, powers: &[u32]) -> f64 {
        pts.points
            .iter()
            .zip(&pts.weights)
            .map(|(p, w)| {
                w * p
                    .iter()
                    .zip(powers)
                    .map(|(x, &k)| x.powi(k as i32))
                    .product::<f64>()
            })
            .sum()
    }

    #[test]
    fn degree_of_exactness_on_standard_normal() {
        for n in [2usize, 3] {
            let belief = standard_belief(n);
            for rule in all_rules(n) {
                let pts = generate(&rule, &belief).unwrap();
                // Degree <= 3: odd moments vanish, E[x_i^2] = 1.
                for i in 0..n {
                    let mut p1 = vec![0u32; n];
                    p1[i] = 1;
                    assert!(monomial_sum(&pts, &p1).abs() < 1e-8, "{rule:?} E[x]");
                    let mut p2 = vec![0u32; n];
                    p2[i] = 2;
                    assert!((monomial_sum(&pts, &p2) - 1.0).abs() < 1e-8, "{rule:?} E[x^2]");
                    let mut p3 = vec![0u32; n];
                    p3[i] = 3;
                    assert!(monomial_sum(&pts, &p3).abs() < 1e-8, "{rule:?} E[x^3]");
                }
                // Fifth-degree rule additionally matches the fourth moments.
                if rule.kind == RuleKind::Ckf5 {
                    for i in 0..n {
                        let mut p4 = vec![0u32; n];
                        p4[i] = 4;
                        assert!(
                            (monomial_sum(&pts, &p4) - 3.0).abs() < 1e-8,
                            "E[x^4] for {rule:?}"
                        );
                        for j in 0..n {
                            if i == j {
                                continue;
                            }
                            let mut p22 = vec![0u32; n];
                            p22[i] = 2;
                            p22[j] = 2;
                            assert!(
                                (monomial_sum(&pts, &p22) - 1.0).abs() < 1e-8,
                                "E[x^2 y^2] for {rule:?}"
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn ut_kappa_zero_matches_ckf3_moment_sums() {
        let belief = random_belief(5, 77);
        let ut = generate(&RuleSpec::ut(5, 0.0), &belief).unwrap();
        let ckf = generate(&RuleSpec::ckf3(5), &belief).unwrap();
        // Center point carries weight zero; remaining points coincide.
        let ut_mean = ut.weighted_mean();
        let ckf_mean = ckf.weighted_mean();
        assert_eq!(ut_mean, ckf_mean);
        let ut_scatter = ut.weighted_scatter(&ut_mean);
        let ckf_scatter = ckf.weighted_scatter(&ckf_mean);
        assert_eq!(ut_scatter, ckf_scatter);
    }

    proptest! {
        #[test]
        fn weight_sum_is_one(n in 2usize..=8, kappa in -2.0f64..10.0, alpha in 0.5f64..1.0) {
            for rule in [RuleSpec::ut_with_alpha(n, alpha, kappa), RuleSpec::ckf3(n), RuleSpec::ckf5(n)] {
                if rule.validate().is_ok() {
                    let w = rule.weights().unwrap();
                    let sum: f64 = w.iter().sum();
                    prop_assert!((sum - 1.0).abs() < 1e-12);
                    prop_assert_eq!(w.len(), rule.point_count());
                }
            }
        }
    }
}
