//! Belief over per-target visibility (existence): pseudo-likelihoods built
//! from association miss probabilities, HMM forward-backward smoothing over
//! the window, and the confirm/delete lifecycle rule.

/// Unnormalized emission weights for the two visibility hypotheses at one
/// scan, `(xi(e=0), xi(e=1))`.
pub type PseudoLikelihood = (f64, f64);

/// Smoothed visibility belief for one scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VisibilityBelief {
    /// Smoothed probability of being visible.
    pub p_visible: f64,
    /// Emission weights that produced it.
    pub xi: PseudoLikelihood,
}

/// Column-stochastic 2x2 transition matrix: `t[to][from]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VisibilityTransition(pub [[f64; 2]; 2]);

impl VisibilityTransition {
    /// Symmetric chain with stay probability `p_stay` for both states.
    pub fn symmetric(p_stay: f64) -> Self {
        Self([[p_stay, 1.0 - p_stay], [1.0 - p_stay, p_stay]])
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        [
            self.0[0][0] * p[0] + self.0[0][1] * p[1],
            self.0[1][0] * p[0] + self.0[1][1] * p[1],
        ]
    }

    /// Backward operator: b_prev[i] = sum_j T[j][i] b[j].
    fn apply_transposed(&self, b: [f64; 2]) -> [f64; 2] {
        [
            self.0[0][0] * b[0] + self.0[1][0] * b[1],
            self.0[0][1] * b[0] + self.0[1][1] * b[1],
        ]
    }
}

/// One (sensor, path) contribution to the pseudo-likelihood: association miss
/// probability and the visible-state detection probability of that path.
#[derive(Debug, Clone, Copy)]
pub struct PathMiss {
    pub miss_prob: f64,
    pub p_d: f64,
}

/// Emission weights of the visibility HMM from the association marginals:
/// `ln xi(e) = sum over paths of (1-miss) ln Pd(e) + miss ln(1-Pd(e))`, with
/// `Pd(1) = p_d` per path and `Pd(0) = epsilon`.
pub fn pseudo_likelihood(paths: &[PathMiss], epsilon: f64) -> PseudoLikelihood {
    let mut log_xi0 = 0.0;
    let mut log_xi1 = 0.0;
    for p in paths {
        let det = 1.0 - p.miss_prob;
        log_xi1 += det * p.p_d.ln() + p.miss_prob * (1.0 - p.p_d).ln();
        log_xi0 += det * epsilon.ln() + p.miss_prob * (1.0 - epsilon).ln();
    }
    // normalize in log domain before exponentiating so many-path products
    // cannot underflow
    let m = log_xi0.max(log_xi1);
    ((log_xi0 - m).exp(), (log_xi1 - m).exp())
}

/// HMM smoothed marginals `p(e_k = 1)` with `xi` as unnormalized emission
/// weights, initial distribution `pi = [p(e=0), p(e=1)]`, and transition `t`.
/// `pi` applies at the first scan (before its emission).
pub fn forward_backward(
    pi: [f64; 2],
    t: &VisibilityTransition,
    xi: &[PseudoLikelihood],
) -> Vec<VisibilityBelief> {
    let n = xi.len();
    if n == 0 {
        return Vec::new();
    }
    let mut alpha = vec![[0.0f64; 2]; n];
    let mut prior = pi;
    for (k, &(x0, x1)) in xi.iter().enumerate() {
        if k > 0 {
            prior = t.apply(alpha[k - 1]);
        }
        let a = [prior[0] * x0, prior[1] * x1];
        let z = a[0] + a[1];
        alpha[k] = [a[0] / z, a[1] / z];
    }
    let mut beta = vec![[1.0f64; 2]; n];
    for k in (0..n - 1).rev() {
        let (x0, x1) = xi[k + 1];
        let weighted = [beta[k + 1][0] * x0, beta[k + 1][1] * x1];
        let b = t.apply_transposed(weighted);
        let z = b[0] + b[1];
        beta[k] = [b[0] / z, b[1] / z];
    }
    (0..n)
        .map(|k| {
            let g = [alpha[k][0] * beta[k][0], alpha[k][1] * beta[k][1]];
            let z = g[0] + g[1];
            VisibilityBelief { p_visible: g[1] / z, xi: xi[k] }
        })
        .collect()
}

/// Lifecycle decision from a per-scan visibility-probability sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LifecycleDecision {
    /// First scan index with p(e=1) > delta_c.
    pub confirm_at: Option<usize>,
    /// Scan index at which the third successive p(e=1) < delta_c occurs.
    pub delete_at: Option<usize>,
}

/// Confirm when the visibility probability exceeds `delta_c`; delete when it
/// stays below `delta_c` for three successive scans.
pub fn manage_tracks(p_visible: &[f64], delta_c: f64) -> LifecycleDecision {
    let mut decision = LifecycleDecision::default();
    let mut below_streak = 0usize;
    for (k, &p) in p_visible.iter().enumerate() {
        if p > delta_c && decision.confirm_at.is_none() {
            decision.confirm_at = Some(k);
        }
        if p < delta_c {
            below_streak += 1;
            if below_streak >= 3 && decision.delete_at.is_none() {
                decision.delete_at = Some(k);
            }
        } else {
            below_streak = 0;
        }
    }
    decision
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eight_paths(miss: f64, p_d: f64) -> Vec<PathMiss> {
        vec![PathMiss { miss_prob: miss, p_d }; 8]
    }

    #[test]
    fn pseudo_likelihood_all_missed() {
        let (xi0, xi1) = pseudo_likelihood(&eight_paths(1.0, 0.4), 0.1);
        // ratio equals 0.6^8 / 0.9^8 regardless of the common normalization
        let expect = 0.016796159999999994 / 0.4304672100000001;
        assert!((xi1 / xi0 - expect).abs() < 1e-12);
        assert!(xi0 > 0.0 && xi1 > 0.0);
    }

    #[test]
    fn pseudo_likelihood_indistinguishable_when_pd_equals_epsilon() {
        let (xi0, xi1) = pseudo_likelihood(&eight_paths(0.37, 0.1), 0.1);
        assert!((xi0 - xi1).abs() < 1e-12);
    }

    #[test]
    fn pseudo_likelihood_all_detected_ratio() {
        let (xi0, xi1) = pseudo_likelihood(&eight_paths(0.0, 0.4), 0.1);
        assert!((xi1 / xi0 - 4.0_f64.powi(8)).abs() < 1e-6 * 4.0_f64.powi(8));
    }

    #[test]
    fn pseudo_likelihood_monotone_in_detection_mass() {
        let p_d = 0.4;
        let eps = 0.1;
        let mut last_ratio = 0.0;
        for miss in [0.9, 0.6, 0.3, 0.0] {
            let (xi0, xi1) = pseudo_likelihood(&eight_paths(miss, p_d), eps);
            let ratio = xi1 / xi0;
            assert!(ratio > last_ratio, "xi(1)/xi(0) must grow as misses drop");
            last_ratio = ratio;
        }
    }

    #[test]
    fn forward_backward_uninformative_emissions_keep_stationary_prior() {
        let t = VisibilityTransition::symmetric(0.85);
        let xi = vec![(1.0, 1.0); 6];
        let beliefs = forward_backward([0.5, 0.5], &t, &xi);
        for b in beliefs {
            assert!((b.p_visible - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_backward_single_scan_is_prior_times_emission() {
        let t = VisibilityTransition::symmetric(0.85);
        let beliefs = forward_backward([0.3, 0.7], &t, &[(0.2, 0.9)]);
        let expect = 0.7 * 0.9 / (0.3 * 0.2 + 0.7 * 0.9);
        assert!((beliefs[0].p_visible - expect).abs() < 1e-12);
    }

    /// Exhaustive enumeration over all 2^n visibility paths.
    fn enumerate_marginals(
        pi: [f64; 2],
        t: &VisibilityTransition,
        xi: &[PseudoLikelihood],
    ) -> Vec<f64> {
        let n = xi.len();
        let mut marg = vec![0.0f64; n];
        let mut total = 0.0f64;
        for mask in 0u32..(1 << n) {
            let mut w = 1.0;
            let mut prev = usize::MAX;
            for (k, x) in xi.iter().enumerate() {
                let e = ((mask >> k) & 1) as usize;
                w *= if k == 0 { pi[e] } else { t.0[e][prev] };
                w *= if e == 1 { x.1 } else { x.0 };
                prev = e;
            }
            total += w;
            for k in 0..n {
                if (mask >> k) & 1 == 1 {
                    marg[k] += w;
                }
            }
        }
        marg.iter().map(|m| m / total).collect()
    }

    #[test]
    fn forward_backward_matches_enumeration_three_scans() {
        let t = VisibilityTransition::symmetric(0.85);
        let xi = vec![(0.43, 0.017), (0.1, 0.55), (0.3, 0.31)];
        let beliefs = forward_backward([0.4, 0.6], &t, &xi);
        let oracle = enumerate_marginals([0.4, 0.6], &t, &xi);
        for (b, o) in beliefs.iter().zip(&oracle) {
            assert!((b.p_visible - o).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_backward_matches_enumeration_up_to_ten_scans() {
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        let mut rng = StdRng::seed_from_u64(41);
        for _ in 0..50 {
            let n = rng.gen_range(1..=10);
            let t = VisibilityTransition::symmetric(rng.gen_range(0.55..0.95));
            let p1 = rng.gen_range(0.05..0.95);
            let pi = [1.0 - p1, p1];
            let xi: Vec<_> = (0..n)
                .map(|_| (rng.gen_range(0.01..1.0), rng.gen_range(0.01..1.0)))
                .collect();
            let beliefs = forward_backward(pi, &t, &xi);
            let oracle = enumerate_marginals(pi, &t, &xi);
            for (b, o) in beliefs.iter().zip(&oracle) {
                assert!((b.p_visible - o).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forward_backward_invariant_to_emission_scaling() {
        let t = VisibilityTransition::symmetric(0.85);
        let xi = vec![(0.43, 0.017), (0.1, 0.55), (0.3, 0.31), (0.9, 0.2)];
        let scaled: Vec<_> = xi
            .iter()
            .enumerate()
            .map(|(k, &(a, b))| {
                let c = 10.0_f64.powi(k as i32 % 3);
                (a * c, b * c)
            })
            .collect();
        let base = forward_backward([0.4, 0.6], &t, &xi);
        let after = forward_backward([0.4, 0.6], &t, &scaled);
        for (b, a) in base.iter().zip(&after) {
            assert!((b.p_visible - a.p_visible).abs() < 1e-12);
        }
    }

    #[test]
    fn manage_tracks_confirmed_never_deleted() {
        let d = manage_tracks(&[0.95; 10], 0.9);
        assert_eq!(d.confirm_at, Some(0));
        assert_eq!(d.delete_at, None);
    }

    #[test]
    fn manage_tracks_three_successive_below() {
        let d = manage_tracks(&[0.95, 0.8, 0.8, 0.8], 0.9);
        assert_eq!(d.confirm_at, Some(0));
        assert_eq!(d.delete_at, Some(3));
    }

    #[test]
    fn manage_tracks_broken_streak_survives() {
        let d = manage_tracks(&[0.8, 0.95, 0.8, 0.8], 0.9);
        assert_eq!(d.delete_at, None);
        assert_eq!(d.confirm_at, Some(1));
    }
}
