//! Per-sensor, per-scan multipath data association: marginal association
//! probabilities under one-to-one frame constraints, computed by loopy belief
//! propagation on the two constraint-factor families, combined with the
//! mean-field messages from the detection prior and the Gaussian measurement
//! likelihoods.
//!
//! Row constraint: each (target, path) explains at most one measurement (or a
//! miss). Column constraint: each measurement is explained by exactly one
//! (target, path) or is clutter. Everything runs in the log domain; the
//! sparse table only stores gated pairs.

use crate::geometry::{forward_map, jacobian_state, wrap_angle, SiteConfig, SlantMeasurement};
use crate::ionosphere::{IonoState, PathTable};
use crate::kinematics::{gaussian_logpdf3, GaussianState};
use nalgebra::Matrix3;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

/// Log-domain floor applied to every weight entering the message products.
pub const LOG_FLOOR: f64 = -700.0;
const LOG_CAP: f64 = 700.0;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum AssociationError {
    #[error("feasible joint association events exceed the enumeration budget")]
    TooLarge,
}

/// Chi-square gate threshold for gate probability `p_g` and `dof` degrees of
/// freedom.
pub fn gate_threshold(p_g: f64, dof: usize) -> f64 {
    ChiSquared::new(dof as f64).expect("dof > 0").inverse_cdf(p_g)
}

#[derive(Debug, Clone)]
struct Row {
    /// Expected log detection probability under the visibility belief.
    log_pd: f64,
    /// Expected log miss probability.
    log_miss: f64,
    /// Gated measurements: `(measurement index, log-likelihood)`.
    entries: Vec<(usize, f64)>,
}

/// Sparse per-(target, path) association problem for one sensor and scan.
#[derive(Debug, Clone)]
pub struct AssociationProblem {
    pub n_targets: usize,
    pub n_paths: usize,
    pub n_meas: usize,
    /// Log clutter weight per unassigned measurement, `ln(1/V)`.
    pub clutter_logw: f64,
    rows: Vec<Row>,
}

impl AssociationProblem {
    pub fn empty(n_targets: usize, n_paths: usize, n_meas: usize, clutter_logw: f64) -> Self {
        Self {
            n_targets,
            n_paths,
            n_meas,
            clutter_logw: clutter_logw.max(LOG_FLOOR),
            rows: vec![
                Row { log_pd: LOG_FLOOR, log_miss: 0.0, entries: Vec::new() };
                n_targets * n_paths
            ],
        }
    }

    /// Fill one (target, path) row. Entries with non-finite log-likelihood
    /// are treated as gated out and dropped; finite ones are floored.
    pub fn set_row(
        &mut self,
        target: usize,
        path: usize,
        log_pd: f64,
        log_miss: f64,
        entries: Vec<(usize, f64)>,
    ) {
        let entries = entries
            .into_iter()
            .filter(|(_, x)| *x != f64::NEG_INFINITY && !x.is_nan())
            .map(|(j, x)| (j, x.max(LOG_FLOOR)))
            .collect();
        self.rows[target * self.n_paths + path] = Row {
            log_pd: log_pd.max(LOG_FLOOR),
            log_miss: log_miss.max(LOG_FLOOR),
            entries,
        };
    }

    fn row(&self, target: usize, path: usize) -> &Row {
        &self.rows[target * self.n_paths + path]
    }

    /// Columns as `(row index, entry position)` lists.
    fn column_index(&self) -> Vec<Vec<(usize, usize)>> {
        let mut cols = vec![Vec::new(); self.n_meas];
        for (ri, row) in self.rows.iter().enumerate() {
            for (ei, &(j, _)) in row.entries.iter().enumerate() {
                cols[j].push((ri, ei));
            }
        }
        cols
    }

    fn total_entries(&self) -> usize {
        self.rows.iter().map(|r| r.entries.len()).sum()
    }
}

/// Marginal association beliefs. Row sums (miss plus assignments) are exactly
/// one; column sums (assignments plus clutter) are held to one by the final
/// normalization.
#[derive(Debug, Clone)]
pub struct AssociationBelief {
    pub n_targets: usize,
    pub n_paths: usize,
    pub n_meas: usize,
    /// Per row, the gated `(measurement, probability)` pairs.
    assoc: Vec<Vec<(usize, f64)>>,
    /// Per row, the miss probability.
    miss: Vec<f64>,
    /// Per measurement, the clutter probability.
    pub clutter: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl AssociationBelief {
    pub fn miss_prob(&self, target: usize, path: usize) -> f64 {
        self.miss[target * self.n_paths + path]
    }

    pub fn prob(&self, target: usize, path: usize, meas: usize) -> f64 {
        self.assoc[target * self.n_paths + path]
            .iter()
            .find(|(j, _)| *j == meas)
            .map(|(_, p)| *p)
            .unwrap_or(0.0)
    }

    /// Gated assignments of one row.
    pub fn row(&self, target: usize, path: usize) -> &[(usize, f64)] {
        &self.assoc[target * self.n_paths + path]
    }

    /// Measurements whose clutter probability exceeds `threshold` in every
    /// interpretation, i.e. gated by no row at all.
    pub fn ungated_measurements(&self) -> Vec<usize> {
        let mut gated = vec![false; self.n_meas];
        for row in &self.assoc {
            for &(j, _) in row {
                gated[j] = true;
            }
        }
        (0..self.n_meas).filter(|&j| !gated[j]).collect()
    }
}

fn logsumexp(terms: &[f64]) -> f64 {
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// Log of `sum(exp(terms)) - exp(terms[skip])`, recomputed directly when the
/// excluded term carries almost all of the mass.
fn logsumexp_excluding(terms: &[f64], skip: usize) -> f64 {
    let m = terms
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != skip)
        .map(|(_, &t)| t)
        .fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = terms
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != skip)
        .map(|(_, &t)| (t - m).exp())
        .sum();
    m + sum.ln()
}

/// Loopy BP with damped log-domain ratio messages, alternating full sweeps of
/// row-constraint then column-constraint factors until the largest message
/// change drops below `tol` or `max_iters` is reached. Beliefs are assembled
/// from the final messages and normalized so both frame-constraint sums hold.
pub fn run_lbp(
    problem: &AssociationProblem,
    max_iters: usize,
    tol: f64,
    damping: f64,
) -> AssociationBelief {
    let n_rows = problem.rows.len();
    let cols = problem.column_index();
    let total = problem.total_entries();

    // messages aligned with the row-entry layout
    let mut offsets = Vec::with_capacity(n_rows + 1);
    offsets.push(0usize);
    for row in &problem.rows {
        offsets.push(offsets.last().unwrap() + row.entries.len());
    }
    let mut msg_row = vec![0.0f64; total]; // ln ratio of the row-factor message
    let mut msg_col = vec![0.0f64; total]; // ln ratio of the column-factor message

    let mut converged = false;
    let mut iterations = 0usize;
    let mut terms: Vec<f64> = Vec::new();
    for iter in 0..max_iters {
        iterations = iter + 1;
        let mut delta = 0.0f64;

        // row sweep: extrinsic product excludes the row factor itself
        for (ri, row) in problem.rows.iter().enumerate() {
            let base = offsets[ri];
            terms.clear();
            terms.push(row.log_miss);
            for (ei, &(_, x)) in row.entries.iter().enumerate() {
                terms.push(row.log_pd + x + msg_col[base + ei]);
            }
            for ei in 0..row.entries.len() {
                let new = (-logsumexp_excluding(&terms, ei + 1)).clamp(LOG_FLOOR, LOG_CAP);
                let mixed = damping * msg_row[base + ei] + (1.0 - damping) * new;
                delta = delta.max((mixed - msg_row[base + ei]).abs());
                msg_row[base + ei] = mixed;
            }
        }

        // column sweep
        for col in &cols {
            terms.clear();
            terms.push(problem.clutter_logw);
            for &(ri, ei) in col {
                let row = &problem.rows[ri];
                terms.push(row.log_pd + row.entries[ei].1 + msg_row[offsets[ri] + ei]);
            }
            for (pos, &(ri, ei)) in col.iter().enumerate() {
                let new = (-logsumexp_excluding(&terms, pos + 1)).clamp(LOG_FLOOR, LOG_CAP);
                let idx = offsets[ri] + ei;
                let mixed = damping * msg_col[idx] + (1.0 - damping) * new;
                delta = delta.max((mixed - msg_col[idx]).abs());
                msg_col[idx] = mixed;
            }
        }

        if delta < tol {
            converged = true;
            break;
        }
    }

    // belief assembly: per-row softmax over {miss} + gated entries
    let mut assoc: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n_rows);
    let mut miss = Vec::with_capacity(n_rows);
    for (ri, row) in problem.rows.iter().enumerate() {
        let base = offsets[ri];
        terms.clear();
        terms.push(row.log_miss);
        for (ei, &(_, x)) in row.entries.iter().enumerate() {
            terms.push(row.log_pd + x + msg_col[base + ei]);
        }
        let z = logsumexp(&terms);
        miss.push((terms[0] - z).exp());
        assoc.push(
            row.entries
                .iter()
                .enumerate()
                .map(|(ei, &(j, _))| (j, (terms[ei + 1] - z).exp()))
                .collect(),
        );
    }

    // final normalization: hold column sums to one with clutter as the slack;
    // columns pushed past one (only possible pre-convergence) are rescaled and
    // their rows re-normalized
    let mut clutter = vec![1.0f64; problem.n_meas];
    for _ in 0..20 {
        let mut col_sum = vec![0.0f64; problem.n_meas];
        for row in &assoc {
            for &(j, p) in row.iter() {
                col_sum[j] += p;
            }
        }
        let mut over = false;
        for j in 0..problem.n_meas {
            if col_sum[j] > 1.0 + 1e-12 {
                over = true;
                let scale = 1.0 / col_sum[j];
                for row in assoc.iter_mut() {
                    for e in row.iter_mut() {
                        if e.0 == j {
                            e.1 *= scale;
                        }
                    }
                }
            } else {
                clutter[j] = (1.0 - col_sum[j]).max(0.0);
            }
        }
        if !over {
            break;
        }
        for (ri, row) in assoc.iter_mut().enumerate() {
            let s: f64 = miss[ri] + row.iter().map(|&(_, p)| p).sum::<f64>();
            let scale = 1.0 / s;
            miss[ri] *= scale;
            for e in row.iter_mut() {
                e.1 *= scale;
            }
        }
    }

    AssociationBelief {
        n_targets: problem.n_targets,
        n_paths: problem.n_paths,
        n_meas: problem.n_meas,
        assoc,
        miss,
        clutter,
        converged,
        iterations,
    }
}

/// Exact marginals by enumerating every feasible joint association event,
/// weighting each by the problem's detection prior, likelihood table, and
/// per-clutter weight. The test oracle for [`run_lbp`].
pub fn brute_force_marginals(
    problem: &AssociationProblem,
) -> Result<AssociationBelief, AssociationError> {
    const MAX_EVENTS: usize = 1_000_000;

    #[derive(Clone, Copy)]
    struct Lse {
        max: f64,
        sum: f64,
    }
    impl Lse {
        fn new() -> Self {
            Self { max: f64::NEG_INFINITY, sum: 0.0 }
        }
        fn add(&mut self, lw: f64) {
            if lw == f64::NEG_INFINITY {
                return;
            }
            if lw <= self.max {
                self.sum += (lw - self.max).exp();
            } else {
                self.sum = self.sum * (self.max - lw).exp() + 1.0;
                self.max = lw;
            }
        }
        fn value(&self) -> f64 {
            if self.sum == 0.0 {
                f64::NEG_INFINITY
            } else {
                self.max + self.sum.ln()
            }
        }
    }

    let n_rows = problem.rows.len();
    let mut total = Lse::new();
    let mut per_entry: Vec<Vec<Lse>> = problem
        .rows
        .iter()
        .map(|r| vec![Lse::new(); r.entries.len()])
        .collect();
    let mut per_miss = vec![Lse::new(); n_rows];
    let mut per_clutter = vec![Lse::new(); problem.n_meas];

    // choice[ri]: usize::MAX = miss, otherwise entry index
    let mut choice = vec![usize::MAX; n_rows];
    let mut taken = vec![false; problem.n_meas];
    let mut events = 0usize;

    fn recur(
        problem: &AssociationProblem,
        ri: usize,
        logw: f64,
        n_assigned: usize,
        choice: &mut [usize],
        taken: &mut [bool],
        events: &mut usize,
        total: &mut Lse,
        per_entry: &mut [Vec<Lse>],
        per_miss: &mut [Lse],
        per_clutter: &mut [Lse],
    ) -> Result<(), AssociationError> {
        if ri == problem.rows.len() {
            *events += 1;
            if *events > MAX_EVENTS {
                return Err(AssociationError::TooLarge);
            }
            let n_clutter = problem.n_meas - n_assigned;
            let lw = logw + n_clutter as f64 * problem.clutter_logw;
            total.add(lw);
            for (r, &c) in choice.iter().enumerate() {
                if c == usize::MAX {
                    per_miss[r].add(lw);
                } else {
                    per_entry[r][c].add(lw);
                }
            }
            for (j, &t) in taken.iter().enumerate() {
                if !t {
                    per_clutter[j].add(lw);
                }
            }
            return Ok(());
        }
        let row = &problem.rows[ri];
        // miss
        choice[ri] = usize::MAX;
        recur(
            problem,
            ri + 1,
            logw + row.log_miss,
            n_assigned,
            choice,
            taken,
            events,
            total,
            per_entry,
            per_miss,
            per_clutter,
        )?;
        // assignments
        for (ei, &(j, x)) in row.entries.iter().enumerate() {
            if taken[j] {
                continue;
            }
            taken[j] = true;
            choice[ri] = ei;
            recur(
                problem,
                ri + 1,
                logw + row.log_pd + x,
                n_assigned + 1,
                choice,
                taken,
                events,
                total,
                per_entry,
                per_miss,
                per_clutter,
            )?;
            taken[j] = false;
        }
        choice[ri] = usize::MAX;
        Ok(())
    }

    recur(
        problem,
        0,
        0.0,
        0,
        &mut choice,
        &mut taken,
        &mut events,
        &mut total,
        &mut per_entry,
        &mut per_miss,
        &mut per_clutter,
    )?;

    let z = total.value();
    let assoc: Vec<Vec<(usize, f64)>> = problem
        .rows
        .iter()
        .enumerate()
        .map(|(ri, row)| {
            row.entries
                .iter()
                .enumerate()
                .map(|(ei, &(j, _))| (j, (per_entry[ri][ei].value() - z).exp()))
                .collect()
        })
        .collect();
    let miss: Vec<f64> = per_miss.iter().map(|l| (l.value() - z).exp()).collect();
    let clutter: Vec<f64> = per_clutter.iter().map(|l| (l.value() - z).exp()).collect();

    Ok(AssociationBelief {
        n_targets: problem.n_targets,
        n_paths: problem.n_paths,
        n_meas: problem.n_meas,
        assoc,
        miss,
        clutter,
        converged: true,
        iterations: 0,
    })
}

/// Prior inputs of one track row when building a problem.
#[derive(Debug, Clone, Copy)]
pub struct TrackPrior {
    pub state: GaussianState,
    pub p_visible: f64,
}

/// Assemble the association problem of one (sensor, scan): gate every
/// (track, path) against the frame's measurements with the chi-square
/// ellipsoid on `R + J_x P J_x^T + J_u Sigma J_u^T`, fill the log-likelihood
/// table, and attach the visibility-expected detection weights.
#[allow(clippy::too_many_arguments)]
pub fn build_problem(
    tracks: &[TrackPrior],
    iono: &IonoState,
    table: &PathTable,
    site: &SiteConfig,
    meas: &[SlantMeasurement],
    r_paths: &[Matrix3<f64>],
    p_d: &[f64],
    epsilon: f64,
    gate_maha2: f64,
    clutter_logw: f64,
) -> AssociationProblem {
    let n_paths = table.n_paths();
    let mut problem = AssociationProblem::empty(tracks.len(), n_paths, meas.len(), clutter_logw);
    for (i, track) in tracks.iter().enumerate() {
        let pe = track.p_visible.clamp(0.0, 1.0);
        for path in 0..n_paths {
            let log_pd = pe * p_d[path].max(1e-300).ln() + (1.0 - pe) * epsilon.ln();
            let log_miss =
                pe * (1.0 - p_d[path]).max(1e-300).ln() + (1.0 - pe) * (1.0 - epsilon).ln();
            let heights = table.assemble(&iono.mean, path);
            let Ok(predicted) = forward_map(&track.state.mean, site, &heights) else {
                problem.set_row(i, path, log_pd, log_miss, Vec::new());
                continue;
            };
            let Ok(jx) = jacobian_state(&track.state.mean, site, &heights) else {
                problem.set_row(i, path, log_pd, log_miss, Vec::new());
                continue;
            };
            let ju = crate::geometry::jacobian_heights(&track.state.mean, site, &heights)
                .expect("same preconditions as forward_map")
                * table.selection(path);
            let s = r_paths[path]
                + jx * track.state.cov * jx.transpose()
                + ju * iono.cov * ju.transpose();
            let Some(chol) = s.cholesky() else {
                problem.set_row(i, path, log_pd, log_miss, Vec::new());
                continue;
            };
            let mut entries = Vec::new();
            for (j, y) in meas.iter().enumerate() {
                let mut d = y.as_vector() - predicted.as_vector();
                d[2] = wrap_angle(d[2]);
                let maha2 = d.dot(&chol.solve(&d));
                if maha2 <= gate_maha2 {
                    if let Ok(ll) = gaussian_logpdf3(&d, &s) {
                        entries.push((j, ll));
                    }
                }
            }
            problem.set_row(i, path, log_pd, log_miss, entries);
        }
    }
    problem
}

/// A per-(target, path) synthetic measurement: the association-weighted
/// combination of gated measurements with covariance inflated by the
/// detection mass.
#[derive(Debug, Clone, Copy)]
pub struct SyntheticMeasurement {
    pub target: usize,
    pub path: usize,
    pub y: SlantMeasurement,
    pub r: Matrix3<f64>,
    /// `1 - miss probability` of the row.
    pub detect_mass: f64,
}

/// Collapse the association marginals into one pseudo-measurement per
/// (target, path): `y = sum_j a_j y_j / (1 - a_miss)`, `R = R_row / (1 -
/// a_miss)`. Rows whose detection mass is below `mass_floor` are omitted.
/// Azimuths are combined on the circle around the strongest assignment.
pub fn synthetic_measurements<F>(
    belief: &AssociationBelief,
    meas: &[SlantMeasurement],
    r_of_row: F,
    mass_floor: f64,
) -> Vec<SyntheticMeasurement>
where
    F: Fn(usize, usize) -> Matrix3<f64>,
{
    let mut out = Vec::new();
    for target in 0..belief.n_targets {
        for path in 0..belief.n_paths {
            let row = belief.row(target, path);
            if row.is_empty() {
                continue;
            }
            let mass = (1.0 - belief.miss_prob(target, path)).max(0.0);
            if mass <= mass_floor {
                continue;
            }
            let reference = row
                .iter()
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .map(|&(j, _)| meas[j].a)
                .unwrap();
            let mut r_acc = 0.0;
            let mut rdot_acc = 0.0;
            let mut a_acc = 0.0;
            for &(j, p) in row {
                let w = p / mass;
                r_acc += w * meas[j].r;
                rdot_acc += w * meas[j].rdot;
                a_acc += w * wrap_angle(meas[j].a - reference);
            }
            out.push(SyntheticMeasurement {
                target,
                path,
                y: SlantMeasurement::new(r_acc, rdot_acc, wrap_angle(reference + a_acc)),
                r: r_of_row(target, path) / mass,
                detect_mass: mass,
            });
        }
    }
    out
}
