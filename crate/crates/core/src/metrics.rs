//! Quantitative evaluation: AUP scoring, factorization gap on exact
//! sources, the joint-KL / expected-cross-entropy identity check, and
//! per-step confidence profiles.
//!
//! All information quantities are in nats; AUP accuracies are percentages.

use thiserror::Error;

use crate::model::{DenoiserParams, ModelError};
use crate::trajectory::{student_input, teacher_input, Trajectory};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty parallelism curve")]
    EmptyCurve,
    #[error("curve accuracies must lie in [0, 100], got {0}")]
    BadAccuracy(f64),
    #[error("curve TPF must be >= 1, got {0}")]
    BadTpf(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Explicit probability table over sequences of length `k` from a small
/// alphabet, indexed with the first position as the most significant digit.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionTable {
    pub alphabet: usize,
    pub k: usize,
    pub probs: Vec<f64>,
}

impl DistributionTable {
    pub fn new(alphabet: usize, k: usize, probs: Vec<f64>) -> Self {
        assert_eq!(probs.len(), alphabet.pow(k as u32), "table size mismatch");
        let sum: f64 = probs.iter().sum();
        assert!((sum - 1.0).abs() <= 1e-9, "table sums to {sum}, not 1");
        assert!(probs.iter().all(|&p| p >= 0.0), "negative probability");
        DistributionTable { alphabet, k, probs }
    }

    /// Write the base-`alphabet` digits of `idx` into `seq` (first position
    /// most significant).
    pub fn decode_index(idx: usize, alphabet: usize, k: usize, seq: &mut [usize]) {
        let mut rest = idx;
        for pos in (0..k).rev() {
            seq[pos] = rest % alphabet;
            rest /= alphabet;
        }
    }

    pub fn encode_index(&self, seq: &[usize]) -> usize {
        seq.iter().fold(0, |acc, &s| acc * self.alphabet + s)
    }

    pub fn prob(&self, seq: &[usize]) -> f64 {
        self.probs[self.encode_index(seq)]
    }

    /// Single-position marginal.
    pub fn marginal(&self, pos: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.alphabet];
        let mut seq = vec![0usize; self.k];
        for (idx, &p) in self.probs.iter().enumerate() {
            Self::decode_index(idx, self.alphabet, self.k, &mut seq);
            out[seq[pos]] += p;
        }
        out
    }

    /// Product-of-marginals table over the same support.
    pub fn product_of_marginals(&self) -> DistributionTable {
        let marginals: Vec<Vec<f64>> = (0..self.k).map(|p| self.marginal(p)).collect();
        Self::from_marginals(self.alphabet, &marginals)
    }

    /// Fully factorized table from per-position marginals.
    pub fn from_marginals(alphabet: usize, marginals: &[Vec<f64>]) -> DistributionTable {
        let k = marginals.len();
        let total = alphabet.pow(k as u32);
        let mut probs = Vec::with_capacity(total);
        let mut seq = vec![0usize; k];
        for idx in 0..total {
            Self::decode_index(idx, alphabet, k, &mut seq);
            probs.push(seq.iter().enumerate().map(|(p, &s)| marginals[p][s]).product());
        }
        DistributionTable { alphabet, k, probs }
    }

    /// Marginal probability of a length-`m` prefix.
    pub fn prefix_prob(&self, prefix: &[usize]) -> f64 {
        let m = prefix.len();
        let tail = self.alphabet.pow((self.k - m) as u32);
        let base = prefix.iter().fold(0, |acc, &s| acc * self.alphabet + s) * tail;
        self.probs[base..base + tail].iter().sum()
    }

    /// Chain-rule conditional `p(x_m = v | prefix)`; uniform when the prefix
    /// has zero mass (it is then never visited).
    pub fn conditional(&self, prefix: &[usize], v: usize) -> f64 {
        let pp = self.prefix_prob(prefix);
        if pp == 0.0 {
            return 1.0 / self.alphabet as f64;
        }
        let mut ext = prefix.to_vec();
        ext.push(v);
        self.prefix_prob(&ext) / pp
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        self.probs.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum()
    }

    /// `KL(self || other)` in nats; `+inf` when `other` lacks support.
    pub fn kl(&self, other: &DistributionTable) -> f64 {
        assert_eq!(self.alphabet, other.alphabet);
        assert_eq!(self.k, other.k);
        let mut acc = 0.0;
        for (&p, &q) in self.probs.iter().zip(&other.probs) {
            if p == 0.0 {
                continue;
            }
            if q == 0.0 {
                return f64::INFINITY;
            }
            acc += p * (p / q).ln();
        }
        acc
    }
}

/// Factorization-gap report: the joint, its product-of-marginals reference,
/// and the KL divergence between them.
#[derive(Debug, Clone)]
pub struct GapReport {
    pub joint: DistributionTable,
    pub product: DistributionTable,
    pub gap_nats: f64,
}

/// KL between a joint and the product of its marginals (nats).
pub fn factorization_gap(joint: &DistributionTable) -> GapReport {
    let product = joint.product_of_marginals();
    let gap_nats = joint.kl(&product);
    GapReport { joint: joint.clone(), product, gap_nats }
}

/// Same gap through the entropy identity `sum_k H(marginal_k) - H(joint)`;
/// an independent route used to cross-check [`factorization_gap`].
pub fn gap_via_entropy_identity(joint: &DistributionTable) -> f64 {
    let marginal_entropy: f64 = (0..joint.k)
        .map(|p| {
            joint
                .marginal(p)
                .iter()
                .filter(|&&x| x > 0.0)
                .map(|&x| -x * x.ln())
                .sum::<f64>()
        })
        .sum();
    marginal_entropy - joint.entropy()
}

/// Sorted `(TPF, accuracy-percent)` points.
#[derive(Debug, Clone, PartialEq)]
pub struct ParallelismCurve {
    pub points: Vec<(f64, f64)>,
}

impl ParallelismCurve {
    /// Sort by TPF and merge duplicate-TPF points by maximum accuracy.
    pub fn from_points(mut points: Vec<(f64, f64)>) -> Result<Self, MetricsError> {
        if points.is_empty() {
            return Err(MetricsError::EmptyCurve);
        }
        for &(rho, y) in &points {
            if !(0.0..=100.0).contains(&y) {
                return Err(MetricsError::BadAccuracy(y));
            }
            if rho < 1.0 {
                return Err(MetricsError::BadTpf(rho));
            }
        }
        points.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(points.len());
        for (rho, y) in points {
            match merged.last_mut() {
                Some(last) if last.0 == rho => last.1 = last.1.max(y),
                _ => merged.push((rho, y)),
            }
        }
        Ok(ParallelismCurve { points: merged })
    }
}

/// Per-segment AUP contributions (the trapezoid terms).
#[derive(Debug, Clone)]
pub struct AupBreakdown {
    pub total: f64,
    /// `(rho_i, contribution)`; the first entry is the `rho_1 * y_1` base term.
    pub segments: Vec<(f64, f64)>,
    pub y_max: f64,
}

/// Weighted area under the accuracy-parallelism curve.
///
/// Points are truncated at the first accuracy below `y_1 - 5`; the weight
/// `W(y) = min(exp(-alpha (1 - y / y_max)), 1)` penalizes degradation
/// relative to the best retained accuracy.
pub fn aup(curve: &ParallelismCurve, alpha: f64) -> Result<f64, MetricsError> {
    aup_with_breakdown(curve, alpha).map(|b| b.total)
}

pub fn aup_with_breakdown(
    curve: &ParallelismCurve,
    alpha: f64,
) -> Result<AupBreakdown, MetricsError> {
    if curve.points.is_empty() {
        return Err(MetricsError::EmptyCurve);
    }
    let y1 = curve.points[0].1;
    let y_min = y1 - 5.0;
    let mut kept: Vec<(f64, f64)> = Vec::new();
    for &(rho, y) in &curve.points {
        if y < y_min {
            break; // truncate at the first violating point
        }
        kept.push((rho, y));
    }
    let y_max = kept.iter().map(|&(_, y)| y).fold(f64::NEG_INFINITY, f64::max);
    let w = |y: f64| -> f64 {
        if y_max <= 0.0 {
            return 1.0;
        }
        (-alpha * (1.0 - y / y_max)).exp().min(1.0)
    };
    let mut segments = vec![(kept[0].0, kept[0].0 * kept[0].1)];
    let mut total = kept[0].0 * kept[0].1;
    for i in 1..kept.len() {
        let (rp, yp) = kept[i - 1];
        let (ri, yi) = kept[i];
        let seg = (ri - rp) * (yi * w(yi) + yp * w(yp)) / 2.0;
        segments.push((ri, seg));
        total += seg;
    }
    Ok(AupBreakdown { total, segments, y_max })
}

/// Result of checking the joint-KL / expected-cross-entropy identity on one
/// enumerable instance.
#[derive(Debug, Clone)]
pub struct JointKlIdentityReport {
    /// `KL(teacher joint || product of student marginals)` by enumeration.
    pub lhs: f64,
    /// `sum_k E[CE_k] - H(teacher joint)` via chain-rule conditionals.
    pub rhs: f64,
    pub residual: f64,
}

/// Evaluate both sides of the identity on an exact teacher chain and a set
/// of per-position student marginals.
pub fn joint_kl_identity(
    teacher: &DistributionTable,
    student_marginals: &[Vec<f64>],
) -> JointKlIdentityReport {
    assert_eq!(student_marginals.len(), teacher.k);
    for m in student_marginals {
        assert_eq!(m.len(), teacher.alphabet);
    }
    // LHS: direct joint-table KL against the factorized student.
    let student = DistributionTable::from_marginals(teacher.alphabet, student_marginals);
    let lhs = teacher.kl(&student);

    // RHS: token-wise expected cross-entropies along the chain, minus the
    // teacher entropy. Computed from prefix marginals and conditionals, a
    // different summation route than the LHS.
    let mut ce_sum = 0.0;
    for pos in 0..teacher.k {
        let prefixes = teacher.alphabet.pow(pos as u32);
        let mut prefix = vec![0usize; pos];
        for pidx in 0..prefixes {
            DistributionTable::decode_index(pidx, teacher.alphabet, pos, &mut prefix);
            let pp = teacher.prefix_prob(&prefix);
            if pp == 0.0 {
                continue;
            }
            let mut ce = 0.0;
            for v in 0..teacher.alphabet {
                let cond = teacher.conditional(&prefix, v);
                if cond > 0.0 {
                    ce -= cond * student_marginals[pos][v].ln();
                }
            }
            ce_sum += pp * ce;
        }
    }
    let rhs = ce_sum - teacher.entropy();
    JointKlIdentityReport { lhs, rhs, residual: (lhs - rhs).abs() }
}

/// Mean confidence at the committed position per step index, replayed over
/// a set of trajectories.
///
/// With `privileged` set, the model sees the teacher input (prompt,
/// privileged answer, state); otherwise the plain student input.
pub fn confidence_profile(
    params: &DenoiserParams,
    trajs: &[Trajectory],
    privileged: bool,
) -> Result<Vec<f64>, MetricsError> {
    assert!(!trajs.is_empty(), "no trajectories");
    let max_t = trajs.iter().map(|t| t.steps.len()).max().unwrap();
    let mut sums = vec![0.0; max_t];
    let mut counts = vec![0usize; max_t];
    for traj in trajs {
        for s in 1..=traj.steps.len() {
            let state = traj.state_at(s);
            let input = if privileged {
                teacher_input(&traj.prompt, &traj.answer, &state)
            } else {
                student_input(&traj.prompt, &state)
            };
            let out = crate::model::denoise_forward(params, &input)?;
            let step = &traj.steps[s - 1];
            let row = input.response_offset() + step.pos;
            let (_, conf) = out.top_excluding(row, traj.mask_id);
            sums[s - 1] += conf;
            counts[s - 1] += 1;
        }
    }
    Ok(sums
        .into_iter()
        .zip(counts)
        .map(|(s, c)| if c == 0 { 0.0 } else { s / c as f64 })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(probs: Vec<f64>, alphabet: usize, k: usize) -> DistributionTable {
        DistributionTable::new(alphabet, k, probs)
    }

    #[test]
    fn independent_joint_has_zero_gap() {
        let t = table(vec![0.25; 4], 2, 2);
        assert!(factorization_gap(&t).gap_nats.abs() < 1e-12);
    }

    #[test]
    fn correlated_pair_gap_is_ln2() {
        let t = table(vec![0.5, 0.0, 0.0, 0.5], 2, 2);
        let g = factorization_gap(&t);
        assert!((g.gap_nats - std::f64::consts::LN_2).abs() < 1e-9);
        assert!((gap_via_entropy_identity(&t) - std::f64::consts::LN_2).abs() < 1e-9);
    }

    #[test]
    fn single_point_aup_is_rho_times_y() {
        let c = ParallelismCurve::from_points(vec![(1.0, 72.6)]).unwrap();
        assert_eq!(aup(&c, 3.0).unwrap(), 72.6);
    }

    #[test]
    fn flat_two_point_curve() {
        let c = ParallelismCurve::from_points(vec![(1.0, 50.0), (3.0, 50.0)]).unwrap();
        assert!((aup(&c, 3.0).unwrap() - 150.0).abs() < 1e-9);
    }

    #[test]
    fn weight_hand_value() {
        // W(70; y_max = 72.6, alpha = 3)
        let w = (-3.0_f64 * (1.0 - 70.0 / 72.6)).exp();
        assert!((w - 0.8981).abs() < 1e-4);
    }

    #[test]
    fn truncation_at_first_violation() {
        // Third point dips below y1 - 5; it and everything after drop out.
        let c = ParallelismCurve::from_points(vec![
            (1.0, 60.0),
            (2.0, 58.0),
            (3.0, 50.0),
            (4.0, 60.0),
        ])
        .unwrap();
        let b = aup_with_breakdown(&c, 3.0).unwrap();
        assert_eq!(b.segments.len(), 2);
    }

    #[test]
    fn appending_non_degrading_point_increases_aup() {
        let base = ParallelismCurve::from_points(vec![(1.0, 60.0), (2.0, 62.0)]).unwrap();
        let more =
            ParallelismCurve::from_points(vec![(1.0, 60.0), (2.0, 62.0), (3.0, 62.0)]).unwrap();
        assert!(aup(&more, 3.0).unwrap() > aup(&base, 3.0).unwrap());
    }

    #[test]
    fn duplicate_tpf_points_merge_by_max_accuracy() {
        let c = ParallelismCurve::from_points(vec![(1.0, 40.0), (1.0, 55.0), (2.0, 50.0)])
            .unwrap();
        assert_eq!(c.points, vec![(1.0, 55.0), (2.0, 50.0)]);
    }

    #[test]
    fn identity_uniform_student_closed_form() {
        let src = crate::tasks::MarkovSource::sticky_binary(0.7);
        let teacher = src.enumerate_joint(3).unwrap();
        let uniform = vec![vec![0.5, 0.5]; 3];
        let rep = joint_kl_identity(&teacher, &uniform);
        let closed = 3.0 * (2.0f64).ln() - teacher.entropy();
        assert!((rep.lhs - closed).abs() < 1e-10);
        assert!(rep.residual < 1e-10);
    }

    #[test]
    fn identity_matching_independent_teacher_is_zero() {
        let teacher = DistributionTable::from_marginals(2, &[vec![0.3, 0.7], vec![0.6, 0.4]]);
        let rep = joint_kl_identity(&teacher, &[vec![0.3, 0.7], vec![0.6, 0.4]]);
        assert!(rep.lhs.abs() < 1e-12 && rep.rhs.abs() < 1e-12);
    }
}
