//! Temporal-aware partition and the dual-loss distillation loop, plus the
//! look-ahead window calibration from the student confidence decay curve.

use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::model::{
    denoise_forward, forward_on_tape, Adam, DenoiserOutput, DenoiserParams, ModelError,
};
use crate::trajectory::{student_input, teacher_input, Trajectory};
use crate::Tape;

/// Probability floor applied before logarithms in the KL term.
pub const KL_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum DistillError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("near position {0} has no trajectory label")]
    MissingLabel(usize),
    #[error("non-finite loss on trajectory {traj}")]
    NonFiniteLoss { traj: usize },
    #[error("no trajectories to distill from")]
    NoTrajectories,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistillMode {
    Quality,
    Speed,
    Custom,
}

impl FromStr for DistillMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "quality" => Ok(DistillMode::Quality),
            "speed" => Ok(DistillMode::Speed),
            "custom" => Ok(DistillMode::Custom),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

impl std::fmt::Display for DistillMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DistillMode::Quality => write!(f, "quality"),
            DistillMode::Speed => write!(f, "speed"),
            DistillMode::Custom => write!(f, "custom"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DistillConfig {
    /// Look-ahead window separating near from distant supervision.
    pub delta: usize,
    /// Weight of the distant KL term.
    pub lambda: f64,
    /// Weight of the near CE term; zero gives the KL-only ablation.
    pub near_weight: f64,
    /// Distillation temperature.
    pub tau: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub mode: DistillMode,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            delta: 4,
            lambda: 1.0,
            near_weight: 1.0,
            tau: 1.0,
            lr: 3e-4,
            epochs: 2,
            batch: 8,
            mode: DistillMode::Custom,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) {
        assert!(self.delta >= 1, "delta must be at least 1");
        assert!(self.lambda >= 0.0, "lambda must be non-negative");
        assert!(self.near_weight >= 0.0, "near weight must be non-negative");
        assert!(self.tau > 0.0, "tau must be positive");
    }
}

/// Near/distant split of the masked positions at one trajectory step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub near: Vec<usize>,
    pub distant: Vec<usize>,
}

/// Split the positions masked at step `s` by whether they are revealed
/// within the next `delta` steps. Beyond the final step everything counts
/// as unmasked, so for `s + delta > T` the remaining positions are near.
pub fn partition_masked(traj: &Trajectory, s: usize, delta: usize) -> Partition {
    let t = traj.len();
    assert!((1..=t).contains(&s), "step {s} out of 1..={t}");
    let mut near = Vec::new();
    let mut distant = Vec::new();
    for step in &traj.steps[s - 1..] {
        // Masked at s (reveal step >= s); near iff revealed before s + delta.
        if step.s < s + delta {
            near.push(step.pos);
        } else {
            distant.push(step.pos);
        }
    }
    near.sort_unstable();
    distant.sort_unstable();
    Partition { near, distant }
}

/// Trajectory labels for the near positions of a partition.
pub fn near_labels(traj: &Trajectory, partition: &Partition) -> Vec<(usize, u32)> {
    partition
        .near
        .iter()
        .map(|&pos| {
            let step = traj.steps.iter().find(|st| st.pos == pos).expect("revealed position");
            (pos, step.token)
        })
        .collect()
}

/// Mean hard cross-entropy over the near positions; zero when empty.
pub fn near_loss(
    student_out: &DenoiserOutput,
    response_offset: usize,
    partition: &Partition,
    labels: &[(usize, u32)],
) -> Result<f64, DistillError> {
    if partition.near.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for &pos in &partition.near {
        let &(_, label) = labels
            .iter()
            .find(|(p, _)| *p == pos)
            .ok_or(DistillError::MissingLabel(pos))?;
        let p = student_out.probs(response_offset + pos)[label as usize].max(KL_FLOOR);
        total -= p.ln();
    }
    Ok(total / partition.near.len() as f64)
}

/// Mean temperature-scaled KL over the distant positions; zero when empty.
///
/// Both outputs are softened by `tau` and the divergence is scaled by
/// `tau^2`, teacher distribution first.
pub fn distant_loss(
    teacher_out: &DenoiserOutput,
    student_out: &DenoiserOutput,
    teacher_offset: usize,
    student_offset: usize,
    partition: &Partition,
    tau: f64,
) -> f64 {
    if partition.distant.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for &pos in &partition.distant {
        let pt = teacher_out.probs_softened(teacher_offset + pos, tau);
        let ps = student_out.probs_softened(student_offset + pos, tau);
        let kl: f64 = pt
            .iter()
            .zip(&ps)
            .map(|(&t, &s)| {
                if t <= 0.0 {
                    0.0
                } else {
                    t * (t.max(KL_FLOOR).ln() - s.max(KL_FLOOR).ln())
                }
            })
            .sum();
        total += tau * tau * kl;
    }
    total / partition.distant.len() as f64
}

/// One logged training step of the TAD loop.
#[derive(Debug, Clone, Copy)]
pub struct LossRow {
    pub step: usize,
    pub near: f64,
    pub distant: f64,
    pub total: f64,
}

/// Build the taped student loss for one `(trajectory, s)` sample.
///
/// Returns the tape variable whose gradient equals the gradient of
/// `L_near + lambda * L_distant` (the teacher-entropy constant of the KL is
/// dropped on the tape), plus the parameter leaves and the exact reported
/// loss components.
pub fn sample_loss_on_tape(
    tape: &mut Tape,
    student: &DenoiserParams,
    teacher: &DenoiserParams,
    traj: &Trajectory,
    s: usize,
    config: &DistillConfig,
) -> Result<(crate::Var, Vec<crate::Var>, f64, f64), DistillError> {
    let state = traj.state_at(s);
    let s_input = student_input(&traj.prompt, &state);
    let t_input = teacher_input(&traj.prompt, &traj.answer, &state);
    let s_offset = s_input.response_offset();
    let t_offset = t_input.response_offset();

    let partition = partition_masked(traj, s, config.delta);
    let labels = near_labels(traj, &partition);

    let fwd = forward_on_tape(tape, student, &s_input.full_sequence())?;
    let student_out = DenoiserOutput { logits: tape.value(fwd.logits).clone() };

    // Near: mean negative log-likelihood of the trajectory labels.
    let mut loss_var = None;
    let near_value;
    if partition.near.is_empty() {
        near_value = 0.0;
    } else {
        let lsm = tape.log_softmax_rows(fwd.logits);
        let coords: Vec<(usize, usize)> = labels
            .iter()
            .map(|&(pos, label)| (s_offset + pos, label as usize))
            .collect();
        let picked = tape.gather_elems(lsm, &coords);
        let mean = tape.mean(picked);
        near_value = -tape.value(mean).item();
        if config.near_weight > 0.0 {
            loss_var = Some(tape.scale(mean, -config.near_weight));
        }
    }

    // Distant: temperature-scaled KL against the privileged teacher.
    let mut distant_value = 0.0;
    if !partition.distant.is_empty() && config.lambda > 0.0 {
        let teacher_out = denoise_forward(teacher, &t_input)?;
        distant_value = distant_loss(
            &teacher_out,
            &student_out,
            t_offset,
            s_offset,
            &partition,
            config.tau,
        );
        let n = partition.distant.len();
        let rows: Vec<usize> = partition.distant.iter().map(|&p| s_offset + p).collect();
        let pt: Vec<f64> = partition
            .distant
            .iter()
            .flat_map(|&p| teacher_out.probs_softened(t_offset + p, config.tau))
            .collect();
        let scaled = tape.scale(fwd.logits, 1.0 / config.tau);
        let lsm_t = tape.log_softmax_rows(scaled);
        let picked = tape.gather_rows(lsm_t, &rows);
        let pt_leaf = tape.leaf(crate::Tensor::matrix(n, student.hp.vocab_size, pt));
        let prod = tape.mul(pt_leaf, picked);
        let ce = tape.sum(prod);
        // d/dtheta of tau^2 * mean KL = d/dtheta of -(tau^2 / n) * sum(pT * log pS)
        let grad_term = tape.scale(ce, -config.lambda * config.tau * config.tau / n as f64);
        loss_var = Some(match loss_var {
            Some(v) => tape.add(v, grad_term),
            None => grad_term,
        });
    }

    let loss_var = match loss_var {
        Some(v) => v,
        // Degenerate sample with no usable positions: constant zero loss.
        None => tape.leaf(crate::Tensor::scalar(0.0)),
    };
    Ok((loss_var, fwd.param_vars, near_value, distant_value))
}

/// Temporal-aware self-distillation: updates the student against a frozen
/// teacher over `(trajectory, step)` samples.
///
/// One step `s` is drawn uniformly per trajectory visit; each epoch visits
/// every trajectory once in shuffled order.
pub fn tad_train(
    student: DenoiserParams,
    teacher: &DenoiserParams,
    trajs: &[Trajectory],
    config: &DistillConfig,
    rng: &mut impl Rng,
) -> Result<(DenoiserParams, Vec<LossRow>), DistillError> {
    config.validate();
    if trajs.is_empty() {
        return Err(DistillError::NoTrajectories);
    }
    let mut student = student;
    let mut opt = Adam::new(config.lr, &student);
    let mut log = Vec::new();
    let mut step_counter = 0usize;
    for _epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..trajs.len()).collect();
        order.shuffle(rng);
        for chunk in order.chunks(config.batch) {
            let mut grads: Vec<Vec<f64>> =
                student.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
            let scale = 1.0 / chunk.len() as f64;
            let mut near_sum = 0.0;
            let mut distant_sum = 0.0;
            for &ti in chunk {
                let traj = &trajs[ti];
                let s = rng.gen_range(1..=traj.len());
                let mut tape = Tape::new();
                let (loss_var, param_vars, near_v, distant_v) =
                    sample_loss_on_tape(&mut tape, &student, teacher, traj, s, config)?;
                let total_v = config.near_weight * near_v + config.lambda * distant_v;
                if !total_v.is_finite() {
                    return Err(DistillError::NonFiniteLoss { traj: ti });
                }
                near_sum += near_v;
                distant_sum += distant_v;
                let g = tape.backward(loss_var).expect("scalar loss");
                for (slot, var) in grads.iter_mut().zip(&param_vars) {
                    if let Some(gt) = g.wrt(*var) {
                        for (dst, &x) in slot.iter_mut().zip(&gt.data) {
                            *dst += x * scale;
                        }
                    }
                }
            }
            opt.apply(&mut student, &grads);
            step_counter += 1;
            let near = near_sum * scale;
            let distant = distant_sum * scale;
            log.push(LossRow {
                step: step_counter,
                near,
                distant,
                total: config.near_weight * near + config.lambda * distant,
            });
        }
    }
    Ok((student, log))
}

/// Student confidence decay curve and the two calibrated windows.
#[derive(Debug, Clone)]
pub struct DeltaCalibration {
    /// `curve[d-1]` is the mean student probability on the token revealed
    /// `d` steps ahead.
    pub curve: Vec<f64>,
    pub delta_quality: usize,
    pub delta_speed: usize,
}

/// First look-ahead distance at which the curve falls below `threshold`,
/// or `fallback` if it never crosses.
pub fn threshold_crossing(curve: &[f64], threshold: f64, fallback: usize) -> usize {
    curve
        .iter()
        .position(|&c| c < threshold)
        .map(|i| i + 1)
        .unwrap_or(fallback)
}

/// Measure how student confidence on future trajectory tokens decays with
/// look-ahead distance, and derive the quality (0.5) and speed (0.2)
/// windows from the crossing points.
pub fn calibrate_delta(
    student: &DenoiserParams,
    trajs: &[Trajectory],
    sample_count: usize,
    rng: &mut impl Rng,
) -> Result<DeltaCalibration, DistillError> {
    if trajs.is_empty() {
        return Err(DistillError::NoTrajectories);
    }
    let t_max = trajs.iter().map(|t| t.len()).max().unwrap();
    let mut sums = vec![0.0; t_max];
    let mut counts = vec![0usize; t_max];
    for _ in 0..sample_count {
        let traj = &trajs[rng.gen_range(0..trajs.len())];
        let s = rng.gen_range(1..=traj.len());
        let state = traj.state_at(s);
        let input = student_input(&traj.prompt, &state);
        let out = denoise_forward(student, &input)?;
        let offset = input.response_offset();
        for d in 1..=(traj.len() - s + 1) {
            let step = &traj.steps[s + d - 2];
            let p = out.probs(offset + step.pos)[step.token as usize];
            sums[d - 1] += p;
            counts[d - 1] += 1;
        }
    }
    let curve: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .take_while(|(_, &c)| c > 0)
        .map(|(&s, &c)| s / c as f64)
        .collect();
    Ok(DeltaCalibration {
        delta_quality: threshold_crossing(&curve, 0.5, t_max),
        delta_speed: threshold_crossing(&curve, 0.2, t_max),
        curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::text_to_tokens;
    use crate::trajectory::TrajectoryStep;

    fn traj_with_order(order: &[usize]) -> Trajectory {
        let tokens = text_to_tokens("abcdefgh");
        let steps = order
            .iter()
            .enumerate()
            .map(|(i, &pos)| TrajectoryStep { s: i + 1, pos, token: tokens[pos], conf: 0.9 })
            .collect();
        Trajectory {
            task: crate::tasks::TaskKind::Copy,
            prompt: tokens.clone(),
            answer: tokens.clone(),
            gen_len: order.len(),
            steps,
            final_ids: tokens[..order.len()].to_vec(),
            oracle_pass: false,
            mask_id: crate::tasks::MASK,
        }
    }

    #[test]
    fn partition_near_distant_by_reveal_distance() {
        // Reveal order: positions 3, 0, 2, 1 at steps 1..4.
        let traj = traj_with_order(&[3, 0, 2, 1]);
        // At s = 1 with delta = 2: steps 1..2 reveal {3, 0} -> near.
        let p = partition_masked(&traj, 1, 2);
        assert_eq!(p.near, vec![0, 3]);
        assert_eq!(p.distant, vec![1, 2]);
    }

    #[test]
    fn boundary_rule_past_final_step() {
        let traj = traj_with_order(&[3, 0, 2, 1]);
        // s = T - 1 with a window past T: everything still masked is near.
        let p = partition_masked(&traj, 3, 8);
        assert_eq!(p.near, vec![1, 2]);
        assert!(p.distant.is_empty());
    }

    #[test]
    fn partition_is_disjoint_cover_of_masked_set() {
        let traj = traj_with_order(&[1, 3, 0, 2]);
        for s in 1..=4 {
            for delta in 1..=6 {
                let p = partition_masked(&traj, s, delta);
                let mut all: Vec<usize> =
                    p.near.iter().chain(&p.distant).cloned().collect();
                all.sort_unstable();
                let mut masked = traj.state_at(s).masked_positions();
                masked.sort_unstable();
                assert_eq!(all, masked);
                assert!(p.near.iter().all(|x| !p.distant.contains(x)));
            }
        }
    }

    #[test]
    fn threshold_crossing_hand_curve() {
        let curve = [0.9, 0.6, 0.45, 0.3, 0.15];
        assert_eq!(threshold_crossing(&curve, 0.5, 99), 3);
        assert_eq!(threshold_crossing(&curve, 0.2, 99), 5);
        // Constant curve never crosses: fall back to T.
        assert_eq!(threshold_crossing(&[0.8; 5], 0.5, 5), 5);
        assert_eq!(threshold_crossing(&[0.8; 5], 0.2, 5), 5);
    }
}
