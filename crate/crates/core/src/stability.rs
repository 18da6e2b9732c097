//! Mean-square stability verification for stationary channel-state-dependent
//! policies.
//!
//! Between consecutive successful deliveries the closed loop evolves by a
//! matrix determined by the burst length and the gain that was active, so the
//! second moment of the state, split by an augmented mode (channel state at
//! reception, burst length, channel state observed before the previous
//! reception), satisfies a linear recursion. The loop is mean-square stable
//! iff the spectral radius of that recursion's operator is below one; the
//! operator is evaluated matrix-free and its radius found by power iteration
//! on the cone of positive-semidefinite block sequences.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fsmc::{self, BurstStats};
use crate::linalg;
use crate::lqr::{burst_input_responses, PlantSpec};

/// Relative tolerance on the power-iteration eigenvalue estimate.
const RADIUS_REL_TOL: f64 = 1e-12;
/// Consecutive converged iterations required before accepting the estimate.
const RADIUS_STREAK: usize = 6;
/// Power-iteration cap.
const RADIUS_MAX_ITER: usize = 200_000;
/// Largest operator dimension for which a dense eigensolve fallback runs.
const DENSE_FALLBACK_DIM: usize = 10_000;
/// Max-norm tolerance for the steady-state second-moment fixed point.
const MOMENT_TOL: f64 = 1e-12;
const MOMENT_MAX_ITER: usize = 1_000_000;

/// Augmented operational mode of the closed loop at a reception instant.
/// All indices are 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mode {
    /// Channel state at the reception instant.
    pub current: usize,
    /// Number of consecutive dropouts preceding the reception.
    pub burst: usize,
    /// Channel state observed one step before the previous reception.
    pub previous: usize,
}

/// Bijection between mode triples and flat indices `0..mode_count`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModeIndex {
    states: usize,
    max_burst: usize,
}

impl ModeIndex {
    pub fn new(states: usize, max_burst: usize) -> Self {
        assert!(states >= 1);
        Self { states, max_burst }
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn max_burst(&self) -> usize {
        self.max_burst
    }

    pub fn mode_count(&self) -> usize {
        (self.max_burst + 1) * self.states * self.states
    }

    pub fn encode(&self, mode: Mode) -> usize {
        debug_assert!(mode.current < self.states);
        debug_assert!(mode.previous < self.states);
        debug_assert!(mode.burst <= self.max_burst);
        let n = self.states;
        n * n * mode.burst + n * mode.previous + mode.current
    }

    pub fn decode(&self, index: usize) -> Mode {
        let n = self.states;
        let burst = index / (n * n);
        let rem = index % (n * n);
        Mode {
            current: rem % n,
            burst,
            previous: rem / n,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Mode> + '_ {
        (0..self.mode_count()).map(move |i| self.decode(i))
    }
}

/// Mode-to-mode transition probabilities. Rows of modes that cannot
/// structurally occur are zeroed and reported in the second return value.
pub fn mode_transitions(stats: &BurstStats, index: ModeIndex) -> (DMatrix<f64>, Vec<usize>) {
    let n = index.states();
    let l = index.max_burst();
    let success = stats.success_tpm();

    // success * dropout^l (burst body) and dropout^n * success (next burst).
    let mut after_success = Vec::with_capacity(l + 1);
    let mut before_success = Vec::with_capacity(l + 1);
    for len in 0..=l {
        after_success.push(success * stats.dropout_power(len));
        before_success.push(stats.dropout_power(len) * success);
    }
    // Normalizer: success * dropout^l * success.
    let through: Vec<DMatrix<f64>> = after_success.iter().map(|m| m * success).collect();

    let count = index.mode_count();
    let mut mu = DMatrix::zeros(count, count);
    let mut unreachable = Vec::new();
    for (src, mode) in index.iter().enumerate() {
        let denom = through[mode.burst][(mode.previous, mode.current)];
        if denom <= 0.0 {
            unreachable.push(src);
            continue;
        }
        for next_burst in 0..=l {
            for next_prev in 0..n {
                // Probability that the chain sat in `next_prev` right before
                // the reception that opened the current mode.
                let bridge = after_success[mode.burst][(mode.previous, next_prev)]
                    * success[(next_prev, mode.current)]
                    / denom;
                if bridge == 0.0 {
                    continue;
                }
                for next_cur in 0..n {
                    let advance = before_success[next_burst][(mode.current, next_cur)];
                    if advance == 0.0 {
                        continue;
                    }
                    let dst = index.encode(Mode {
                        current: next_cur,
                        burst: next_burst,
                        previous: next_prev,
                    });
                    mu[(src, dst)] = bridge * advance;
                }
            }
        }
    }
    (mu, unreachable)
}

/// Closed-loop matrix for every mode: the state transition between
/// consecutive receptions. Depends only on the burst length and the channel
/// state the applied gain was selected from.
pub fn closed_loop_matrices(
    plant: &PlantSpec,
    gains: &[DMatrix<f64>],
    index: ModeIndex,
) -> Result<Vec<DMatrix<f64>>> {
    let table = closed_loop_table(plant, gains, index)?;
    Ok(index
        .iter()
        .map(|m| table[m.burst * index.states() + m.previous].clone())
        .collect())
}

/// Compact closed-loop table keyed by `burst * states + previous`.
fn closed_loop_table(
    plant: &PlantSpec,
    gains: &[DMatrix<f64>],
    index: ModeIndex,
) -> Result<Vec<DMatrix<f64>>> {
    let n = index.states();
    if gains.len() != n {
        return Err(Error::Validation(format!(
            "expected {n} gains (one per channel state), got {}",
            gains.len()
        )));
    }
    for k in gains {
        if k.nrows() != plant.input_dim() || k.ncols() != plant.state_dim() {
            return Err(Error::Validation(format!(
                "gain must be {}x{}, got {}x{}",
                plant.input_dim(),
                plant.state_dim(),
                k.nrows(),
                k.ncols()
            )));
        }
    }
    let responses = burst_input_responses(plant, index.max_burst());
    let a_pow = linalg::matrix_powers(plant.a(), index.max_burst() + 1);
    let mut table = Vec::with_capacity((index.max_burst() + 1) * n);
    for burst in 0..=index.max_burst() {
        for prev in 0..n {
            table.push(&a_pow[burst + 1] + &responses[burst] * &gains[prev]);
        }
    }
    Ok(table)
}

/// The linear operator propagating mode-split second moments across
/// reception instants.
#[derive(Debug, Clone)]
pub struct MomentOperator {
    index: ModeIndex,
    /// Closed-loop matrices keyed by `burst * states + previous`.
    loops: Vec<DMatrix<f64>>,
    mode_tpm: DMatrix<f64>,
    unreachable: Vec<usize>,
    state_dim: usize,
}

impl MomentOperator {
    pub fn new(plant: &PlantSpec, stats: &BurstStats, gains: &[DMatrix<f64>]) -> Result<Self> {
        let index = ModeIndex::new(stats.model().state_count(), stats.max_burst());
        let loops = closed_loop_table(plant, gains, index)?;
        let (mode_tpm, unreachable) = mode_transitions(stats, index);
        Ok(Self {
            index,
            loops,
            mode_tpm,
            unreachable,
            state_dim: plant.state_dim(),
        })
    }

    pub fn index(&self) -> ModeIndex {
        self.index
    }

    pub fn mode_count(&self) -> usize {
        self.index.mode_count()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn mode_tpm(&self) -> &DMatrix<f64> {
        &self.mode_tpm
    }

    pub fn unreachable_modes(&self) -> &[usize] {
        &self.unreachable
    }

    pub fn closed_loop(&self, mode: Mode) -> &DMatrix<f64> {
        &self.loops[mode.burst * self.index.states() + mode.previous]
    }

    /// Dimension of the vectorized operator.
    pub fn dim(&self) -> usize {
        self.mode_count() * self.state_dim * self.state_dim
    }

    /// One application of the noiseless moment recursion.
    pub fn apply(&self, blocks: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
        self.apply_impl(blocks, None)
    }

    /// One application of the noisy moment recursion: propagate and add the
    /// per-mode injection.
    pub fn apply_with_noise(
        &self,
        blocks: &[DMatrix<f64>],
        inject: &[DMatrix<f64>],
    ) -> Vec<DMatrix<f64>> {
        self.apply_impl(blocks, Some(inject))
    }

    fn apply_impl(
        &self,
        blocks: &[DMatrix<f64>],
        inject: Option<&[DMatrix<f64>]>,
    ) -> Vec<DMatrix<f64>> {
        let count = self.mode_count();
        assert_eq!(blocks.len(), count);
        let nx = self.state_dim;
        // Mix the blocks by the transposed mode chain in one dense product:
        // column j of `mixed` is vec(sum_i blocks[i] * mu[(i, j)]).
        let mut stacked = DMatrix::zeros(nx * nx, count);
        for (i, m) in blocks.iter().enumerate() {
            stacked.column_mut(i).copy_from_slice(m.as_slice());
        }
        let mixed = &stacked * &self.mode_tpm;
        (0..count)
            .map(|j| {
                let m = DMatrix::from_column_slice(nx, nx, mixed.column(j).as_slice());
                let lj = &self.loops[self.loop_key(j)];
                let mut out = lj * m * lj.transpose();
                if let Some(inj) = inject {
                    out += &inj[j];
                }
                out
            })
            .collect()
    }

    fn loop_key(&self, mode_idx: usize) -> usize {
        let mode = self.index.decode(mode_idx);
        mode.burst * self.index.states() + mode.previous
    }

    /// Spectral radius by power iteration on the PSD cone, seeded with
    /// identity blocks and estimated through the trace functional. Falls back
    /// to a dense eigensolve for small operators if the iteration stagnates.
    pub fn spectral_radius(&self) -> Result<RadiusEstimate> {
        match self.power_iteration() {
            Ok(est) => Ok(est),
            Err(e) => {
                if self.dim() <= DENSE_FALLBACK_DIM {
                    let rho = linalg::spectral_radius_dense(&self.materialize());
                    Ok(RadiusEstimate {
                        value: rho,
                        iterations: None,
                    })
                } else {
                    Err(e)
                }
            }
        }
    }

    fn power_iteration(&self) -> Result<RadiusEstimate> {
        let count = self.mode_count();
        let nx = self.state_dim;
        let mut blocks = vec![DMatrix::identity(nx, nx); count];
        let mut prev_ratio = f64::NAN;
        let mut streak = 0;
        for it in 1..=RADIUS_MAX_ITER {
            let next = self.apply(&blocks);
            let den: f64 = blocks.iter().map(|m| m.trace()).sum();
            let num: f64 = next.iter().map(|m| m.trace()).sum();
            if num <= 0.0 {
                // The cone iterate died: the operator is nilpotent on it.
                return Ok(RadiusEstimate {
                    value: 0.0,
                    iterations: Some(it),
                });
            }
            let ratio = num / den;
            let scale = next.iter().map(|m| m.amax()).fold(0.0, f64::max);
            blocks = next;
            for b in &mut blocks {
                *b /= scale;
            }
            if (ratio - prev_ratio).abs() <= RADIUS_REL_TOL * ratio.abs() {
                streak += 1;
                if streak >= RADIUS_STREAK {
                    return Ok(RadiusEstimate {
                        value: ratio,
                        iterations: Some(it),
                    });
                }
            } else {
                streak = 0;
            }
            prev_ratio = ratio;
        }
        Err(Error::Convergence {
            what: "moment-operator power iteration",
            iterations: RADIUS_MAX_ITER,
        })
    }

    /// Dense matrix of the operator acting on stacked vectorized blocks.
    /// Exact but quadratic in memory; meant for small instances and tests.
    pub fn materialize(&self) -> DMatrix<f64> {
        let count = self.mode_count();
        let nx2 = self.state_dim * self.state_dim;
        let mut dense = DMatrix::zeros(count * nx2, count * nx2);
        for j in 0..count {
            let lj = &self.loops[self.loop_key(j)];
            let kron = lj.kronecker(lj);
            for i in 0..count {
                let w = self.mode_tpm[(i, j)];
                if w == 0.0 {
                    continue;
                }
                dense
                    .view_mut((j * nx2, i * nx2), (nx2, nx2))
                    .copy_from(&(&kron * w));
            }
        }
        dense
    }

    /// Largest per-row loss of probability mass across structurally
    /// reachable modes (comes from the burst-length truncation).
    pub fn truncation_mass(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.mode_count() {
            if self.unreachable.contains(&i) {
                continue;
            }
            worst = worst.max(1.0 - self.mode_tpm.row(i).sum());
        }
        worst
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RadiusEstimate {
    pub value: f64,
    /// `None` when the dense fallback produced the value.
    pub iterations: Option<usize>,
}

/// Stationary distribution over modes. The chain restricted to structurally
/// reachable modes must have a single recurrent class, which must be
/// aperiodic; transient modes receive zero mass.
pub fn mode_stationary(mode_tpm: &DMatrix<f64>, unreachable: &[usize]) -> Result<DVector<f64>> {
    let count = mode_tpm.nrows();
    let valid: Vec<usize> = (0..count).filter(|i| !unreachable.contains(i)).collect();
    if valid.is_empty() {
        return Err(Error::NonErgodic("no structurally reachable modes".into()));
    }
    let adj: Vec<Vec<usize>> = valid
        .iter()
        .map(|&i| {
            valid
                .iter()
                .enumerate()
                .filter(|&(_, &j)| mode_tpm[(i, j)] > 0.0)
                .map(|(local, _)| local)
                .collect()
        })
        .collect();
    let comp = strongly_connected_components(&adj);
    let closed: Vec<&Vec<usize>> = comp
        .iter()
        .filter(|c| {
            c.iter()
                .all(|&u| adj[u].iter().all(|v| c.contains(v)))
        })
        .collect();
    if closed.len() != 1 {
        return Err(Error::NonErgodic(format!(
            "mode chain has {} recurrent classes",
            closed.len()
        )));
    }
    let class: Vec<usize> = closed[0].iter().map(|&local| valid[local]).collect();

    // Restrict, check aperiodicity, and power-iterate on the class.
    let m = class.len();
    let mut sub = DMatrix::zeros(m, m);
    for (a, &i) in class.iter().enumerate() {
        for (b, &j) in class.iter().enumerate() {
            sub[(a, b)] = mode_tpm[(i, j)];
        }
    }
    match fsmc::chain_ergodicity(&sub) {
        fsmc::Ergodicity::Ergodic => {}
        fsmc::Ergodicity::Periodic(p) => {
            return Err(Error::NonErgodic(format!(
                "recurrent mode class is periodic with period {p}"
            )))
        }
        fsmc::Ergodicity::Reducible(why) => {
            return Err(Error::NonErgodic(format!(
                "recurrent mode class is not closed under the positive-entry graph ({why})"
            )))
        }
    }
    let seed = DVector::from_element(m, 1.0 / m as f64);
    let pi = fsmc::stationary_of(&sub, &seed, "mode stationary distribution")?;
    let mut full = DVector::zeros(count);
    for (a, &i) in class.iter().enumerate() {
        full[i] = pi[a];
    }
    Ok(full)
}

fn strongly_connected_components(adj: &[Vec<usize>]) -> Vec<Vec<usize>> {
    // Iterative Kosaraju.
    let n = adj.len();
    let mut order = Vec::with_capacity(n);
    let mut seen = vec![false; n];
    for start in 0..n {
        if seen[start] {
            continue;
        }
        let mut stack = vec![(start, 0usize)];
        seen[start] = true;
        while let Some(&mut (u, ref mut next)) = stack.last_mut() {
            if *next < adj[u].len() {
                let v = adj[u][*next];
                *next += 1;
                if !seen[v] {
                    seen[v] = true;
                    stack.push((v, 0));
                }
            } else {
                order.push(u);
                stack.pop();
            }
        }
    }
    let mut radj = vec![Vec::new(); n];
    for (u, row) in adj.iter().enumerate() {
        for &v in row {
            radj[v].push(u);
        }
    }
    let mut component = vec![usize::MAX; n];
    let mut components = Vec::new();
    for &start in order.iter().rev() {
        if component[start] != usize::MAX {
            continue;
        }
        let id = components.len();
        let mut members = vec![start];
        component[start] = id;
        let mut stack = vec![start];
        while let Some(u) = stack.pop() {
            for &v in &radj[u] {
                if component[v] == usize::MAX {
                    component[v] = id;
                    members.push(v);
                    stack.push(v);
                }
            }
        }
        components.push(members);
    }
    components
}

/// Accumulated process-noise covariance over a burst of the given length:
/// `sum_{v=0..n} A^v Sigma_w A^v'` for `n = 0..=max_burst`.
pub fn noise_grams(plant: &PlantSpec, max_burst: usize) -> Vec<DMatrix<f64>> {
    let a_pow = linalg::matrix_powers(plant.a(), max_burst);
    let mut grams = vec![plant.sigma_w().clone()];
    for v in 1..=max_burst {
        let term = &a_pow[v] * plant.sigma_w() * a_pow[v].transpose();
        grams.push(&grams[v - 1] + term);
    }
    grams
}

/// Full stability report for a stationary gain set.
#[derive(Debug, Clone)]
pub struct StabilityReport {
    operator: MomentOperator,
    spectral_radius: f64,
    radius_iterations: Option<usize>,
    mode_stationary: DVector<f64>,
    noise_grams: Vec<DMatrix<f64>>,
    second_moment: Option<DMatrix<f64>>,
}

impl StabilityReport {
    pub fn operator(&self) -> &MomentOperator {
        &self.operator
    }

    pub fn index(&self) -> ModeIndex {
        self.operator.index()
    }

    pub fn mode_count(&self) -> usize {
        self.operator.mode_count()
    }

    pub fn spectral_radius(&self) -> f64 {
        self.spectral_radius
    }

    /// Power-iteration count, or `None` when the dense fallback was used.
    pub fn radius_iterations(&self) -> Option<usize> {
        self.radius_iterations
    }

    pub fn is_mean_square_stable(&self) -> bool {
        self.spectral_radius < 1.0
    }

    pub fn mode_stationary(&self) -> &DVector<f64> {
        &self.mode_stationary
    }

    /// Noise accumulation over a burst of length `n`.
    pub fn noise_gram(&self, n: usize) -> &DMatrix<f64> {
        &self.noise_grams[n]
    }

    /// Steady-state second moment of the state at reception instants;
    /// present iff the loop is mean-square stable.
    pub fn second_moment(&self) -> Option<&DMatrix<f64>> {
        self.second_moment.as_ref()
    }

    /// Steady-state mean of the state (always the origin for a linear loop
    /// with zero-mean noise).
    pub fn equilibrium_mean(&self) -> DVector<f64> {
        DVector::zeros(self.operator.state_dim())
    }

    pub fn truncation_mass(&self) -> f64 {
        self.operator.truncation_mass()
    }

    pub fn unreachable_modes(&self) -> &[usize] {
        self.operator.unreachable_modes()
    }
}

/// Spectral radius of the moment operator for the given stationary gains.
pub fn spectral_radius(
    plant: &PlantSpec,
    stats: &BurstStats,
    gains: &[DMatrix<f64>],
) -> Result<f64> {
    let operator = MomentOperator::new(plant, stats, gains)?;
    Ok(operator.spectral_radius()?.value)
}

/// Build the full stability report: spectral radius, stationary mode
/// distribution, and (when stable) the steady-state second moment.
pub fn analyze(
    plant: &PlantSpec,
    stats: &BurstStats,
    gains: &[DMatrix<f64>],
) -> Result<StabilityReport> {
    let operator = MomentOperator::new(plant, stats, gains)?;
    let estimate = operator.spectral_radius()?;
    let psi = mode_stationary(operator.mode_tpm(), operator.unreachable_modes())?;
    let grams = noise_grams(plant, stats.max_burst());
    let second_moment = if estimate.value < 1.0 {
        Some(steady_state_second_moment(&operator, &psi, &grams)?)
    } else {
        None
    };
    Ok(StabilityReport {
        operator,
        spectral_radius: estimate.value,
        radius_iterations: estimate.iterations,
        mode_stationary: psi,
        noise_grams: grams,
        second_moment,
    })
}

/// Per-mode noise injection: stationary inflow probability times the noise
/// accumulated over the mode's burst.
pub fn noise_injection(
    operator: &MomentOperator,
    psi: &DVector<f64>,
    grams: &[DMatrix<f64>],
) -> Vec<DMatrix<f64>> {
    let inflow = operator.mode_tpm().tr_mul(psi);
    (0..operator.mode_count())
        .map(|j| {
            let mode = operator.index().decode(j);
            &grams[mode.burst] * inflow[j]
        })
        .collect()
}

/// Solve the noisy moment fixed point and return the total steady-state
/// second moment. Requires a mean-square stable operator.
pub fn steady_state_second_moment(
    operator: &MomentOperator,
    psi: &DVector<f64>,
    grams: &[DMatrix<f64>],
) -> Result<DMatrix<f64>> {
    let inject = noise_injection(operator, psi, grams);
    let nx = operator.state_dim();
    let mut blocks = vec![DMatrix::zeros(nx, nx); operator.mode_count()];
    for _ in 0..MOMENT_MAX_ITER {
        let next = operator.apply_with_noise(&blocks, &inject);
        let delta = blocks
            .iter()
            .zip(next.iter())
            .map(|(a, b)| linalg::max_abs_diff(a, b))
            .fold(0.0, f64::max);
        blocks = next;
        if delta < MOMENT_TOL {
            let mut total = DMatrix::zeros(nx, nx);
            for b in &blocks {
                total += b;
            }
            return Ok(total);
        }
    }
    Err(Error::Convergence {
        what: "steady-state second moment iteration (is the loop mean-square stable?)",
        iterations: MOMENT_MAX_ITER,
    })
}

/// Second moment at reception instants for a stability report; errors when
/// the loop is unstable.
pub fn second_moment_checked(report: &StabilityReport) -> Result<&DMatrix<f64>> {
    report.second_moment().ok_or_else(|| {
        Error::Precondition(format!(
            "steady-state second moment requires a mean-square stable loop \
             (spectral radius {:.6})",
            report.spectral_radius()
        ))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fsmc::FsmcModel;
    use crate::lqr;
    use approx::assert_abs_diff_eq;

    fn single_state_lossy() -> (PlantSpec, BurstStats) {
        let channel = FsmcModel::new(
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DVector::from_row_slice(&[0.6]),
        )
        .unwrap();
        let stats = BurstStats::build(&channel, 1e-12).unwrap();
        let plant = PlantSpec::new(
            DMatrix::from_row_slice(1, 1, &[0.8]),
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DMatrix::from_row_slice(1, 1, &[0.05]),
            DMatrix::identity(1, 1),
            DMatrix::identity(1, 1),
            DVector::from_row_slice(&[0.3]),
            DVector::from_row_slice(&[1.0]),
        )
        .unwrap();
        (plant, stats)
    }

    #[test]
    fn mode_index_matches_flat_formula() {
        let index = ModeIndex::new(4, 2);
        // 1-based formula: N^2 v2 + N (v3 - 1) + v1.
        let f = |v1: usize, v2: usize, v3: usize| 16 * v2 + 4 * (v3 - 1) + v1;
        assert_eq!(index.encode(Mode { current: 0, burst: 0, previous: 0 }) + 1, f(1, 0, 1));
        assert_eq!(index.encode(Mode { current: 3, burst: 0, previous: 3 }) + 1, f(4, 0, 4));
        assert_eq!(index.encode(Mode { current: 1, burst: 2, previous: 2 }) + 1, f(2, 2, 3));
    }

    #[test]
    fn mode_index_roundtrip_is_exhaustive() {
        let index = ModeIndex::new(4, 30);
        for i in 0..index.mode_count() {
            let mode = index.decode(i);
            assert_eq!(index.encode(mode), i);
        }
        for mode in index.iter() {
            assert_eq!(index.decode(index.encode(mode)), mode);
        }
    }

    #[test]
    fn single_state_channel_transitions_are_burst_lengths() {
        let (_, stats) = single_state_lossy();
        let index = ModeIndex::new(1, stats.max_burst());
        let (mu, unreachable) = mode_transitions(&stats, index);
        assert!(unreachable.is_empty());
        // Every row is the burst-length distribution (1 - d)^n d.
        for i in 0..index.mode_count() {
            for n in 0..=stats.max_burst() {
                let expected = 0.4f64.powi(n as i32) * 0.6;
                assert_abs_diff_eq!(mu[(i, n)], expected, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn mu_rows_sum_to_one_up_to_truncation() {
        let stats = BurstStats::build(&crate::pendulum::channel(), f64::EPSILON).unwrap();
        let index = ModeIndex::new(4, stats.max_burst());
        let (mu, unreachable) = mode_transitions(&stats, index);
        assert!(unreachable.is_empty(), "pendulum modes are all reachable");
        let tol = 10.0 * f64::EPSILON * index.mode_count() as f64;
        for i in 0..index.mode_count() {
            let s = mu.row(i).sum();
            assert!(s <= 1.0 + 1e-12 && s >= 1.0 - tol, "row {i} sums to {s}");
        }
    }

    #[test]
    fn closed_loop_depends_only_on_burst_and_gain_state() {
        let plant = crate::pendulum::plant();
        let stats = BurstStats::build(&crate::pendulum::channel(), f64::EPSILON).unwrap();
        let index = ModeIndex::new(4, stats.max_burst());
        let gains = crate::pendulum::reference_gains_best_phi();
        let loops = closed_loop_matrices(&plant, &gains, index).unwrap();
        for (i, mode) in index.iter().enumerate() {
            let twin = index.encode(Mode {
                current: (mode.current + 1) % 4,
                ..mode
            });
            assert_eq!(loops[i], loops[twin], "closed loop must ignore the landing state");
        }
        // Spot checks of the formula.
        let direct = plant.a() + plant.b() * &gains[2];
        let idx = index.encode(Mode { current: 0, burst: 0, previous: 2 });
        assert_abs_diff_eq!(loops[idx], direct, epsilon = 1e-14);
    }

    #[test]
    fn closed_loop_zero_phi_long_burst() {
        let plant = crate::pendulum::plant_with_phi(0.0);
        let stats = BurstStats::build(&crate::pendulum::channel(), f64::EPSILON).unwrap();
        let index = ModeIndex::new(4, stats.max_burst());
        let gains = crate::pendulum::reference_gains_zero_phi();
        let loops = closed_loop_matrices(&plant, &gains, index).unwrap();
        let a = plant.a();
        let idx = index.encode(Mode { current: 1, burst: 2, previous: 0 });
        let expected = a * a * a + a * a * plant.b() * &gains[0];
        assert_abs_diff_eq!(loops[idx], expected, epsilon = 1e-12);
    }

    #[test]
    fn operator_matches_dense_materialization() {
        let (plant, stats) = single_state_lossy();
        let gains = vec![DMatrix::from_row_slice(1, 1, &[-0.4])];
        let op = MomentOperator::new(&plant, &stats, &gains).unwrap();
        let dense = op.materialize();

        let blocks: Vec<DMatrix<f64>> = (0..op.mode_count())
            .map(|i| DMatrix::from_row_slice(1, 1, &[(i as f64 + 1.0) * 0.37]))
            .collect();
        let via_op = op.apply(&blocks);
        let mut stacked = DVector::zeros(op.dim());
        for (i, b) in blocks.iter().enumerate() {
            stacked[i] = b[(0, 0)];
        }
        let via_dense = &dense * stacked;
        for i in 0..op.mode_count() {
            assert_abs_diff_eq!(via_op[i][(0, 0)], via_dense[i], epsilon = 1e-12);
        }
        // Radius agreement between power iteration and the dense eigensolve.
        let rho_pi = op.spectral_radius().unwrap().value;
        let rho_dense = linalg::spectral_radius_dense(&dense);
        assert_abs_diff_eq!(rho_pi, rho_dense, epsilon = 1e-7);
    }

    #[test]
    fn single_state_perfect_mode_is_absorbing() {
        // Near-perfect single state: one dominant mode (burst 0) with
        // probability ~1 of staying.
        let channel = FsmcModel::new(
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DVector::from_row_slice(&[1.0 - 1e-12]),
        )
        .unwrap();
        let stats = BurstStats::build(&channel, 1e-9).unwrap();
        let index = ModeIndex::new(1, stats.max_burst());
        let (mu, _) = mode_transitions(&stats, index);
        assert!(mu[(0, 0)] > 1.0 - 1e-11);
        let psi = mode_stationary(&mu, &[]).unwrap();
        assert!(psi[0] > 1.0 - 1e-9);
        assert_abs_diff_eq!(psi.sum(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn stationary_mode_distribution_fixed_point() {
        let stats = BurstStats::build(&crate::pendulum::channel(), f64::EPSILON).unwrap();
        let index = ModeIndex::new(4, stats.max_burst());
        let (mu, unreachable) = mode_transitions(&stats, index);
        let psi = mode_stationary(&mu, &unreachable).unwrap();
        assert_abs_diff_eq!(psi.sum(), 1.0, epsilon = 1e-12);
        let residual = (mu.tr_mul(&psi) - &psi).amax();
        assert!(residual <= 1e-10, "fixed-point residual {residual}");
        // Independence of the seed is implied by the single recurrent class;
        // cross-check by restarting from a point mass via the public API of
        // the power iteration (burst marginal comparison happens in the
        // acceptance suite).
    }

    #[test]
    fn second_moment_zero_noise_is_zero() {
        let (plant, stats) = single_state_lossy();
        let plant = plant.with_sigma_w(DMatrix::zeros(1, 1)).unwrap();
        let gains = vec![DMatrix::from_row_slice(1, 1, &[-0.4])];
        let report = analyze(&plant, &stats, &gains).unwrap();
        assert!(report.is_mean_square_stable());
        let xe = report.second_moment().unwrap();
        assert_abs_diff_eq!(xe[(0, 0)], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn second_moment_matches_scalar_closed_form() {
        let (plant, stats) = single_state_lossy();
        let gains = vec![DMatrix::from_row_slice(1, 1, &[-0.4])];
        let report = analyze(&plant, &stats, &gains).unwrap();
        assert!(report.is_mean_square_stable());
        let xe = report.second_moment().unwrap()[(0, 0)];

        // Closed form: with a single channel state the mixing weights are the
        // burst-length distribution kappa_n = (1-d)^n d regardless of the
        // source mode, so the total moment solves
        //   s = sum_n kappa_n loop_n^2 s + sum_n kappa_n w_n.
        let a = plant.a()[(0, 0)];
        let d = 0.6f64;
        let sw = plant.sigma_w()[(0, 0)];
        let phi = plant.phi()[0];
        let k = -0.4;
        let mut contract = 0.0;
        let mut drive = 0.0;
        for n in 0..=stats.max_burst() {
            let kappa = (1.0 - d).powi(n as i32) * d;
            let psi_n: f64 = (0..=n).map(|j| a.powi(j as i32) * phi.powi((n - j) as i32)).sum();
            let loop_n = a.powi(n as i32 + 1) + psi_n * k;
            let w_n: f64 = (0..=n).map(|v| a.powi(2 * v as i32) * sw).sum();
            contract += kappa * loop_n * loop_n;
            drive += kappa * w_n;
        }
        let expected = drive / (1.0 - contract);
        assert_abs_diff_eq!(xe, expected, epsilon = 1e-9);
    }

    #[test]
    fn second_moment_requires_stability() {
        let (plant, stats) = single_state_lossy();
        // Destabilizing positive feedback.
        let gains = vec![DMatrix::from_row_slice(1, 1, &[2.0])];
        let report = analyze(&plant, &stats, &gains).unwrap();
        assert!(!report.is_mean_square_stable());
        assert!(report.second_moment().is_none());
        assert!(matches!(
            second_moment_checked(&report),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn noiseless_stable_loop_radius_below_one() {
        let (plant, stats) = single_state_lossy();
        let policy = lqr::infinite_horizon_lqr(&plant, &stats, 1e-12, 50_000).unwrap();
        assert!(policy.spectral_radius() < 1.0);
    }
}
