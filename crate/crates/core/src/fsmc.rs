//! Finite-state Markov channel model and the dropout-burst statistics the
//! controller synthesis and stability analysis are built on.
//!
//! Channel states are 0-based in code; all user-facing I/O (configs, CSV,
//! error messages) is 1-based.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg;

/// Hard cap on the maximal burst length; keeps the augmented mode space of
/// the stability analysis bounded.
pub const BURST_LEN_CAP: usize = 512;

/// Iteration cap for stationary-distribution power iterations.
const STATIONARY_MAX_ITER: usize = 1_000_000;
/// Max-norm tolerance for stationary-distribution power iterations.
const STATIONARY_TOL: f64 = 1e-13;

/// Why a chain fails to be ergodic, or confirmation that it is.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Ergodicity {
    Ergodic,
    /// Not irreducible; carries a description of the failing class structure.
    Reducible(String),
    /// Irreducible but periodic with the given period.
    Periodic(usize),
}

impl Ergodicity {
    pub fn is_ergodic(&self) -> bool {
        matches!(self, Ergodicity::Ergodic)
    }
}

/// A finite-state Markov channel: a row-stochastic state transition matrix
/// together with a per-state probability of successful packet delivery.
#[derive(Debug, Clone, PartialEq)]
pub struct FsmcModel {
    tpm: DMatrix<f64>,
    delivery: DVector<f64>,
}

impl FsmcModel {
    /// Validates and builds a channel model.
    ///
    /// Beyond shape and stochasticity, delivery probabilities may not be all
    /// zero or all one (the augmented mode chain would lose ergodicity), and
    /// every state must have a positive probability of success on the next
    /// step (otherwise the conditional burst distribution is undefined).
    pub fn new(tpm: DMatrix<f64>, delivery: DVector<f64>) -> Result<Self> {
        linalg::check_row_stochastic(&tpm, 1e-12)?;
        let n = tpm.nrows();
        if delivery.len() != n {
            return Err(Error::Validation(format!(
                "delivery probability vector has length {}, expected {n}",
                delivery.len()
            )));
        }
        for (i, &d) in delivery.iter().enumerate() {
            if !(0.0..=1.0).contains(&d) {
                return Err(Error::Validation(format!(
                    "delivery probability for state s{} is {d}, outside [0, 1]",
                    i + 1
                )));
            }
        }
        if delivery.iter().all(|&d| d == 0.0) {
            return Err(Error::Validation(
                "all delivery probabilities are zero; no message can ever arrive".into(),
            ));
        }
        if delivery.iter().all(|&d| d == 1.0) {
            return Err(Error::Validation(
                "all delivery probabilities are one; the burst process degenerates".into(),
            ));
        }
        // Success must be reachable on the next step from every state.
        for i in 0..n {
            let mass: f64 = (0..n).map(|j| tpm[(i, j)] * delivery[j]).sum();
            if mass <= 0.0 {
                return Err(Error::DegenerateState { state: i + 1 });
            }
        }
        Ok(Self { tpm, delivery })
    }

    pub fn state_count(&self) -> usize {
        self.tpm.nrows()
    }

    pub fn tpm(&self) -> &DMatrix<f64> {
        &self.tpm
    }

    pub fn delivery(&self) -> &DVector<f64> {
        &self.delivery
    }

    /// Split the transition matrix by the delivery outcome of the landing
    /// state: `success[i][j] = p_ij * d_j`, `dropout = tpm - success`.
    pub fn split_tpm(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.state_count();
        let mut success = self.tpm.clone();
        for j in 0..n {
            success.column_mut(j).scale_mut(self.delivery[j]);
        }
        let dropout = &self.tpm - &success;
        (success, dropout)
    }

    /// Irreducibility and aperiodicity via graph analysis of the positive
    /// entries; no numerics involved.
    pub fn ergodicity(&self) -> Ergodicity {
        chain_ergodicity(&self.tpm)
    }

    pub fn is_ergodic(&self) -> bool {
        self.ergodicity().is_ergodic()
    }

    /// Stationary distribution of the channel chain, by power iteration,
    /// cross-checkable against a direct linear solve.
    pub fn stationary(&self) -> Result<DVector<f64>> {
        match self.ergodicity() {
            Ergodicity::Ergodic => {}
            e => return Err(Error::NonErgodic(describe(&e))),
        }
        let n = self.state_count();
        let uniform = DVector::from_element(n, 1.0 / n as f64);
        stationary_of(&self.tpm, &uniform, "channel stationary distribution")
    }

    /// Sample `horizon` steps of the channel: state first, then the delivery
    /// outcome conditioned on it. Deterministic for a fixed generator state.
    pub fn sample_trace<R: Rng + ?Sized>(
        &self,
        initial: &DVector<f64>,
        horizon: usize,
        rng: &mut R,
    ) -> Vec<ChannelStep> {
        let mut out = Vec::with_capacity(horizon);
        let mut state = sample_categorical(initial, rng);
        for _ in 0..horizon {
            let delivered = rng.random::<f64>() < self.delivery[state];
            out.push(ChannelStep { state, delivered });
            state = sample_categorical(&self.tpm.row(state).transpose(), rng);
        }
        out
    }
}

/// One sampled channel step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChannelStep {
    /// 0-based channel state index.
    pub state: usize,
    pub delivered: bool,
}

fn sample_categorical<R: Rng + ?Sized>(weights: &DVector<f64>, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

/// Burst statistics derived from a channel model: the success/dropout split
/// of the transition matrix, the truncated burst-length distributions, the
/// maximal burst length, and the stationary distributions of both the channel
/// chain and the burst-ending-state chain.
#[derive(Debug, Clone)]
pub struct BurstStats {
    model: FsmcModel,
    success: DMatrix<f64>,
    dropout: DMatrix<f64>,
    /// `dropout^n` for `n = 0..=max_burst`.
    dropout_powers: Vec<DMatrix<f64>>,
    /// Per-state probability of a successful delivery on the next step,
    /// i.e. the row sums of `success`.
    success_mass: DVector<f64>,
    epsilon: f64,
    max_burst: usize,
    /// `burst_trans[n][(i, j)]` is the probability that, right after a
    /// delivery was acknowledged from previous state `i`, the next delivery
    /// arrives after exactly `n` dropouts with the chain observed in `j`.
    burst_trans: Vec<DMatrix<f64>>,
    /// `burst_len[(i, n)]`: marginal of `burst_trans` over the end state.
    burst_len: DMatrix<f64>,
    /// Stationary distribution of the channel chain.
    theta_stat: DVector<f64>,
    /// `burst_stat[(n, j)]`: steady-state probability of an `n`-dropout burst
    /// ending with the chain in state `j`.
    burst_stat: DMatrix<f64>,
}

impl BurstStats {
    /// Build all burst statistics, truncating burst lengths once the
    /// cumulative mass reaches `1 - epsilon` in every component (with the
    /// hard cap [`BURST_LEN_CAP`]).
    pub fn build(model: &FsmcModel, epsilon: f64) -> Result<Self> {
        Self::build_capped(model, epsilon, BURST_LEN_CAP)
    }

    pub fn build_capped(model: &FsmcModel, epsilon: f64, cap: usize) -> Result<Self> {
        if !(0.0 < epsilon && epsilon < 1.0) {
            return Err(Error::Validation(format!(
                "truncation tolerance must lie in (0, 1), got {epsilon}"
            )));
        }
        let n_states = model.state_count();
        let (success, dropout) = model.split_tpm();
        let success_mass = DVector::from_iterator(n_states, success.row_iter().map(|r| r.sum()));

        // Burst-length search: the cumulative per-start-state mass of bursts
        // up to length n is sum_{m<=n} dropout^m * success_mass. The domain
        // of the search is the positive integers, so a lossless channel
        // reports a maximal burst length of 1, not 0.
        let mut dropout_powers = vec![DMatrix::identity(n_states, n_states)];
        let mut cumulative = success_mass.clone();
        let mut max_burst = None;
        for cand in 1..=cap {
            let next_pow = dropout_powers.last().unwrap() * &dropout;
            cumulative += &next_pow * &success_mass;
            dropout_powers.push(next_pow);
            if cumulative.iter().all(|&c| c >= 1.0 - epsilon) {
                max_burst = Some(cand);
                break;
            }
        }
        let max_burst = max_burst.ok_or_else(|| Error::BurstCapExceeded {
            cap,
            shortfall: cumulative.iter().map(|&c| 1.0 - c).fold(0.0, f64::max),
        })?;
        dropout_powers.truncate(max_burst + 1);

        // burst_trans[n] = diag(1/success_mass) * success * dropout^n * diag(success_mass)
        let mut burst_trans = Vec::with_capacity(max_burst + 1);
        let mut burst_len = DMatrix::zeros(n_states, max_burst + 1);
        for (n, pow) in dropout_powers.iter().enumerate() {
            let mut t = &success * pow;
            for j in 0..n_states {
                t.column_mut(j).scale_mut(success_mass[j]);
            }
            for i in 0..n_states {
                let row_scale = 1.0 / success_mass[i];
                t.row_mut(i).scale_mut(row_scale);
                burst_len[(i, n)] = t.row(i).sum();
            }
            burst_trans.push(t);
        }

        let theta_stat = model.stationary()?;

        let mut stats = Self {
            model: model.clone(),
            success,
            dropout,
            dropout_powers,
            success_mass,
            epsilon,
            max_burst,
            burst_trans,
            burst_len,
            theta_stat,
            burst_stat: DMatrix::zeros(max_burst + 1, n_states),
        };
        let seed = stats.burst_seed_from(&stats.theta_stat.clone());
        stats.burst_stat = stats.burst_fixed_point(&seed)?;
        Ok(stats)
    }

    pub fn model(&self) -> &FsmcModel {
        &self.model
    }

    /// The success part of the split transition matrix.
    pub fn success_tpm(&self) -> &DMatrix<f64> {
        &self.success
    }

    /// The dropout part of the split transition matrix.
    pub fn dropout_tpm(&self) -> &DMatrix<f64> {
        &self.dropout
    }

    /// Cached `dropout^n`, `n <= max_burst`.
    pub fn dropout_power(&self, n: usize) -> &DMatrix<f64> {
        &self.dropout_powers[n]
    }

    /// Per-state probability of a successful delivery on the next step.
    pub fn success_mass(&self) -> &DVector<f64> {
        &self.success_mass
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Maximal number of consecutive dropouts retained by the truncation.
    pub fn max_burst(&self) -> usize {
        self.max_burst
    }

    /// Unconditional burst profile: component `i` is the probability that,
    /// starting from state `i`, the next `n` transmissions are lost with the
    /// chain landing in state `j`, and the one after that succeeds.
    pub fn burst_profile(&self, n: usize, end_state: usize) -> DVector<f64> {
        let col = self.dropout_powers[n].column(end_state);
        col * self.success_mass[end_state]
    }

    /// Conditional burst transition probability: given an acknowledged
    /// delivery with previous channel state `prev`, the probability that the
    /// next delivery arrives after exactly `n` dropouts with the chain
    /// observed in `end_state` at the last dropout step.
    pub fn burst_transition(&self, prev: usize, n: usize, end_state: usize) -> f64 {
        self.burst_trans[n][(prev, end_state)]
    }

    /// Marginal of [`Self::burst_transition`] over the end state.
    pub fn burst_length_prob(&self, prev: usize, n: usize) -> f64 {
        self.burst_len[(prev, n)]
    }

    /// Per-state mass missing from the truncated burst distribution,
    /// `1 - sum_n burst_length_prob`.
    pub fn truncation_shortfall(&self) -> DVector<f64> {
        let n_states = self.model.state_count();
        DVector::from_iterator(
            n_states,
            (0..n_states).map(|i| 1.0 - self.burst_len.row(i).sum()),
        )
    }

    /// Stationary distribution of the channel chain.
    pub fn stationary(&self) -> &DVector<f64> {
        &self.theta_stat
    }

    /// Long-run probability of a successful delivery, `stationary · delivery`.
    pub fn arrival_probability(&self) -> f64 {
        self.theta_stat.dot(self.model.delivery())
    }

    /// Steady state of the burst process: entry `(n, j)` is the long-run
    /// probability of an `n`-dropout burst ending with the chain in state `j`.
    pub fn burst_steady_state(&self) -> &DMatrix<f64> {
        &self.burst_stat
    }

    /// Initial burst distribution induced by a distribution over channel
    /// states: entry `(n, j)` is `theta · burst_profile(n, j)`.
    pub fn burst_seed_from(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        let n_states = self.model.state_count();
        let mut seed = DMatrix::zeros(self.max_burst + 1, n_states);
        for n in 0..=self.max_burst {
            for j in 0..n_states {
                seed[(n, j)] = theta.dot(&self.burst_profile(n, j));
            }
        }
        seed
    }

    /// Fixed point of the burst-distribution update from an arbitrary seed;
    /// the result is independent of the seed for ergodic channels. The final
    /// distribution is normalized to unit mass (the truncation at the maximal
    /// burst length sheds an epsilon-sized sliver per sweep).
    pub fn burst_fixed_point(&self, seed: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let n_states = self.model.state_count();
        let mut current = seed.clone();
        for _ in 0..STATIONARY_MAX_ITER {
            // The update only sees the end-state marginal of the current
            // distribution: next[(l, i)] = sum_j marginal[j] * profile(l, i)[j].
            let marginal =
                DVector::from_iterator(n_states, current.column_iter().map(|c| c.sum()));
            let mut next = DMatrix::zeros(self.max_burst + 1, n_states);
            for l in 0..=self.max_burst {
                for i in 0..n_states {
                    next[(l, i)] = marginal.dot(&self.burst_profile(l, i));
                }
            }
            let delta = linalg::max_abs_diff(&next, &current);
            current = next;
            if delta < STATIONARY_TOL {
                let total = current.sum();
                current /= total;
                return Ok(current);
            }
        }
        Err(Error::Convergence {
            what: "burst steady state",
            iterations: STATIONARY_MAX_ITER,
        })
    }
}

/// Graph-based ergodicity check for a row-stochastic matrix.
pub fn chain_ergodicity(tpm: &DMatrix<f64>) -> Ergodicity {
    let n = tpm.nrows();
    let adj: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| tpm[(i, j)] > 0.0).collect())
        .collect();
    let radj: Vec<Vec<usize>> = (0..n)
        .map(|j| (0..n).filter(|&i| tpm[(i, j)] > 0.0).collect())
        .collect();

    let fwd = reachable(&adj, 0);
    if let Some(missing) = (0..n).find(|&v| !fwd[v]) {
        return Ergodicity::Reducible(format!(
            "state s{} is unreachable from s1",
            missing + 1
        ));
    }
    let bwd = reachable(&radj, 0);
    if let Some(missing) = (0..n).find(|&v| !bwd[v]) {
        return Ergodicity::Reducible(format!("state s1 is unreachable from s{}", missing + 1));
    }

    // Period: gcd of level mismatches over all edges of the strongly
    // connected graph (BFS labelling from node 0).
    let mut level = vec![usize::MAX; n];
    level[0] = 0;
    let mut queue = std::collections::VecDeque::from([0usize]);
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if level[v] == usize::MAX {
                level[v] = level[u] + 1;
                queue.push_back(v);
            }
        }
    }
    let mut g = 0usize;
    for u in 0..n {
        for &v in &adj[u] {
            let diff = (level[u] as i64 + 1 - level[v] as i64).unsigned_abs() as usize;
            g = gcd(g, diff);
        }
    }
    if g == 1 {
        Ergodicity::Ergodic
    } else {
        Ergodicity::Periodic(g)
    }
}

fn describe(e: &Ergodicity) -> String {
    match e {
        Ergodicity::Ergodic => "ergodic".into(),
        Ergodicity::Reducible(why) => format!("reducible ({why})"),
        Ergodicity::Periodic(p) => format!("periodic with period {p}"),
    }
}

fn reachable(adj: &[Vec<usize>], start: usize) -> Vec<bool> {
    let mut seen = vec![false; adj.len()];
    seen[start] = true;
    let mut stack = vec![start];
    while let Some(u) = stack.pop() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                stack.push(v);
            }
        }
    }
    seen
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Stationary row vector of a row-stochastic matrix restricted to its single
/// recurrent class, by power iteration on the transpose.
pub(crate) fn stationary_of(
    tpm: &DMatrix<f64>,
    seed: &DVector<f64>,
    what: &'static str,
) -> Result<DVector<f64>> {
    let mut current = seed.clone();
    current /= current.sum();
    for _ in 0..STATIONARY_MAX_ITER {
        let mut next = tpm.tr_mul(&current);
        let total = next.sum();
        if total <= 0.0 {
            return Err(Error::NonErgodic(format!(
                "{what}: probability mass vanished during power iteration"
            )));
        }
        next /= total;
        let delta = (&next - &current).amax();
        current = next;
        if delta < STATIONARY_TOL {
            return Ok(current);
        }
    }
    Err(Error::Convergence {
        what: "stationary distribution power iteration",
        iterations: STATIONARY_MAX_ITER,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pendulum;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_state() -> FsmcModel {
        FsmcModel::new(
            DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.4, 0.6]),
            DVector::from_row_slice(&[0.8, 0.3]),
        )
        .unwrap()
    }

    #[test]
    fn rejects_malformed_models() {
        let bad_rows = FsmcModel::new(
            DMatrix::from_row_slice(2, 2, &[0.9, 0.2, 0.4, 0.6]),
            DVector::from_row_slice(&[0.8, 0.3]),
        );
        assert!(matches!(bad_rows, Err(Error::Validation(_))));

        let bad_delivery = FsmcModel::new(
            DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.4, 0.6]),
            DVector::from_row_slice(&[1.2, 0.3]),
        );
        assert!(matches!(bad_delivery, Err(Error::Validation(_))));

        let all_zero = FsmcModel::new(
            DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.4, 0.6]),
            DVector::from_row_slice(&[0.0, 0.0]),
        );
        assert!(matches!(all_zero, Err(Error::Validation(_))));

        let all_one = FsmcModel::new(
            DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.4, 0.6]),
            DVector::from_row_slice(&[1.0, 1.0]),
        );
        assert!(matches!(all_one, Err(Error::Validation(_))));

        // Starting from state 1 the chain can only move to state 2, which
        // never delivers: success is impossible on the next step.
        let degenerate = FsmcModel::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.5, 0.5]),
            DVector::from_row_slice(&[1.0, 0.0]),
        );
        assert!(matches!(
            degenerate,
            Err(Error::DegenerateState { state: 1 })
        ));
    }

    #[test]
    fn split_tpm_matches_elementwise_product() {
        let model = pendulum::channel();
        let (success, dropout) = model.split_tpm();
        // First entry of the bundled channel: 0.257 * 0.026.
        assert_abs_diff_eq!(success[(0, 0)], 0.006682, epsilon = 1e-12);
        assert_relative_eq!(&success + &dropout, *model.tpm(), epsilon = 1e-12);
        assert!(success.iter().all(|&v| v >= 0.0));
        assert!(dropout.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn split_tpm_half_delivery_halves_everything() {
        let tpm = DMatrix::from_row_slice(2, 2, &[0.7, 0.3, 0.2, 0.8]);
        let model = FsmcModel::new(tpm.clone(), DVector::from_element(2, 0.5)).unwrap();
        let (success, dropout) = model.split_tpm();
        assert_relative_eq!(success, tpm.clone() * 0.5, epsilon = 1e-15);
        assert_relative_eq!(dropout, tpm * 0.5, epsilon = 1e-15);
    }

    #[test]
    fn burst_profile_perfect_channel_is_unit_vector() {
        // A near-perfect channel is enough to exercise the formula with a
        // strictly perfect landing state.
        let model = FsmcModel::new(
            DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]),
            DVector::from_row_slice(&[1.0, 0.5]),
        )
        .unwrap();
        let stats = BurstStats::build(&model, f64::EPSILON).unwrap();
        // n = 0, end state 1: dropout^0 e_1 * success_mass[1].
        let profile = stats.burst_profile(0, 0);
        assert_relative_eq!(profile[0], stats.success_mass()[0], epsilon = 1e-15);
        assert_eq!(profile[1], 0.0);
    }

    #[test]
    fn burst_profile_matches_two_step_path_enumeration() {
        let model = pendulum::channel();
        let stats = BurstStats::build(&model, f64::EPSILON).unwrap();
        let n_states = model.state_count();
        let tpm = model.tpm();
        let d = model.delivery();
        // burst_profile(1, j)[i]: one dropout step i -> j, then a success
        // step from j to anywhere.
        let j = 3;
        let profile = stats.burst_profile(1, j);
        for i in 0..n_states {
            let direct: f64 = tpm[(i, j)]
                * (1.0 - d[j])
                * (0..n_states).map(|c| tpm[(j, c)] * d[c]).sum::<f64>();
            assert_abs_diff_eq!(profile[i], direct, epsilon = 1e-14);
        }
    }

    #[test]
    fn burst_profiles_cover_all_mass() {
        let stats = BurstStats::build(&pendulum::channel(), f64::EPSILON).unwrap();
        let n_states = 4;
        let mut cover = DVector::zeros(n_states);
        for n in 0..=stats.max_burst() {
            for j in 0..n_states {
                cover += stats.burst_profile(n, j);
            }
        }
        assert!(cover.iter().all(|&c| c >= 1.0 - f64::EPSILON));
    }

    #[test]
    fn burst_transition_single_state_perfect_like() {
        // Single-state channel with certain delivery is rejected (all-ones),
        // so use delivery 1 on one state of a two-state chain that never
        // leaves it: the burst transition from that state is concentrated
        // at length zero.
        let model = FsmcModel::new(
            DMatrix::from_row_slice(2, 2, &[1.0 - 1e-9, 1e-9, 0.5, 0.5]),
            DVector::from_row_slice(&[1.0, 0.0]),
        )
        .unwrap();
        let stats = BurstStats::build(&model, 1e-6).unwrap();
        assert_abs_diff_eq!(stats.burst_transition(0, 0, 0), 1.0, epsilon = 1e-8);
        for n in 1..=stats.max_burst() {
            assert!(stats.burst_transition(0, n, 0) < 1e-8);
        }
    }

    #[test]
    fn burst_length_rows_sum_to_one() {
        let stats = BurstStats::build(&pendulum::channel(), f64::EPSILON).unwrap();
        for i in 0..4 {
            let total: f64 = (0..=stats.max_burst())
                .map(|n| stats.burst_length_prob(i, n))
                .sum();
            assert!(
                (1.0 - total).abs() <= 10.0 * f64::EPSILON,
                "row {i} mass {total}"
            );
        }
        let shortfall = stats.truncation_shortfall();
        assert!(shortfall.iter().all(|&s| s <= 10.0 * f64::EPSILON));
    }

    #[test]
    fn max_burst_monotone_in_epsilon() {
        let model = pendulum::channel();
        let tight = BurstStats::build(&model, f64::EPSILON).unwrap();
        let loose = BurstStats::build(&model, 1e-6).unwrap();
        assert!(loose.max_burst() <= tight.max_burst());
        assert!(tight.max_burst() >= 1);
    }

    #[test]
    fn max_burst_cap_binds() {
        let err = BurstStats::build_capped(&pendulum::channel(), f64::EPSILON, 2).unwrap_err();
        assert!(matches!(err, Error::BurstCapExceeded { cap: 2, .. }));
    }

    #[test]
    fn max_burst_perfect_channel_is_one() {
        // Effectively lossless: dropout part is exactly zero in one state
        // chain... use two states with delivery 1 except an epsilon state
        // mass; instead, emulate the lossless case with delivery = 1 on all
        // reachable paths by a chain stuck in a perfect state.
        let model = FsmcModel::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]),
            DVector::from_row_slice(&[1.0, 0.5]),
        );
        // Identity chain is reducible, so stationary() would fail; bypass by
        // checking only the burst-length search on an ergodic near-lossless
        // channel.
        assert!(model.is_ok());
        let model = FsmcModel::new(
            DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]),
            DVector::from_row_slice(&[1.0, 1.0 - 1e-13]),
        )
        .unwrap();
        let stats = BurstStats::build(&model, 1e-9).unwrap();
        assert_eq!(stats.max_burst(), 1);
    }

    #[test]
    fn stationary_uniform_for_symmetric_chain() {
        let model = FsmcModel::new(
            DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]),
            DVector::from_row_slice(&[0.9, 0.1]),
        )
        .unwrap();
        let pi = model.stationary().unwrap();
        assert_relative_eq!(pi[0], 0.5, epsilon = 1e-12);
        assert_relative_eq!(pi[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn stationary_matches_linear_solve() {
        let model = two_state();
        let pi = model.stationary().unwrap();
        // Direct solve of (P^T - I) x = 0 with a normalization row appended.
        let n = model.state_count();
        let mut m = model.tpm().transpose() - DMatrix::identity(n, n);
        for j in 0..n {
            m[(n - 1, j)] = 1.0;
        }
        let mut rhs = DVector::zeros(n);
        rhs[n - 1] = 1.0;
        let direct = m.lu().solve(&rhs).unwrap();
        assert_relative_eq!(pi, direct, epsilon = 1e-11);
        // Stationarity and normalization.
        assert_abs_diff_eq!((model.tpm().tr_mul(&pi) - &pi).amax(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pi.sum(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn ergodicity_diagnoses_structure() {
        assert!(pendulum::channel().is_ergodic());

        let block = DMatrix::from_row_slice(
            4,
            4,
            &[
                0.5, 0.5, 0.0, 0.0, //
                0.5, 0.5, 0.0, 0.0, //
                0.0, 0.0, 0.5, 0.5, //
                0.0, 0.0, 0.5, 0.5,
            ],
        );
        assert!(matches!(chain_ergodicity(&block), Ergodicity::Reducible(_)));

        let perm = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert_eq!(chain_ergodicity(&perm), Ergodicity::Periodic(2));
    }

    #[test]
    fn burst_steady_state_normalized_and_seed_independent() {
        let stats = BurstStats::build(&pendulum::channel(), f64::EPSILON).unwrap();
        let pi = stats.burst_steady_state();
        assert!(pi.iter().all(|&p| p >= 0.0));
        assert_abs_diff_eq!(pi.sum(), 1.0, epsilon = 1e-10);

        let uniform_seed = DMatrix::from_element(
            stats.max_burst() + 1,
            4,
            1.0 / ((stats.max_burst() + 1) as f64 * 4.0),
        );
        let from_uniform = stats.burst_fixed_point(&uniform_seed).unwrap();
        assert!(linalg::max_abs_diff(pi, &from_uniform) < 1e-10);
    }

    #[test]
    fn sampled_trace_matches_exact_probabilities() {
        let model = two_state();
        let theta = model.stationary().unwrap();
        let mut rng = ChaCha8Rng::from_seed([11u8; 32]);
        let horizon = 1_000_000;
        let trace = model.sample_trace(&theta, horizon, &mut rng);

        let mut occupancy = [0usize; 2];
        let mut deliveries = [0usize; 2];
        for step in &trace {
            occupancy[step.state] += 1;
            if step.delivered {
                deliveries[step.state] += 1;
            }
        }
        for s in 0..2 {
            let n = occupancy[s] as f64;
            let p_hat = deliveries[s] as f64 / n;
            let p = model.delivery()[s];
            let sigma = (p * (1.0 - p) / n).sqrt();
            assert!(
                (p_hat - p).abs() <= 3.0 * sigma,
                "delivery frequency for s{} off: {p_hat} vs {p}",
                s + 1
            );
            // Occupancy within a 3-sigma binomial band around the stationary
            // mass (correlated samples make this a loose but safe bound).
            let occ_hat = occupancy[s] as f64 / horizon as f64;
            let occ_sigma = (theta[s] * (1.0 - theta[s]) / horizon as f64).sqrt();
            assert!(
                (occ_hat - theta[s]).abs() <= 12.0 * occ_sigma,
                "occupancy for s{} off: {occ_hat} vs {}",
                s + 1,
                theta[s]
            );
        }
    }

    #[test]
    fn perfect_delivery_state_always_delivers() {
        let model = FsmcModel::new(
            DMatrix::from_row_slice(2, 2, &[1.0 - 1e-12, 1e-12, 0.5, 0.5]),
            DVector::from_row_slice(&[1.0, 0.5]),
        )
        .unwrap();
        let init = DVector::from_row_slice(&[1.0, 0.0]);
        let mut rng = ChaCha8Rng::from_seed([3u8; 32]);
        let trace = model.sample_trace(&init, 10_000, &mut rng);
        assert!(trace
            .iter()
            .filter(|s| s.state == 0)
            .all(|s| s.delivered));
    }
}
