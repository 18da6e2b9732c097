//! Seeded Monte Carlo closed-loop simulation over the lossy link.
//!
//! A run combines independent process-noise traces with independent channel
//! traces; every (noise, channel) pair is one closed-loop sample. Per-pair
//! seeds are derived from the master seed and the pair indices, so results
//! are reproducible and independent of execution order and worker count.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fsmc::{ChannelStep, FsmcModel};
use crate::linalg;
use crate::lqr::{GainSchedule, PlantSpec};

const NOISE_STREAM: u64 = 0x6e6f_6973_65;
const CHANNEL_STREAM: u64 = 0x6368_616e;
/// Combos are simulated in parallel within fixed-size chunks and merged in
/// index order, keeping the aggregation order-insensitive.
const CHUNK: usize = 256;

/// Feedback policy driving the simulation.
#[derive(Debug, Clone)]
pub enum Policy {
    /// One gain per channel state, applied at every step.
    Stationary(Vec<DMatrix<f64>>),
    /// Time-varying finite-horizon schedule.
    Schedule(GainSchedule),
}

impl Policy {
    fn state_count(&self) -> usize {
        match self {
            Policy::Stationary(g) => g.len(),
            Policy::Schedule(s) => s.state_count(),
        }
    }

    fn gain(&self, k: usize, state: usize) -> &DMatrix<f64> {
        match self {
            Policy::Stationary(g) => &g[state],
            Policy::Schedule(s) => s.gain(k, state),
        }
    }
}

/// Full description of a Monte Carlo experiment.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub plant: PlantSpec,
    pub channel: FsmcModel,
    pub policy: Policy,
    /// Number of controlled steps; the terminal state is also recorded.
    pub horizon: usize,
    pub noise_traces: usize,
    pub channel_traces: usize,
    pub master_seed: u64,
    /// Distribution of the initial channel state.
    pub theta_init: DVector<f64>,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Validation("horizon must be at least 1".into()));
        }
        if self.noise_traces == 0 || self.channel_traces == 0 {
            return Err(Error::Validation("trace counts must be at least 1".into()));
        }
        let n_states = self.channel.state_count();
        if self.policy.state_count() != n_states {
            return Err(Error::Validation(format!(
                "policy covers {} channel states, channel has {n_states}",
                self.policy.state_count()
            )));
        }
        if let Policy::Schedule(s) = &self.policy {
            if s.horizon() < self.horizon {
                return Err(Error::Validation(format!(
                    "gain schedule covers {} steps, horizon needs {}",
                    s.horizon(),
                    self.horizon
                )));
            }
        }
        let gain = self.policy.gain(0, 0);
        if gain.nrows() != self.plant.input_dim() || gain.ncols() != self.plant.state_dim() {
            return Err(Error::Validation("gain dimensions do not match the plant".into()));
        }
        if self.theta_init.len() != n_states {
            return Err(Error::Validation(
                "initial channel distribution has the wrong length".into(),
            ));
        }
        if (self.theta_init.sum() - 1.0).abs() > 1e-10
            || self.theta_init.iter().any(|&p| p < 0.0)
        {
            return Err(Error::Validation(
                "initial channel distribution must be a probability vector".into(),
            ));
        }
        Ok(())
    }

    pub fn combo_count(&self) -> usize {
        self.noise_traces * self.channel_traces
    }
}

/// One recorded simulation step.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub step: usize,
    /// 0-based channel state at this step.
    pub channel_state: usize,
    pub delivered: bool,
    /// Consecutive-dropout counter observable at this step.
    pub burst: usize,
    pub state: DVector<f64>,
    /// Input applied by the actuators.
    pub input: DVector<f64>,
    /// Input commanded by the controller.
    pub command: DVector<f64>,
    pub step_cost: f64,
}

/// A simulated closed-loop trajectory. The final record carries the terminal
/// state with zero inputs and the terminal cost.
#[derive(Debug, Clone)]
pub struct SimTrace {
    pub noise_index: usize,
    pub channel_index: usize,
    pub steps: Vec<StepRecord>,
    pub total_cost: f64,
    pub divergent: bool,
    pub longest_burst: usize,
    /// Per-component maximum of |x| over the trace.
    pub peak: DVector<f64>,
}

/// Simulate one (noise, channel) combination.
pub fn simulate_trace(cfg: &SimConfig, noise_index: usize, channel_index: usize) -> Result<SimTrace> {
    cfg.validate()?;
    let factor = linalg::psd_factor(cfg.plant.sigma_w(), 1e-10)?;
    Ok(simulate_with_factor(cfg, &factor, noise_index, channel_index))
}

fn simulate_with_factor(
    cfg: &SimConfig,
    noise_factor: &DMatrix<f64>,
    noise_index: usize,
    channel_index: usize,
) -> SimTrace {
    let mut noise_rng =
        ChaCha8Rng::from_seed(substream_seed(cfg.master_seed, NOISE_STREAM, noise_index as u64));
    let mut channel_rng = ChaCha8Rng::from_seed(substream_seed(
        cfg.master_seed,
        CHANNEL_STREAM,
        channel_index as u64,
    ));
    let channel = cfg
        .channel
        .sample_trace(&cfg.theta_init, cfg.horizon + 1, &mut channel_rng);

    let plant = &cfg.plant;
    let n_x = plant.state_dim();
    let n_u = plant.input_dim();
    let phi = plant.phi_matrix();

    let mut steps = Vec::with_capacity(cfg.horizon + 1);
    let mut x = plant.x0().clone();
    let mut u_prev = DVector::zeros(n_u);
    let mut burst = 0usize;
    let mut longest_burst = 0usize;
    let mut run = 0usize;
    let mut total_cost = 0.0;
    let mut divergent = false;
    let mut peak = x.abs();

    for k in 0..cfg.horizon {
        let ChannelStep { state: theta, delivered } = channel[k];
        let observed = if k == 0 { theta } else { channel[k - 1].state };
        let command = cfg.policy.gain(k, observed) * &x;
        let input = if delivered {
            command.clone()
        } else {
            &phi * &u_prev
        };
        let step_cost = (x.transpose() * plant.q() * &x)[(0, 0)]
            + (input.transpose() * plant.r() * &input)[(0, 0)];
        total_cost += step_cost;
        steps.push(StepRecord {
            step: k,
            channel_state: theta,
            delivered,
            burst,
            state: x.clone(),
            input: input.clone(),
            command,
            step_cost,
        });

        if delivered {
            run = 0;
        } else {
            run += 1;
            longest_burst = longest_burst.max(run);
        }

        let noise = sample_noise(noise_factor, n_x, &mut noise_rng);
        x = plant.a() * &x + plant.b() * &input + noise;
        if !x.iter().all(|v| v.is_finite()) {
            divergent = true;
            break;
        }
        peak = peak.zip_map(&x.abs(), f64::max);
        burst = if delivered { 0 } else { burst + 1 };
        u_prev = input;
    }

    if !divergent {
        let terminal_cost = (x.transpose() * plant.q() * &x)[(0, 0)];
        total_cost += terminal_cost;
        let ChannelStep { state: theta, delivered } = channel[cfg.horizon];
        steps.push(StepRecord {
            step: cfg.horizon,
            channel_state: theta,
            delivered,
            burst,
            state: x.clone(),
            input: DVector::zeros(n_u),
            command: DVector::zeros(n_u),
            step_cost: terminal_cost,
        });
    }

    SimTrace {
        noise_index,
        channel_index,
        steps,
        total_cost,
        divergent,
        longest_burst,
        peak,
    }
}

/// Every step of the noise stream consumes exactly `n_x` standard normal
/// draws, so noise traces are identical across plant variants.
fn sample_noise(factor: &DMatrix<f64>, n_x: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let z = DVector::from_iterator(n_x, (0..n_x).map(|_| StandardNormal.sample(rng)));
    factor * z
}

/// Per-step percentile envelope of one state component across all traces.
#[derive(Debug, Clone)]
pub struct ComponentEnvelope {
    pub component: usize,
    pub median: Vec<f64>,
    pub p95: Vec<f64>,
    pub p999: Vec<f64>,
    pub max: Vec<f64>,
}

/// Aggregated Monte Carlo results.
#[derive(Debug, Clone)]
pub struct SimStats {
    pub horizon: usize,
    pub noise_traces: usize,
    pub channel_traces: usize,
    /// Horizon-normalized cost per combination, indexed by
    /// `noise_index * channel_traces + channel_index`; NaN for divergent
    /// traces (they are excluded from every aggregate).
    pub trace_costs: Vec<f64>,
    /// Per-component peak |x| per combination (same indexing).
    pub trace_peaks: Vec<DVector<f64>>,
    /// Longest dropout run per combination (same indexing).
    pub trace_longest_burst: Vec<usize>,
    pub divergent: usize,
    pub envelopes: Vec<ComponentEnvelope>,
    /// Longest-burst histogram over channel traces.
    pub longest_burst_hist: BTreeMap<usize, usize>,
}

/// Run the full noise x channel grid and aggregate.
pub fn monte_carlo(cfg: &SimConfig) -> Result<SimStats> {
    cfg.validate()?;
    let factor = linalg::psd_factor(cfg.plant.sigma_w(), 1e-10)?;
    let combos = cfg.combo_count();
    let n_x = cfg.plant.state_dim();

    let mut trace_costs = vec![f64::NAN; combos];
    let mut trace_peaks = vec![DVector::zeros(n_x); combos];
    let mut trace_longest = vec![0usize; combos];
    let mut divergent = 0usize;
    // Envelope buffers: values[comp][k][trace].
    let mut values: Vec<Vec<Vec<f64>>> =
        (0..n_x).map(|_| vec![Vec::new(); cfg.horizon + 1]).collect();

    let ids: Vec<usize> = (0..combos).collect();
    for chunk in ids.chunks(CHUNK) {
        let traces: Vec<SimTrace> = chunk
            .par_iter()
            .map(|&id| {
                let noise_index = id / cfg.channel_traces;
                let channel_index = id % cfg.channel_traces;
                simulate_with_factor(cfg, &factor, noise_index, channel_index)
            })
            .collect();
        for (offset, trace) in traces.into_iter().enumerate() {
            let id = chunk[offset];
            trace_longest[id] = trace.longest_burst;
            if trace.divergent {
                divergent += 1;
                continue;
            }
            trace_costs[id] = trace.total_cost / cfg.horizon as f64;
            trace_peaks[id] = trace.peak.clone();
            for record in &trace.steps {
                for comp in 0..n_x {
                    values[comp][record.step].push(record.state[comp]);
                }
            }
        }
    }

    let mut envelopes = Vec::with_capacity(n_x);
    for (comp, columns) in values.iter_mut().enumerate() {
        let mut env = ComponentEnvelope {
            component: comp,
            median: Vec::with_capacity(cfg.horizon + 1),
            p95: Vec::with_capacity(cfg.horizon + 1),
            p999: Vec::with_capacity(cfg.horizon + 1),
            max: Vec::with_capacity(cfg.horizon + 1),
        };
        for col in columns.iter_mut() {
            col.sort_by(f64::total_cmp);
            env.median.push(percentile_sorted(col, 0.5));
            env.p95.push(percentile_sorted(col, 0.95));
            env.p999.push(percentile_sorted(col, 0.999));
            env.max.push(col.last().copied().unwrap_or(f64::NAN));
        }
        envelopes.push(env);
    }

    // Longest-burst histogram per channel trace (channel evolution does not
    // depend on the noise index).
    let mut longest_burst_hist = BTreeMap::new();
    for channel_index in 0..cfg.channel_traces {
        let mut rng = ChaCha8Rng::from_seed(substream_seed(
            cfg.master_seed,
            CHANNEL_STREAM,
            channel_index as u64,
        ));
        let channel = cfg.channel.sample_trace(&cfg.theta_init, cfg.horizon, &mut rng);
        let mut longest = 0usize;
        let mut run = 0usize;
        for step in &channel {
            if step.delivered {
                run = 0;
            } else {
                run += 1;
                longest = longest.max(run);
            }
        }
        *longest_burst_hist.entry(longest).or_insert(0) += 1;
    }

    Ok(SimStats {
        horizon: cfg.horizon,
        noise_traces: cfg.noise_traces,
        channel_traces: cfg.channel_traces,
        trace_costs,
        trace_peaks,
        trace_longest_burst: trace_longest,
        divergent,
        envelopes,
        longest_burst_hist,
    })
}

/// Nearest-rank percentile of an ascending-sorted slice.
fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

impl SimStats {
    /// Horizon-normalized costs of the non-divergent traces.
    pub fn finite_costs(&self) -> Vec<f64> {
        self.trace_costs.iter().copied().filter(|c| c.is_finite()).collect()
    }

    /// Average cost after excluding the most expensive `(1 - quantile)`
    /// fraction of traces. `quantile = 1.0` averages everything.
    pub fn empirical_average_cost(&self, quantile: f64) -> Result<f64> {
        if !(0.0 < quantile && quantile <= 1.0) {
            return Err(Error::Validation(format!(
                "exclusion quantile must lie in (0, 1], got {quantile}"
            )));
        }
        let mut costs = self.finite_costs();
        if costs.is_empty() {
            return Err(Error::Precondition("no finite traces to average".into()));
        }
        costs.sort_by(f64::total_cmp);
        let keep = ((quantile * costs.len() as f64).round() as usize).clamp(1, costs.len());
        Ok(costs[..keep].iter().sum::<f64>() / keep as f64)
    }
}

/// Empirical second moment of the state at reception instants, with
/// per-combination partial sums for trace-level bootstrapping.
#[derive(Debug, Clone)]
pub struct ReceptionMoment {
    pub mean: DMatrix<f64>,
    pub samples: usize,
    /// Per-combination (sum of x x', sample count).
    pub per_trace: Vec<(DMatrix<f64>, usize)>,
}

/// Accumulate x x' at the steps with a successful delivery, skipping the
/// first `burn_in` steps of every trace.
pub fn reception_moment(cfg: &SimConfig, burn_in: usize) -> Result<ReceptionMoment> {
    cfg.validate()?;
    let factor = linalg::psd_factor(cfg.plant.sigma_w(), 1e-10)?;
    let n_x = cfg.plant.state_dim();
    let combos = cfg.combo_count();
    let per_trace: Vec<(DMatrix<f64>, usize)> = (0..combos)
        .into_par_iter()
        .map(|id| {
            let trace = simulate_with_factor(
                cfg,
                &factor,
                id / cfg.channel_traces,
                id % cfg.channel_traces,
            );
            let mut sum = DMatrix::zeros(n_x, n_x);
            let mut count = 0usize;
            if !trace.divergent {
                for record in &trace.steps {
                    if record.step >= burn_in && record.delivered {
                        sum += &record.state * record.state.transpose();
                        count += 1;
                    }
                }
            }
            (sum, count)
        })
        .collect();
    let samples: usize = per_trace.iter().map(|(_, c)| c).sum();
    if samples == 0 {
        return Err(Error::Precondition(
            "no reception samples collected (burn-in too long?)".into(),
        ));
    }
    let mut mean = DMatrix::zeros(n_x, n_x);
    for (sum, _) in &per_trace {
        mean += sum;
    }
    mean /= samples as f64;
    Ok(ReceptionMoment {
        mean,
        samples,
        per_trace,
    })
}

/// Stable, platform-independent derivation of per-stream RNG seeds.
pub(crate) fn substream_seed(master: u64, stream: u64, index: u64) -> [u8; 32] {
    fn splitmix64(state: &mut u64) -> u64 {
        *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = *state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    let mut state = master;
    let mut acc = splitmix64(&mut state);
    state ^= stream.wrapping_mul(0xA076_1D64_78BD_642F);
    acc ^= splitmix64(&mut state);
    state ^= index.wrapping_mul(0xE703_7ED1_A0B4_28DB);
    acc ^= splitmix64(&mut state);
    let mut seed = [0u8; 32];
    let mut word = acc;
    for chunk in seed.chunks_mut(8) {
        word = splitmix64(&mut word);
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    seed
}
