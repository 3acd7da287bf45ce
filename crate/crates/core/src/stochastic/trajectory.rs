use num_complex::Complex64;
use rayon::prelude::*;

use super::auxiliary::{make_aux, AuxKind, AuxiliarySystem};
use super::update::ConditionalMap;
use crate::error::{Error, Result};
use crate::fcs::{check_time, step_count};
use crate::model::{dissipator, LindbladTerm};
use crate::numerics::eigen::{hermitian_eigendecomposition, unitary_exp};
use crate::numerics::{rk4_step, ComplexMatrix, Distribution, GridSpec, RealMatrix, RngStream, UniformGrid};
use crate::separation::{residual_lindblad, SeparatedSetup};

/// Most negative eigenvalue tolerated in a conditioned state.
pub const POSITIVITY_TOLERANCE: f64 = 1e-6;
/// Largest fraction of trajectories that may abort before the ensemble fails.
pub const MAX_FAILURE_FRACTION: f64 = 1e-3;

/// Integrated outputs (separated coordinates) and conditioned state of one trajectory.
#[derive(Clone, Debug)]
pub struct TrajectoryState {
    pub s: Vec<f64>,
    pub r: ComplexMatrix,
    pub time: f64,
}

impl TrajectoryState {
    pub fn new(r: ComplexMatrix, n_detectors: usize) -> Self {
        Self {
            s: vec![0.0; n_detectors],
            r,
            time: 0.0,
        }
    }

    pub fn purity(&self) -> f64 {
        purity(&self.r)
    }
}

pub fn purity(r: &ComplexMatrix) -> f64 {
    let d = r.rows();
    let mut acc = 0.0;
    for a in 0..d {
        for b in 0..d {
            acc += (r[(a, b)] * r[(b, a)]).re;
        }
    }
    acc
}

/// Precomputed pieces of one time step: Hamiltonian propagator, residual
/// decoherence and one conditional map per detector.
#[derive(Clone, Debug)]
pub struct Stepper {
    dt: f64,
    sqrt_sdt: f64,
    propagator: Option<ComplexMatrix>,
    residual: Vec<LindbladTerm>,
    maps: Vec<ConditionalMap>,
}

impl Stepper {
    pub fn new(separated: &SeparatedSetup, aux: &AuxiliarySystem, dt: f64) -> Result<Self> {
        let s = separated.noise_scale;
        let h = &separated.base.hamiltonian;
        let propagator = if h.max_abs() == 0.0 { None } else { Some(unitary_exp(h, dt)?) };
        let maps = separated
            .b_ops
            .iter()
            .map(|b| ConditionalMap::new(b, dt, s, aux))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            dt,
            sqrt_sdt: (s * dt).sqrt(),
            propagator,
            residual: residual_lindblad(separated)?,
            maps,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn maps(&self) -> &[ConditionalMap] {
        &self.maps
    }

    /// Unitary part, residual decoherence, then one weak readout per detector.
    pub fn step(&self, state: &mut TrajectoryState, rng: &mut RngStream) -> Result<()> {
        let mut r = match &self.propagator {
            Some(u) => u.sandwich(&state.r),
            None => state.r.clone(),
        };
        if !self.residual.is_empty() {
            let d = r.rows();
            let next = rk4_step(
                |y| {
                    let m = ComplexMatrix::from_vec(d, d, y.to_vec()).expect("square state");
                    dissipator(&self.residual, &m).into_vec()
                },
                r.as_slice(),
                self.dt,
            );
            r = ComplexMatrix::from_vec(d, d, next)?;
        }
        for (i, map) in self.maps.iter().enumerate() {
            let c = map.sample(&r, rng)?;
            state.s[i] += self.sqrt_sdt * c;
            r = map.update(&r, c)?.0;
        }
        let trace = r.trace().re;
        if !(trace > 0.0) || !r.is_finite() {
            return Err(Error::NonFinite("conditioned state".into()));
        }
        let r = r.hermitian_part().scale_real(1.0 / trace);
        if r.rows() > 1 {
            let min = hermitian_eigendecomposition(&r)?.min_value();
            if min < -POSITIVITY_TOLERANCE {
                return Err(Error::PositivityLoss(min));
            }
        }
        state.r = r;
        state.time += self.dt;
        Ok(())
    }
}

/// Advances one trajectory by `dt`.
pub fn trajectory_step(
    state: &TrajectoryState,
    separated: &SeparatedSetup,
    aux: &AuxiliarySystem,
    dt: f64,
    rng: &mut RngStream,
) -> Result<TrajectoryState> {
    let stepper = Stepper::new(separated, aux, dt)?;
    let mut next = state.clone();
    stepper.step(&mut next, rng)?;
    Ok(next)
}

#[derive(Clone, Debug)]
pub struct EnsembleConfig {
    pub t: f64,
    pub dt: f64,
    pub n_traj: usize,
    pub aux: AuxKind,
    pub seed: u64,
    /// Histogram bins centred on the nodes of this grid, in the original outputs.
    pub histogram: Option<GridSpec>,
    /// Number of equally spaced intermediate snapshots of the ensemble state.
    pub checkpoints: usize,
    /// Keep every trajectory's final outputs.
    pub keep_outputs: bool,
}

impl EnsembleConfig {
    pub fn new(t: f64, dt: f64, n_traj: usize, aux: AuxKind, seed: u64) -> Self {
        Self {
            t,
            dt,
            n_traj,
            aux,
            seed,
            histogram: None,
            checkpoints: 0,
            keep_outputs: false,
        }
    }
}

/// Integer counts on bins centred at grid nodes, plus everything that fell outside.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub grid: UniformGrid,
    pub counts: Vec<u64>,
    pub overflow: u64,
}

impl Histogram {
    pub fn new(grid: UniformGrid) -> Self {
        let n = grid.len();
        Self {
            grid,
            counts: vec![0; n],
            overflow: 0,
        }
    }

    pub fn bin_of(&self, s: &[f64]) -> Option<usize> {
        let mut idx = Vec::with_capacity(s.len());
        for (axis, &x) in self.grid.axes.iter().zip(s) {
            let k = ((x - axis.start) / axis.step).round();
            if !(k >= 0.0 && k < axis.points as f64) {
                return None;
            }
            idx.push(k as usize);
        }
        Some(self.grid.flat(&idx))
    }

    pub fn add(&mut self, s: &[f64]) {
        match self.bin_of(s) {
            Some(k) => self.counts[k] += 1,
            None => self.overflow += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.overflow
    }

    /// Density estimate `count/(n·h^N)` at each node.
    pub fn to_distribution(&self) -> Distribution {
        let n = self.total().max(1) as f64;
        let volume = self.grid.cell_volume();
        let density = self.counts.iter().map(|&c| c as f64 / (n * volume)).collect();
        Distribution {
            grid: self.grid.clone(),
            density,
        }
    }
}

/// Ensemble statistics of the conditioned state at one time.
#[derive(Clone, Debug)]
pub struct StateSnapshot {
    pub time: f64,
    pub mean: ComplexMatrix,
    /// Standard error of the real and imaginary parts of each entry.
    pub stderr_re: RealMatrix,
    pub stderr_im: RealMatrix,
    pub mean_purity: f64,
    pub purity_stderr: f64,
}

#[derive(Clone, Debug)]
pub struct EnsembleResult {
    pub n_traj: usize,
    pub failed: usize,
    pub seed: u64,
    pub steps: usize,
    pub dt: f64,
    pub histogram: Option<Histogram>,
    /// Final outputs in the original coordinates, when kept.
    pub outputs: Vec<Vec<f64>>,
    pub mean_output: Vec<f64>,
    pub checkpoints: Vec<StateSnapshot>,
    pub final_state: StateSnapshot,
    /// Largest purity deviation from the initial state seen in any trajectory.
    pub max_purity_deviation: f64,
    /// Most negative eigenvalue seen in any conditioned state.
    pub min_eigenvalue: f64,
}

struct TrajectoryRecord {
    s: Vec<f64>,
    snapshots: Vec<ComplexMatrix>,
    max_purity_deviation: f64,
    min_eigenvalue: f64,
}

fn checkpoint_steps(steps: usize, checkpoints: usize) -> Vec<usize> {
    let mut marks: Vec<usize> = (1..=checkpoints).map(|k| (k * steps) / (checkpoints + 1)).filter(|&k| k > 0).collect();
    marks.dedup();
    marks
}

fn run_one(
    stepper: &Stepper,
    r0: &ComplexMatrix,
    n_detectors: usize,
    steps: usize,
    marks: &[usize],
    seed: u64,
    index: u64,
) -> Result<TrajectoryRecord> {
    let mut rng = RngStream::new(seed, index);
    let mut state = TrajectoryState::new(r0.clone(), n_detectors);
    let p0 = purity(r0);
    let mut max_dev: f64 = 0.0;
    let mut min_eig = f64::INFINITY;
    let mut snapshots = Vec::with_capacity(marks.len() + 1);
    let mut next_mark = marks.iter().peekable();
    for k in 1..=steps {
        stepper.step(&mut state, &mut rng)?;
        max_dev = max_dev.max((state.purity() - p0).abs());
        if next_mark.peek() == Some(&&k) {
            snapshots.push(state.r.clone());
            next_mark.next();
        }
    }
    if r0.rows() > 1 {
        min_eig = min_eig.min(hermitian_eigendecomposition(&state.r)?.min_value());
    }
    snapshots.push(state.r);
    Ok(TrajectoryRecord {
        s: state.s,
        snapshots,
        max_purity_deviation: max_dev,
        min_eigenvalue: min_eig,
    })
}

fn snapshot(time: f64, states: &[&ComplexMatrix]) -> StateSnapshot {
    let d = states[0].rows();
    let n = states.len() as f64;
    let mut mean = ComplexMatrix::zeros(d, d);
    let mut sq_re = RealMatrix::zeros(d, d);
    let mut sq_im = RealMatrix::zeros(d, d);
    let mut pur = 0.0;
    let mut pur_sq = 0.0;
    for r in states {
        for a in 0..d {
            for b in 0..d {
                let z = r[(a, b)];
                mean[(a, b)] += z;
                sq_re[(a, b)] += z.re * z.re;
                sq_im[(a, b)] += z.im * z.im;
            }
        }
        let p = purity(r);
        pur += p;
        pur_sq += p * p;
    }
    let mean = mean.scale_real(1.0 / n);
    let stderr = |sum_sq: f64, m: f64| {
        if n > 1.0 {
            ((sum_sq - n * m * m).max(0.0) / (n - 1.0) / n).sqrt()
        } else {
            0.0
        }
    };
    let stderr_re = RealMatrix::from_fn(d, d, |a, b| stderr(sq_re[(a, b)], mean[(a, b)].re));
    let stderr_im = RealMatrix::from_fn(d, d, |a, b| stderr(sq_im[(a, b)], mean[(a, b)].im));
    let mean_purity = pur / n;
    StateSnapshot {
        time,
        mean,
        stderr_re,
        stderr_im,
        mean_purity,
        purity_stderr: stderr(pur_sq, mean_purity),
    }
}

fn check_initial_state(r0: &ComplexMatrix, d: usize) -> Result<()> {
    if r0.rows() != d || r0.cols() != d {
        return Err(Error::DimensionMismatch(format!("initial state must be {d}x{d}")));
    }
    if !r0.is_finite() {
        return Err(Error::NonFinite("initial state".into()));
    }
    let trace = r0.trace();
    if (trace - Complex64::new(1.0, 0.0)).norm() > 1e-9 {
        return Err(Error::InvalidInput(format!("initial state has trace {trace}")));
    }
    if r0.hermiticity_defect() > 1e-12 {
        return Err(Error::NonHermitianInput {
            defect: r0.hermiticity_defect(),
            scale: r0.max_abs(),
        });
    }
    Ok(())
}

/// Runs `n_traj` seeded trajectories in parallel; trajectory `k` uses stream `(seed, k)`.
/// Results do not depend on the thread count.
pub fn run_ensemble(separated: &SeparatedSetup, r0: &ComplexMatrix, config: &EnsembleConfig) -> Result<EnsembleResult> {
    check_time(config.t, config.dt)?;
    if config.n_traj == 0 {
        return Err(Error::InvalidInput("need at least one trajectory".into()));
    }
    let d = separated.base.dim();
    check_initial_state(r0, d)?;
    let n_det = separated.n_detectors();
    let histogram = match config.histogram {
        Some(spec) => Some(Histogram::new(spec.grid(n_det)?)),
        None => None,
    };
    let steps = step_count(config.t, config.dt).max(1);
    let dt = config.t / steps as f64;
    let aux = make_aux(config.aux)?;
    let stepper = Stepper::new(separated, &aux, dt)?;
    let marks = checkpoint_steps(steps, config.checkpoints);

    let records: Vec<Result<TrajectoryRecord>> = (0..config.n_traj as u64)
        .into_par_iter()
        .map(|k| run_one(&stepper, r0, n_det, steps, &marks, config.seed, k))
        .collect();

    let mut ok = Vec::with_capacity(records.len());
    let mut failed = 0usize;
    let mut first_failure = None;
    for rec in records {
        match rec {
            Ok(r) => ok.push(r),
            Err(e) => {
                failed += 1;
                first_failure.get_or_insert_with(|| e.to_string());
            }
        }
    }
    if failed as f64 > MAX_FAILURE_FRACTION * config.n_traj as f64 || ok.is_empty() {
        return Err(Error::TrajectoryFailures {
            failed,
            total: config.n_traj,
            first: first_failure.unwrap_or_default(),
        });
    }

    let mut histogram = histogram;
    let mut outputs = Vec::new();
    let mut mean_output = vec![0.0; n_det];
    for rec in &ok {
        let s = separated.to_original(&rec.s);
        if let Some(h) = histogram.as_mut() {
            h.add(&s);
        }
        for (m, x) in mean_output.iter_mut().zip(&s) {
            *m += x;
        }
        if config.keep_outputs {
            outputs.push(s);
        }
    }
    mean_output.iter_mut().for_each(|m| *m /= ok.len() as f64);

    let checkpoints = marks
        .iter()
        .enumerate()
        .map(|(j, &k)| {
            let states: Vec<&ComplexMatrix> = ok.iter().map(|r| &r.snapshots[j]).collect();
            snapshot(k as f64 * dt, &states)
        })
        .collect();
    let finals: Vec<&ComplexMatrix> = ok.iter().map(|r| r.snapshots.last().expect("final state")).collect();
    let final_state = snapshot(steps as f64 * dt, &finals);

    Ok(EnsembleResult {
        n_traj: config.n_traj,
        failed,
        seed: config.seed,
        steps,
        dt,
        histogram,
        outputs,
        mean_output,
        checkpoints,
        final_state,
        max_purity_deviation: ok.iter().map(|r| r.max_purity_deviation).fold(0.0, f64::max),
        min_eigenvalue: ok.iter().map(|r| r.min_eigenvalue).fold(f64::INFINITY, f64::min),
    })
}
