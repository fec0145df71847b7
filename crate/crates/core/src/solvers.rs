//! Reference integrators, initial conditions and multi-scale trajectory
//! generation for the four supported PDE cases.
//!
//! Every case is advanced with classic RK4 at a fixed substep `dt_sub =
//! dt_micro / substeps`. Spatial operators are built from the stencils in
//! [`crate::physics`] with periodic wrap-around:
//!
//! | case        | equation                                               |
//! |-------------|--------------------------------------------------------|
//! | `kdv`       | `u_t = -(u²/2)_x - u_xxx` (flux form)                  |
//! | `burgers2d` | `u_t = -u u_x - v u_y + ν∇²u`, same for `v`            |
//! | `fn2d`      | `u_t = μ_u∇²u + u - u³ - v + α`, `v_t = μ_v∇²v + β(u - v)` |
//! | `gs2d`      | `u_t = D_u∇²u - uv² + F(1-u)`, `v_t = D_v∇²v + uv² - (F+k)v` |

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{Burst, MultiScaleTrajectory};
use crate::error::{PimrlError, Result};
use crate::physics::{apply_stencil_channel, d3x_stencil, laplacian_stencil, Stencil};
use crate::rng::SplitMix64;
use crate::tensor::{Field, Tensor};

const IC_STREAM: u64 = 1;
const BURST_STREAM: u64 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaseKind {
    Kdv,
    Burgers2d,
    Fn2d,
    Gs2d,
}

impl CaseKind {
    pub const ALL: [CaseKind; 4] = [CaseKind::Kdv, CaseKind::Burgers2d, CaseKind::Fn2d, CaseKind::Gs2d];

    pub fn name(self) -> &'static str {
        match self {
            CaseKind::Kdv => "kdv",
            CaseKind::Burgers2d => "burgers2d",
            CaseKind::Fn2d => "fn2d",
            CaseKind::Gs2d => "gs2d",
        }
    }

    pub fn n_fields(self) -> usize {
        match self {
            CaseKind::Kdv => 1,
            _ => 2,
        }
    }

    pub fn dims(self) -> usize {
        match self {
            CaseKind::Kdv => 1,
            _ => 2,
        }
    }

    pub fn field_names(self) -> Vec<String> {
        match self {
            CaseKind::Kdv => vec!["u".into()],
            _ => vec!["u".into(), "v".into()],
        }
    }

    /// Grid resolution and domain length at full scale; smaller grids keep
    /// `dx` and shrink the domain.
    fn reference_grid(self) -> (usize, f64) {
        match self {
            CaseKind::Kdv => (256, 64.0),
            CaseKind::Burgers2d => (128, 1.0),
            CaseKind::Fn2d => (128, 128.0),
            CaseKind::Gs2d => (128, 1.0),
        }
    }

    pub fn default_dt_micro(self) -> f64 {
        match self {
            CaseKind::Kdv => 0.01,
            CaseKind::Burgers2d => 0.001,
            CaseKind::Fn2d => 0.002,
            CaseKind::Gs2d => 0.5,
        }
    }

    fn default_substeps(self) -> usize {
        match self {
            CaseKind::Kdv => 100,
            CaseKind::Burgers2d | CaseKind::Fn2d => 10,
            CaseKind::Gs2d => 50,
        }
    }

    pub fn default_params(self) -> BTreeMap<String, f64> {
        let pairs: &[(&str, f64)] = match self {
            CaseKind::Kdv => &[],
            CaseKind::Burgers2d => &[("nu", 0.005)],
            CaseKind::Fn2d => &[("alpha", 0.01), ("beta", 0.25), ("mu_u", 1.0), ("mu_v", 100.0)],
            CaseKind::Gs2d => &[("d_u", 2.0e-5), ("d_v", 5.0e-6), ("feed", 0.04), ("kill", 0.06)],
        };
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }
}

impl fmt::Display for CaseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CaseKind {
    type Err = PimrlError;

    fn from_str(s: &str) -> Result<Self> {
        CaseKind::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| PimrlError::Config(format!("unknown case `{s}` (expected kdv, burgers2d, fn2d or gs2d)")))
    }
}

/// One PDE problem: equation, grid, constants and integrator settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdeCase {
    pub name: CaseKind,
    /// Grid points per spatial dimension.
    pub grid: usize,
    pub domain_length: f64,
    pub params: BTreeMap<String, f64>,
    /// Micro (fine) sampling interval δt.
    pub dt_micro: f64,
    /// RK4 substeps per micro interval.
    pub substeps: usize,
    /// Micro intervals integrated and discarded before recording (FN only).
    pub warmup_micro_steps: usize,
}

impl PdeCase {
    /// Case with the published constants on an `grid`-point grid at the
    /// reference spacing.
    pub fn new(name: CaseKind, grid: usize) -> Self {
        let (n_ref, l_ref) = name.reference_grid();
        Self {
            name,
            grid,
            domain_length: l_ref * grid as f64 / n_ref as f64,
            params: name.default_params(),
            dt_micro: name.default_dt_micro(),
            substeps: name.default_substeps(),
            warmup_micro_steps: if name == CaseKind::Fn2d { 200 * 15 } else { 0 },
        }
    }

    pub fn n_fields(&self) -> usize {
        self.name.n_fields()
    }

    pub fn dims(&self) -> usize {
        self.name.dims()
    }

    pub fn dx(&self) -> f64 {
        self.domain_length / self.grid as f64
    }

    pub fn dt_sub(&self) -> f64 {
        self.dt_micro / self.substeps as f64
    }

    /// `[n_fields, grid]` or `[n_fields, grid, grid]`.
    pub fn field_shape(&self) -> Vec<usize> {
        let mut s = vec![self.n_fields()];
        s.extend(std::iter::repeat_n(self.grid, self.dims()));
        s
    }

    pub fn param(&self, key: &str) -> Result<f64> {
        self.params
            .get(key)
            .copied()
            .ok_or_else(|| PimrlError::Config(format!("case {} is missing parameter `{key}`", self.name)))
    }

    pub fn validate(&self) -> Result<()> {
        let expected = self.name.default_params();
        if expected.keys().ne(self.params.keys()) {
            return Err(PimrlError::Config(format!(
                "case {} expects parameters {:?}, got {:?}",
                self.name,
                expected.keys().collect::<Vec<_>>(),
                self.params.keys().collect::<Vec<_>>()
            )));
        }
        let min_grid = if self.name == CaseKind::Kdv { 5 } else { 3 };
        if self.grid < min_grid || !(self.domain_length > 0.0) {
            return Err(PimrlError::Config(format!("case {}: degenerate grid", self.name)));
        }
        if !(self.dt_micro > 0.0) || self.substeps == 0 {
            return Err(PimrlError::Config(format!("case {}: dt_micro and substeps must be positive", self.name)));
        }
        Ok(())
    }

    /// Known linear terms as `(stencil, per-field coefficients)`: these are
    /// what the micro network hard-codes as fixed convolutions.
    pub fn known_terms(&self) -> Result<Vec<(Stencil, Vec<f64>)>> {
        let h = self.dx();
        Ok(match self.name {
            CaseKind::Kdv => vec![(d3x_stencil(h)?, vec![-1.0])],
            CaseKind::Burgers2d => {
                let nu = self.param("nu")?;
                vec![(laplacian_stencil(h, 2)?, vec![nu, nu])]
            }
            CaseKind::Fn2d => vec![(
                laplacian_stencil(h, 2)?,
                vec![self.param("mu_u")?, self.param("mu_v")?],
            )],
            CaseKind::Gs2d => vec![(
                laplacian_stencil(h, 2)?,
                vec![self.param("d_u")?, self.param("d_v")?],
            )],
        })
    }
}

/// Right-hand side evaluator with scratch buffers, reused across RK4 stages.
struct Rhs {
    case: PdeCase,
    lap: Option<Stencil>,
    d3: Option<Stencil>,
    scratch: Vec<f64>,
}

impl Rhs {
    fn new(case: &PdeCase) -> Result<Self> {
        case.validate()?;
        let h = case.dx();
        let (lap, d3) = match case.name {
            CaseKind::Kdv => (None, Some(d3x_stencil(h)?)),
            _ => (Some(laplacian_stencil(h, 2)?), None),
        };
        Ok(Self {
            case: case.clone(),
            lap,
            d3,
            scratch: Vec::new(),
        })
    }

    fn eval(&mut self, u: &[f64], out: &mut [f64]) -> Result<()> {
        let n = self.case.grid;
        let h = self.case.dx();
        out.fill(0.0);
        match self.case.name {
            CaseKind::Kdv => {
                let d3 = self.d3.as_ref().expect("kdv stencil");
                // -u_xxx
                self.scratch.clear();
                self.scratch.resize(n, 0.0);
                apply_stencil_channel(u, &[n], d3, &mut self.scratch);
                for i in 0..n {
                    let ip = (i + 1) % n;
                    let im = (i + n - 1) % n;
                    let flux_right = 0.25 * (u[i] * u[i] + u[ip] * u[ip]);
                    let flux_left = 0.25 * (u[im] * u[im] + u[i] * u[i]);
                    out[i] = -(flux_right - flux_left) / h - self.scratch[i];
                }
            }
            kind => {
                let plane = n * n;
                let lap = self.lap.as_ref().expect("laplacian");
                self.scratch.clear();
                self.scratch.resize(2 * plane, 0.0);
                let (lu, lv) = self.scratch.split_at_mut(plane);
                let (fu, fv) = u.split_at(plane);
                apply_stencil_channel(fu, &[n, n], lap, lu);
                apply_stencil_channel(fv, &[n, n], lap, lv);
                let (ou, ov) = out.split_at_mut(plane);
                match kind {
                    CaseKind::Gs2d => {
                        let du = self.case.param("d_u")?;
                        let dv = self.case.param("d_v")?;
                        let feed = self.case.param("feed")?;
                        let kill = self.case.param("kill")?;
                        for p in 0..plane {
                            let (a, b) = (fu[p], fv[p]);
                            let uvv = a * b * b;
                            ou[p] = du * lu[p] - uvv + feed * (1.0 - a);
                            ov[p] = dv * lv[p] + uvv - (feed + kill) * b;
                        }
                    }
                    CaseKind::Fn2d => {
                        let mu_u = self.case.param("mu_u")?;
                        let mu_v = self.case.param("mu_v")?;
                        let alpha = self.case.param("alpha")?;
                        let beta = self.case.param("beta")?;
                        for p in 0..plane {
                            let (a, b) = (fu[p], fv[p]);
                            ou[p] = mu_u * lu[p] + a - a * a * a - b + alpha;
                            ov[p] = mu_v * lv[p] + (a - b) * beta;
                        }
                    }
                    CaseKind::Burgers2d => {
                        let nu = self.case.param("nu")?;
                        let inv2h = 0.5 / h;
                        for y in 0..n {
                            let yp = (y + 1) % n;
                            let ym = (y + n - 1) % n;
                            for x in 0..n {
                                let xp = (x + 1) % n;
                                let xm = (x + n - 1) % n;
                                let p = y * n + x;
                                let (a, b) = (fu[p], fv[p]);
                                let ux = (fu[y * n + xp] - fu[y * n + xm]) * inv2h;
                                let uy = (fu[yp * n + x] - fu[ym * n + x]) * inv2h;
                                let vx = (fv[y * n + xp] - fv[y * n + xm]) * inv2h;
                                let vy = (fv[yp * n + x] - fv[ym * n + x]) * inv2h;
                                ou[p] = -a * ux - b * uy + nu * lu[p];
                                ov[p] = -a * vx - b * vy + nu * lv[p];
                            }
                        }
                    }
                    CaseKind::Kdv => unreachable!(),
                }
            }
        }
        Ok(())
    }
}

/// Classic RK4 stepper for one case.
pub struct Integrator {
    rhs: Rhs,
    dt: f64,
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    stage: Vec<f64>,
}

impl Integrator {
    pub fn new(case: &PdeCase) -> Result<Self> {
        let len: usize = case.field_shape().iter().product();
        Ok(Self {
            rhs: Rhs::new(case)?,
            dt: case.dt_sub(),
            k1: vec![0.0; len],
            k2: vec![0.0; len],
            k3: vec![0.0; len],
            k4: vec![0.0; len],
            stage: vec![0.0; len],
        })
    }

    /// Advances `u` in place by one substep.
    pub fn step(&mut self, u: &mut [f64]) -> Result<()> {
        let dt = self.dt;
        self.rhs.eval(u, &mut self.k1)?;
        for ((s, a), k) in self.stage.iter_mut().zip(u.iter()).zip(&self.k1) {
            *s = a + 0.5 * dt * k;
        }
        self.rhs.eval(&self.stage, &mut self.k2)?;
        for ((s, a), k) in self.stage.iter_mut().zip(u.iter()).zip(&self.k2) {
            *s = a + 0.5 * dt * k;
        }
        self.rhs.eval(&self.stage, &mut self.k3)?;
        for ((s, a), k) in self.stage.iter_mut().zip(u.iter()).zip(&self.k3) {
            *s = a + dt * k;
        }
        self.rhs.eval(&self.stage, &mut self.k4)?;
        for (i, a) in u.iter_mut().enumerate() {
            *a += dt / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
        Ok(())
    }

    /// Advances by one micro interval (`substeps` RK4 steps), failing on
    /// non-finite values with the 1-based micro step index.
    pub fn micro_step(&mut self, u: &mut [f64], substeps: usize, step_index: usize) -> Result<()> {
        for _ in 0..substeps {
            self.step(u)?;
        }
        if u.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(PimrlError::Divergence {
                phase: "reference solver",
                step: step_index,
            })
        }
    }
}

/// Time derivative of `state` under the case's full PDE.
pub fn pde_rhs(case: &PdeCase, state: &Field) -> Result<Field> {
    check_state(case, state)?;
    let mut rhs = Rhs::new(case)?;
    let mut out = vec![0.0; state.len()];
    rhs.eval(state.data(), &mut out)?;
    Tensor::new(state.shape().to_vec(), out)
}

/// One RK4 substep of length `case.dt_sub()`.
pub fn step_reference(case: &PdeCase, state: &Field) -> Result<Field> {
    check_state(case, state)?;
    let mut integ = Integrator::new(case)?;
    let mut u = state.data().to_vec();
    integ.step(&mut u)?;
    if !u.iter().all(|v| v.is_finite()) {
        return Err(PimrlError::Divergence {
            phase: "reference solver",
            step: 1,
        });
    }
    Tensor::new(state.shape().to_vec(), u)
}

fn check_state(case: &PdeCase, state: &Field) -> Result<()> {
    let shape = case.field_shape();
    if state.shape() != shape.as_slice() {
        return Err(PimrlError::ShapeMismatch {
            op: "step_reference",
            lhs: shape,
            rhs: state.shape().to_vec(),
        });
    }
    Ok(())
}

/// Deterministic initial condition for `(case, seed)`.
pub fn generate_ic(case: &PdeCase, seed: u64) -> Result<Field> {
    case.validate()?;
    let mut rng = SplitMix64::derive(seed, IC_STREAM);
    let n = case.grid;
    let l = case.domain_length;
    let dx = case.dx();
    let shape = case.field_shape();
    let field = match case.name {
        CaseKind::Kdv => {
            let modes: Vec<(f64, f64, f64)> = (0..4)
                .map(|_| {
                    let amp = rng.uniform(-1.0, 1.0);
                    let wave = rng.int_in(1, 8) as f64;
                    let phase = rng.uniform(0.0, 2.0 * PI);
                    (amp, wave, phase)
                })
                .collect();
            Tensor::from_fn(&shape, |i| {
                let x = i as f64 * dx;
                modes
                    .iter()
                    .map(|(a, k, p)| a * (2.0 * PI * k * x / l + p).sin())
                    .sum()
            })
        }
        CaseKind::Burgers2d => {
            const MODES: usize = 8;
            let sigma = 0.5 / (MODES as f64).sqrt();
            let mut data = vec![0.0; 2 * n * n];
            for ch in 0..2 {
                let modes: Vec<(f64, f64, f64, f64)> = (0..MODES)
                    .map(|_| {
                        let amp = sigma * rng.normal();
                        let (mut kx, mut ky) = (0, 0);
                        while kx == 0 && ky == 0 {
                            kx = rng.int_in(-3, 3);
                            ky = rng.int_in(-3, 3);
                        }
                        let phase = rng.uniform(0.0, 2.0 * PI);
                        (amp, kx as f64, ky as f64, phase)
                    })
                    .collect();
                for y in 0..n {
                    for x in 0..n {
                        let (px, py) = (x as f64 * dx, y as f64 * dx);
                        data[ch * n * n + y * n + x] = modes
                            .iter()
                            .map(|(a, kx, ky, p)| a * (2.0 * PI * (kx * px + ky * py) / l + p).sin())
                            .sum();
                    }
                }
            }
            Tensor::new(shape, data)?
        }
        CaseKind::Fn2d => {
            let mut u: Vec<f64> = (0..2 * n * n).map(|_| rng.normal()).collect();
            let mut integ = Integrator::new(case)?;
            for step in 1..=case.warmup_micro_steps {
                integ.micro_step(&mut u, case.substeps, step)?;
            }
            Tensor::new(shape, u)?
        }
        CaseKind::Gs2d => {
            let plane = n * n;
            let mut data = vec![0.0; 2 * plane];
            data[..plane].fill(1.0);
            let side = 10.min(n);
            for _ in 0..3 {
                let (y0, x0) = (rng.index(n), rng.index(n));
                for dy in 0..side {
                    for dx_ in 0..side {
                        let p = ((y0 + dy) % n) * n + (x0 + dx_) % n;
                        data[p] = 0.5;
                        data[plane + p] = 0.25;
                    }
                }
            }
            for v in data.iter_mut() {
                *v *= 1.0 + 0.01 * rng.uniform(-1.0, 1.0);
            }
            Tensor::new(shape, data)?
        }
    };
    Ok(field)
}

/// Placement of fine-interval bursts within one trajectory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BurstSpec {
    pub burst_len: usize,
    /// Macro indices at which each burst starts, sorted.
    pub start_indices: Vec<usize>,
}

impl BurstSpec {
    pub fn none() -> Self {
        Self {
            burst_len: 0,
            start_indices: Vec::new(),
        }
    }

    pub fn at(start_indices: Vec<usize>, burst_len: usize) -> Self {
        let mut start_indices = start_indices;
        start_indices.sort_unstable();
        Self {
            burst_len,
            start_indices,
        }
    }

    pub fn n_bursts(&self) -> usize {
        self.start_indices.len()
    }

    /// Draws `n_bursts` non-overlapping, macro-aligned bursts of `burst_len`
    /// micro frames that fit before the last macro frame.
    pub fn sample(n_bursts: usize, burst_len: usize, k: usize, n_macro_frames: usize, rng: &mut SplitMix64) -> Result<Self> {
        if n_bursts == 0 {
            return Ok(Self::none());
        }
        let last_micro = (n_macro_frames.saturating_sub(1)) * k;
        if burst_len == 0 || burst_len - 1 > last_micro {
            return Err(PimrlError::InvalidArgument(format!(
                "burst of {burst_len} frames does not fit a horizon of {last_micro} micro steps"
            )));
        }
        let max_start = (last_micro - (burst_len - 1)) / k;
        let mut starts: Vec<usize> = Vec::with_capacity(n_bursts);
        let mut attempts = 0;
        while starts.len() < n_bursts {
            attempts += 1;
            if attempts > 10_000 {
                return Err(PimrlError::InvalidArgument(format!(
                    "cannot place {n_bursts} non-overlapping bursts of {burst_len} frames in {n_macro_frames} macro frames"
                )));
            }
            let s = rng.index(max_start + 1);
            let overlaps = starts.iter().any(|t| {
                let (a0, a1) = (s * k, s * k + burst_len - 1);
                let (b0, b1) = (t * k, t * k + burst_len - 1);
                a0 <= b1 && b0 <= a1
            });
            if !overlaps {
                starts.push(s);
            }
        }
        Ok(Self::at(starts, burst_len))
    }
}

/// How to sample one trajectory in time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub t_end: f64,
    /// Micro steps per macro interval.
    pub k: usize,
    pub n_bursts: usize,
    pub burst_len: usize,
}

impl SimConfig {
    /// Eight bursts of `2k + 1` frames.
    pub fn new(t_end: f64, k: usize) -> Self {
        Self {
            t_end,
            k,
            n_bursts: 8,
            burst_len: 2 * k + 1,
        }
    }
}

/// Number of macro intervals in `t_end`, requiring an integer multiple of `dt_macro`.
pub fn macro_intervals(t_end: f64, dt_macro: f64) -> Result<usize> {
    let ratio = t_end / dt_macro;
    let n = ratio.round();
    if !(n >= 1.0) || (ratio - n).abs() > 1e-9 * ratio.max(1.0) {
        return Err(PimrlError::InvalidArgument(format!(
            "t_end {t_end} is not a positive integer multiple of the macro step {dt_macro}"
        )));
    }
    Ok(n as usize)
}

/// Integrates one trajectory and samples macro frames every `k` micro steps
/// plus micro-spaced bursts, all from the same fine run.
pub fn simulate(case: &PdeCase, seed: u64, sim: &SimConfig) -> Result<MultiScaleTrajectory> {
    let mut rng = SplitMix64::derive(seed, BURST_STREAM);
    let k = sim.k;
    if k == 0 {
        return Err(PimrlError::InvalidArgument("k must be >= 1".into()));
    }
    let dt_macro = k as f64 * case.dt_micro;
    let n_intervals = macro_intervals(sim.t_end, dt_macro)?;
    let bursts = BurstSpec::sample(sim.n_bursts, sim.burst_len, k, n_intervals + 1, &mut rng)?;
    simulate_with_bursts(case, seed, n_intervals, k, &bursts)
}

/// [`simulate`] with explicit burst placement.
pub fn simulate_with_bursts(
    case: &PdeCase,
    seed: u64,
    n_intervals: usize,
    k: usize,
    bursts: &BurstSpec,
) -> Result<MultiScaleTrajectory> {
    let total_micro = n_intervals * k;
    for s in &bursts.start_indices {
        if bursts.burst_len == 0 || s * k + bursts.burst_len - 1 > total_micro {
            return Err(PimrlError::InvalidArgument(format!(
                "burst at macro index {s} with {} frames runs past the horizon",
                bursts.burst_len
            )));
        }
    }
    let ic = generate_ic(case, seed)?;
    let shape = ic.shape().to_vec();
    let mut u = ic.into_data();
    let mut integ = Integrator::new(case)?;
    let mut macro_frames = Vec::with_capacity(n_intervals + 1);
    let mut burst_frames: Vec<Vec<Field>> = vec![Vec::new(); bursts.n_bursts()];
    let mut record = |m: usize, u: &[f64], macro_frames: &mut Vec<Field>| -> Result<()> {
        if m % k == 0 {
            macro_frames.push(Tensor::new(shape.clone(), u.to_vec())?);
        }
        for (b, s) in bursts.start_indices.iter().enumerate() {
            let first = s * k;
            if m >= first && m < first + bursts.burst_len {
                burst_frames[b].push(Tensor::new(shape.clone(), u.to_vec())?);
            }
        }
        Ok(())
    };
    record(0, &u, &mut macro_frames)?;
    for m in 1..=total_micro {
        integ.micro_step(&mut u, case.substeps, m)?;
        record(m, &u, &mut macro_frames)?;
    }
    let bursts = bursts
        .start_indices
        .iter()
        .zip(burst_frames)
        .map(|(s, frames)| Burst {
            start_macro_index: *s,
            frames,
        })
        .collect();
    Ok(MultiScaleTrajectory {
        case: case.name,
        field_names: case.name.field_names(),
        grid: shape[1..].to_vec(),
        domain_length: case.domain_length,
        dt_micro: case.dt_micro,
        k,
        seed,
        params: case.params.clone(),
        macro_frames,
        bursts,
        times: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_scaling_keeps_dx() {
        let full = PdeCase::new(CaseKind::Gs2d, 128);
        let desk = PdeCase::new(CaseKind::Gs2d, 48);
        assert_eq!(full.dx(), desk.dx());
        assert!((desk.domain_length - 0.375).abs() < 1e-15);
        assert_eq!(PdeCase::new(CaseKind::Kdv, 256).domain_length, 64.0);
        assert_eq!(PdeCase::new(CaseKind::Kdv, 128).dx(), 0.25);
    }

    #[test]
    fn case_names_round_trip() {
        for c in CaseKind::ALL {
            assert_eq!(c.name().parse::<CaseKind>().unwrap(), c);
        }
        assert!("heat".parse::<CaseKind>().is_err());
    }

    #[test]
    fn params_must_match_case() {
        let mut c = PdeCase::new(CaseKind::Gs2d, 16);
        c.params.insert("nu".into(), 0.1);
        assert!(c.validate().is_err());
    }

    #[test]
    fn ic_deterministic() {
        for kind in CaseKind::ALL {
            let mut c = PdeCase::new(kind, 16);
            c.warmup_micro_steps = 10;
            let a = generate_ic(&c, 42).unwrap();
            let b = generate_ic(&c, 42).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.shape(), c.field_shape().as_slice());
            assert_ne!(a, generate_ic(&c, 43).unwrap());
        }
    }

    #[test]
    fn gs_fixed_point_is_unchanged() {
        let c = PdeCase::new(CaseKind::Gs2d, 16);
        let mut u = Tensor::zeros(&c.field_shape());
        u.channel_mut(0).fill(1.0);
        let next = step_reference(&c, &u).unwrap();
        assert_eq!(next, u);
    }

    #[test]
    fn burgers_constant_is_unchanged() {
        let c = PdeCase::new(CaseKind::Burgers2d, 16);
        let mut u = Tensor::zeros(&c.field_shape());
        u.channel_mut(0).fill(0.3);
        u.channel_mut(1).fill(-0.2);
        let next = step_reference(&c, &u).unwrap();
        assert_eq!(next, u);
    }

    #[test]
    fn kdv_step_conserves_mass() {
        let c = PdeCase::new(CaseKind::Kdv, 128);
        let x0 = c.domain_length / 2.0;
        let u = Tensor::from_fn(&c.field_shape(), |i| {
            let x = i as f64 * c.dx();
            2.0 / ((x - x0).cosh().powi(2))
        });
        let m0: f64 = u.data().iter().sum::<f64>() * c.dx();
        let next = step_reference(&c, &u).unwrap();
        let m1: f64 = next.data().iter().sum::<f64>() * c.dx();
        assert!((m1 - m0).abs() < 1e-8, "{m0} {m1}");
    }

    #[test]
    fn macro_frame_count() {
        assert_eq!(macro_intervals(1.5, 15.0 * 0.01).unwrap() + 1, 11);
        assert!(macro_intervals(1.0, 0.15).is_err());
    }

    #[test]
    fn burst_frame_matches_macro_frame() {
        let c = PdeCase::new(CaseKind::Kdv, 32);
        let k = 3;
        let bursts = BurstSpec::at(vec![0, 2], k + 1);
        let traj = simulate_with_bursts(&c, 9, 4, k, &bursts).unwrap();
        assert_eq!(traj.macro_frames.len(), 5);
        assert_eq!(traj.bursts[0].frames.len(), k + 1);
        assert_eq!(traj.bursts[0].frames[0], traj.macro_frames[0]);
        assert_eq!(traj.bursts[0].frames[k], traj.macro_frames[1]);
        assert_eq!(traj.bursts[1].frames[0], traj.macro_frames[2]);
        assert_eq!(traj.bursts[1].frames[k], traj.macro_frames[3]);
    }

    #[test]
    fn burst_outside_horizon_rejected() {
        let c = PdeCase::new(CaseKind::Kdv, 32);
        let bursts = BurstSpec::at(vec![3], 7);
        assert!(simulate_with_bursts(&c, 1, 4, 3, &bursts).is_err());
    }

    #[test]
    fn sampled_bursts_do_not_overlap() {
        let mut rng = SplitMix64::new(3);
        let k = 5;
        let spec = BurstSpec::sample(8, 2 * k + 1, k, 60, &mut rng).unwrap();
        assert_eq!(spec.n_bursts(), 8);
        for w in spec.start_indices.windows(2) {
            assert!(w[1] * k > w[0] * k + 2 * k);
        }
        assert!(spec.start_indices.last().unwrap() * k + 2 * k <= 59 * k);
        let mut rng = SplitMix64::new(3);
        assert!(BurstSpec::sample(30, 2 * k + 1, k, 60, &mut rng).is_err());
    }
}
