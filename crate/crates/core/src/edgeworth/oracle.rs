//! Independent estimates of the window-sum distribution function.
//!
//! Neither method uses cumulants: Monte Carlo draws the steps directly, and the
//! grid method convolves discretized step laws.

use super::CumulantWindow;
use crate::environment::MovingLaw;
use crate::rng::rng_from_seed;
use crate::{Error, Result};

/// Largest grid the convolution oracle will allocate.
pub const MAX_GRID_POINTS: usize = 4_000_000;
/// Hat masses below this are dropped from the tails of a step kernel.
const KERNEL_FLOOR: f64 = 1e-22;
/// Largest number of step draws (`samples × window length`) for Monte Carlo.
pub const MAX_MONTE_CARLO_DRAWS: u64 = 2_000_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OracleMethod {
    /// Empirical CDF of `samples` independent window sums.
    MonteCarlo { samples: usize, seed: u64 },
    /// Sequential convolution on a uniform grid with spacing `step_fraction · B`
    /// covering `±half_width · B`.
    GridConvolution { step_fraction: f64, half_width: f64 },
}

impl OracleMethod {
    pub const DEFAULT_STEP_FRACTION: f64 = 1.0 / 400.0;
    pub const DEFAULT_HALF_WIDTH: f64 = 12.0;

    pub fn default_grid() -> Self {
        OracleMethod::GridConvolution {
            step_fraction: Self::DEFAULT_STEP_FRACTION,
            half_width: Self::DEFAULT_HALF_WIDTH,
        }
    }
}

/// An oracle value with its uncertainty: a `±3σ` band for Monte Carlo, a
/// discretization consistency estimate for the grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleEstimate {
    pub value: f64,
    pub band: f64,
}

#[derive(Debug, Clone)]
pub enum OracleCdf {
    MonteCarlo(MonteCarloCdf),
    Grid(GridCdf),
}

impl OracleCdf {
    pub fn build(window: &CumulantWindow<'_>, method: OracleMethod) -> Result<Self> {
        match method {
            OracleMethod::MonteCarlo { samples, seed } => {
                Ok(OracleCdf::MonteCarlo(MonteCarloCdf::build(window, samples, seed)?))
            }
            OracleMethod::GridConvolution {
                step_fraction,
                half_width,
            } => Ok(OracleCdf::Grid(GridCdf::build(window, step_fraction, half_width)?)),
        }
    }

    /// CDF of the normalized centered sum at `x`.
    pub fn eval(&self, x: f64) -> OracleEstimate {
        match self {
            OracleCdf::MonteCarlo(mc) => mc.eval(x),
            OracleCdf::Grid(g) => g.eval(x),
        }
    }
}

pub fn oracle_cdf(window: &CumulantWindow<'_>, x: f64, method: OracleMethod) -> Result<OracleEstimate> {
    Ok(OracleCdf::build(window, method)?.eval(x))
}

#[derive(Debug, Clone)]
pub struct MonteCarloCdf {
    sorted: Vec<f64>,
}

impl MonteCarloCdf {
    pub const MIN_SAMPLES: usize = 100_000;

    pub fn build(window: &CumulantWindow<'_>, samples: usize, seed: u64) -> Result<Self> {
        if samples < Self::MIN_SAMPLES {
            return Err(Error::InvalidConfig(format!(
                "monte carlo oracle needs at least {} samples, got {samples}",
                Self::MIN_SAMPLES
            )));
        }
        if samples as u64 * window.len() as u64 > MAX_MONTE_CARLO_DRAWS {
            return Err(Error::ResourceLimit(format!(
                "{samples} samples of a {}-step window",
                window.len()
            )));
        }
        let mut rng = rng_from_seed(seed);
        let laws: Vec<&MovingLaw> = window.steps().map(|s| &s.law.moving).collect();
        let centre = window.mean_sum();
        let b = window.b();
        let mut sorted: Vec<f64> = (0..samples)
            .map(|_| {
                let total: f64 = laws.iter().map(|law| law.sample(&mut rng)).sum();
                (total - centre) / b
            })
            .collect();
        sorted.sort_by(f64::total_cmp);
        Ok(Self { sorted })
    }

    pub fn samples(&self) -> usize {
        self.sorted.len()
    }

    pub fn eval(&self, x: f64) -> OracleEstimate {
        let n = self.sorted.len() as f64;
        let p = self.sorted.partition_point(|&v| v <= x) as f64 / n;
        OracleEstimate {
            value: p,
            band: (3.0 * (p * (1.0 - p) / n).sqrt()).max(1.0 / n),
        }
    }
}

/// Lattice distribution of a window sum on the grid `{i h}`.
#[derive(Debug, Clone)]
struct Lattice {
    h: f64,
    /// index of the grid point `0`
    offset: usize,
    cumulative: Vec<f64>,
    pmf: Vec<f64>,
    lost_mass: f64,
}

impl Lattice {
    fn build(window: &CumulantWindow<'_>, h: f64, half_width: f64) -> Result<Self> {
        let m = (half_width / h).ceil() as usize;
        let len = 2 * m + 1;
        if len > MAX_GRID_POINTS {
            return Err(Error::ResourceLimit(format!("grid of {len} points")));
        }
        let mut dist = vec![0.0; len];
        dist[m] = 1.0;
        let mut scratch = vec![0.0; len];
        let mut lost_mass = 0.0;
        for state in window.steps() {
            let law = &state.law.moving;
            let mean = state.moments.mean;
            let (kernel_lo, kernel, trimmed) = discretize(law, mean, h);
            lost_mass += trimmed;
            scratch.iter_mut().for_each(|v| *v = 0.0);
            let (lo_i, hi_i) = occupied(&dist);
            for i in lo_i..=hi_i {
                let p = dist[i];
                if p == 0.0 {
                    continue;
                }
                for (j, &q) in kernel.iter().enumerate() {
                    let target = i as i64 + kernel_lo + j as i64;
                    if target < 0 || target >= len as i64 {
                        lost_mass += p * q;
                    } else {
                        scratch[target as usize] += p * q;
                    }
                }
            }
            std::mem::swap(&mut dist, &mut scratch);
        }
        let mut acc = 0.0;
        let cumulative = dist
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Ok(Self {
            h,
            offset: m,
            cumulative,
            pmf: dist,
            lost_mass,
        })
    }

    /// Each atom spread over the triangle of half-width `h` around it, matching
    /// the hat-function discretization of the steps.
    fn cdf(&self, y: f64) -> f64 {
        let u = y / self.h + self.offset as f64;
        if u <= -1.0 {
            return 0.0;
        }
        let total = *self.cumulative.last().unwrap();
        if u >= self.pmf.len() as f64 {
            return total;
        }
        let i = u.floor();
        let frac = u - i;
        let i = i as i64;
        let mass = |j: i64| -> f64 {
            if j < 0 || j as usize >= self.pmf.len() {
                0.0
            } else {
                self.pmf[j as usize]
            }
        };
        let below = if i >= 1 { self.cumulative[(i - 1) as usize] } else { 0.0 };
        // atom i sits `frac` cells to the left of y, atom i + 1 sits `1 − frac` cells to the right
        below + mass(i) * (1.0 - 0.5 * (1.0 - frac).powi(2)) + mass(i + 1) * 0.5 * frac * frac
    }
}

fn occupied(dist: &[f64]) -> (usize, usize) {
    let lo = dist.iter().position(|&p| p != 0.0).unwrap_or(0);
    let hi = dist.iter().rposition(|&p| p != 0.0).unwrap_or(0);
    (lo, hi)
}

/// Hat-function masses `E[max(0, 1 − |X − mean − i h| / h)]`, returned with the index of the
/// first grid point and the mass of the dropped tails. Computed as second differences of the
/// integrated distribution function; tail masses below [`KERNEL_FLOOR`] are dropped.
fn discretize(law: &MovingLaw, mean: f64, h: f64) -> (i64, Vec<f64>, f64) {
    let (lo, hi) = law.effective_support();
    let first = ((lo - mean) / h).floor() as i64 - 1;
    let last = ((hi - mean) / h).ceil() as i64 + 1;
    let g = |i: i64| law.integrated_cdf(mean + i as f64 * h);
    let mut masses = Vec::with_capacity((last - first + 1) as usize);
    let (mut g_prev, mut g_cur) = (g(first - 1), g(first));
    for i in first..=last {
        let g_next = g(i + 1);
        masses.push(((g_next - 2.0 * g_cur + g_prev) / h).max(0.0));
        g_prev = g_cur;
        g_cur = g_next;
    }
    let keep_lo = masses.iter().position(|&m| m >= KERNEL_FLOOR).unwrap_or(0);
    let keep_hi = masses.iter().rposition(|&m| m >= KERNEL_FLOOR).map_or(masses.len(), |i| i + 1);
    let trimmed = masses[..keep_lo].iter().chain(&masses[keep_hi..]).sum();
    (first + keep_lo as i64, masses[keep_lo..keep_hi].to_vec(), trimmed)
}

/// Grid-convolution estimate with Richardson extrapolation over spacings `h` and `2h`.
///
/// Hat-function discretization and reconstruction inflate the variance by `O(h²)`;
/// combining the two spacings as `(4F_h − F_{2h}) / 3` removes that leading term.
/// The reported band is `|F_h − F_{2h}| / 3` plus any mass pushed outside the grid.
#[derive(Debug, Clone)]
pub struct GridCdf {
    b: f64,
    fine: Lattice,
    coarse: Lattice,
}

impl GridCdf {
    pub const MAX_STEP_FRACTION: f64 = 1.0 / 200.0;

    pub fn build(window: &CumulantWindow<'_>, step_fraction: f64, half_width: f64) -> Result<Self> {
        if !(step_fraction > 0.0 && step_fraction <= Self::MAX_STEP_FRACTION) {
            return Err(Error::InvalidConfig(format!(
                "grid step fraction {step_fraction} must lie in (0, {}]",
                Self::MAX_STEP_FRACTION
            )));
        }
        if !(half_width > 0.0) {
            return Err(Error::InvalidConfig(format!("grid half width {half_width} must be positive")));
        }
        let b = window.b();
        let h = step_fraction * b;
        let fine = Lattice::build(window, h, half_width * b)?;
        let coarse = Lattice::build(window, 2.0 * h, half_width * b)?;
        Ok(Self { b, fine, coarse })
    }

    /// Mass lost beyond the grid edges on the fine lattice.
    pub fn lost_mass(&self) -> f64 {
        self.fine.lost_mass
    }

    pub fn eval(&self, x: f64) -> OracleEstimate {
        let y = x * self.b;
        let f = self.fine.cdf(y);
        let c = self.coarse.cdf(y);
        OracleEstimate {
            value: (4.0 * f - c) / 3.0,
            band: (f - c).abs() / 3.0 + self.fine.lost_mass.max(self.coarse.lost_mass),
        }
    }
}
