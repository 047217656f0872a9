//! Two-qubit polarization tomography: linear inversion, maximum likelihood
//! and the entanglement report with bootstrap errors.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{kron, least_squares, paulis, rank, Mat2, Mat4, C64, ONE, ZERO};
use crate::quantum::{
    chsh, fully_entangled_fraction, horodecki_optimal_chsh, linear_entropy, tangle, ChshAngles,
    DensityMatrix, OptimalChsh,
};
use crate::randomness::seeded_rng;

pub const MAX_ITERATIONS: usize = 100_000;
/// Stop once an iteration lowers the negative log-likelihood by less.
pub const NLL_TOLERANCE: f64 = 1e-9;
/// Smallest eigenvalue kept when projecting the starting point.
const START_FLOOR: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Projector {
    H,
    V,
    D,
    A,
    R,
    L,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum Basis {
    Rectilinear,
    Diagonal,
    Circular,
}

impl Projector {
    pub const ALL: [Projector; 6] = [
        Projector::H,
        Projector::V,
        Projector::D,
        Projector::A,
        Projector::R,
        Projector::L,
    ];

    /// Jones vector in the (H, V) basis.
    pub fn ket(self) -> [C64; 2] {
        let s = FRAC_1_SQRT_2;
        match self {
            Projector::H => [ONE, ZERO],
            Projector::V => [ZERO, ONE],
            Projector::D => [C64::new(s, 0.0), C64::new(s, 0.0)],
            Projector::A => [C64::new(s, 0.0), C64::new(-s, 0.0)],
            Projector::R => [C64::new(s, 0.0), C64::new(0.0, s)],
            Projector::L => [C64::new(s, 0.0), C64::new(0.0, -s)],
        }
    }

    pub fn matrix(self) -> Mat2 {
        Mat2::outer(&self.ket())
    }

    fn basis(self) -> Basis {
        match self {
            Projector::H | Projector::V => Basis::Rectilinear,
            Projector::D | Projector::A => Basis::Diagonal,
            Projector::R | Projector::L => Basis::Circular,
        }
    }
}

impl fmt::Display for Projector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Projector {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_uppercase().as_str() {
            "H" => Ok(Projector::H),
            "V" => Ok(Projector::V),
            "D" => Ok(Projector::D),
            "A" => Ok(Projector::A),
            "R" => Ok(Projector::R),
            "L" => Ok(Projector::L),
            other => Err(format!(
                "unknown projector '{other}' (expected H, V, D, A, R or L)"
            )),
        }
    }
}

/// All 36 combinations of single-photon eigenstates.
pub fn measurement_set() -> Vec<(Projector, Projector)> {
    Projector::ALL
        .iter()
        .flat_map(|&a| Projector::ALL.iter().map(move |&b| (a, b)))
        .collect()
}

fn joint_projector(a: Projector, b: Projector) -> Mat4 {
    kron(&a.matrix(), &b.matrix())
}

/// Row of the linear map from Pauli coefficients r_ij (ρ = Σ r_ij σ_i⊗σ_j / 4)
/// to the probability of outcome (a, b).
fn design_row(a: Projector, b: Projector) -> Vec<f64> {
    let p = paulis();
    let (pa, pb) = (a.matrix(), b.matrix());
    let mut row = Vec::with_capacity(16);
    for si in &p {
        let ta = si.trace_product(&pa).re;
        for sj in &p {
            row.push(ta * sj.trace_product(&pb).re / 4.0);
        }
    }
    row
}

pub fn design_matrix(settings: &[(Projector, Projector)]) -> Vec<Vec<f64>> {
    settings.iter().map(|&(a, b)| design_row(a, b)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TomographyEntry {
    pub alice: Projector,
    pub bob: Projector,
    pub count: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TomographyData {
    pub entries: Vec<TomographyEntry>,
    /// Acquisition time per setting, s; informational.
    pub duration_per_setting: f64,
}

impl TomographyData {
    pub fn new(entries: Vec<TomographyEntry>) -> Self {
        TomographyData {
            entries,
            duration_per_setting: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(e) = self
            .entries
            .iter()
            .find(|e| !(e.count >= 0.0 && e.count.is_finite()))
        {
            return Err(Error::Input(format!(
                "count for ({}, {}) must be finite and >= 0, got {}",
                e.alice, e.bob, e.count
            )));
        }
        if self.entries.iter().all(|e| e.count == 0.0) {
            return Err(Error::Input("all tomography counts are zero".into()));
        }
        let settings: Vec<_> = self.entries.iter().map(|e| (e.alice, e.bob)).collect();
        let r = rank(&design_matrix(&settings), 1e-10);
        if r < 16 {
            return Err(Error::Input(format!(
                "measurement set is not informationally complete (rank {r} < 16)"
            )));
        }
        Ok(())
    }

    /// Entries grouped by basis pair, with the group total.
    fn groups(&self) -> Vec<(Vec<usize>, f64)> {
        let mut map: BTreeMap<(Basis, Basis), Vec<usize>> = BTreeMap::new();
        for (i, e) in self.entries.iter().enumerate() {
            map.entry((e.alice.basis(), e.bob.basis()))
                .or_default()
                .push(i);
        }
        map.into_values()
            .map(|idx| {
                let total = idx.iter().map(|&i| self.entries[i].count).sum();
                (idx, total)
            })
            .collect()
    }

    /// Observed frequencies normalized within each basis pair.
    pub fn frequencies(&self) -> Vec<f64> {
        let mut f = vec![0.0; self.entries.len()];
        for (idx, total) in self.groups() {
            for i in idx {
                f[i] = if total > 0.0 {
                    self.entries[i].count / total
                } else {
                    0.0
                };
            }
        }
        f
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let r = BufReader::new(File::open(path)?);
        let mut entries = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let line_no = i + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            if i == 0 && trimmed.to_ascii_lowercase().starts_with("alice") {
                continue;
            }
            let fail = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message,
            };
            let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(fail(format!(
                    "expected alice_proj,bob_proj,count but found {} fields",
                    fields.len()
                )));
            }
            let alice = fields[0].parse().map_err(fail)?;
            let bob = fields[1].parse().map_err(fail)?;
            let count: f64 = fields[2]
                .parse()
                .map_err(|_| fail(format!("count '{}' is not a number", fields[2])))?;
            if !(count >= 0.0 && count.is_finite()) {
                return Err(fail(format!("count {count} must be finite and >= 0")));
            }
            entries.push(TomographyEntry { alice, bob, count });
        }
        Ok(TomographyData::new(entries))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("alice_proj,bob_proj,count\n");
        for e in &self.entries {
            s.push_str(&format!("{},{},{}\n", e.alice, e.bob, e.count));
        }
        s
    }
}

/// Probability of each of the 36 outcomes.
pub fn expected_probabilities(rho: &DensityMatrix) -> Vec<((Projector, Projector), f64)> {
    measurement_set()
        .into_iter()
        .map(|(a, b)| {
            (
                (a, b),
                rho.matrix()
                    .trace_product(&joint_projector(a, b))
                    .re
                    .max(0.0),
            )
        })
        .collect()
}

/// Independent Poisson counts with mean `n_per_setting · Tr[ρ Π]`.
pub fn simulate_counts(
    rho: &DensityMatrix,
    n_per_setting: f64,
    seed: u64,
) -> Result<TomographyData> {
    if !(n_per_setting >= 0.0 && n_per_setting.is_finite()) {
        return Err(Error::Input(format!(
            "counts per setting must be >= 0, got {n_per_setting}"
        )));
    }
    let mut rng = seeded_rng(seed, 20);
    let entries = expected_probabilities(rho)
        .into_iter()
        .map(|((alice, bob), p)| {
            let mean = n_per_setting * p;
            let count = if mean > 0.0 {
                Poisson::new(mean)
                    .map_err(|e| Error::Numerical(e.to_string()))?
                    .sample(&mut rng)
            } else {
                0.0
            };
            Ok(TomographyEntry { alice, bob, count })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TomographyData::new(entries))
}

/// Noise-free data: counts equal their expectation.
pub fn exact_counts(rho: &DensityMatrix, n_per_setting: f64) -> TomographyData {
    TomographyData::new(
        expected_probabilities(rho)
            .into_iter()
            .map(|((alice, bob), p)| TomographyEntry {
                alice,
                bob,
                count: n_per_setting * p,
            })
            .collect(),
    )
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearEstimate {
    /// Hermitian, unit trace; possibly with negative eigenvalues.
    pub matrix: Mat4,
    pub min_eigenvalue: f64,
}

impl LinearEstimate {
    pub fn is_physical(&self) -> bool {
        self.min_eigenvalue >= -1e-12
    }
}

pub fn linear_reconstruct(data: &TomographyData) -> Result<LinearEstimate> {
    data.validate()?;
    let settings: Vec<_> = data.entries.iter().map(|e| (e.alice, e.bob)).collect();
    let design = design_matrix(&settings);
    let coeffs = least_squares(&design, &data.frequencies()).map_err(|e| match e {
        Error::Numerical(msg) => Error::Input(msg),
        other => other,
    })?;
    let p = paulis();
    let mut m = Mat4::zeros();
    for i in 0..4 {
        for j in 0..4 {
            m = m + kron(&p[i], &p[j]).scale(coeffs[4 * i + j] / 4.0);
        }
    }
    let m = m.hermitian_part();
    let tr = m.trace().re;
    if !(tr.abs() > 1e-12) {
        return Err(Error::Numerical("linear estimate has zero trace".into()));
    }
    let matrix = m.scale(1.0 / tr);
    let (vals, _) = matrix.eigh()?;
    Ok(LinearEstimate {
        matrix,
        min_eigenvalue: vals[3],
    })
}

/// Nearest positive-definite unit-trace matrix with eigenvalues ≥ `floor`.
fn project_to_state(m: &Mat4, floor: f64) -> Result<Mat4> {
    let clipped = m.hermitian_map(|x| x.max(floor))?;
    Ok(clipped.scale(1.0 / clipped.trace().re))
}

/// Lower-triangular T with T T† = m; `m` must be positive definite.
fn cholesky(m: &Mat4) -> Result<Mat4> {
    let mut t = Mat4::zeros();
    for j in 0..4 {
        let mut d = m[(j, j)].re;
        for k in 0..j {
            d -= t[(j, k)].norm_sqr();
        }
        if !(d > 0.0) {
            return Err(Error::Numerical(
                "starting matrix is not positive definite".into(),
            ));
        }
        let djj = d.sqrt();
        t[(j, j)] = C64::new(djj, 0.0);
        for i in (j + 1)..4 {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= t[(i, k)] * t[(j, k)].conj();
            }
            t[(i, j)] = s / djj;
        }
    }
    Ok(t)
}

const LOWER: [(usize, usize); 6] = [(1, 0), (2, 0), (2, 1), (3, 0), (3, 1), (3, 2)];

fn params_to_t(x: &[f64; 16]) -> Mat4 {
    let mut t = Mat4::zeros();
    for i in 0..4 {
        t[(i, i)] = C64::new(x[i], 0.0);
    }
    for (k, &(i, j)) in LOWER.iter().enumerate() {
        t[(i, j)] = C64::new(x[4 + 2 * k], x[5 + 2 * k]);
    }
    t
}

fn t_to_params(t: &Mat4) -> [f64; 16] {
    let mut x = [0.0; 16];
    for i in 0..4 {
        x[i] = t[(i, i)].re;
    }
    for (k, &(i, j)) in LOWER.iter().enumerate() {
        x[4 + 2 * k] = t[(i, j)].re;
        x[5 + 2 * k] = t[(i, j)].im;
    }
    x
}

/// Negative multinomial log-likelihood and its gradient in T's parameters.
struct Likelihood {
    projectors: Vec<Mat4>,
    counts: Vec<f64>,
}

impl Likelihood {
    fn new(data: &TomographyData) -> Self {
        Likelihood {
            projectors: data
                .entries
                .iter()
                .map(|e| joint_projector(e.alice, e.bob))
                .collect(),
            counts: data.entries.iter().map(|e| e.count).collect(),
        }
    }

    fn state(x: &[f64; 16]) -> (Mat4, f64, Mat4) {
        let t = params_to_t(x);
        let m = t * t.adjoint();
        let tr = m.trace().re;
        (t, tr, m.scale(1.0 / tr))
    }

    fn value(&self, x: &[f64; 16]) -> f64 {
        let (_, tr, rho) = Self::state(x);
        if !(tr > 0.0) || !tr.is_finite() {
            return f64::INFINITY;
        }
        self.projectors
            .iter()
            .zip(&self.counts)
            .filter(|(_, &n)| n > 0.0)
            .map(|(p, &n)| -n * rho.trace_product(p).re.max(1e-300).ln())
            .sum()
    }

    fn gradient(&self, x: &[f64; 16]) -> [f64; 16] {
        let (t, tr, rho) = Self::state(x);
        // G = −Σ (n/p) Π; dNLL = tr[(G − tr(Gρ)) dM] / tr M.
        let mut g = Mat4::zeros();
        for (p, &n) in self.projectors.iter().zip(&self.counts) {
            if n > 0.0 {
                let prob = rho.trace_product(p).re.max(1e-300);
                g = g - p.scale(n / prob);
            }
        }
        let shift = g.trace_product(&rho).re;
        let g = (g - Mat4::identity().scale(shift)).scale(1.0 / tr);
        let k = t.adjoint() * g;
        let mut grad = [0.0; 16];
        for i in 0..4 {
            grad[i] = 2.0 * k[(i, i)].re;
        }
        for (idx, &(i, j)) in LOWER.iter().enumerate() {
            let d = k[(j, i)];
            grad[4 + 2 * idx] = 2.0 * d.re;
            grad[5 + 2 * idx] = -2.0 * d.im;
        }
        grad
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MleResult {
    pub state: DensityMatrix,
    pub negative_log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn dot(a: &[f64; 16], b: &[f64; 16]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Maximum-likelihood state via BFGS over the Cholesky factor, started from
/// the projected linear estimate. On hitting the iteration cap the best
/// point so far is returned with `converged = false`.
pub fn mle_reconstruct(data: &TomographyData) -> Result<MleResult> {
    let start = linear_reconstruct(data)?;
    let rho0 = project_to_state(&start.matrix, START_FLOOR)?;
    let lik = Likelihood::new(data);
    let mut x = t_to_params(&cholesky(&rho0)?);
    let mut f = lik.value(&x);
    let mut g = lik.gradient(&x);
    let mut h = [[0.0; 16]; 16];
    for (i, row) in h.iter_mut().enumerate() {
        row[i] = 1.0 / lik.counts.iter().sum::<f64>().max(1.0);
    }
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut dir = [0.0; 16];
        for i in 0..16 {
            dir[i] = -(0..16).map(|j| h[i][j] * g[j]).sum::<f64>();
        }
        let mut slope = dot(&dir, &g);
        if slope >= 0.0 {
            // Lost descent; restart from steepest descent.
            h = [[0.0; 16]; 16];
            let scale = 1.0 / lik.counts.iter().sum::<f64>().max(1.0);
            for i in 0..16 {
                h[i][i] = scale;
                dir[i] = -scale * g[i];
            }
            slope = dot(&dir, &g);
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: [f64; 16] = std::array::from_fn(|i| x[i] + step * dir[i]);
            let ft = lik.value(&trial);
            if ft.is_finite() && ft <= f + 1e-4 * step * slope {
                accepted = Some((trial, ft));
                break;
            }
            step *= 0.5;
        }
        let Some((x_new, f_new)) = accepted else {
            converged = true;
            break;
        };
        let g_new = lik.gradient(&x_new);
        let s: [f64; 16] = std::array::from_fn(|i| x_new[i] - x[i]);
        let y: [f64; 16] = std::array::from_fn(|i| g_new[i] - g[i]);
        let improvement = f - f_new;
        x = x_new;
        f = f_new;
        g = g_new;
        if improvement < NLL_TOLERANCE {
            converged = true;
            break;
        }
        let sy = dot(&s, &y);
        if sy > 1e-300 {
            let hy: [f64; 16] = std::array::from_fn(|i| (0..16).map(|j| h[i][j] * y[j]).sum());
            let yhy = dot(&y, &hy);
            let rho = 1.0 / sy;
            for i in 0..16 {
                for j in 0..16 {
                    h[i][j] +=
                        rho * ((1.0 + rho * yhy) * s[i] * s[j] - hy[i] * s[j] - s[i] * hy[j]);
                }
            }
        }
    }
    let (_, _, rho) = Likelihood::state(&x);
    let state = DensityMatrix::new(rho.hermitian_part())?;
    if !converged {
        log::warn!(
            "maximum-likelihood search stopped after {iterations} iterations without converging"
        );
    }
    Ok(MleResult {
        state,
        negative_log_likelihood: f,
        iterations,
        converged,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub value: f64,
    pub sigma: f64,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.4} ± {:.4}", self.value, self.sigma)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateMetrics {
    pub tangle: f64,
    pub linear_entropy: f64,
    pub fully_entangled_fraction: f64,
    pub s_tomo: f64,
    pub s_opt: f64,
}

impl StateMetrics {
    pub fn of(rho: &DensityMatrix) -> Result<(Self, OptimalChsh)> {
        let opt = horodecki_optimal_chsh(rho)?;
        Ok((
            StateMetrics {
                tangle: tangle(rho)?,
                linear_entropy: linear_entropy(rho),
                fully_entangled_fraction: fully_entangled_fraction(rho)?,
                s_tomo: chsh(rho, &ChshAngles::standard()),
                s_opt: opt.value,
            },
            opt,
        ))
    }

    fn as_array(&self) -> [f64; 5] {
        [
            self.tangle,
            self.linear_entropy,
            self.fully_entangled_fraction,
            self.s_tomo,
            self.s_opt,
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TomographyReport {
    pub rho: DensityMatrix,
    pub linear_min_eigenvalue: f64,
    pub mle_iterations: usize,
    pub converged: bool,
    pub tangle: Metric,
    pub linear_entropy: Metric,
    pub fully_entangled_fraction: Metric,
    pub s_tomo: Metric,
    pub s_opt: Metric,
    pub optimal: OptimalChsh,
    pub n_bootstrap: usize,
}

/// Reconstruction plus metrics; σ from `n_bootstrap` Poisson resamplings of
/// the observed counts, each reconstructed independently.
pub fn report(data: &TomographyData, n_bootstrap: usize, seed: u64) -> Result<TomographyReport> {
    let linear = linear_reconstruct(data)?;
    let mle = mle_reconstruct(data)?;
    let (metrics, optimal) = StateMetrics::of(&mle.state)?;

    let replicas: Vec<[f64; 5]> = (0..n_bootstrap)
        .into_par_iter()
        .map(|k| -> Result<[f64; 5]> {
            let mut rng = seeded_rng(seed, 1000 + k as u64);
            let entries = data
                .entries
                .iter()
                .map(|e| {
                    let count = if e.count > 0.0 {
                        Poisson::new(e.count)
                            .map_err(|err| Error::Numerical(err.to_string()))?
                            .sample(&mut rng)
                    } else {
                        0.0
                    };
                    Ok(TomographyEntry { count, ..*e })
                })
                .collect::<Result<Vec<_>>>()?;
            let resampled = TomographyData {
                entries,
                duration_per_setting: data.duration_per_setting,
            };
            let fit = mle_reconstruct(&resampled)?;
            Ok(StateMetrics::of(&fit.state)?.0.as_array())
        })
        .collect::<Result<Vec<_>>>()?;

    let values = metrics.as_array();
    let sigma = |i: usize| -> f64 {
        if replicas.len() < 2 {
            return 0.0;
        }
        let n = replicas.len() as f64;
        let mean = replicas.iter().map(|r| r[i]).sum::<f64>() / n;
        (replicas.iter().map(|r| (r[i] - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    let metric = |i: usize| Metric {
        value: values[i],
        sigma: sigma(i),
    };
    Ok(TomographyReport {
        rho: mle.state,
        linear_min_eigenvalue: linear.min_eigenvalue,
        mle_iterations: mle.iterations,
        converged: mle.converged,
        tangle: metric(0),
        linear_entropy: metric(1),
        fully_entangled_fraction: metric(2),
        s_tomo: metric(3),
        s_opt: metric(4),
        optimal,
        n_bootstrap,
    })
}

/// 4×4 grid of the real or imaginary part, comma separated, rows in
/// HH, HV, VH, VV order.
pub fn matrix_csv(rho: &DensityMatrix, imaginary: bool) -> String {
    let labels = ["HH", "HV", "VH", "VV"];
    let mut s = format!("row,{}\n", labels.join(","));
    for (i, label) in labels.iter().enumerate() {
        let cells: Vec<String> = (0..4)
            .map(|j| {
                let z = rho.matrix()[(i, j)];
                format!("{:.6}", if imaginary { z.im } else { z.re })
            })
            .collect();
        s.push_str(&format!("{label},{}\n", cells.join(",")));
    }
    s
}
