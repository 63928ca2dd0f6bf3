use std::collections::HashMap;
use std::sync::Mutex;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::ScmError;
use crate::rng::substream;

/// Contemporaneous matrices with a larger condition number are rejected.
pub const MAX_CONDITION_NUMBER: f64 = 1e8;

const NOISE_TAG: &str = "svar-noise";
const ROTATION_TAG: &str = "witness-rotation";

/// Linear-Gaussian structural VAR
/// `B0 x_t = sum_l B_l x_{t-l} + eps_t`, `eps_t ~ N(0, diag(noise_cov))`.
///
/// Coordinates `0..dim-1` are concept masteries; the last coordinate is the
/// correctness probability `p`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "SvarDoc", into = "SvarDoc")]
pub struct LinearSvarScm {
    b0: DMatrix<f64>,
    lags: Vec<DMatrix<f64>>,
    noise_cov: DVector<f64>,
    b0_inv: DMatrix<f64>,
    condition_number: f64,
    spectral_radius: f64,
}

/// JSON form: matrices as row-major nested arrays, `noise_cov` as the diagonal.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SvarDoc {
    pub dim: usize,
    pub b0: Vec<Vec<f64>>,
    #[serde(default)]
    pub lags: Vec<Vec<Vec<f64>>>,
    pub noise_cov: Vec<f64>,
}

fn matrix_from_rows(rows: &[Vec<f64>], dim: usize, what: &str) -> Result<DMatrix<f64>, ScmError> {
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return Err(ScmError::Dimension(format!("{what} must be {dim}x{dim}")));
    }
    Ok(DMatrix::from_fn(dim, dim, |i, j| rows[i][j]))
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

impl TryFrom<SvarDoc> for LinearSvarScm {
    type Error = ScmError;

    fn try_from(doc: SvarDoc) -> Result<Self, Self::Error> {
        let b0 = matrix_from_rows(&doc.b0, doc.dim, "b0")?;
        let lags = doc
            .lags
            .iter()
            .enumerate()
            .map(|(l, m)| matrix_from_rows(m, doc.dim, &format!("lag {}", l + 1)))
            .collect::<Result<Vec<_>, _>>()?;
        if doc.noise_cov.len() != doc.dim {
            return Err(ScmError::Dimension(format!(
                "noise_cov must have {} diagonal entries",
                doc.dim
            )));
        }
        Self::new(b0, lags, DVector::from_vec(doc.noise_cov))
    }
}

impl From<LinearSvarScm> for SvarDoc {
    fn from(scm: LinearSvarScm) -> Self {
        SvarDoc {
            dim: scm.dim(),
            b0: matrix_to_rows(&scm.b0),
            lags: scm.lags.iter().map(matrix_to_rows).collect(),
            noise_cov: scm.noise_cov.iter().copied().collect(),
        }
    }
}

/// One scheduled intervention: at `time`, coordinate `coordinate` is set to `value`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Clamp {
    pub time: usize,
    pub coordinate: usize,
    pub value: f64,
}

/// Simulated path `x_1..x_T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn coordinate(&self, k: usize) -> Vec<f64> {
        self.steps.iter().map(|x| x[k]).collect()
    }
}

impl LinearSvarScm {
    /// Validates invertibility, conditioning and stationarity. Noise variances
    /// must be finite and nonnegative; a zero variance makes that coordinate's
    /// shock deterministic.
    pub fn new(
        b0: DMatrix<f64>,
        lags: Vec<DMatrix<f64>>,
        noise_cov: DVector<f64>,
    ) -> Result<Self, ScmError> {
        let dim = b0.nrows();
        if dim < 2 || b0.ncols() != dim {
            return Err(ScmError::Dimension(
                "b0 must be square with at least one concept plus the outcome".into(),
            ));
        }
        if lags.iter().any(|m| m.nrows() != dim || m.ncols() != dim) {
            return Err(ScmError::Dimension(format!(
                "lag matrices must be {dim}x{dim}"
            )));
        }
        if noise_cov.len() != dim || noise_cov.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(ScmError::Invalid(
                "noise variances must be finite and nonnegative".into(),
            ));
        }
        if b0
            .iter()
            .chain(lags.iter().flat_map(|m| m.iter()))
            .any(|v| !v.is_finite())
        {
            return Err(ScmError::Invalid("matrix entries must be finite".into()));
        }
        let singular = b0.clone().singular_values();
        let smax = singular.max();
        let smin = singular.min();
        if smin <= 0.0 {
            return Err(ScmError::Singular);
        }
        let condition_number = smax / smin;
        if condition_number > MAX_CONDITION_NUMBER {
            return Err(ScmError::IllConditioned(condition_number));
        }
        let b0_inv = b0.clone().try_inverse().ok_or(ScmError::Singular)?;
        let spectral_radius = companion_spectral_radius(&b0_inv, &lags);
        if spectral_radius >= 1.0 {
            return Err(ScmError::NonStationary(spectral_radius));
        }
        Ok(Self {
            b0,
            lags,
            noise_cov,
            b0_inv,
            condition_number,
            spectral_radius,
        })
    }

    pub fn dim(&self) -> usize {
        self.b0.nrows()
    }

    pub fn n_concepts(&self) -> usize {
        self.dim() - 1
    }

    /// Index of the correctness coordinate `p`.
    pub fn outcome_index(&self) -> usize {
        self.dim() - 1
    }

    pub fn b0(&self) -> &DMatrix<f64> {
        &self.b0
    }

    pub fn lags(&self) -> &[DMatrix<f64>] {
        &self.lags
    }

    pub fn lag_order(&self) -> usize {
        self.lags.len()
    }

    pub fn noise_variances(&self) -> &DVector<f64> {
        &self.noise_cov
    }

    pub fn noise_covariance(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.noise_cov)
    }

    pub fn condition_number(&self) -> f64 {
        self.condition_number
    }

    pub fn spectral_radius(&self) -> f64 {
        self.spectral_radius
    }

    /// Reduced-form lag matrices `B0^{-1} B_l`.
    pub fn reduced_lags(&self) -> Vec<DMatrix<f64>> {
        self.lags.iter().map(|b| &self.b0_inv * b).collect()
    }

    /// Contemporaneous response of every coordinate to moving coordinate `k`
    /// from 0 to 1 by intervention (the other structural equations kept).
    pub fn clamp_response(&self, k: usize) -> Result<DVector<f64>, ScmError> {
        let solver = ClampSolver::new(self);
        let mut rhs = DVector::zeros(self.dim());
        rhs[k] = 1.0;
        solver.solve(&rhs, &[k])
    }

    /// Expected shift of `x_{t+h}`, `h = 0..=horizon`, after a one-shot clamp of
    /// coordinate `k` to 1 at time `t`, relative to the unclamped path of a
    /// zero-mean process.
    pub fn impulse_response(
        &self,
        k: usize,
        horizon: usize,
    ) -> Result<Vec<DVector<f64>>, ScmError> {
        let reduced = self.reduced_lags();
        let mut path = vec![self.clamp_response(k)?];
        for h in 1..=horizon {
            let mut next = DVector::zeros(self.dim());
            for (l, a) in reduced.iter().enumerate() {
                if h > l {
                    next += a * &path[h - l - 1];
                }
            }
            path.push(next);
        }
        Ok(path)
    }

    fn draw_noise(&self, seed: u64, time: usize) -> DVector<f64> {
        let mut rng = substream(seed, NOISE_TAG, time as u64);
        DVector::from_iterator(
            self.dim(),
            self.noise_cov.iter().map(|v| {
                let z: f64 = rng.sample(StandardNormal);
                z * v.sqrt()
            }),
        )
    }

    /// Structural shock for time `time` under `seed`.
    pub fn shock(&self, seed: u64, time: usize) -> DVector<f64> {
        self.draw_noise(seed, time)
    }
}

fn companion_spectral_radius(b0_inv: &DMatrix<f64>, lags: &[DMatrix<f64>]) -> f64 {
    if lags.is_empty() {
        return 0.0;
    }
    let dim = b0_inv.nrows();
    let order = lags.len();
    let size = dim * order;
    let mut companion = DMatrix::zeros(size, size);
    for (l, b) in lags.iter().enumerate() {
        let a = b0_inv * b;
        companion.view_mut((0, l * dim), (dim, dim)).copy_from(&a);
    }
    for block in 1..order {
        for i in 0..dim {
            companion[(block * dim + i, (block - 1) * dim + i)] = 1.0;
        }
    }
    companion
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Solves the contemporaneous system with some structural equations replaced
/// by clamps. Row `k` of `B0` becomes `e_k` for each clamped coordinate `k`.
/// Factorizations are cached per clamp set.
pub struct ClampSolver<'a> {
    scm: &'a LinearSvarScm,
    cache: Mutex<HashMap<Vec<usize>, DMatrix<f64>>>,
}

impl<'a> ClampSolver<'a> {
    pub fn new(scm: &'a LinearSvarScm) -> Self {
        Self {
            scm,
            cache: Mutex::new(HashMap::new()),
        }
    }

    fn inverse_for(&self, clamped: &[usize]) -> Result<DMatrix<f64>, ScmError> {
        if clamped.is_empty() {
            return Ok(self.scm.b0_inv.clone());
        }
        let mut key = clamped.to_vec();
        key.sort_unstable();
        key.dedup();
        let mut cache = self.cache.lock().expect("solver cache poisoned");
        if let Some(inv) = cache.get(&key) {
            return Ok(inv.clone());
        }
        let dim = self.scm.dim();
        let mut m = self.scm.b0.clone();
        for &k in &key {
            if k >= dim {
                return Err(ScmError::Schedule(format!("coordinate {k} out of range")));
            }
            for j in 0..dim {
                m[(k, j)] = if j == k { 1.0 } else { 0.0 };
            }
        }
        let inv = m.try_inverse().ok_or(ScmError::Singular)?;
        cache.insert(key, inv.clone());
        Ok(inv)
    }

    /// Solves with `rhs[k]` holding the clamp value for each clamped `k`.
    pub fn solve(&self, rhs: &DVector<f64>, clamped: &[usize]) -> Result<DVector<f64>, ScmError> {
        Ok(self.inverse_for(clamped)? * rhs)
    }

    /// One step: `x_t` from the lag history (most recent first) and the shock.
    pub fn step(
        &self,
        recent_first: &[&DVector<f64>],
        shock: &DVector<f64>,
        clamps: &[(usize, f64)],
    ) -> Result<DVector<f64>, ScmError> {
        let mut rhs = shock.clone();
        for (l, b) in self.scm.lags.iter().enumerate() {
            rhs += b * recent_first[l];
        }
        let coords: Vec<usize> = clamps.iter().map(|c| c.0).collect();
        for &(k, v) in clamps {
            rhs[k] = v;
        }
        self.solve(&rhs, &coords)
    }
}

/// Simulates `x_1..x_T` from a zero history.
pub fn simulate_svar(
    scm: &LinearSvarScm,
    horizon: usize,
    interventions: &[Clamp],
    seed: u64,
) -> Result<Trajectory, ScmError> {
    let zeros = vec![DVector::zeros(scm.dim()); scm.lag_order()];
    simulate_svar_from(scm, &zeros, horizon, interventions, seed)
}

/// Simulates `x_1..x_T` from an explicit history `[x_{1-L}, ..., x_0]`
/// (oldest first). Step `t` (0-based) uses shock substream `(seed, t)`.
pub fn simulate_svar_from(
    scm: &LinearSvarScm,
    history: &[DVector<f64>],
    horizon: usize,
    interventions: &[Clamp],
    seed: u64,
) -> Result<Trajectory, ScmError> {
    let dim = scm.dim();
    let order = scm.lag_order();
    if horizon < order + 1 {
        return Err(ScmError::Schedule(format!(
            "horizon {horizon} shorter than lag order + 1 ({})",
            order + 1
        )));
    }
    if history.len() != order || history.iter().any(|x| x.len() != dim) {
        return Err(ScmError::Dimension(format!(
            "history must hold {order} vectors of length {dim}"
        )));
    }
    let mut by_time: Vec<Vec<(usize, f64)>> = vec![Vec::new(); horizon];
    for c in interventions {
        if c.time >= horizon || c.coordinate >= dim || !c.value.is_finite() {
            return Err(ScmError::Schedule(format!(
                "clamp at t={} coordinate {} outside horizon {horizon} / dim {dim}",
                c.time, c.coordinate
            )));
        }
        by_time[c.time].push((c.coordinate, c.value));
    }
    let solver = ClampSolver::new(scm);
    let mut all: Vec<DVector<f64>> = history.to_vec();
    for (t, clamps) in by_time.iter().enumerate() {
        let recent: Vec<&DVector<f64>> = (1..=order).map(|l| &all[all.len() - l]).collect();
        let shock = scm.draw_noise(seed, t);
        let x = solver.step(&recent, &shock, clamps)?;
        all.push(x);
    }
    Ok(Trajectory {
        steps: all.split_off(order),
    })
}

/// `Sigma_u = B0^{-1} Sigma_eps B0^{-T}`.
pub fn reduced_form_covariance(
    b0: &DMatrix<f64>,
    noise_cov: &DMatrix<f64>,
) -> Result<DMatrix<f64>, ScmError> {
    let n = b0.nrows();
    if b0.ncols() != n || noise_cov.nrows() != n || noise_cov.ncols() != n {
        return Err(ScmError::Dimension(
            "b0 and noise_cov must be square of equal size".into(),
        ));
    }
    let inv = b0.clone().try_inverse().ok_or(ScmError::Singular)?;
    let s = &inv * noise_cov * inv.transpose();
    Ok((&s + s.transpose()) * 0.5)
}

/// `(R^T B0, R^T Sigma R)` for an orthogonal `rotation`; leaves `Sigma_u` unchanged.
pub fn witness_with_rotation(
    b0: &DMatrix<f64>,
    noise_cov: &DMatrix<f64>,
    rotation: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let rt = rotation.transpose();
    (&rt * b0, &rt * noise_cov * rotation)
}

fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}

/// A second `(B0', Sigma')` pair with the same reduced-form covariance,
/// differing from the input by at least 1e-3 in max norm. `Sigma'` is in
/// general not diagonal. For dimension 1 the sign-flipped pair is returned.
pub fn nonidentifiability_witness(
    b0: &DMatrix<f64>,
    noise_cov: &DMatrix<f64>,
    rotation_seed: u64,
) -> Result<(DMatrix<f64>, DMatrix<f64>), ScmError> {
    let n = b0.nrows();
    reduced_form_covariance(b0, noise_cov)?;
    if n == 1 {
        return Ok((-b0.clone(), noise_cov.clone()));
    }
    for attempt in 0..64u64 {
        let mut rng = substream(rotation_seed, ROTATION_TAG, attempt);
        let gaussian = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let qr = gaussian.qr();
        let mut q = qr.q();
        let r = qr.r();
        for j in 0..n {
            if r[(j, j)] < 0.0 {
                q.column_mut(j).neg_mut();
            }
        }
        if q.determinant() < 0.0 {
            q.column_mut(0).neg_mut();
        }
        let (b0w, covw) = witness_with_rotation(b0, noise_cov, &q);
        if max_abs_diff(&b0w, b0).max(max_abs_diff(&covw, noise_cov)) >= 1e-3 {
            return Ok((b0w, covw));
        }
    }
    Err(ScmError::Invalid(
        "could not draw a distinguishable rotation".into(),
    ))
}
