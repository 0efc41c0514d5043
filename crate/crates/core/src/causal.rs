//! Small discrete structural causal models and the adjustment formulas that
//! recover interventional marginals from observational tables.
//!
//! Two graphs are covered: the backdoor graph `u -> z -> x -> y <- u`, where
//! `z` blocks the path from `x` back to `u`, and the frontdoor graph
//! `u -> x -> z -> y <- u`. Ground truth always comes from enumerating the
//! post-surgery joint.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dist::{check_distribution, check_table, sample_categorical, sample_simplex};
use crate::error::{Error, Result};

/// `p(u) p(z|u) p(x|z) p(y|x,u)`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteScm {
    pub p_u: Vec<f64>,
    /// `[u][z]`
    pub p_z_given_u: Vec<Vec<f64>>,
    /// `[z][x]`
    pub p_x_given_z: Vec<Vec<f64>>,
    /// `[x][u][y]`
    pub p_y_given_xu: Vec<Vec<Vec<f64>>>,
}

/// Replacement factor `psi(x|z)`, indexed `[z][x]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionKernel(pub Vec<Vec<f64>>);

impl InterventionKernel {
    /// Hard intervention `do(x = x0)`.
    pub fn hard(num_z: usize, num_x: usize, x0: usize) -> Self {
        let mut row = vec![0.0; num_x];
        row[x0] = 1.0;
        Self(vec![row; num_z])
    }

    pub fn prob(&self, z: usize, x: usize) -> f64 {
        self.0[z][x]
    }
}

impl DiscreteScm {
    pub fn card_u(&self) -> usize {
        self.p_u.len()
    }

    pub fn card_z(&self) -> usize {
        self.p_x_given_z.len()
    }

    pub fn card_x(&self) -> usize {
        self.p_y_given_xu.len()
    }

    pub fn card_y(&self) -> usize {
        self.p_y_given_xu.first().and_then(|r| r.first()).map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let (nu, nz, nx, ny) = (self.card_u(), self.card_z(), self.card_x(), self.card_y());
        if nu == 0 || nz == 0 || nx == 0 || ny == 0 {
            return Err(Error::DimensionMismatch("empty SCM table".into()));
        }
        check_distribution(&self.p_u, "p(u)")?;
        if self.p_z_given_u.len() != nu {
            return Err(Error::DimensionMismatch("p(z|u) needs one row per u".into()));
        }
        check_table(&self.p_z_given_u, nz, "p(z|u)")?;
        check_table(&self.p_x_given_z, nx, "p(x|z)")?;
        for (x, rows) in self.p_y_given_xu.iter().enumerate() {
            if rows.len() != nu {
                return Err(Error::DimensionMismatch(format!("p(y|x={x},u) needs one row per u")));
            }
            check_table(rows, ny, &format!("p(y|x={x},u)"))?;
        }
        Ok(())
    }

    fn check_kernel(&self, psi: &InterventionKernel) -> Result<()> {
        if psi.0.len() != self.card_z() {
            return Err(Error::DimensionMismatch(format!(
                "kernel has {} rows, z has {} values",
                psi.0.len(),
                self.card_z()
            )));
        }
        check_table(&psi.0, self.card_x(), "psi(x|z)")
    }

    /// Calls `f(u, z, x, y, p(u,z,x,y))` for every cell of the observational joint.
    fn for_each_joint(&self, mut f: impl FnMut(usize, usize, usize, usize, f64)) {
        for (u, &pu) in self.p_u.iter().enumerate() {
            for (z, &pz) in self.p_z_given_u[u].iter().enumerate() {
                for (x, &px) in self.p_x_given_z[z].iter().enumerate() {
                    for (y, &py) in self.p_y_given_xu[x][u].iter().enumerate() {
                        f(u, z, x, y, pu * pz * px * py);
                    }
                }
            }
        }
    }

    /// `p(z)`
    pub fn marginal_z(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.card_z()];
        for (u, &pu) in self.p_u.iter().enumerate() {
            for (z, &pz) in self.p_z_given_u[u].iter().enumerate() {
                out[z] += pu * pz;
            }
        }
        out
    }

    /// Observational `p(y)`.
    pub fn marginal_y(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.card_y()];
        self.for_each_joint(|_, _, _, y, p| out[y] += p);
        out
    }

    /// `p(y | z, x)` from the observational joint; `None` where `p(z, x) = 0`.
    pub fn conditional_y_given_zx(&self) -> Vec<Vec<Option<Vec<f64>>>> {
        let (nz, nx, ny) = (self.card_z(), self.card_x(), self.card_y());
        let mut joint = vec![vec![vec![0.0; ny]; nx]; nz];
        self.for_each_joint(|_, z, x, y, p| joint[z][x][y] += p);
        joint
            .into_iter()
            .map(|rows| rows.into_iter().map(normalized_or_none).collect())
            .collect()
    }

    /// Naive `p(y | x)`; `None` where `p(x) = 0`.
    pub fn conditional_y_given_x(&self) -> Vec<Option<Vec<f64>>> {
        let mut joint = vec![vec![0.0; self.card_y()]; self.card_x()];
        self.for_each_joint(|_, _, x, y, p| joint[x][y] += p);
        joint.into_iter().map(normalized_or_none).collect()
    }
}

fn normalized_or_none(mut row: Vec<f64>) -> Option<Vec<f64>> {
    let mass: f64 = row.iter().sum();
    if mass > 0.0 {
        row.iter_mut().for_each(|v| *v /= mass);
        Some(row)
    } else {
        None
    }
}

/// Marginal of `y` under `p(u) p(z|u) psi(x|z) p(y|x,u)`, by enumeration.
pub fn surgery_do_marginal(scm: &DiscreteScm, psi: &InterventionKernel) -> Result<Vec<f64>> {
    scm.validate()?;
    scm.check_kernel(psi)?;
    let mut out = vec![0.0; scm.card_y()];
    for (u, &pu) in scm.p_u.iter().enumerate() {
        for (z, &pz) in scm.p_z_given_u[u].iter().enumerate() {
            for (x, &px) in psi.0[z].iter().enumerate() {
                let w = pu * pz * px;
                if w == 0.0 {
                    continue;
                }
                for (y, &py) in scm.p_y_given_xu[x][u].iter().enumerate() {
                    out[y] += w * py;
                }
            }
        }
    }
    Ok(out)
}

/// `p_do(psi)(y) = sum_z p(z) sum_x psi(x|z) p(y|z,x)`.
///
/// `p_y_given_zx[z][x]` is `None` for cells never observed. Such a cell is an
/// error only if the intervention puts mass on it.
pub fn backdoor_adjust(
    p_z: &[f64],
    p_y_given_zx: &[Vec<Option<Vec<f64>>>],
    psi: &InterventionKernel,
) -> Result<Vec<f64>> {
    check_distribution(p_z, "p(z)")?;
    if p_y_given_zx.len() != p_z.len() || psi.0.len() != p_z.len() {
        return Err(Error::DimensionMismatch("z cardinality differs between tables".into()));
    }
    let mut out: Option<Vec<f64>> = None;
    for (z, &pz) in p_z.iter().enumerate() {
        if p_y_given_zx[z].len() != psi.0[z].len() {
            return Err(Error::DimensionMismatch("x cardinality differs between tables".into()));
        }
        for (x, &w) in psi.0[z].iter().enumerate() {
            let mass = pz * w;
            if mass == 0.0 {
                continue;
            }
            let row = p_y_given_zx[z][x].as_ref().ok_or_else(|| {
                Error::PositivityViolation(format!("p(x={x}|z={z}) = 0 but the intervention selects it"))
            })?;
            let acc = out.get_or_insert_with(|| vec![0.0; row.len()]);
            for (a, p) in acc.iter_mut().zip(row) {
                *a += mass * p;
            }
        }
    }
    out.ok_or_else(|| Error::InvalidParameter("intervention has no mass".into()))
}

/// Backdoor adjustment fed with the SCM's own observational tables.
pub fn backdoor_from_scm(scm: &DiscreteScm, psi: &InterventionKernel) -> Result<Vec<f64>> {
    scm.validate()?;
    scm.check_kernel(psi)?;
    backdoor_adjust(&scm.marginal_z(), &scm.conditional_y_given_zx(), psi)
}

/// Importance weight `psi(x|z) / p(x|z)`.
fn weight(scm: &DiscreteScm, psi: &InterventionKernel, z: usize, x: usize) -> Result<f64> {
    let target = psi.prob(z, x);
    if target == 0.0 {
        return Ok(0.0);
    }
    let behaviour = scm.p_x_given_z[z][x];
    if behaviour == 0.0 {
        return Err(Error::PositivityViolation(format!(
            "psi(x={x}|z={z}) > 0 but p(x|z) = 0"
        )));
    }
    Ok(target / behaviour)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Weighting {
    Exact,
    MonteCarlo { samples: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedEstimate {
    pub marginal: Vec<f64>,
    /// Per-entry standard error; zero in exact mode.
    pub std_err: Vec<f64>,
}

/// `E_p[w(x,z) 1{y}]` computed exactly or by sampling from the observational
/// joint.
pub fn importance_weighted_marginal(
    scm: &DiscreteScm,
    psi: &InterventionKernel,
    mode: Weighting,
) -> Result<WeightedEstimate> {
    scm.validate()?;
    scm.check_kernel(psi)?;
    let ny = scm.card_y();
    let p_z = scm.marginal_z();
    for (z, &pz) in p_z.iter().enumerate() {
        if pz > 0.0 {
            for x in 0..scm.card_x() {
                weight(scm, psi, z, x)?;
            }
        }
    }
    match mode {
        Weighting::Exact => {
            let mut out = vec![0.0; ny];
            scm.for_each_joint(|_, z, x, y, p| {
                if p > 0.0 {
                    out[y] += p * weight(scm, psi, z, x).unwrap_or(0.0);
                }
            });
            Ok(WeightedEstimate { marginal: out, std_err: vec![0.0; ny] })
        }
        Weighting::MonteCarlo { samples, seed } => {
            if samples < 2 {
                return Err(Error::InvalidParameter("need at least two samples".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut sum = vec![0.0; ny];
            let mut sum_sq = vec![0.0; ny];
            for _ in 0..samples {
                let u = sample_categorical(&scm.p_u, &mut rng);
                let z = sample_categorical(&scm.p_z_given_u[u], &mut rng);
                let x = sample_categorical(&scm.p_x_given_z[z], &mut rng);
                let y = sample_categorical(&scm.p_y_given_xu[x][u], &mut rng);
                let w = weight(scm, psi, z, x)?;
                sum[y] += w;
                sum_sq[y] += w * w;
            }
            let n = samples as f64;
            let marginal: Vec<f64> = sum.iter().map(|s| s / n).collect();
            let std_err = marginal
                .iter()
                .zip(&sum_sq)
                .map(|(m, sq)| ((sq / n - m * m).max(0.0) / (n - 1.0)).sqrt())
                .collect();
            Ok(WeightedEstimate { marginal, std_err })
        }
    }
}

/// `E_p[w(x,z)]`, which is 1 whenever the weights are defined.
pub fn expected_weight(scm: &DiscreteScm, psi: &InterventionKernel) -> Result<f64> {
    scm.validate()?;
    scm.check_kernel(psi)?;
    let p_z = scm.marginal_z();
    let mut total = 0.0;
    for (z, &pz) in p_z.iter().enumerate() {
        if pz == 0.0 {
            continue;
        }
        for x in 0..scm.card_x() {
            total += pz * scm.p_x_given_z[z][x] * weight(scm, psi, z, x)?;
        }
    }
    Ok(total)
}

/// `p(u) p(x|u) p(z|x) p(y|z,u)`: the mediator `z` carries the whole effect of `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontdoorScm {
    pub p_u: Vec<f64>,
    /// `[u][x]`
    pub p_x_given_u: Vec<Vec<f64>>,
    /// `[x][z]`
    pub p_z_given_x: Vec<Vec<f64>>,
    /// `[z][u][y]`
    pub p_y_given_zu: Vec<Vec<Vec<f64>>>,
}

impl FrontdoorScm {
    pub fn card_u(&self) -> usize {
        self.p_u.len()
    }

    pub fn card_x(&self) -> usize {
        self.p_z_given_x.len()
    }

    pub fn card_z(&self) -> usize {
        self.p_y_given_zu.len()
    }

    pub fn card_y(&self) -> usize {
        self.p_y_given_zu.first().and_then(|r| r.first()).map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let (nu, nx, nz, ny) = (self.card_u(), self.card_x(), self.card_z(), self.card_y());
        if nu == 0 || nx == 0 || nz == 0 || ny == 0 {
            return Err(Error::DimensionMismatch("empty SCM table".into()));
        }
        check_distribution(&self.p_u, "p(u)")?;
        if self.p_x_given_u.len() != nu {
            return Err(Error::DimensionMismatch("p(x|u) needs one row per u".into()));
        }
        check_table(&self.p_x_given_u, nx, "p(x|u)")?;
        check_table(&self.p_z_given_x, nz, "p(z|x)")?;
        for (z, rows) in self.p_y_given_zu.iter().enumerate() {
            if rows.len() != nu {
                return Err(Error::DimensionMismatch(format!("p(y|z={z},u) needs one row per u")));
            }
            check_table(rows, ny, &format!("p(y|z={z},u)"))?;
        }
        Ok(())
    }

    fn for_each_joint(&self, mut f: impl FnMut(usize, usize, usize, usize, f64)) {
        for (u, &pu) in self.p_u.iter().enumerate() {
            for (x, &px) in self.p_x_given_u[u].iter().enumerate() {
                for (z, &pz) in self.p_z_given_x[x].iter().enumerate() {
                    for (y, &py) in self.p_y_given_zu[z][u].iter().enumerate() {
                        f(u, x, z, y, pu * px * pz * py);
                    }
                }
            }
        }
    }

    /// Ground truth `p(y | do(x = x0))` by enumeration of the cut graph.
    pub fn surgery_do(&self, x0: usize) -> Result<Vec<f64>> {
        self.validate()?;
        if x0 >= self.card_x() {
            return Err(Error::InvalidParameter(format!("x0 = {x0} out of range")));
        }
        let mut out = vec![0.0; self.card_y()];
        for (u, &pu) in self.p_u.iter().enumerate() {
            for (z, &pz) in self.p_z_given_x[x0].iter().enumerate() {
                for (y, &py) in self.p_y_given_zu[z][u].iter().enumerate() {
                    out[y] += pu * pz * py;
                }
            }
        }
        Ok(out)
    }

    pub fn marginal_x(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.card_x()];
        for (u, &pu) in self.p_u.iter().enumerate() {
            for (x, &px) in self.p_x_given_u[u].iter().enumerate() {
                out[x] += pu * px;
            }
        }
        out
    }

    pub fn marginal_y(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.card_y()];
        self.for_each_joint(|_, _, _, y, p| out[y] += p);
        out
    }

    /// `p(y | x, z)` indexed `[x][z]`; `None` where `p(x, z) = 0`.
    pub fn conditional_y_given_xz(&self) -> Vec<Vec<Option<Vec<f64>>>> {
        let (nx, nz, ny) = (self.card_x(), self.card_z(), self.card_y());
        let mut joint = vec![vec![vec![0.0; ny]; nz]; nx];
        self.for_each_joint(|_, x, z, y, p| joint[x][z][y] += p);
        joint
            .into_iter()
            .map(|rows| rows.into_iter().map(normalized_or_none).collect())
            .collect()
    }

    pub fn conditional_y_given_x(&self) -> Vec<Option<Vec<f64>>> {
        let mut joint = vec![vec![0.0; self.card_y()]; self.card_x()];
        self.for_each_joint(|_, x, _, y, p| joint[x][y] += p);
        joint.into_iter().map(normalized_or_none).collect()
    }
}

/// `p(y | do(x0)) = sum_z p(z|x0) sum_x' p(x') p(y|x',z)`.
///
/// Requires `p(z|x) > 0` for every `(x, z)` and `p(x) > 0` for every `x`, so
/// that each `p(y|x',z)` is defined.
pub fn frontdoor_adjust(
    p_z_given_x: &[Vec<f64>],
    p_x: &[f64],
    p_y_given_xz: &[Vec<Option<Vec<f64>>>],
    x0: usize,
) -> Result<Vec<f64>> {
    check_distribution(p_x, "p(x)")?;
    let nx = p_x.len();
    if p_z_given_x.len() != nx || p_y_given_xz.len() != nx {
        return Err(Error::DimensionMismatch("x cardinality differs between tables".into()));
    }
    let nz = p_z_given_x.first().map_or(0, Vec::len);
    check_table(p_z_given_x, nz, "p(z|x)")?;
    if x0 >= nx {
        return Err(Error::InvalidParameter(format!("x0 = {x0} out of range")));
    }
    for (x, row) in p_z_given_x.iter().enumerate() {
        if p_x[x] <= 0.0 {
            return Err(Error::PositivityViolation(format!("p(x={x}) = 0")));
        }
        if let Some(z) = row.iter().position(|p| *p <= 0.0) {
            return Err(Error::PositivityViolation(format!("p(z={z}|x={x}) = 0")));
        }
    }
    let mut out: Option<Vec<f64>> = None;
    for (z, &pz) in p_z_given_x[x0].iter().enumerate() {
        for (x, &px) in p_x.iter().enumerate() {
            let row = p_y_given_xz[x].get(z).and_then(Option::as_ref).ok_or_else(|| {
                Error::PositivityViolation(format!("p(y|x={x},z={z}) undefined"))
            })?;
            let acc = out.get_or_insert_with(|| vec![0.0; row.len()]);
            for (a, p) in acc.iter_mut().zip(row) {
                *a += pz * px * p;
            }
        }
    }
    out.ok_or_else(|| Error::DimensionMismatch("empty z table".into()))
}

/// Frontdoor adjustment fed with the SCM's own observational tables.
pub fn frontdoor_from_scm(scm: &FrontdoorScm, x0: usize) -> Result<Vec<f64>> {
    scm.validate()?;
    frontdoor_adjust(&scm.p_z_given_x, &scm.marginal_x(), &scm.conditional_y_given_xz(), x0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cardinalities {
    pub u: usize,
    pub z: usize,
    pub x: usize,
    pub y: usize,
}

impl Cardinalities {
    /// Each cardinality drawn uniformly from `2..=4`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            u: rng.random_range(2..=4),
            z: rng.random_range(2..=4),
            x: rng.random_range(2..=4),
            y: rng.random_range(2..=4),
        }
    }
}

fn simplex_rows<R: Rng + ?Sized>(rows: usize, width: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..rows).map(|_| sample_simplex(width, rng)).collect()
}

/// Backdoor-graph SCM with Dirichlet(1) rows.
pub fn random_scm<R: Rng + ?Sized>(c: Cardinalities, rng: &mut R) -> DiscreteScm {
    DiscreteScm {
        p_u: sample_simplex(c.u, rng),
        p_z_given_u: simplex_rows(c.u, c.z, rng),
        p_x_given_z: simplex_rows(c.z, c.x, rng),
        p_y_given_xu: (0..c.x).map(|_| simplex_rows(c.u, c.y, rng)).collect(),
    }
}

/// Frontdoor-graph SCM with Dirichlet(1) rows (the `z` field sizes the mediator).
pub fn random_frontdoor_scm<R: Rng + ?Sized>(c: Cardinalities, rng: &mut R) -> FrontdoorScm {
    FrontdoorScm {
        p_u: sample_simplex(c.u, rng),
        p_x_given_u: simplex_rows(c.u, c.x, rng),
        p_z_given_x: simplex_rows(c.x, c.z, rng),
        p_y_given_zu: (0..c.z).map(|_| simplex_rows(c.u, c.y, rng)).collect(),
    }
}

pub fn random_kernel<R: Rng + ?Sized>(num_z: usize, num_x: usize, rng: &mut R) -> InterventionKernel {
    InterventionKernel(simplex_rows(num_z, num_x, rng))
}

/// A binary SCM where conditioning on `x` and intervening on `x` disagree.
#[derive(Debug, Clone, Serialize)]
pub struct ConfoundingWitness {
    pub scm: DiscreteScm,
    pub x: usize,
    /// `p(y=1 | x)`
    pub conditional: f64,
    /// `p(y=1 | do(x))`
    pub interventional: f64,
}

impl ConfoundingWitness {
    pub fn gap(&self) -> f64 {
        (self.conditional - self.interventional).abs()
    }
}

/// Grid search over binary SCMs with uniform `p(u)` for the largest gap
/// between `p(y=1|x=1)` and `p(y=1|do(x=1))`.
pub fn confounding_witness() -> ConfoundingWitness {
    let grid = [0.1, 0.3, 0.5, 0.7, 0.9];
    let mut best: Option<ConfoundingWitness> = None;
    for &z0 in &grid {
        for &z1 in &grid {
            for &x0 in &grid {
                for &x1 in &grid {
                    for &y00 in &grid {
                        for &y01 in &grid {
                            for &y10 in &grid {
                                for &y11 in &grid {
                                    let bern = |p: f64| vec![1.0 - p, p];
                                    let scm = DiscreteScm {
                                        p_u: vec![0.5, 0.5],
                                        p_z_given_u: vec![bern(z0), bern(z1)],
                                        p_x_given_z: vec![bern(x0), bern(x1)],
                                        p_y_given_xu: vec![vec![bern(y00), bern(y01)], vec![bern(y10), bern(y11)]],
                                    };
                                    let conditional = scm.conditional_y_given_x()[1]
                                        .as_ref()
                                        .map_or(0.0, |r| r[1]);
                                    let interventional = surgery_do_marginal(&scm, &InterventionKernel::hard(2, 2, 1))
                                        .expect("grid SCM is valid")[1];
                                    let cand = ConfoundingWitness { scm, x: 1, conditional, interventional };
                                    if best.as_ref().is_none_or(|b| cand.gap() > b.gap()) {
                                        best = Some(cand);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    best.expect("grid is non-empty")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary_scm() -> DiscreteScm {
        DiscreteScm {
            p_u: vec![0.3, 0.7],
            p_z_given_u: vec![vec![0.8, 0.2], vec![0.25, 0.75]],
            p_x_given_z: vec![vec![0.6, 0.4], vec![0.1, 0.9]],
            p_y_given_xu: vec![
                vec![vec![0.9, 0.1], vec![0.4, 0.6]],
                vec![vec![0.7, 0.3], vec![0.2, 0.8]],
            ],
        }
    }

    #[test]
    fn hard_do_by_hand() {
        let scm = binary_scm();
        let got = surgery_do_marginal(&scm, &InterventionKernel::hard(2, 2, 0)).unwrap();
        // With x fixed, z is irrelevant: p(y=1|do x=0) = sum_u p(u) p(y=1|0,u).
        let want = 0.3 * 0.1 + 0.7 * 0.6;
        assert!((got[1] - want).abs() < 1e-15);
    }

    #[test]
    fn null_intervention_is_observational() {
        let scm = binary_scm();
        let psi = InterventionKernel(scm.p_x_given_z.clone());
        let a = surgery_do_marginal(&scm, &psi).unwrap();
        let b = scm.marginal_y();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn backdoor_matches_surgery_on_binary_example() {
        let scm = binary_scm();
        for x0 in 0..2 {
            let psi = InterventionKernel::hard(2, 2, x0);
            let a = backdoor_from_scm(&scm, &psi).unwrap();
            let b = surgery_do_marginal(&scm, &psi).unwrap();
            assert!((a[1] - b[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn missing_cell_is_positivity_violation() {
        let mut scm = binary_scm();
        scm.p_x_given_z[0] = vec![1.0, 0.0];
        let psi = InterventionKernel::hard(2, 2, 1);
        assert!(matches!(backdoor_from_scm(&scm, &psi), Err(Error::PositivityViolation(_))));
        assert!(matches!(
            importance_weighted_marginal(&scm, &psi, Weighting::Exact),
            Err(Error::PositivityViolation(_))
        ));
        // Selecting only observed cells is fine.
        let ok = InterventionKernel(vec![vec![1.0, 0.0], vec![0.5, 0.5]]);
        assert!(backdoor_from_scm(&scm, &ok).is_ok());
    }

    #[test]
    fn kernel_shape_is_checked() {
        let scm = binary_scm();
        let psi = InterventionKernel(vec![vec![1.0, 0.0]]);
        assert!(matches!(surgery_do_marginal(&scm, &psi), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn witness_gap_is_large() {
        let w = confounding_witness();
        assert!(w.gap() > 0.1, "gap {}", w.gap());
        let check = surgery_do_marginal(&w.scm, &InterventionKernel::hard(2, 2, w.x)).unwrap();
        assert!((check[1] - w.interventional).abs() < 1e-15);
        let adjusted = backdoor_from_scm(&w.scm, &InterventionKernel::hard(2, 2, w.x)).unwrap();
        assert!((adjusted[1] - w.interventional).abs() < 1e-12);
    }

    #[test]
    fn frontdoor_rejects_deterministic_mediator() {
        let scm = FrontdoorScm {
            p_u: vec![0.5, 0.5],
            p_x_given_u: vec![vec![0.8, 0.2], vec![0.3, 0.7]],
            p_z_given_x: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            p_y_given_zu: vec![vec![vec![0.9, 0.1], vec![0.5, 0.5]], vec![vec![0.4, 0.6], vec![0.2, 0.8]]],
        };
        assert!(matches!(frontdoor_from_scm(&scm, 0), Err(Error::PositivityViolation(_))));
    }
}
