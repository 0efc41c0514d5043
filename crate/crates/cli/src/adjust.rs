use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use cpm_core::causal::{
    backdoor_from_scm, confounding_witness, frontdoor_from_scm, importance_weighted_marginal, random_frontdoor_scm,
    random_kernel, random_scm, surgery_do_marginal, Cardinalities, ConfoundingWitness, InterventionKernel, Weighting,
};

use crate::config::require;
use crate::output::{write_results, write_summary, ResultRow};
use crate::{Check, Result};

pub const NAME: &str = "adjust-verify";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdjustConfig {
    pub num_scms: usize,
    pub tolerance: f64,
}

impl Default for AdjustConfig {
    fn default() -> Self {
        Self { num_scms: 1000, tolerance: 1e-12 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AdjustOutcome {
    pub seed: u64,
    pub num_scms: usize,
    pub tolerance: f64,
    pub backdoor: f64,
    pub importance_weighted: f64,
    pub frontdoor: f64,
    pub witness: ConfoundingWitness,
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Largest deviation of each adjustment from graph surgery over random SCMs,
/// with a random soft intervention and every hard one per SCM.
pub fn run(config: &AdjustConfig, seed: u64) -> Result<AdjustOutcome> {
    require(config.num_scms > 0, || "num_scms must be positive".into())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut backdoor, mut weighted, mut frontdoor) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..config.num_scms {
        let c = Cardinalities::random(&mut rng);
        let scm = random_scm(c, &mut rng);
        let mut kernels = vec![random_kernel(c.z, c.x, &mut rng)];
        kernels.extend((0..c.x).map(|x| InterventionKernel::hard(c.z, c.x, x)));
        for psi in &kernels {
            let truth = surgery_do_marginal(&scm, psi)?;
            backdoor = backdoor.max(max_abs_diff(&backdoor_from_scm(&scm, psi)?, &truth));
            let iw = importance_weighted_marginal(&scm, psi, Weighting::Exact)?;
            weighted = weighted.max(max_abs_diff(&iw.marginal, &truth));
        }
        let fd = random_frontdoor_scm(c, &mut rng);
        for x0 in 0..c.x {
            frontdoor = frontdoor.max(max_abs_diff(&frontdoor_from_scm(&fd, x0)?, &fd.surgery_do(x0)?));
        }
    }
    Ok(AdjustOutcome {
        seed,
        num_scms: config.num_scms,
        tolerance: config.tolerance,
        backdoor,
        importance_weighted: weighted,
        frontdoor,
        witness: confounding_witness(),
    })
}

impl AdjustOutcome {
    fn deviations(&self) -> [(&'static str, f64); 3] {
        [("backdoor", self.backdoor), ("importance_weighted", self.importance_weighted), ("frontdoor", self.frontdoor)]
    }

    pub fn checks(&self) -> Vec<Check> {
        let mut out: Vec<Check> = self
            .deviations()
            .iter()
            .map(|(name, d)| {
                Check::new(&format!("{name} matches surgery"), *d < self.tolerance, format!("max deviation {d:e} over {} SCMs", self.num_scms))
            })
            .collect();
        out.push(Check::new(
            "conditioning differs from intervening on the witness",
            self.witness.gap() > 0.0,
            format!("p(y|x) = {}, p(y|do x) = {}", self.witness.conditional, self.witness.interventional),
        ));
        out
    }

    pub fn report(&self) -> String {
        let mut s = String::new();
        for (name, d) in self.deviations() {
            s.push_str(&format!("{name:<20} max deviation {d:e}\n"));
        }
        s.push_str(&format!(
            "witness              p(y=1|x={x}) = {c:.4}, p(y=1|do(x={x})) = {i:.4}\n",
            x = self.witness.x,
            c = self.witness.conditional,
            i = self.witness.interventional
        ));
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let rows: Vec<ResultRow> = self.deviations().iter().map(|(m, d)| ResultRow::new(NAME, self.seed, 0, *m, *d)).collect();
        write_results(dir, NAME, &rows)?;
        write_summary(dir, NAME, self.seed, &self.checks(), self)
    }
}
