//! Synthetic survey generator.
//!
//! Each respondent is drawn as an adopter or non-adopter. Factor latents
//! combine the mode's factor mean with a person effect shared across
//! factors (weight `signal`) and a factor-specific effect:
//!
//! `latent_f = mean_f[mode] + person_sd * (signal * g + sqrt(1 - signal^2) * h_f)`
//!
//! Items are `latent_f + noise_sd * e`, clamped to the scale and snapped to
//! the 25-point response grid. Travel-mode shares come from a Dirichlet
//! draw scaled to 100.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Dirichlet, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, tag};
use crate::schema::{Cohort, ConstructSchema, Dataset, RespondentRecord, SCALE_MAX, SCALE_MIN};

/// Response grid step.
pub const GRID_STEP: f64 = 25.0;

/// Dirichlet concentrations for the CAR, PT, ACTIVE and OTHER shares.
pub const TRAVEL_ALPHA: [f64; 4] = [2.0, 2.0, 0.4, 0.3];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeMeans {
    pub adopter: f64,
    pub non_adopter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n: usize,
    pub adopter_fraction: f64,
    /// Latent means by factor code; unlisted factors are centred at 0.
    pub means: BTreeMap<String, ModeMeans>,
    pub person_sd: f64,
    /// Weight of the person effect shared by all factors, in [0, 1].
    pub signal: f64,
    pub noise_sd: f64,
    pub missing_rate: f64,
    /// Share of respondents in the psychological-ownership cohort.
    pub cohort_ratio: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        let means = [
            ("PR", -30.0, 35.0),
            ("T", 40.0, -30.0),
            ("PU", 55.0, -25.0),
            ("PEOU", 50.0, 0.0),
            ("A", 60.0, -45.0),
            ("BI", 70.0, -55.0),
        ]
        .into_iter()
        .map(|(c, a, n)| (c.to_string(), ModeMeans { adopter: a, non_adopter: n }))
        .collect();
        SyntheticSpec {
            n: 284,
            adopter_fraction: 0.87,
            means,
            person_sd: 20.0,
            signal: 0.7,
            noise_sd: 12.0,
            missing_rate: 0.005,
            cohort_ratio: 0.5,
        }
    }
}

impl SyntheticSpec {
    /// Targets carry no information about the predictors: every item is
    /// independent noise around 0.
    pub fn zero_signal(n: usize) -> Self {
        SyntheticSpec {
            n,
            means: BTreeMap::new(),
            person_sd: 0.0,
            signal: 0.0,
            noise_sd: 120.0,
            missing_rate: 0.0,
            ..SyntheticSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if self.n == 0 {
            return Err(Error::Config("synthetic n must be at least 1".into()));
        }
        if !unit(self.adopter_fraction) || !unit(self.missing_rate) || !unit(self.cohort_ratio) || !unit(self.signal) {
            return Err(Error::Config(
                "adopter_fraction, missing_rate, cohort_ratio and signal must lie in [0, 1]".into(),
            ));
        }
        if !(self.person_sd >= 0.0 && self.noise_sd >= 0.0) || !self.person_sd.is_finite() || !self.noise_sd.is_finite() {
            return Err(Error::Config("person_sd and noise_sd must be finite and non-negative".into()));
        }
        if let Some((k, m)) = self.means.iter().find(|(_, m)| !m.adopter.is_finite() || !m.non_adopter.is_finite()) {
            return Err(Error::Config(format!("non-finite mean for `{k}`: {m:?}")));
        }
        Ok(())
    }
}

/// Clamps to the scale and rounds to the nearest grid point.
pub fn snap(v: f64) -> i32 {
    let c = v.clamp(f64::from(SCALE_MIN), f64::from(SCALE_MAX));
    ((c / GRID_STEP).round() * GRID_STEP) as i32
}

pub fn generate_synthetic(spec: &SyntheticSpec, schema: &ConstructSchema, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    if let Some(k) = spec.means.keys().find(|k| schema.factor(k).is_none()) {
        return Err(Error::Config(format!("synthetic mean for unknown factor `{k}`")));
    }
    let template = Dataset::empty_for(schema);
    let mut rng = rng::stream(seed, &[tag::SYNTH]);
    let travel = Dirichlet::new(TRAVEL_ALPHA).map_err(|e| Error::Config(e.to_string()))?;
    let factors: Vec<_> = schema.target_factors().collect();
    let specific = (1.0 - spec.signal * spec.signal).sqrt();
    let width = (spec.n.max(1) as f64).log10().floor() as usize + 1;

    let mut rows = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let adopter = rng.random_bool(spec.adopter_fraction);
        let cohort = if rng.random_bool(spec.cohort_ratio) {
            Cohort::PsychOwnership
        } else {
            Cohort::Control
        };
        let g: f64 = rng.sample(StandardNormal);
        let mut values = Vec::with_capacity(template.columns().len());
        for f in &factors {
            let m = spec.means.get(&f.code).map_or(0.0, |m| if adopter { m.adopter } else { m.non_adopter });
            let h: f64 = rng.sample(StandardNormal);
            let latent = m + spec.person_sd * (spec.signal * g + specific * h);
            for _ in f.item_codes.iter().chain(std::iter::once(&f.overall_item)) {
                let e: f64 = rng.sample(StandardNormal);
                values.push(Some(snap(latent + spec.noise_sd * e)));
            }
        }
        let shares: [f64; 4] = travel.sample(&mut rng);
        for (k, _) in schema.auxiliary.iter().enumerate() {
            values.push(shares.get(k).map(|s| (s * 100.0).round() as i32));
        }
        for v in values.iter_mut().take(template.item_indices().count()) {
            if spec.missing_rate > 0.0 && rng.random_bool(spec.missing_rate) {
                *v = None;
            }
        }
        rows.push(RespondentRecord {
            id: format!("S{:0width$}", i + 1),
            values,
            cohort: Some(cohort),
            adoption: None,
        });
    }
    Dataset::new(
        template.columns().to_vec(),
        template.kinds().to_vec(),
        template.cohort_code().map(str::to_string),
        rows,
    )
}
