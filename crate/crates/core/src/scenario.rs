//! Seeded, stratified load scenarios around the benchmark loads.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::csvio::{fmt_f64, parse_f64};
use crate::error::{Error, Result};
use crate::netcase::NetworkCase;

/// Rejection budget per scenario before the feasible region is declared empty.
const MAX_ATTEMPTS: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n_scenarios: usize,
    pub coeff_min: f64,
    pub coeff_max: f64,
    /// Bounds on the mean coefficient.
    pub sum_band: (f64, f64),
    pub seed: u64,
    pub strata: usize,
}

impl ScenarioConfig {
    /// 455 scenarios, coefficients in [0.3, 1.7].
    pub fn training() -> Self {
        ScenarioConfig {
            n_scenarios: 455,
            coeff_min: 0.3,
            coeff_max: 1.7,
            sum_band: (0.9, 1.7),
            seed: 42,
            strata: 10,
        }
    }

    /// 699 scenarios, coefficients in [0.25, 1.85], same band as training.
    pub fn validation() -> Self {
        ScenarioConfig {
            n_scenarios: 699,
            coeff_min: 0.25,
            coeff_max: 1.85,
            sum_band: (0.9, 1.7),
            seed: 4242,
            strata: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.n_scenarios < 1 {
            return cfg("n_scenarios must be at least 1".into());
        }
        if self.strata < 1 {
            return cfg("strata must be at least 1".into());
        }
        if !(self.coeff_min > 0.0 && self.coeff_min <= self.coeff_max) {
            return cfg(format!(
                "need 0 < coeff_min <= coeff_max, got [{}, {}]",
                self.coeff_min, self.coeff_max
            ));
        }
        let (lo, hi) = self.sum_band;
        if !(lo <= hi && lo >= self.coeff_min && hi <= self.coeff_max) {
            return cfg(format!(
                "sum_band ({lo}, {hi}) must lie within [{}, {}]",
                self.coeff_min, self.coeff_max
            ));
        }
        Ok(())
    }

    /// Mean-coefficient interval of stratum `k`.
    pub fn stratum_band(&self, k: usize) -> (f64, f64) {
        let (lo, hi) = self.sum_band;
        let w = (hi - lo) / self.strata as f64;
        let a = lo + w * k as f64;
        let b = if k + 1 == self.strata { hi } else { lo + w * (k + 1) as f64 };
        (a, b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadScenario {
    pub id: usize,
    /// One multiplier per load, in load bus order.
    pub coeffs: Vec<f64>,
}

impl LoadScenario {
    pub fn mean(&self) -> f64 {
        self.coeffs.iter().sum::<f64>() / self.coeffs.len() as f64
    }
}

/// Per-bus demand in MW / MVAr, indexed by bus position.
#[derive(Debug, Clone, PartialEq)]
pub struct BusLoads {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl BusLoads {
    pub fn total_p(&self) -> f64 {
        self.p.iter().sum()
    }
}

/// Draws `n_scenarios` scenarios, assigning them round-robin to `strata`
/// equal-width bands of the mean coefficient.
pub fn generate_scenarios(config: &ScenarioConfig, case: &NetworkCase) -> Result<Vec<LoadScenario>> {
    config.validate()?;
    let n_loads = case.loads.len();
    if n_loads == 0 {
        return Err(Error::Config("case has no loads".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut out = Vec::with_capacity(config.n_scenarios);
    for id in 0..config.n_scenarios {
        let band = config.stratum_band(id % config.strata);
        let coeffs = sample_in_band(&mut rng, config, band, n_loads)?;
        out.push(LoadScenario { id, coeffs });
    }
    Ok(out)
}

fn sample_in_band(
    rng: &mut ChaCha8Rng,
    config: &ScenarioConfig,
    (blo, bhi): (f64, f64),
    n: usize,
) -> Result<Vec<f64>> {
    let (cmin, cmax) = (config.coeff_min, config.coeff_max);
    let draw = |rng: &mut ChaCha8Rng, a: f64, b: f64| if a < b { rng.gen_range(a..=b) } else { a };
    let nf = n as f64;
    let mut coeffs = vec![0.0; n];
    for _ in 0..MAX_ATTEMPTS {
        for c in coeffs.iter_mut().take(n - 1) {
            *c = draw(rng, cmin, cmax);
        }
        let partial: f64 = coeffs[..n - 1].iter().sum();
        // The last coefficient is confined to the slice that lands the mean in band.
        let lo = (blo * nf - partial).max(cmin);
        let hi = (bhi * nf - partial).min(cmax);
        if lo > hi {
            continue;
        }
        coeffs[n - 1] = draw(rng, lo, hi);
        let mean = coeffs.iter().sum::<f64>() / nf;
        if mean >= blo && mean <= bhi {
            return Ok(coeffs);
        }
    }
    Err(Error::Config(format!(
        "no coefficients in [{cmin}, {cmax}] reach mean band [{blo}, {bhi}]"
    )))
}

/// Scales every load by its coefficient at constant power factor.
pub fn apply_scenario(case: &NetworkCase, s: &LoadScenario) -> Result<BusLoads> {
    if s.coeffs.len() != case.loads.len() {
        return Err(Error::LengthMismatch {
            expected: case.loads.len(),
            got: s.coeffs.len(),
        });
    }
    let mut p = vec![0.0; case.n_bus()];
    let mut q = vec![0.0; case.n_bus()];
    for (load, &c) in case.loads.iter().zip(&s.coeffs) {
        let i = case.bus_index(load.bus).unwrap();
        p[i] = c * load.p_base;
        q[i] = c * load.q_base;
    }
    Ok(BusLoads { p, q })
}

pub fn write_scenarios_csv<W: Write>(w: W, case: &NetworkCase, scenarios: &[LoadScenario]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["scenario_id".to_string()];
    header.extend(case.loads.iter().map(|l| format!("coeff_{}", l.bus)));
    wr.write_record(&header)?;
    for s in scenarios {
        let mut row = vec![s.id.to_string()];
        row.extend(s.coeffs.iter().map(|&c| fmt_f64(c)));
        wr.write_record(&row)?;
    }
    wr.flush().map_err(|e| Error::Csv(e.to_string()))?;
    Ok(())
}

pub fn read_scenarios_csv<R: Read>(r: R, case: &NetworkCase) -> Result<Vec<LoadScenario>> {
    let mut rd = csv::Reader::from_reader(r);
    let expected: Vec<String> = std::iter::once("scenario_id".to_string())
        .chain(case.loads.iter().map(|l| format!("coeff_{}", l.bus)))
        .collect();
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if header != expected {
        return Err(Error::Csv(format!(
            "scenario header {header:?} does not match case loads {expected:?}"
        )));
    }
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let id = rec[0]
            .parse()
            .map_err(|_| Error::Csv(format!("bad scenario id {:?}", &rec[0])))?;
        let coeffs = rec.iter().skip(1).map(parse_f64).collect::<Result<Vec<_>>>()?;
        out.push(LoadScenario { id, coeffs });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn training_defaults_fill_every_stratum() {
        let case = NetworkCase::wscc9();
        let s = generate_scenarios(&ScenarioConfig::training(), &case).unwrap();
        assert_eq!(s.len(), 455);
        assert!(s.iter().flat_map(|x| &x.coeffs).all(|&c| (0.3..=1.7).contains(&c)));
        let cfg = ScenarioConfig::training();
        for k in 0..cfg.strata {
            let (lo, hi) = cfg.stratum_band(k);
            let n = s.iter().filter(|x| x.mean() >= lo && x.mean() <= hi).count();
            assert!(n >= 45, "stratum {k} holds {n}");
        }
    }

    #[test]
    fn degenerate_range_gives_benchmark() {
        let case = NetworkCase::wscc9();
        let cfg = ScenarioConfig {
            n_scenarios: 5,
            coeff_min: 1.0,
            coeff_max: 1.0,
            sum_band: (1.0, 1.0),
            seed: 1,
            strata: 3,
        };
        let s = generate_scenarios(&cfg, &case).unwrap();
        assert!(s.iter().flat_map(|x| &x.coeffs).all(|&c| c == 1.0));
    }

    #[test]
    fn band_outside_range_is_config_error() {
        let case = NetworkCase::wscc9();
        let mut cfg = ScenarioConfig::training();
        cfg.sum_band = (0.2, 1.5);
        assert!(matches!(generate_scenarios(&cfg, &case), Err(Error::Config(_))));
    }

    #[test]
    fn csv_is_deterministic_and_reingestible() {
        let case = NetworkCase::wscc9();
        let cfg = ScenarioConfig::training();
        let render = || {
            let s = generate_scenarios(&cfg, &case).unwrap();
            let mut buf = Vec::new();
            write_scenarios_csv(&mut buf, &case, &s).unwrap();
            (s, buf)
        };
        let (s1, a) = render();
        let (_, b) = render();
        assert_eq!(a, b);
        assert!(String::from_utf8_lossy(&a).starts_with("scenario_id,coeff_5,coeff_6,coeff_8\n"));
        let back = read_scenarios_csv(a.as_slice(), &case).unwrap();
        assert_eq!(back, s1);
    }

    #[test]
    fn apply_scales_at_constant_power_factor() {
        let case = NetworkCase::wscc9();
        let ones = LoadScenario { id: 0, coeffs: vec![1.0; 3] };
        let loads = apply_scenario(&case, &ones).unwrap();
        for l in &case.loads {
            let i = case.bus_index(l.bus).unwrap();
            assert_eq!(loads.p[i], l.p_base);
            assert_eq!(loads.q[i], l.q_base);
        }

        let low = LoadScenario { id: 0, coeffs: vec![0.3, 1.0, 1.0] };
        let loads = apply_scenario(&case, &low).unwrap();
        let i5 = case.bus_index(5).unwrap();
        assert!((loads.p[i5] - 37.5).abs() < 1e-12);
        assert!((loads.q[i5] - 15.0).abs() < 1e-12);

        let high = LoadScenario { id: 0, coeffs: vec![1.7; 3] };
        let total = apply_scenario(&case, &high).unwrap().total_p();
        assert!((total - 535.5).abs() < 1e-9);

        let bad = LoadScenario { id: 0, coeffs: vec![1.0; 2] };
        assert!(matches!(apply_scenario(&case, &bad), Err(Error::LengthMismatch { .. })));
    }
}
