use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use polysafe_core::basis::{BasisDictionary, DictionarySpec, Remainder};
use polysafe_core::conic::SolveStatus;
use polysafe_core::io::decimal_string;
use polysafe_core::runtime::{simulate_vertex_bundle, Controller, Disturbance};
use polysafe_core::synthesis::{
    certify, maximize_radius, sweep_coefficient, Certified, SynthesisError, SynthesisResult,
};
use polysafe_core::verify::{monte_carlo_contractivity, VerificationReport};

use crate::config::RunConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// No certificate (or a failed check); not an error in the run itself.
    Negative,
}

impl Outcome {
    pub fn code(self) -> i32 {
        match self {
            Outcome::Success => 0,
            Outcome::Negative => 2,
        }
    }
}

/// What `result.json` holds: the certificate plus what is needed to rebuild its controller.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultFile {
    pub dictionary: DictionarySpec,
    pub seed: u64,
    pub certificate: Certified,
}

impl ResultFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn controller(&self) -> Result<Controller> {
        let res = &self.certificate.result;
        let rem = Remainder::new(BasisDictionary::from_spec(&self.dictionary, res.polytope.n())?);
        res.controller(&rem).ok_or_else(|| anyhow!("result has no gains (status {:?})", res.status))
    }
}

fn write(path: PathBuf, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn write_json<T: Serialize>(path: PathBuf, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write(path, &s)
}

fn dictionary_spec(cfg: &RunConfig, n: usize) -> Result<DictionarySpec> {
    cfg.dictionary(n)?.spec().ok_or_else(|| anyhow!("dictionary is not monomial"))
}

fn log_stats(res: &SynthesisResult) {
    eprintln!(
        "theorem {} status {:?} objective {} programs {}",
        res.theorem,
        res.status,
        decimal_string(res.objective),
        res.programs_solved
    );
    for (k, s) in res.stats.iter().enumerate() {
        eprintln!(
            "  program {k}: {} iterations, {:.3}s, primal residual {:.2e}, dual residual {:.2e}, audit {:.2e}",
            s.iterations, s.solve_time, s.primal_residual, s.dual_residual, s.max_violation
        );
    }
    if !res.infeasible_groups.is_empty() {
        eprintln!("  infeasible groups: {}", res.infeasible_groups.join(", "));
    }
}

fn outcome_of(c: &Certified) -> Outcome {
    match (c.result.status, c.accepted) {
        (SolveStatus::Optimal, true) => Outcome::Success,
        (SolveStatus::Optimal, false) => {
            eprintln!("certificate rejected by sampling verification");
            Outcome::Negative
        }
        (SolveStatus::Infeasible, _) => {
            eprintln!("certificate program infeasible");
            Outcome::Negative
        }
        (SolveStatus::NumericalFailure, _) => {
            eprintln!("solver stopped without a certificate (numerical failure)");
            Outcome::Negative
        }
    }
}

fn save_certified(cfg: &RunConfig, c: &Certified, seed: u64) -> Result<()> {
    let file = ResultFile { dictionary: dictionary_spec(cfg, c.result.polytope.n())?, seed, certificate: c.clone() };
    write_json(cfg.output.join("result.json"), &file)?;
    if let Some(r) = &c.report {
        save_report(cfg, r)?;
    }
    Ok(())
}

fn save_report(cfg: &RunConfig, r: &VerificationReport) -> Result<()> {
    write_json(cfg.output.join("report.json"), r)?;
    write(cfg.output.join("violations.csv"), &r.violations_csv())
}

pub fn synth(cfg: &RunConfig) -> Result<Outcome> {
    let spec = cfg.spec()?;
    let c = certify(&spec, cfg.theorem, cfg.mode, &cfg.verify_settings())?;
    log_stats(&c.result);
    save_certified(cfg, &c, cfg.seed())?;
    Ok(outcome_of(&c))
}

#[derive(Serialize)]
struct RmaxSummary {
    theorem: String,
    mode: String,
    r_star: f64,
    probes: usize,
}

pub fn rmax(cfg: &RunConfig) -> Result<Outcome> {
    let plant = cfg.plant(cfg.h_w)?;
    let base = cfg.spec_for(&plant, cfg.base_polytope()?, cfg.seed())?;
    let res = match maximize_radius(&base, cfg.theorem, cfg.mode, &cfg.radius_search()) {
        Ok(r) => r,
        Err(SynthesisError::InfeasibleAtLowerBracket(lo)) => {
            eprintln!("no certificate at the lower bracket r = {lo}");
            return Ok(Outcome::Negative);
        }
        Err(e) => return Err(e.into()),
    };
    let mut csv = String::from("r,status,accepted,objective\n");
    for p in &res.probes {
        csv.push_str(&format!("{},{:?},{},{}\n", decimal_string(p.r), p.status, p.accepted, decimal_string(p.objective)));
    }
    write(cfg.output.join("rmax.csv"), &csv)?;
    write_json(
        cfg.output.join("rmax.json"),
        &RmaxSummary { theorem: cfg.theorem.to_string(), mode: cfg.mode.to_string(), r_star: res.r_star, probes: res.probes.len() },
    )?;
    log_stats(&res.best.result);
    save_certified(cfg, &res.best, cfg.seed())?;
    eprintln!("r* = {}", decimal_string(res.r_star));
    Ok(Outcome::Success)
}

#[derive(Serialize)]
struct SweepSummary {
    coefficient: String,
    magnitude: f64,
    value: f64,
    probes: usize,
}

pub fn sweep(cfg: &RunConfig) -> Result<Outcome> {
    let coef = cfg.sweep.coefficient;
    let sign = cfg.sweep_sign(coef)?;
    match run_sweep(cfg, coef, cfg.h_w, cfg.theorem, cfg.mode, cfg.seed())? {
        Some(res) => {
            write(cfg.output.join("sweep.csv"), &res.to_csv())?;
            write_json(
                cfg.output.join("sweep.json"),
                &SweepSummary { coefficient: coef.label(), magnitude: res.magnitude, value: sign * res.magnitude, probes: res.probes.len() },
            )?;
            eprintln!("{}* = {}", coef.label(), decimal_string(res.magnitude));
            Ok(Outcome::Success)
        }
        None => {
            eprintln!("no certificate with {} = 0", coef.label());
            Ok(Outcome::Negative)
        }
    }
}

/// Sweep one `A2` entry with freshly collected data at every probe; `None` when zero already fails.
pub fn run_sweep(
    cfg: &RunConfig,
    coef: crate::config::Coefficient,
    h_w: f64,
    theorem: polysafe_core::synthesis::Theorem,
    mode: polysafe_core::synthesis::Mode,
    seed: u64,
) -> Result<Option<polysafe_core::synthesis::SweepResult>> {
    let sign = cfg.sweep_sign(coef)?;
    let polytope = cfg.base_polytope()?.scale_uniform(cfg.sweep.radius)?;
    let build = |e: f64| {
        let plant = cfg
            .plant_with(h_w, Some((coef.entry(), sign * e)))
            .map_err(|err| SynthesisError::InvalidSpec(err.to_string()))?;
        cfg.spec_for(&plant, polytope.clone(), seed).map_err(|err| SynthesisError::InvalidSpec(err.to_string()))
    };
    match sweep_coefficient(build, theorem, mode, &cfg.sweep_search()) {
        Ok(r) => Ok(Some(r)),
        Err(SynthesisError::InfeasibleAtZero) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn result_path(cfg: &RunConfig, explicit: Option<&Path>) -> PathBuf {
    explicit.map(Path::to_path_buf).unwrap_or_else(|| cfg.output.join("result.json"))
}

/// Sample the stored controller on the noise-free true plant.
pub fn verify_result(cfg: &RunConfig, file: &ResultFile) -> Result<VerificationReport> {
    let ctrl = file.controller()?;
    let plant = cfg.plant(0.0)?;
    let res = &file.certificate.result;
    let zero = DVector::zeros(plant.n());
    let step = |x: &DVector<f64>| match ctrl.eval(x) {
        Ok(u) => plant.step(x, &u, &zero),
        Err(_) => DVector::from_element(x.len(), f64::INFINITY),
    };
    Ok(monte_carlo_contractivity(
        &res.polytope,
        step,
        res.lambda,
        cfg.verify.samples,
        cfg.verify.boundary_fraction,
        cfg.verify.seed,
    )?)
}

pub fn verify(cfg: &RunConfig, result: Option<&Path>) -> Result<Outcome> {
    let file = ResultFile::load(&result_path(cfg, result))?;
    let report = verify_result(cfg, &file)?;
    eprintln!("{}", report.confidence_note);
    save_report(cfg, &report)?;
    Ok(if report.passed { Outcome::Success } else { Outcome::Negative })
}

pub fn simulate(cfg: &RunConfig, result: Option<&Path>) -> Result<Outcome> {
    let file = ResultFile::load(&result_path(cfg, result))?;
    let ctrl = file.controller()?;
    let plant = cfg.plant(cfg.h_w)?;
    let p = &file.certificate.result.polytope;
    let lambda = file.certificate.result.lambda;
    let (disturbance, runs) = if cfg.h_w > 0.0 {
        (Disturbance::Uniform { h_w: cfg.h_w }, cfg.simulate.realizations.max(1))
    } else {
        (Disturbance::Zero, 1)
    };
    let nv = p.vertices().len() as u64;
    let mut summary = String::from("vertex,run,steps,max_gauge_increase,left_set_at\n");
    let mut left = 0usize;
    for run in 0..runs {
        let seed = cfg.simulate.seed.wrapping_add(run as u64 * nv);
        let bundle = simulate_vertex_bundle(&plant, &ctrl, p, cfg.simulate.steps, disturbance, seed);
        for (l, tr) in bundle.iter().enumerate() {
            write(cfg.output.join("trajectories").join(format!("v{l}_r{run}.csv")), &tr.to_csv())?;
            if tr.violated_at.is_some() {
                left += 1;
            }
            summary.push_str(&format!(
                "{l},{run},{},{},{}\n",
                tr.states.len() - 1,
                decimal_string(tr.max_gauge_increase(lambda)),
                tr.violated_at.map(|t| t.to_string()).unwrap_or_default()
            ));
        }
    }
    write(cfg.output.join("simulation.csv"), &summary)?;
    if left > 0 {
        eprintln!("{left} trajectories left the safe set");
        return Ok(Outcome::Negative);
    }
    Ok(Outcome::Success)
}
