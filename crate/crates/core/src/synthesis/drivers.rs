use serde::{Deserialize, Serialize};

use crate::conic::SolveStatus;
use crate::verify::{monte_carlo_contractivity, VerificationReport};

use super::{
    synth_dc_global, synth_hybrid, synth_lipschitz, synth_robust, synth_vertexwise, CertificateSpec, Mode,
    SynthesisError, SynthesisResult, Theorem,
};

/// Dispatch on the certificate family. `mode` only matters for the face-restricted certificate.
pub fn synthesize(spec: &CertificateSpec, theorem: Theorem, mode: Mode) -> Result<SynthesisResult, SynthesisError> {
    match theorem {
        Theorem::Lipschitz => synth_lipschitz(spec),
        Theorem::DcGlobal => synth_dc_global(spec),
        Theorem::Hybrid => synth_hybrid(spec),
        Theorem::Vertexwise => synth_vertexwise(spec, mode),
        Theorem::Robust => synth_robust(spec),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VerifyPolicy {
    Never,
    /// Only results flagged `requires_verification`.
    #[default]
    WhenRequired,
    Always,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifySettings {
    pub policy: VerifyPolicy,
    pub samples: usize,
    pub boundary_fraction: f64,
    pub seed: u64,
}

impl Default for VerifySettings {
    fn default() -> Self {
        VerifySettings { policy: VerifyPolicy::WhenRequired, samples: 2000, boundary_fraction: 0.7, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certified {
    pub result: SynthesisResult,
    pub report: Option<VerificationReport>,
    /// Optimal, and verified whenever the policy asked for it.
    pub accepted: bool,
}

/// Synthesize, then sample the data-based closed loop when the policy asks for it.
pub fn certify(
    spec: &CertificateSpec,
    theorem: Theorem,
    mode: Mode,
    verify: &VerifySettings,
) -> Result<Certified, SynthesisError> {
    let result = synthesize(spec, theorem, mode)?;
    if !result.is_optimal() {
        return Ok(Certified { result, report: None, accepted: false });
    }
    let wanted = match verify.policy {
        VerifyPolicy::Never => false,
        VerifyPolicy::WhenRequired => result.requires_verification,
        VerifyPolicy::Always => true,
    };
    if !wanted {
        return Ok(Certified { result, report: None, accepted: true });
    }
    let rem = &spec.remainder;
    let step = |x: &nalgebra::DVector<f64>| {
        result.data_successor(rem, x).unwrap_or_else(|_| nalgebra::DVector::from_element(x.len(), f64::INFINITY))
    };
    let report = monte_carlo_contractivity(
        &spec.polytope,
        step,
        spec.lambda,
        verify.samples,
        verify.boundary_fraction,
        verify.seed,
    )
    .map_err(|e| SynthesisError::Verify(e.to_string()))?;
    let accepted = report.passed;
    Ok(Certified { result, report: Some(report), accepted })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiusSearch {
    pub lo: f64,
    pub hi: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// When the lower end fails, probe this many evenly spaced radii for a feasible start.
    pub scan: usize,
    pub verify: VerifySettings,
}

impl Default for RadiusSearch {
    fn default() -> Self {
        RadiusSearch { lo: 0.1, hi: 2.0, tol: 5e-3, max_iter: 30, scan: 0, verify: VerifySettings::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiusProbe {
    pub r: f64,
    pub status: SolveStatus,
    pub accepted: bool,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiusResult {
    pub r_star: f64,
    pub best: Certified,
    pub probes: Vec<RadiusProbe>,
}

/// Bisection on the uniform scaling `S(F, r g)` of the base polytope.
pub fn maximize_radius(
    base: &CertificateSpec,
    theorem: Theorem,
    mode: Mode,
    search: &RadiusSearch,
) -> Result<RadiusResult, SynthesisError> {
    if !(search.lo > 0.0 && search.hi > search.lo && search.tol > 0.0) {
        return Err(SynthesisError::InvalidSpec(format!("bad radius bracket [{}, {}]", search.lo, search.hi)));
    }
    let mut probes = Vec::new();
    let mut probe = |r: f64| -> Result<Certified, SynthesisError> {
        let spec = base.with_polytope(base.polytope.scale_uniform(r)?);
        let c = certify(&spec, theorem, mode, &search.verify)?;
        probes.push(RadiusProbe { r, status: c.result.status, accepted: c.accepted, objective: c.result.objective });
        Ok(c)
    };

    let (mut lo, mut hi) = (search.lo, search.hi);
    let mut best = probe(lo)?;
    if !best.accepted {
        let mut found = None;
        for k in 1..=search.scan {
            let r = search.lo + (search.hi - search.lo) * k as f64 / (search.scan + 1) as f64;
            let c = probe(r)?;
            if c.accepted {
                found = Some((r, c));
                break;
            }
        }
        match found {
            Some((r, c)) => {
                lo = r;
                best = c;
            }
            None => return Err(SynthesisError::InfeasibleAtLowerBracket(search.lo)),
        }
    }
    let top = probe(hi)?;
    if top.accepted {
        return Ok(RadiusResult { r_star: hi, best: top, probes });
    }
    for _ in 0..search.max_iter {
        if hi - lo <= search.tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let c = probe(mid)?;
        if c.accepted {
            lo = mid;
            best = c;
        } else {
            hi = mid;
        }
    }
    Ok(RadiusResult { r_star: lo, best, probes })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSearch {
    pub hi: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub verify: VerifySettings,
}

impl Default for SweepSearch {
    fn default() -> Self {
        SweepSearch { hi: 10.0, tol: 1e-2, max_iter: 30, verify: VerifySettings::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepProbe {
    pub magnitude: f64,
    pub accepted: bool,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub magnitude: f64,
    pub probes: Vec<SweepProbe>,
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("coefficient,feasible,objective\n");
        for p in &self.probes {
            out.push_str(&format!(
                "{},{},{}\n",
                crate::io::decimal_string(p.magnitude),
                p.accepted,
                crate::io::decimal_string(p.objective)
            ));
        }
        out
    }
}

/// Largest coefficient magnitude in `[0, hi]` that stays certifiable. `build` receives the
/// magnitude and returns a spec with freshly collected data.
pub fn sweep_coefficient<B>(build: B, theorem: Theorem, mode: Mode, search: &SweepSearch) -> Result<SweepResult, SynthesisError>
where
    B: Fn(f64) -> Result<CertificateSpec, SynthesisError>,
{
    let mut probes = Vec::new();
    let mut probe = |e: f64| -> Result<bool, SynthesisError> {
        let c = certify(&build(e)?, theorem, mode, &search.verify)?;
        probes.push(SweepProbe { magnitude: e, accepted: c.accepted, objective: c.result.objective });
        Ok(c.accepted)
    };
    if !probe(0.0)? {
        return Err(SynthesisError::InfeasibleAtZero);
    }
    let (mut lo, mut hi) = (0.0, search.hi);
    if probe(hi)? {
        return Ok(SweepResult { magnitude: hi, probes });
    }
    for _ in 0..search.max_iter {
        if hi - lo <= search.tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if probe(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(SweepResult { magnitude: lo, probes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{BasisDictionary, Remainder};
    use crate::plant_data::{collect_experiment, ExperimentDesign, PlantModel, X0Sampling};
    use crate::polytope::Polytope;
    use nalgebra::DMatrix;

    fn linear_spec() -> CertificateSpec {
        let rem = Remainder::new(BasisDictionary::monomial_dictionary(&[], 2).unwrap());
        let plant = PlantModel::new(
            DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.0, 0.4]),
            DMatrix::zeros(2, 0),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            rem.clone(),
            0.0,
        )
        .unwrap();
        let p = Polytope::hypercube(2, 1.0).unwrap();
        let design = ExperimentDesign { t: 8, input_amplitude: 1.0, x0: X0Sampling::Box { half_width: 1.0 }, episode_length: Some(1), seed: 4 };
        let data = collect_experiment(&plant, &design, &p).unwrap();
        let mut s = CertificateSpec::new(p, data, rem);
        s.options.fixed_gains = Some(crate::runtime::GainPair { k1: DMatrix::zeros(1, 2), k2: DMatrix::zeros(1, 0) });
        s
    }

    #[test]
    fn contractive_linear_plant_reaches_upper_bracket() {
        let spec = linear_spec();
        for th in [Theorem::Lipschitz, Theorem::DcGlobal, Theorem::Robust] {
            let r = maximize_radius(&spec, th, Mode::Unstructured, &RadiusSearch::default()).unwrap();
            assert_eq!(r.r_star, 2.0, "{th}");
        }
    }

    #[test]
    fn lower_bracket_failure_is_reported() {
        let mut spec = linear_spec();
        spec.lambda = 0.1;
        let err = maximize_radius(&spec, Theorem::Lipschitz, Mode::Unstructured, &RadiusSearch::default());
        assert!(matches!(err, Err(SynthesisError::InfeasibleAtLowerBracket(_))));
    }

    #[test]
    fn theorem_names_round_trip() {
        for th in [Theorem::Lipschitz, Theorem::DcGlobal, Theorem::Hybrid, Theorem::Vertexwise, Theorem::Robust] {
            let s = serde_json::to_string(&th).unwrap();
            assert_eq!(serde_json::from_str::<Theorem>(&s).unwrap(), th);
            assert_eq!(th.label().parse::<Theorem>().unwrap(), th);
        }
        assert_eq!("active_only".parse::<Mode>().unwrap(), Mode::ActiveOnly);
    }
}
