use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use polysafe_core::basis::{BasisDictionary, DictionarySpec, Remainder};
use polysafe_core::plant_data::{collect_experiment, ExperimentDesign, PlantModel, X0Sampling};
use polysafe_core::polytope::{Polytope, PolytopeSpec};
use polysafe_core::presets;
use polysafe_core::synthesis::{
    CertificateSpec, DisturbanceBound, InputPolytope, Mode, RadiusSearch, SweepSearch, Theorem, VerifyPolicy,
    VerifySettings,
};

pub const PAPER_PRESET: &str = "paper-sysV";
pub const EXAMPLE1_PRESET: &str = "example1";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub plant: PlantConfig,
    pub dictionary: Option<DictionarySpec>,
    /// Base safe set; the working set is this one scaled by `radius`.
    pub polytope: Option<PolytopeSpec>,
    pub radius: f64,
    pub lambda: f64,
    pub h_w: f64,
    pub theorem: Theorem,
    pub mode: Mode,
    pub experiment: ExperimentConfig,
    /// Seeds of the reproduction matrix.
    pub seeds: Vec<u64>,
    pub input: Option<InputConfig>,
    pub disturbance_bound: DisturbanceBound,
    pub sweep: SweepConfig,
    pub search: SearchConfig,
    pub verify: VerifyConfig,
    pub simulate: SimulateConfig,
    pub reproduce: ReproduceConfig,
    pub output: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            plant: PlantConfig::default(),
            dictionary: None,
            polytope: None,
            radius: 1.0,
            lambda: 1.0,
            h_w: 0.0,
            theorem: Theorem::Lipschitz,
            mode: Mode::Unstructured,
            experiment: ExperimentConfig::default(),
            seeds: vec![1, 2, 3, 4, 5],
            input: None,
            disturbance_bound: DisturbanceBound::Exact,
            sweep: SweepConfig::default(),
            search: SearchConfig::default(),
            verify: VerifyConfig::default(),
            simulate: SimulateConfig::default(),
            reproduce: ReproduceConfig::default(),
            output: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PlantConfig {
    Preset(PresetPlant),
    Matrices(MatrixPlant),
}

impl Default for PlantConfig {
    fn default() -> Self {
        PlantConfig::Preset(PresetPlant { preset: PAPER_PRESET.into(), e1: -0.01, e2: -0.005 })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PresetPlant {
    pub preset: String,
    #[serde(default = "default_e1")]
    pub e1: f64,
    #[serde(default = "default_e2")]
    pub e2: f64,
}

fn default_e1() -> f64 {
    -0.01
}

fn default_e2() -> f64 {
    -0.005
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixPlant {
    pub a1: Vec<Vec<f64>>,
    pub a2: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Number of samples `T`.
    pub samples: Option<usize>,
    pub seed: Option<u64>,
    pub input_amplitude: Option<f64>,
    pub x0_half_width: Option<f64>,
    pub episode_length: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InputConfig {
    Box {
        bound: f64,
    },
    Polytope {
        f_u: Vec<Vec<f64>>,
        g_u: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coefficient {
    Named(NamedCoefficient),
    /// Entry `(row, col)` of `A2`.
    Entry([usize; 2]),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NamedCoefficient {
    E1,
    E2,
}

impl Coefficient {
    pub fn entry(&self) -> (usize, usize) {
        match self {
            Coefficient::Named(NamedCoefficient::E1) => (0, 0),
            Coefficient::Named(NamedCoefficient::E2) => (2, 2),
            Coefficient::Entry([i, j]) => (*i, *j),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Coefficient::Named(NamedCoefficient::E1) => "e1".into(),
            Coefficient::Named(NamedCoefficient::E2) => "e2".into(),
            Coefficient::Entry([i, j]) => format!("a2_{i}_{j}"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub coefficient: Coefficient,
    /// Radius of the working set during sweeps.
    pub radius: f64,
    pub hi: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        let d = SweepSearch::default();
        SweepConfig { coefficient: Coefficient::Named(NamedCoefficient::E1), radius: 0.5, hi: d.hi, tol: d.tol, max_iter: d.max_iter }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchConfig {
    pub lo: f64,
    pub hi: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub scan: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        let d = RadiusSearch::default();
        SearchConfig { lo: d.lo, hi: d.hi, tol: d.tol, max_iter: d.max_iter, scan: d.scan }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub policy: VerifyPolicy,
    pub samples: usize,
    pub boundary_fraction: f64,
    pub seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        let d = VerifySettings::default();
        VerifyConfig { policy: d.policy, samples: d.samples, boundary_fraction: d.boundary_fraction, seed: d.seed }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub steps: usize,
    /// Disturbance realizations per vertex; only used when `h_w > 0`.
    pub realizations: usize,
    pub seed: u64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig { steps: 200, realizations: 50, seed: 0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReproduceConfig {
    pub rows: Vec<String>,
    /// Disturbance level of the robust row.
    pub robust_h_w: f64,
    /// Lower-bracket scan for the robust row.
    pub robust_scan: usize,
}

impl Default for ReproduceConfig {
    fn default() -> Self {
        ReproduceConfig {
            rows: ["thm1", "thm3_unstructured", "thm3_structured", "thm3_active_only", "thm4"].map(String::from).to_vec(),
            robust_h_w: 0.03,
            robust_scan: 19,
        }
    }
}

/// Command-line overrides applied after loading.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub lambda: Option<f64>,
    pub theorem: Option<Theorem>,
    pub mode: Option<Mode>,
    pub h_w: Option<f64>,
    pub radius: Option<f64>,
    pub verify_n: Option<usize>,
    pub boundary_frac: Option<f64>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let is_json = path.extension().map(|e| e.eq_ignore_ascii_case("json")).unwrap_or(false);
        let cfg: RunConfig = if is_json {
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        } else {
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        };
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.experiment.seed = Some(s);
            self.seeds = vec![s];
        }
        if let Some(v) = o.lambda {
            self.lambda = v;
        }
        if let Some(v) = o.theorem {
            self.theorem = v;
        }
        if let Some(v) = o.mode {
            self.mode = v;
        }
        if let Some(v) = o.h_w {
            self.h_w = v;
        }
        if let Some(v) = o.radius {
            self.radius = v;
        }
        if let Some(v) = o.verify_n {
            self.verify.samples = v;
        }
        if let Some(v) = o.boundary_frac {
            self.verify.boundary_fraction = v;
        }
        if let Some(v) = &o.out {
            self.output = v.clone();
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            bail!("lambda = {} must lie in (0, 1]", self.lambda);
        }
        if !(self.h_w >= 0.0) {
            bail!("h_w = {} must be nonnegative", self.h_w);
        }
        if !(self.radius > 0.0) {
            bail!("radius = {} must be positive", self.radius);
        }
        if !(0.0..=1.0).contains(&self.verify.boundary_fraction) {
            bail!("verify.boundary_fraction = {} must lie in [0, 1]", self.verify.boundary_fraction);
        }
        if self.seeds.is_empty() {
            bail!("seeds must not be empty");
        }
        if let PlantConfig::Preset(p) = &self.plant {
            if p.preset != PAPER_PRESET && p.preset != EXAMPLE1_PRESET {
                bail!("unknown preset {:?}; expected {PAPER_PRESET:?} or {EXAMPLE1_PRESET:?}", p.preset);
            }
        }
        for r in &self.reproduce.rows {
            if crate::reproduce::row(r).is_none() {
                bail!("unknown reproduce row {r:?}");
            }
        }
        self.plant(self.h_w)?;
        self.base_polytope()?;
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.experiment.seed.unwrap_or(self.seeds[0])
    }

    fn preset(&self) -> Option<&str> {
        match &self.plant {
            PlantConfig::Preset(p) => Some(p.preset.as_str()),
            PlantConfig::Matrices(_) => None,
        }
    }

    pub fn dictionary(&self, n: usize) -> Result<BasisDictionary> {
        match (&self.dictionary, self.preset()) {
            (Some(d), _) => Ok(BasisDictionary::from_spec(d, n)?),
            (None, Some(PAPER_PRESET)) => Ok(presets::paper_dictionary()),
            (None, Some(_)) => Ok(presets::example1_plant().remainder.dictionary().clone()),
            (None, None) => bail!("a matrix plant needs a [dictionary] section"),
        }
    }

    /// The true plant; only simulation, verification and data collection look at it.
    pub fn plant(&self, h_w: f64) -> Result<PlantModel> {
        self.plant_with(h_w, None)
    }

    /// The plant with one `A2` entry replaced.
    pub fn plant_with(&self, h_w: f64, patch: Option<((usize, usize), f64)>) -> Result<PlantModel> {
        let (a1, mut a2, b, n) = match &self.plant {
            PlantConfig::Preset(p) if p.preset == PAPER_PRESET => {
                let base = presets::paper_plant(p.e1, p.e2, 0.0);
                (base.a1, base.a2, base.b, 3)
            }
            PlantConfig::Preset(_) => {
                let base = presets::example1_plant();
                (base.a1, base.a2, base.b, 1)
            }
            PlantConfig::Matrices(m) => {
                let a1 = matrix(&m.a1, "a1")?;
                let n = a1.nrows();
                (a1, matrix(&m.a2, "a2")?, matrix(&m.b, "b")?, n)
            }
        };
        if let Some(((i, j), v)) = patch {
            if i >= a2.nrows() || j >= a2.ncols() {
                bail!("coefficient ({i}, {j}) is outside the {}x{} matrix A2", a2.nrows(), a2.ncols());
            }
            a2[(i, j)] = v;
        }
        let rem = Remainder::new(self.dictionary(n)?);
        Ok(PlantModel::new(a1, a2, b, rem, h_w)?)
    }

    pub fn base_polytope(&self) -> Result<Polytope> {
        if let Some(spec) = &self.polytope {
            return Ok(Polytope::try_from(spec.clone())?);
        }
        match self.preset() {
            Some(PAPER_PRESET) => Ok(presets::paper_box(1.0)),
            Some(_) => Ok(presets::example1_interval()),
            None => {
                let n = self.plant(0.0)?.n();
                Ok(Polytope::hypercube(n, 1.0)?)
            }
        }
    }

    pub fn working_polytope(&self) -> Result<Polytope> {
        Ok(self.base_polytope()?.scale_uniform(self.radius)?)
    }

    pub fn design(&self, seed: u64, plant: &PlantModel) -> ExperimentDesign {
        let mut d = match self.preset() {
            Some(PAPER_PRESET) => presets::paper_design(20, seed),
            Some(_) => presets::example1_design(seed),
            None => ExperimentDesign {
                t: 3 * (plant.n() + plant.nq()),
                input_amplitude: 1.0,
                x0: X0Sampling::Box { half_width: 1.0 },
                episode_length: Some(1),
                seed,
            },
        };
        let e = &self.experiment;
        if let Some(t) = e.samples {
            d.t = t;
        }
        if let Some(a) = e.input_amplitude {
            d.input_amplitude = a;
        }
        if let Some(h) = e.x0_half_width {
            d.x0 = X0Sampling::Box { half_width: h };
        }
        if let Some(l) = e.episode_length {
            d.episode_length = Some(l);
        }
        d
    }

    pub fn input_polytope(&self, m: usize) -> Result<Option<InputPolytope>> {
        Ok(match &self.input {
            None => None,
            Some(InputConfig::Box { bound }) => Some(InputPolytope::symmetric_box(m, *bound)),
            Some(InputConfig::Polytope { f_u, g_u }) => Some(InputPolytope {
                f_u: matrix(f_u, "input.f_u")?,
                g_u: nalgebra::DVector::from_vec(g_u.clone()),
            }),
        })
    }

    /// Collect data on `plant` and assemble the certificate inputs on `polytope`.
    pub fn spec_for(&self, plant: &PlantModel, polytope: Polytope, seed: u64) -> Result<CertificateSpec> {
        let data = collect_experiment(plant, &self.design(seed, plant), &polytope)?;
        let mut spec = CertificateSpec::new(polytope, data, plant.remainder.clone());
        spec.lambda = self.lambda;
        spec.h_w = plant.h_w;
        spec.input = self.input_polytope(plant.m())?;
        spec.options.disturbance_bound = self.disturbance_bound;
        Ok(spec)
    }

    /// The spec of a single run at the configured radius.
    pub fn spec(&self) -> Result<CertificateSpec> {
        let plant = self.plant(self.h_w)?;
        self.spec_for(&plant, self.working_polytope()?, self.seed())
    }

    pub fn verify_settings(&self) -> VerifySettings {
        VerifySettings {
            policy: self.verify.policy,
            samples: self.verify.samples,
            boundary_fraction: self.verify.boundary_fraction,
            seed: self.verify.seed,
        }
    }

    pub fn radius_search(&self) -> RadiusSearch {
        let s = &self.search;
        RadiusSearch { lo: s.lo, hi: s.hi, tol: s.tol, max_iter: s.max_iter, scan: s.scan, verify: self.verify_settings() }
    }

    pub fn sweep_search(&self) -> SweepSearch {
        let s = &self.sweep;
        SweepSearch { hi: s.hi, tol: s.tol, max_iter: s.max_iter, verify: self.verify_settings() }
    }

    /// Sign applied to sweep magnitudes: that of the configured coefficient, negative when it is zero.
    pub fn sweep_sign(&self, c: Coefficient) -> Result<f64> {
        let a2 = self.plant(0.0)?.a2;
        let (i, j) = c.entry();
        let v = *a2.get((i, j)).ok_or_else(|| anyhow!("coefficient ({i}, {j}) is outside A2"))?;
        Ok(if v > 0.0 { 1.0 } else { -1.0 })
    }
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let nr = rows.len();
    let nc = rows.first().map(|r| r.len()).unwrap_or(0);
    if rows.iter().any(|r| r.len() != nc) {
        bail!("{what}: ragged rows");
    }
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}
