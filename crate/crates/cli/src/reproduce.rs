use std::time::Instant;

use anyhow::Result;
use serde::{Deserialize, Serialize};

use polysafe_core::io::decimal_string;
use polysafe_core::synthesis::{maximize_radius, Mode, SynthesisError, Theorem};

use crate::commands::{run_sweep, Outcome};
use crate::config::{Coefficient, NamedCoefficient, PlantConfig, RunConfig, PAPER_PRESET};

#[derive(Debug, Clone, Copy)]
pub struct Row {
    pub key: &'static str,
    pub label: &'static str,
    pub theorem: Theorem,
    pub mode: Mode,
    pub robust: bool,
    /// Published `(e1*, e2*, r*)` for the benchmark plant.
    pub published: [f64; 3],
}

const ROWS: [Row; 5] = [
    Row { key: "thm1", label: "Theorem 1", theorem: Theorem::Lipschitz, mode: Mode::Unstructured, robust: false, published: [0.04, 0.015, 0.605] },
    Row {
        key: "thm3_unstructured",
        label: "Theorem 3 unstructured",
        theorem: Theorem::Vertexwise,
        mode: Mode::Unstructured,
        robust: false,
        published: [0.24, 0.31, 0.97],
    },
    Row {
        key: "thm3_structured",
        label: "Theorem 3 structured",
        theorem: Theorem::Vertexwise,
        mode: Mode::Structured,
        robust: false,
        published: [0.25, 0.51, 1.15],
    },
    Row {
        key: "thm3_active_only",
        label: "Theorem 3 active_only",
        theorem: Theorem::Vertexwise,
        mode: Mode::ActiveOnly,
        robust: false,
        published: [7.0, 6.5, 1.25],
    },
    Row { key: "thm4", label: "Theorem 4", theorem: Theorem::Robust, mode: Mode::Unstructured, robust: true, published: [0.19, 0.26, 0.93] },
];

pub fn row(key: &str) -> Option<Row> {
    ROWS.iter().copied().find(|r| r.key == key)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measured {
    pub certificate: String,
    pub seed: u64,
    pub e1_star: f64,
    pub e2_star: f64,
    pub r_star: f64,
    pub wall_time_s: f64,
}

const COEFFS: [Coefficient; 2] = [Coefficient::Named(NamedCoefficient::E1), Coefficient::Named(NamedCoefficient::E2)];

fn measure(cfg: &RunConfig, row: &Row, seed: u64) -> Result<Measured> {
    let start = Instant::now();
    let h_w = if row.robust { cfg.reproduce.robust_h_w } else { 0.0 };
    let dir = cfg.output.join("reproduce").join(format!("seed{seed}"));
    let mut stars = [f64::NAN; 2];
    for (k, c) in COEFFS.iter().enumerate() {
        if let Some(res) = run_sweep(cfg, *c, h_w, row.theorem, row.mode, seed)? {
            stars[k] = res.magnitude;
            std::fs::create_dir_all(&dir)?;
            std::fs::write(dir.join(format!("{}_{}.csv", row.key, c.label())), res.to_csv())?;
        }
    }
    let plant = cfg.plant(h_w)?;
    let base = cfg.spec_for(&plant, cfg.base_polytope()?, seed)?;
    let mut search = cfg.radius_search();
    if row.robust {
        search.scan = cfg.reproduce.robust_scan;
    }
    let r_star = match maximize_radius(&base, row.theorem, row.mode, &search) {
        Ok(r) => {
            let mut csv = String::from("r,accepted,objective\n");
            for p in &r.probes {
                csv.push_str(&format!("{},{},{}\n", decimal_string(p.r), p.accepted, decimal_string(p.objective)));
            }
            std::fs::create_dir_all(&dir)?;
            std::fs::write(dir.join(format!("{}_rmax.csv", row.key)), csv)?;
            r.r_star
        }
        Err(SynthesisError::InfeasibleAtLowerBracket(_)) => f64::NAN,
        Err(e) => return Err(e.into()),
    };
    Ok(Measured {
        certificate: row.label.to_string(),
        seed,
        e1_star: stars[0],
        e2_star: stars[1],
        r_star,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

fn cell(x: f64) -> String {
    if x.is_finite() {
        decimal_string(x)
    } else {
        String::new()
    }
}

fn short(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.3}")
    } else {
        "n/a".into()
    }
}

/// `summary.csv`; the last column is the only one that depends on timing.
pub fn summary_csv(rows: &[(Row, Measured)], with_published: bool) -> String {
    let mut out = String::from("certificate,seed,e1_star,e2_star,r_star,published_e1,published_e2,published_r,wall_time_s\n");
    for (row, m) in rows {
        let published: Vec<String> =
            row.published.iter().map(|v| if with_published { decimal_string(*v) } else { String::new() }).collect();
        out.push_str(&format!(
            "{},{},{},{},{},{},{:.3}\n",
            m.certificate,
            m.seed,
            cell(m.e1_star),
            cell(m.e2_star),
            cell(m.r_star),
            published.join(","),
            m.wall_time_s
        ));
    }
    out
}

pub fn summary_md(rows: &[(Row, Measured)], with_published: bool) -> String {
    let mut out = String::from("| certificate | seed | e1* | e2* | r* | published e1* | published e2* | published r* | wall time (s) |\n");
    out.push_str("|---|---|---|---|---|---|---|---|---|\n");
    for (row, m) in rows {
        let p = |k: usize| if with_published { format!("{}", row.published[k]) } else { "n/a".into() };
        out.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} | {} | {} | {:.1} |\n",
            m.certificate,
            m.seed,
            short(m.e1_star),
            short(m.e2_star),
            short(m.r_star),
            p(0),
            p(1),
            p(2),
            m.wall_time_s
        ));
    }
    out
}

pub fn reproduce(cfg: &RunConfig) -> Result<Outcome> {
    let with_published = matches!(&cfg.plant, PlantConfig::Preset(p) if p.preset == PAPER_PRESET);
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        for key in &cfg.reproduce.rows {
            let r = row(key).expect("rows are validated with the config");
            let m = measure(cfg, &r, seed)?;
            eprintln!(
                "seed {seed} {}: e1* {} e2* {} r* {} ({:.1}s)",
                r.label,
                short(m.e1_star),
                short(m.e2_star),
                short(m.r_star),
                m.wall_time_s
            );
            rows.push((r, m));
        }
    }
    std::fs::create_dir_all(&cfg.output)?;
    std::fs::write(cfg.output.join("summary.csv"), summary_csv(&rows, with_published))?;
    std::fs::write(cfg.output.join("summary.md"), summary_md(&rows, with_published))?;
    eprintln!("wrote {}", cfg.output.join("summary.csv").display());
    Ok(Outcome::Success)
}
