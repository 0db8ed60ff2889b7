//! Scans over the imposed `<S^2>`: a constrained UHF solve, projection and
//! NOCI at every grid point, plus report output.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fci::{solve_fci_with, FciOptions, DEFAULT_DET_CAP};
use crate::integrals::{IntegralSet, SystemSpec};
use crate::noci::{classify_states_with_parity, solve_noci, StateLabel};
use crate::projection::{build_noci_basis, ProjectionSpace, DEFAULT_EPSILON_PAIR};
use crate::scf::{cuhf_solve, s2_bounds, uhf, CUHFSolution, ScfOptions};

pub const SCHEMA_VERSION: &str = "spinproj/1";
pub const DEFAULT_STEP: f64 = 0.05;
pub const DEFAULT_DELTA_E_TOL: f64 = 1e-6;
/// Energy gap between warm and cold starts that counts as a branch switch.
pub const BRANCH_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScanMode {
    Full,
    Restricted,
}

impl FromStr for ScanMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "full" => Ok(ScanMode::Full),
            "restricted" => Ok(ScanMode::Restricted),
            other => Err(Error::InvalidInput(format!("unknown scan mode `{other}`"))),
        }
    }
}

impl fmt::Display for ScanMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScanMode::Full => "full",
            ScanMode::Restricted => "restricted",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::InvalidInput(format!("unknown report format `{other}`"))),
        }
    }
}

/// `<S^2>` targets, either listed or as `start:stop:step`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grid {
    Points(Vec<f64>),
    Range { start: f64, stop: f64, step: f64 },
}

impl Grid {
    pub fn range(start: f64, stop: f64, step: f64) -> Self {
        Grid::Range { start, stop, step }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Grid::Points(p) => {
                if p.is_empty() {
                    return Err(Error::InvalidInput("empty grid".into()));
                }
                if p.iter().any(|x| !x.is_finite()) {
                    return Err(Error::InvalidInput("grid contains a non-finite value".into()));
                }
            }
            Grid::Range { start, stop, step } => {
                if !(step.is_finite() && *step > 0.0) {
                    return Err(Error::InvalidInput(format!("grid step must be positive, got {step}")));
                }
                if !(start.is_finite() && stop.is_finite()) || stop < start {
                    return Err(Error::InvalidInput(format!("bad grid range {start}:{stop}")));
                }
            }
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<f64> {
        match self {
            Grid::Points(p) => p.clone(),
            Grid::Range { start, stop, step } => {
                let n = ((stop - start) / step + 1e-9).floor() as usize;
                (0..=n).map(|i| tidy(start + i as f64 * step)).collect()
            }
        }
    }

    /// Spacing used when a single interval is refilled.
    pub fn step(&self) -> Option<f64> {
        match self {
            Grid::Range { step, .. } => Some(*step),
            Grid::Points(_) => None,
        }
    }
}

impl FromStr for Grid {
    type Err = Error;

    /// `start:stop:step` or a comma separated list.
    fn from_str(s: &str) -> Result<Self> {
        let num = |t: &str| -> Result<f64> {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidInput(format!("bad grid value `{}`", t.trim())))
        };
        let g = if s.contains(':') {
            let parts: Vec<&str> = s.split(':').collect();
            if parts.len() != 3 {
                return Err(Error::InvalidInput(format!("grid `{s}` is not start:stop:step")));
            }
            Grid::Range {
                start: num(parts[0])?,
                stop: num(parts[1])?,
                step: num(parts[2])?,
            }
        } else {
            Grid::Points(s.split(',').filter(|t| !t.trim().is_empty()).map(num).collect::<Result<_>>()?)
        };
        g.validate()?;
        Ok(g)
    }
}

fn tidy(x: f64) -> f64 {
    (x * 1e10).round() / 1e10
}

/// Second pass on a finer grid around the coarse minimum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Refinement {
    pub window: f64,
    pub step: f64,
}

impl Default for Refinement {
    fn default() -> Self {
        Refinement { window: 0.1, step: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScanConfig {
    /// `None` covers the attainable interval with [`DEFAULT_STEP`].
    pub grid: Option<Grid>,
    pub epsilon_pair: f64,
    pub scf: ScfOptions,
    pub n_states: usize,
    pub mode: ScanMode,
    pub space: ProjectionSpace,
    pub refine: Option<Refinement>,
    pub fci: bool,
    pub fci_cap: u128,
    /// Exact energy to use when FCI is not run.
    pub fci_reference: Option<f64>,
    pub delta_e_tol: f64,
    /// Repeat every point from a cold start and keep the lower energy.
    pub cold_check: bool,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            grid: None,
            epsilon_pair: DEFAULT_EPSILON_PAIR,
            scf: ScfOptions::default(),
            n_states: 4,
            mode: ScanMode::Full,
            space: ProjectionSpace::Full,
            refine: Some(Refinement::default()),
            fci: true,
            fci_cap: DEFAULT_DET_CAP,
            fci_reference: None,
            delta_e_tol: DEFAULT_DELTA_E_TOL,
            cold_check: false,
        }
    }
}

impl ScanConfig {
    pub fn grid_for(&self, spec: &SystemSpec) -> Grid {
        self.grid.clone().unwrap_or_else(|| {
            let (lo, hi) = s2_bounds(spec);
            Grid::range(lo, hi, DEFAULT_STEP)
        })
    }

    pub fn validate(&self, spec: &SystemSpec) -> Result<()> {
        if !(self.epsilon_pair > 0.0 && self.epsilon_pair < 1.0) {
            return Err(Error::InvalidInput(format!("epsilon_pair {} outside (0, 1)", self.epsilon_pair)));
        }
        if self.n_states == 0 {
            return Err(Error::InvalidInput("n_states must be at least 1".into()));
        }
        if self.delta_e_tol.is_nan() {
            return Err(Error::InvalidInput("delta_e_tol is NaN".into()));
        }
        if let Some(r) = self.refine {
            if !(r.step > 0.0 && r.window >= 0.0) {
                return Err(Error::InvalidInput("refinement needs step > 0 and window >= 0".into()));
            }
        }
        let grid = self.grid_for(spec);
        grid.validate()?;
        let (lo, hi) = s2_bounds(spec);
        let tol = self.scf.s2_tol;
        for x in grid.points() {
            if x < lo - tol || x > hi + tol {
                return Err(Error::InvalidInput(format!("grid value {x} outside [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::InvalidInput(format!("bad value `{v}` for `{key}`")))
        }
        fn flag(key: &str, v: &str) -> Result<bool> {
            match v.to_ascii_lowercase().as_str() {
                "1" | "true" | "yes" | "on" => Ok(true),
                "0" | "false" | "no" | "off" => Ok(false),
                _ => Err(Error::InvalidInput(format!("bad value `{v}` for `{key}`"))),
            }
        }
        let v = value.trim();
        match key.trim().replace('-', "_").as_str() {
            "grid" => self.grid = Some(v.parse()?),
            "mode" => self.mode = v.parse()?,
            "epsilon_pair" => {
                let e: f64 = num(key, v)?;
                if !(e > 0.0 && e < 1.0) {
                    return Err(Error::InvalidInput(format!("epsilon_pair {e} outside (0, 1)")));
                }
                self.epsilon_pair = e;
            }
            "n_states" => self.n_states = num(key, v)?,
            "space" => self.space = parse_space(v)?,
            "refine" => {
                self.refine = if flag(key, v)? { Some(self.refine.unwrap_or_default()) } else { None };
            }
            "refine_window" => self.refine.get_or_insert_with(Refinement::default).window = num(key, v)?,
            "refine_step" => self.refine.get_or_insert_with(Refinement::default).step = num(key, v)?,
            "fci" => self.fci = flag(key, v)?,
            "fci_cap" => self.fci_cap = num(key, v)?,
            "fci_reference" => self.fci_reference = Some(num(key, v)?),
            "delta_e_tol" => self.delta_e_tol = num(key, v)?,
            "cold_check" => self.cold_check = flag(key, v)?,
            "energy_tol" => self.scf.energy_tol = num(key, v)?,
            "diis_tol" => self.scf.diis_tol = num(key, v)?,
            "max_iter" => self.scf.max_iter = num(key, v)?,
            "diis_depth" => self.scf.diis_depth = num(key, v)?,
            "level_shift" => self.scf.level_shift = num(key, v)?,
            "s2_tol" => self.scf.s2_tol = num(key, v)?,
            "lambda_max" => self.scf.lambda_max = num(key, v)?,
            "seed_angle" => self.scf.seed_angle = num(key, v)?,
            other => return Err(Error::InvalidInput(format!("unknown configuration key `{other}`"))),
        }
        Ok(())
    }
}

/// `full`, `valence:<pairs>` or `masks:<m1>,<m2>,...`.
pub fn parse_space(s: &str) -> Result<ProjectionSpace> {
    let s = s.trim();
    if s.eq_ignore_ascii_case("full") {
        return Ok(ProjectionSpace::Full);
    }
    let bad = || Error::InvalidInput(format!("bad projection space `{s}`"));
    if let Some(rest) = s.strip_prefix("valence:") {
        return Ok(ProjectionSpace::Valence {
            pairs: rest.trim().parse().map_err(|_| bad())?,
        });
    }
    if let Some(rest) = s.strip_prefix("masks:") {
        let masks = rest
            .split(',')
            .map(|t| {
                let t = t.trim();
                match t.strip_prefix("0b") {
                    Some(b) => u64::from_str_radix(b, 2),
                    None => t.parse(),
                }
                .map_err(|_| bad())
            })
            .collect::<Result<Vec<u64>>>()?;
        return Ok(ProjectionSpace::Manual(masks));
    }
    Err(bad())
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i + 1,
            reason: format!("expected `key = value`, got `{line}`"),
        })?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

/// Outcome at one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub s2_target: f64,
    pub error: Option<String>,
    pub result: Option<PointResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointResult {
    pub lambda: f64,
    pub e_cuhf: f64,
    pub s2_achieved: f64,
    pub k_eff: usize,
    pub m_unpaired: usize,
    /// All NOCI states, ascending in energy.
    pub states: Vec<StateLabel>,
    pub g_occ_diagonal: Vec<f64>,
    pub branch_switch: bool,
}

impl PointResult {
    pub fn e_noci(&self) -> f64 {
        self.states[0].energy
    }

    pub fn lowest_with_spin(&self, two_s: u32) -> Option<&StateLabel> {
        self.states.iter().find(|s| s.two_s == two_s)
    }

    pub fn spin_pure(&self) -> bool {
        self.states.iter().all(|s| !s.contaminated)
    }
}

impl ScanPoint {
    pub fn ok(&self) -> Option<&PointResult> {
        self.result.as_ref()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanMinimum {
    pub s2_target: f64,
    pub energy: f64,
    pub two_s: u32,
    pub k_eff: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baselines {
    pub e_rhf: f64,
    pub e_uhf: f64,
    pub s2_uhf: f64,
    pub e_fci: Option<f64>,
    /// Low-lying FCI energies and their `<S^2>`, when FCI ran.
    pub fci_states: Vec<(f64, f64)>,
    /// `computed`, `reference` or the reason FCI was skipped.
    pub fci_source: String,
}

/// Captured correlation in percent under both baselines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCapture {
    pub rhf_baseline: Option<f64>,
    pub uhf_baseline: Option<f64>,
}

impl CorrelationCapture {
    pub fn compute(e: f64, b: &Baselines) -> Self {
        let pct = |reference: f64| {
            b.e_fci.and_then(|fci| {
                let denom = fci - reference;
                (denom.abs() > 1e-14).then(|| (e - reference) / denom * 100.0)
            })
        };
        CorrelationCapture {
            rhf_baseline: pct(b.e_rhf),
            uhf_baseline: pct(b.e_uhf),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalSummary {
    pub lo: f64,
    pub hi: f64,
    pub n_points: usize,
    pub best_energy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestrictedSummary {
    pub intervals: Vec<IntervalSummary>,
    /// Interval after which the loop stopped.
    pub terminated_at: (f64, f64),
    pub exhausted: bool,
    pub evaluations: usize,
    pub full_evaluations: usize,
}

impl RestrictedSummary {
    pub fn saved(&self) -> usize {
        self.full_evaluations.saturating_sub(self.evaluations)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSummary {
    pub n_orbitals: usize,
    pub n_alpha: usize,
    pub n_beta: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpinScan {
    pub system: SystemSummary,
    pub mode: ScanMode,
    pub points: Vec<ScanPoint>,
    pub minimum: ScanMinimum,
    pub baselines: Baselines,
    pub capture: CorrelationCapture,
    pub restricted: Option<RestrictedSummary>,
}

impl SpinScan {
    pub fn successful(&self) -> impl Iterator<Item = (f64, &PointResult)> {
        self.points.iter().filter_map(|p| p.result.as_ref().map(|r| (p.s2_target, r)))
    }

    pub fn n_failed(&self) -> usize {
        self.points.iter().filter(|p| p.result.is_none()).count()
    }

    /// Lowest NOCI energy of the given `2S` over all points.
    pub fn minimum_for_spin(&self, two_s: u32) -> Option<(f64, f64)> {
        self.successful()
            .filter_map(|(x, r)| r.lowest_with_spin(two_s).map(|s| (x, s.energy)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }
}

/// Evaluates grid points in order, each warm-started from the last success.
struct Evaluator<'a> {
    cfg: &'a ScanConfig,
    spec: &'a SystemSpec,
    ints: &'a IntegralSet,
    solved: Vec<(f64, CUHFSolution)>,
    points: Vec<ScanPoint>,
    evaluations: usize,
    /// `<S^2>` of the unconstrained UHF seed once it has been tried.
    uhf_origin: Option<Option<f64>>,
}

impl<'a> Evaluator<'a> {
    fn new(cfg: &'a ScanConfig, spec: &'a SystemSpec, ints: &'a IntegralSet) -> Self {
        Evaluator {
            cfg,
            spec,
            ints,
            solved: Vec::new(),
            points: Vec::new(),
            evaluations: 0,
            uhf_origin: None,
        }
    }

    fn nearest(&self, x: f64) -> Option<&CUHFSolution> {
        self.solved
            .iter()
            .min_by(|a, b| (a.0 - x).abs().total_cmp(&(b.0 - x).abs()))
            .map(|(_, s)| s)
    }

    fn last(&self) -> Option<&CUHFSolution> {
        self.solved.last().map(|(_, s)| s)
    }

    fn run(&mut self, x: f64, warm: Option<CUHFSolution>) -> Option<f64> {
        self.evaluations += 1;
        match self.solve(x, warm.as_ref()) {
            Ok((sol, res)) => {
                let e = res.e_noci();
                log::info!(
                    "<S^2>={x:.4} lambda={:.6} E_cUHF={:.8} E_NOCI={e:.8} k_eff={}",
                    sol.lambda,
                    sol.energy,
                    res.k_eff
                );
                self.solved.push((x, sol));
                self.points.push(ScanPoint {
                    s2_target: x,
                    error: None,
                    result: Some(res),
                });
                Some(e)
            }
            Err(err) => {
                log::warn!("<S^2>={x:.4} failed: {err}");
                self.points.push(ScanPoint {
                    s2_target: x,
                    error: Some(err.to_string()),
                    result: None,
                });
                None
            }
        }
    }

    fn solve(&self, x: f64, warm: Option<&CUHFSolution>) -> Result<(CUHFSolution, PointResult)> {
        let cfg = self.cfg;
        let mut sol = cuhf_solve(self.ints, self.spec, x, warm, &cfg.scf);
        let mut branch_switch = false;
        if cfg.cold_check && warm.is_some() {
            if let Ok(cold) = cuhf_solve(self.ints, self.spec, x, None, &cfg.scf) {
                match &sol {
                    Ok(w) if (w.energy - cold.energy).abs() <= BRANCH_TOLERANCE => {}
                    Ok(w) => {
                        branch_switch = true;
                        if cold.energy < w.energy {
                            sol = Ok(cold);
                        }
                    }
                    Err(_) => sol = Ok(cold),
                }
            }
        }
        let sol = sol?;
        let basis = build_noci_basis(&sol, cfg.epsilon_pair, &cfg.space)?;
        let spectrum = solve_noci(&basis, self.ints)?;
        let odd = self.spec.n_electrons() % 2 == 1;
        let states = classify_states_with_parity(&spectrum, odd).states;
        let g = sol.g_occ_clamped();
        let n = g.nrows().min(g.ncols());
        let res = PointResult {
            lambda: sol.lambda,
            e_cuhf: sol.energy,
            s2_achieved: sol.s2_achieved,
            k_eff: basis.k_eff,
            m_unpaired: basis.m_unpaired,
            states,
            g_occ_diagonal: (0..n).map(|i| g[(i, i)]).collect(),
            branch_switch,
        };
        Ok((sol, res))
    }

    /// Retries failed points walking outward from the unconstrained UHF
    /// solution, each warm-started from the nearest solved point. This reaches
    /// branches the forward chain cannot cross onto.
    fn backfill(&mut self) {
        let failed: Vec<f64> = self.points.iter().filter(|p| p.result.is_none()).map(|p| p.s2_target).collect();
        if failed.is_empty() {
            return;
        }
        if self.uhf_origin.is_none() {
            self.uhf_origin = Some(match uhf(self.ints, self.spec, &self.cfg.scf) {
                Ok(u) if u.converged => {
                    let x = u.s2_achieved;
                    self.solved.push((x, u));
                    Some(x)
                }
                _ => None,
            });
        }
        let Some(Some(origin)) = self.uhf_origin else { return };
        let mut xs = failed;
        xs.sort_by(|a, b| (a - origin).abs().total_cmp(&(b - origin).abs()));
        for x in xs {
            let warm = self.nearest(x).cloned();
            self.evaluations += 1;
            match self.solve(x, warm.as_ref()) {
                Ok((sol, res)) => {
                    log::info!("<S^2>={x:.4} recovered from the UHF branch, E_NOCI={:.8}", res.e_noci());
                    self.solved.push((x, sol));
                    if let Some(p) = self.points.iter_mut().find(|p| p.s2_target == x) {
                        p.error = None;
                        p.result = Some(res);
                    }
                }
                Err(err) => log::debug!("<S^2>={x:.4} still failing: {err}"),
            }
        }
    }

    fn best(&self) -> Option<(f64, f64)> {
        self.points
            .iter()
            .filter_map(|p| p.result.as_ref().map(|r| (p.s2_target, r.e_noci())))
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }

    fn refine(&mut self, bounds: (f64, f64)) {
        let Some(r) = self.cfg.refine else { return };
        let Some((x0, _)) = self.best() else { return };
        let lo = (x0 - r.window).max(bounds.0);
        let hi = (x0 + r.window).min(bounds.1);
        let mut xs: Vec<f64> = Grid::range(lo, hi, r.step).points();
        xs.retain(|x| self.points.iter().all(|p| (p.s2_target - x).abs() > 1e-9));
        // walk outward from the coarse minimum so each warm start is a neighbour
        xs.sort_by(|a, b| (a - x0).abs().total_cmp(&(b - x0).abs()));
        for x in xs {
            let warm = self.nearest(x).cloned();
            self.run(x, warm);
        }
    }

    fn finish(mut self, mode: ScanMode, restricted: Option<RestrictedSummary>) -> Result<SpinScan> {
        self.points.sort_by(|a, b| a.s2_target.total_cmp(&b.s2_target));
        let (s2_min, e_min, res) = self
            .points
            .iter()
            .filter_map(|p| p.result.as_ref().map(|r| (p.s2_target, r.e_noci(), r)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .ok_or(Error::EmptyScan)?;
        let minimum = ScanMinimum {
            s2_target: s2_min,
            energy: e_min,
            two_s: res.states[0].two_s,
            k_eff: res.k_eff,
        };
        let baselines = baselines(self.cfg, self.spec, self.ints)?;
        let capture = CorrelationCapture::compute(e_min, &baselines);
        Ok(SpinScan {
            system: SystemSummary {
                n_orbitals: self.spec.n_orbitals,
                n_alpha: self.spec.n_alpha,
                n_beta: self.spec.n_beta,
            },
            mode,
            points: self.points,
            minimum,
            baselines,
            capture,
            restricted,
        })
    }
}

/// RHF as the constrained solution at the lowest attainable `<S^2>`, UHF
/// unconstrained, FCI when enabled and under the cap.
pub fn baselines(cfg: &ScanConfig, spec: &SystemSpec, ints: &IntegralSet) -> Result<Baselines> {
    let (lo, _) = s2_bounds(spec);
    let rhf = cuhf_solve(ints, spec, lo, None, &cfg.scf)?;
    let u = uhf(ints, spec, &cfg.scf)?;
    let (e_fci, fci_states, fci_source) = if cfg.fci {
        let opts = FciOptions {
            cap: cfg.fci_cap,
            ..FciOptions::default()
        };
        match solve_fci_with(spec, ints, cfg.n_states, &opts) {
            Ok(f) => (
                Some(f.energies[0]),
                f.energies.iter().cloned().zip(f.s2_values.iter().cloned()).collect(),
                "computed".to_string(),
            ),
            Err(e @ Error::SizeCap { .. }) => (cfg.fci_reference, Vec::new(), skipped(cfg, &e)),
            Err(e) => return Err(e),
        }
    } else {
        (cfg.fci_reference, Vec::new(), skipped(cfg, &"disabled"))
    };
    Ok(Baselines {
        e_rhf: rhf.energy,
        e_uhf: u.energy,
        s2_uhf: u.s2_achieved,
        e_fci,
        fci_states,
        fci_source,
    })
}

fn skipped(cfg: &ScanConfig, why: &dyn fmt::Display) -> String {
    match cfg.fci_reference {
        Some(_) => "reference".to_string(),
        None => format!("skipped: {why}"),
    }
}

/// Every grid point in order, then an optional refinement pass.
pub fn run_scan(cfg: &ScanConfig, spec: &SystemSpec, ints: &IntegralSet) -> Result<SpinScan> {
    cfg.validate(spec)?;
    let mut ev = Evaluator::new(cfg, spec, ints);
    for x in cfg.grid_for(spec).points() {
        let warm = ev.last().cloned();
        ev.run(x, warm);
    }
    ev.backfill();
    ev.refine(s2_bounds(spec));
    ev.finish(ScanMode::Full, None)
}

/// Unit intervals `[0,1], [1,2], ...` in order, stopping at the first one that
/// does not lower the running minimum by more than `delta_e_tol`.
pub fn run_restricted_scan(cfg: &ScanConfig, spec: &SystemSpec, ints: &IntegralSet) -> Result<SpinScan> {
    cfg.validate(spec)?;
    let (lo, hi) = s2_bounds(spec);
    let mut grid = cfg.grid_for(spec).points();
    grid.sort_by(f64::total_cmp);
    let full_evaluations = grid.len();

    let n_intervals = ((hi - lo).ceil() as usize).max(1);
    let interval_of = |x: f64| (((x - lo) + 1e-9).floor().max(0.0) as usize).min(n_intervals - 1);
    let mut buckets: Vec<Vec<f64>> = vec![Vec::new(); n_intervals];
    for &x in &grid {
        buckets[interval_of(x)].push(x);
    }

    let mut ev = Evaluator::new(cfg, spec, ints);
    let mut running: Option<f64> = None;
    let mut intervals = Vec::new();
    let mut terminated_at = (lo, lo + 1.0);
    let mut exhausted = true;
    for (j, xs) in buckets.iter().enumerate() {
        let bounds = (lo + j as f64, (lo + j as f64 + 1.0).min(hi));
        for &x in xs {
            let warm = ev.last().cloned();
            ev.run(x, warm);
        }
        ev.backfill();
        let best = ev
            .points
            .iter()
            .filter(|p| xs.contains(&p.s2_target))
            .filter_map(|p| p.result.as_ref().map(PointResult::e_noci))
            .min_by(f64::total_cmp);
        intervals.push(IntervalSummary {
            lo: bounds.0,
            hi: bounds.1,
            n_points: xs.len(),
            best_energy: best,
        });
        terminated_at = bounds;
        let gained = match (best, running) {
            (Some(b), Some(r)) => b - r < -cfg.delta_e_tol,
            (Some(_), None) => true,
            (None, _) => false,
        };
        if let Some(b) = best {
            running = Some(running.map_or(b, |r| r.min(b)));
        }
        if j > 0 && !gained || j == 0 && best.is_none() {
            exhausted = j + 1 == buckets.len();
            log::info!("restricted scan stops after [{}, {}]", bounds.0, bounds.1);
            break;
        }
    }
    let evaluations = ev.evaluations;
    ev.refine((lo, terminated_at.1));
    let summary = RestrictedSummary {
        intervals,
        terminated_at,
        exhausted,
        evaluations,
        full_evaluations,
    };
    ev.finish(ScanMode::Restricted, Some(summary))
}

pub fn run(cfg: &ScanConfig, spec: &SystemSpec, ints: &IntegralSet) -> Result<SpinScan> {
    match cfg.mode {
        ScanMode::Full => run_scan(cfg, spec, ints),
        ScanMode::Restricted => run_restricted_scan(cfg, spec, ints),
    }
}

pub fn spin_label(two_s: u32) -> String {
    const NAMES: [&str; 7] = ["singlet", "doublet", "triplet", "quartet", "quintet", "sextet", "septet"];
    NAMES
        .get(two_s as usize)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("2S+1={}", two_s + 1))
}

#[derive(Serialize, Deserialize)]
struct Report {
    schema: String,
    scan: SpinScan,
}

pub fn to_json(scan: &SpinScan) -> Result<String> {
    let report = Report {
        schema: SCHEMA_VERSION.to_string(),
        scan: scan.clone(),
    };
    Ok(serde_json::to_string_pretty(&report)? + "\n")
}

pub fn from_json(text: &str) -> Result<SpinScan> {
    let report: Report = serde_json::from_str(text)?;
    if report.schema != SCHEMA_VERSION {
        return Err(Error::Unsupported(format!("report schema `{}`", report.schema)));
    }
    Ok(report.scan)
}

/// CSV: one row per point and reported state (the `n_states` lowest).
pub fn to_csv(scan: &SpinScan, n_states: usize) -> Result<String> {
    let n_diag = scan.successful().map(|(_, r)| r.g_occ_diagonal.len()).max().unwrap_or(0);
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = [
        "s2_target", "status", "lambda", "e_cuhf", "s2_achieved", "k_eff", "m_unpaired", "state", "spin_label",
        "two_s", "e_noci", "s2_state", "contaminated", "e_pt2",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend((0..n_diag).map(|i| format!("g_diag_{i}")));
    w.write_record(&header)?;
    for p in &scan.points {
        match &p.result {
            None => {
                let mut row = vec![String::new(); header.len()];
                row[0] = p.s2_target.to_string();
                row[1] = "failed".into();
                w.write_record(&row)?;
            }
            Some(r) => {
                for s in r.states.iter().take(n_states) {
                    let mut row = vec![
                        p.s2_target.to_string(),
                        "ok".into(),
                        r.lambda.to_string(),
                        r.e_cuhf.to_string(),
                        r.s2_achieved.to_string(),
                        r.k_eff.to_string(),
                        r.m_unpaired.to_string(),
                        s.state.to_string(),
                        spin_label(s.two_s),
                        s.two_s.to_string(),
                        s.energy.to_string(),
                        s.s2.to_string(),
                        s.contaminated.to_string(),
                        String::new(),
                    ];
                    row.extend((0..n_diag).map(|i| r.g_occ_diagonal.get(i).map(|g| g.to_string()).unwrap_or_default()));
                    w.write_record(&row)?;
                }
            }
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::Inconsistency(e.to_string()))
}

pub fn emit_report(scan: &SpinScan, format: ReportFormat, n_states: usize, path: &Path) -> Result<()> {
    let text = match format {
        ReportFormat::Csv => to_csv(scan, n_states)?,
        ReportFormat::Json => to_json(scan)?,
    };
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        let g: Grid = "0:1:0.25".parse().unwrap();
        assert_eq!(g.points(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        let g: Grid = "0.1, 0.7".parse().unwrap();
        assert_eq!(g.points(), vec![0.1, 0.7]);
        assert!("0:1:0".parse::<Grid>().is_err());
        assert!("0:1".parse::<Grid>().is_err());
        assert!("a,b".parse::<Grid>().is_err());
        assert_eq!(Grid::range(0.0, 2.0, 0.05).points().len(), 41);
    }

    #[test]
    fn key_values() {
        let kv = parse_key_values("grid = 0:1:0.5 # coarse\n\nmode=restricted\nspace = valence:2\n").unwrap();
        let mut cfg = ScanConfig::default();
        for (k, v) in &kv {
            cfg.set(k, v).unwrap();
        }
        assert_eq!(cfg.mode, ScanMode::Restricted);
        assert_eq!(cfg.space, ProjectionSpace::Valence { pairs: 2 });
        assert_eq!(cfg.grid, Some(Grid::range(0.0, 1.0, 0.5)));
        assert!(cfg.set("nonsense", "1").is_err());
        assert!(parse_key_values("novalue").is_err());
        assert_eq!(parse_space("masks:0b0101,3").unwrap(), ProjectionSpace::Manual(vec![5, 3]));
    }

    #[test]
    fn labels() {
        assert_eq!(spin_label(0), "singlet");
        assert_eq!(spin_label(2), "triplet");
        assert_eq!(spin_label(9), "2S+1=10");
    }
}
