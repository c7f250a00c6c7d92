//! Command-line front end: configuration, run orchestration and output files.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::energy::{total_energy, EnergyParams, EnergyReport};
use crate::geometry::{eval_radius_field, CoefficientArray, GeometryError, HarmonicGrid};
use crate::optimize::{
    fd_gradient_check, minimize_reduced_volume, resolution_for, NcgConfig, OptimizeError, ReducedVolumeResult,
    ReducedVolumeRun, StopReason, TraceRow,
};
use crate::reconstruct::{
    project_coefficients, reconstruction_errors, ReconstructError, ReconstructionErrors, RimShape, SplineProfile,
    TargetSurface,
};
use crate::shbasis::{assoc_legendre, normalization_factor, ModeIndex};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Optimize(#[from] OptimizeError),
    #[error(transparent)]
    Reconstruct(#[from] ReconstructError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CliError {
    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Geometry(_) => "geometry",
            CliError::Optimize(OptimizeError::NoDecrease) => "line_search",
            CliError::Optimize(OptimizeError::Geometry(_)) => "geometry",
            CliError::Optimize(OptimizeError::InvalidConfig(_)) => "config",
            CliError::Optimize(_) => "optimize",
            CliError::Reconstruct(ReconstructError::Geometry(_)) => "geometry",
            CliError::Reconstruct(_) => "reconstruct",
            CliError::Io { .. } | CliError::Csv(_) => "io",
            CliError::Json { .. } => "json",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Reconstruct,
    #[default]
    Minimize,
    Sweep,
    Gradcheck,
    ExportMesh,
}

/// Everything one invocation needs. Unset resolution fields follow the
/// reduced-volume cutoff policy or the per-command defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    pub degree: Option<usize>,
    pub n_t: Option<usize>,
    pub n_p: Option<usize>,
    pub kappa_c: f64,
    pub kappa_g: f64,
    pub c0: f64,
    /// Penalty weights for single evaluations (`gradcheck`, `reconstruct`).
    pub k_s: f64,
    pub k_v: f64,
    /// Equal area/volume penalty weights applied in turn by `minimize` and `sweep`.
    pub penalty_stages: Vec<f64>,
    pub v: f64,
    pub v_list: Vec<f64>,
    pub eps_g: f64,
    pub eps_a: f64,
    pub max_iters: usize,
    pub perturb_mode: usize,
    pub perturb_amplitude: f64,
    pub noise_amplitude: f64,
    pub seed: u64,
    pub fine_n_t: usize,
    pub fd_step: f64,
    /// Perturbation amplitude of the random `gradcheck` shape.
    pub gradcheck_amplitude: f64,
    pub gradcheck_tolerance: f64,
    /// Weight on the 217 mOsm row of the cell-shape table.
    pub rbc_blend: f64,
    pub rim: RimShape,
    pub profile: Option<PathBuf>,
    pub coeffs: Option<PathBuf>,
    pub mesh: bool,
    pub output: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let ncg = NcgConfig::default();
        Self {
            command: Command::Minimize,
            degree: None,
            n_t: None,
            n_p: None,
            kappa_c: 1.0,
            kappa_g: 0.0,
            c0: 0.0,
            k_s: 1000.0,
            k_v: 1000.0,
            penalty_stages: vec![1000.0, 10000.0],
            v: 1.0,
            v_list: default_sweep(),
            eps_g: ncg.eps_g,
            eps_a: ncg.eps_a,
            max_iters: ncg.max_iters,
            perturb_mode: 4,
            perturb_amplitude: 0.05,
            noise_amplitude: 0.0,
            seed: 0,
            fine_n_t: 64,
            fd_step: 1e-4,
            gradcheck_amplitude: 0.05,
            gradcheck_tolerance: 1e-6,
            rbc_blend: 0.5,
            rim: RimShape::Rounded,
            profile: None,
            coeffs: None,
            mesh: false,
            output: PathBuf::from("out"),
        }
    }
}

/// `0.65, 0.70, ..., 1.0`.
pub fn default_sweep() -> Vec<f64> {
    (0..=7).map(|i| (65 + 5 * i) as f64 / 100.0).collect()
}

impl RunConfig {
    pub fn ncg(&self) -> NcgConfig {
        NcgConfig {
            eps_g: self.eps_g,
            eps_a: self.eps_a,
            max_iters: self.max_iters,
            ..NcgConfig::default()
        }
    }

    pub fn energy_params(&self) -> EnergyParams {
        EnergyParams {
            kappa_c: self.kappa_c,
            kappa_g: self.kappa_g,
            c0: self.c0,
            k_s: self.k_s,
            k_v: self.k_v,
            ..EnergyParams::default()
        }
    }

    /// `(N, n_t, n_p)` for this command, filling unset values.
    pub fn resolution(&self, v: f64) -> (usize, usize, usize) {
        let (deg, nt) = match self.command {
            Command::Minimize | Command::Sweep => resolution_for(v),
            Command::Reconstruct => (4, 230),
            Command::Gradcheck => (4, 20),
            Command::ExportMesh => (4, 32),
        };
        let degree = self.degree.unwrap_or(deg);
        let n_t = self.n_t.unwrap_or(nt);
        (degree, n_t, self.n_p.unwrap_or(2 * n_t))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        self.ncg().validate()?;
        self.energy_params()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        let vs: Vec<f64> = match self.command {
            Command::Minimize => vec![self.v],
            Command::Sweep => self.v_list.clone(),
            _ => vec![1.0],
        };
        if vs.is_empty() {
            return bad("empty v list".into());
        }
        for &v in &vs {
            if !(v > 0.0 && v <= 1.0) {
                return bad(format!("reduced volume must lie in (0, 1], got {v}"));
            }
            let (degree, n_t, n_p) = self.resolution(v);
            if n_t <= degree {
                return bad(format!("n_t = {n_t} must exceed N = {degree}"));
            }
            if n_p <= 2 * degree {
                return bad(format!("n_p = {n_p} must exceed 2N = {}", 2 * degree));
            }
        }
        if matches!(self.command, Command::Minimize | Command::Sweep) {
            self.reduced_volume_run(vs[0], self.seed)?.validate()?;
        }
        if self.command == Command::ExportMesh && self.coeffs.is_none() {
            return bad("export-mesh needs a coefficient file".into());
        }
        if self.command == Command::Gradcheck && !(self.fd_step > 0.0 && self.gradcheck_amplitude > 0.0) {
            return bad("fd_step and the perturbation amplitude must be positive".into());
        }
        if self.command == Command::Reconstruct && !(0.0..=1.0).contains(&self.rbc_blend) {
            return bad(format!("rbc_blend must lie in [0, 1], got {}", self.rbc_blend));
        }
        Ok(())
    }

    pub fn reduced_volume_run(&self, v: f64, seed: u64) -> Result<ReducedVolumeRun, CliError> {
        let (degree, n_t, n_p) = self.resolution(v);
        let run = ReducedVolumeRun {
            degree,
            n_t,
            n_p,
            kappa_c: self.kappa_c,
            kappa_g: self.kappa_g,
            c0: self.c0,
            penalty_stages: self.penalty_stages.clone(),
            perturb_mode: self.perturb_mode,
            perturb_amplitude: self.perturb_amplitude,
            noise_amplitude: self.noise_amplitude,
            seed,
            fine_n_t: self.fine_n_t,
            ncg: self.ncg(),
            ..ReducedVolumeRun::new(v)
        };
        Ok(run)
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "shvesicle",
    version,
    about = "Vesicle shapes from a surface-harmonic radius expansion"
)]
pub struct Cli {
    /// JSON run configuration; flags given on the command line take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Option<CliCommand>,
}

#[derive(Debug, Subcommand)]
pub enum CliCommand {
    /// Project a target surface and report truncation errors.
    Reconstruct {
        #[command(flatten)]
        common: CommonArgs,
        /// Weight on the 217 mOsm cell-shape row.
        #[arg(long)]
        blend: Option<f64>,
        /// `rounded` or `ridge`.
        #[arg(long)]
        rim: Option<RimShape>,
        /// CSV profile with header `x,h` instead of the cell shape.
        #[arg(long)]
        profile: Option<PathBuf>,
    },
    /// Minimize the bending energy at one reduced volume.
    Minimize {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        v: Option<f64>,
    },
    /// Minimize at several reduced volumes.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated reduced volumes.
        #[arg(long, value_delimiter = ',')]
        v_list: Option<Vec<f64>>,
        /// Range `lo..hi`, sampled every `--step`.
        #[arg(long)]
        range: Option<String>,
        #[arg(long, default_value_t = 0.05)]
        step: f64,
    },
    /// Compare the analytic energy gradient with finite differences.
    Gradcheck {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        fd_step: Option<f64>,
        /// Amplitude of the random perturbation of the unit sphere.
        #[arg(long)]
        amplitude: Option<f64>,
    },
    /// Write the OBJ mesh of a coefficient file.
    ExportMesh {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        coeffs: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Truncation degree.
    #[arg(long = "N", alias = "degree")]
    pub degree: Option<usize>,
    #[arg(long)]
    pub n_t: Option<usize>,
    #[arg(long)]
    pub n_p: Option<usize>,
    #[arg(long)]
    pub kappa_c: Option<f64>,
    #[arg(long)]
    pub kappa_g: Option<f64>,
    #[arg(long)]
    pub c0: Option<f64>,
    #[arg(long)]
    pub k_s: Option<f64>,
    #[arg(long)]
    pub k_v: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Also write surface.obj.
    #[arg(long)]
    pub mesh: bool,
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub eps_g: Option<f64>,
    #[arg(long)]
    pub eps_a: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Comma-separated penalty weights applied in turn.
    #[arg(long, value_delimiter = ',')]
    pub penalty_stages: Option<Vec<f64>>,
    #[arg(long)]
    pub perturb_mode: Option<usize>,
    #[arg(long)]
    pub perturb_amplitude: Option<f64>,
    #[arg(long)]
    pub noise_amplitude: Option<f64>,
    #[arg(long)]
    pub fine_n_t: Option<usize>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl CommonArgs {
    fn apply(self, cfg: &mut RunConfig) {
        if self.degree.is_some() {
            cfg.degree = self.degree;
        }
        if self.n_t.is_some() {
            cfg.n_t = self.n_t;
        }
        if self.n_p.is_some() {
            cfg.n_p = self.n_p;
        }
        set(&mut cfg.kappa_c, self.kappa_c);
        set(&mut cfg.kappa_g, self.kappa_g);
        set(&mut cfg.c0, self.c0);
        set(&mut cfg.k_s, self.k_s);
        set(&mut cfg.k_v, self.k_v);
        set(&mut cfg.seed, self.seed);
        set(&mut cfg.output, self.output);
        cfg.mesh |= self.mesh;
    }
}

impl RunArgs {
    fn apply(self, cfg: &mut RunConfig) {
        set(&mut cfg.eps_g, self.eps_g);
        set(&mut cfg.eps_a, self.eps_a);
        set(&mut cfg.max_iters, self.max_iters);
        set(&mut cfg.penalty_stages, self.penalty_stages);
        set(&mut cfg.perturb_mode, self.perturb_mode);
        set(&mut cfg.perturb_amplitude, self.perturb_amplitude);
        set(&mut cfg.noise_amplitude, self.noise_amplitude);
        set(&mut cfg.fine_n_t, self.fine_n_t);
    }
}

/// Parses `lo..hi` into `lo, lo + step, ...` up to `hi` inclusive.
pub fn parse_range(range: &str, step: f64) -> Result<Vec<f64>, CliError> {
    let bad = || CliError::Config(format!("range must look like lo..hi, got {range:?}"));
    let (lo, hi) = range.split_once("..").ok_or_else(bad)?;
    let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
    if !(step > 0.0) || hi < lo {
        return Err(CliError::Config(format!("empty range {range:?} with step {step}")));
    }
    let count = ((hi - lo) / step + 1e-9).floor() as usize;
    // round to the step's decimal grid so 0.65 + 0.05·k prints cleanly
    Ok((0..=count)
        .map(|k| ((lo + step * k as f64) * 1e12).round() / 1e12)
        .collect())
}

impl Cli {
    /// Merges the config file (if any) with command-line flags.
    pub fn into_config(self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => read_json::<RunConfig>(path)?,
            None => RunConfig::default(),
        };
        let Some(command) = self.command else {
            if self.config.is_none() {
                return Err(CliError::Config("no command given".into()));
            }
            return Ok(cfg);
        };
        match command {
            CliCommand::Reconstruct {
                common,
                blend,
                rim,
                profile,
            } => {
                cfg.command = Command::Reconstruct;
                common.apply(&mut cfg);
                set(&mut cfg.rbc_blend, blend);
                set(&mut cfg.rim, rim);
                if profile.is_some() {
                    cfg.profile = profile;
                }
            }
            CliCommand::Minimize { common, run, v } => {
                cfg.command = Command::Minimize;
                common.apply(&mut cfg);
                run.apply(&mut cfg);
                set(&mut cfg.v, v);
            }
            CliCommand::Sweep {
                common,
                run,
                v_list,
                range,
                step,
            } => {
                cfg.command = Command::Sweep;
                common.apply(&mut cfg);
                run.apply(&mut cfg);
                set(&mut cfg.v_list, v_list);
                if let Some(r) = range {
                    cfg.v_list = parse_range(&r, step)?;
                }
            }
            CliCommand::Gradcheck {
                common,
                fd_step,
                amplitude,
            } => {
                cfg.command = Command::Gradcheck;
                common.apply(&mut cfg);
                set(&mut cfg.fd_step, fd_step);
                set(&mut cfg.gradcheck_amplitude, amplitude);
            }
            CliCommand::ExportMesh { common, coeffs } => {
                cfg.command = Command::ExportMesh;
                common.apply(&mut cfg);
                if coeffs.is_some() {
                    cfg.coeffs = coeffs;
                }
            }
        }
        Ok(cfg)
    }
}

/// Coefficient file contents: degree plus flat values with their labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoeffsFile {
    pub degree: usize,
    #[serde(default)]
    pub labels: Vec<String>,
    pub values: Vec<f64>,
}

impl CoeffsFile {
    pub fn from_coeffs(c: &CoefficientArray) -> Self {
        let labels = (0..c.len())
            .map(|i| {
                let mode = ModeIndex::from_flat(i);
                let kind = if mode.is_cosine() { 'A' } else { 'B' };
                format!("{kind}_{}^{}", mode.n, mode.order())
            })
            .collect();
        Self {
            degree: c.degree(),
            labels,
            values: c.values().to_vec(),
        }
    }

    pub fn to_coeffs(&self) -> Result<CoefficientArray, GeometryError> {
        CoefficientArray::from_values(self.degree, self.values.clone())
    }
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_owned(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| CliError::Json {
        path: path.to_owned(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| CliError::Json {
        path: path.to_owned(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_owned(),
        source,
    })
}

pub fn read_coeffs(path: &Path) -> Result<CoefficientArray, CliError> {
    Ok(read_json::<CoeffsFile>(path)?.to_coeffs()?)
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|source| CliError::Io {
        path: path.to_owned(),
        source,
    })
}

/// Triangulated surface.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
}

/// Radius on the polar axis, where only zonal modes contribute.
fn pole_radius(coeffs: &CoefficientArray, mu: f64) -> f64 {
    (0..=coeffs.degree())
        .map(|n| {
            let mode = ModeIndex { n, m: 0 };
            coeffs.get(mode) * normalization_factor(n, 0) * assoc_legendre(n, 0, mu)
        })
        .sum()
}

/// Y-up right-handed vertex for `(θ, φ, r)`; the polar axis maps to `+Y`.
fn obj_vertex(theta: f64, phi: f64, r: f64) -> [f64; 3] {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    [r * st * cp, r * ct, -r * st * sp]
}

/// Grid nodes as vertices plus the two poles; triangles wind
/// counter-clockwise seen from outside.
pub fn surface_mesh(coeffs: &CoefficientArray, hg: &HarmonicGrid) -> Result<Mesh, GeometryError> {
    let grid = hg.grid();
    let radii = eval_radius_field(coeffs, hg)?.radii();
    let (n_t, n_p) = (grid.n_theta(), grid.n_phi());
    let mut vertices: Vec<[f64; 3]> = (0..grid.len())
        .map(|node| {
            let (k, l) = grid.split(node);
            obj_vertex(grid.thetas()[k], grid.phis()[l], radii[node])
        })
        .collect();
    let north = vertices.len();
    vertices.push(obj_vertex(0.0, 0.0, pole_radius(coeffs, 1.0)));
    let south = vertices.len();
    vertices.push(obj_vertex(std::f64::consts::PI, 0.0, pole_radius(coeffs, -1.0)));
    let id = |k: usize, l: usize| k * n_p + l % n_p;
    let mut faces = Vec::with_capacity(2 * n_p * n_t);
    for l in 0..n_p {
        faces.push([north, id(0, l), id(0, l + 1)]);
        for k in 0..n_t - 1 {
            faces.push([id(k, l), id(k + 1, l), id(k, l + 1)]);
            faces.push([id(k + 1, l), id(k + 1, l + 1), id(k, l + 1)]);
        }
        faces.push([id(n_t - 1, l), south, id(n_t - 1, l + 1)]);
    }
    Ok(Mesh { vertices, faces })
}

impl Mesh {
    /// Volume by the divergence theorem; positive for outward winding.
    pub fn signed_volume(&self) -> f64 {
        self.faces
            .iter()
            .map(|f| {
                let [a, b, c] = f.map(|i| self.vertices[i]);
                let cross = [
                    b[1] * c[2] - b[2] * c[1],
                    b[2] * c[0] - b[0] * c[2],
                    b[0] * c[1] - b[1] * c[0],
                ];
                (a[0] * cross[0] + a[1] * cross[1] + a[2] * cross[2]) / 6.0
            })
            .sum()
    }

    pub fn write_obj(&self, w: &mut impl Write) -> std::io::Result<()> {
        for v in &self.vertices {
            writeln!(w, "v {} {} {}", v[0], v[1], v[2])?;
        }
        for f in &self.faces {
            writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
        }
        Ok(())
    }
}

pub fn write_mesh(path: &Path, coeffs: &CoefficientArray, n_t: usize, n_p: usize) -> Result<Mesh, CliError> {
    let hg = HarmonicGrid::build(coeffs.degree(), n_t, n_p)?;
    let mesh = surface_mesh(coeffs, &hg)?;
    let io = |source| CliError::Io {
        path: path.to_owned(),
        source,
    };
    let mut w = BufWriter::new(fs::File::create(path).map_err(io)?);
    mesh.write_obj(&mut w).map_err(io)?;
    w.flush().map_err(io)?;
    Ok(mesh)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimizeSummary {
    pub v_target: f64,
    pub degree: usize,
    pub n_t: usize,
    pub n_p: usize,
    pub penalty_stages: Vec<f64>,
    pub energy: EnergyReport,
    pub energy_ratio: f64,
    pub fine_n_t: usize,
    pub fine_energy: EnergyReport,
    pub fine_energy_ratio: f64,
    /// `|E_fine - E| / E_fine` for the bending energy.
    pub fine_gap: f64,
    pub constraint_residual: f64,
    pub iterations: usize,
    pub stop_reasons: Vec<StopReason>,
    pub params: EnergyParams,
}

impl MinimizeSummary {
    fn new(run: &ReducedVolumeRun, res: &ReducedVolumeResult) -> Self {
        let e0 = res.params.sphere_energy();
        Self {
            v_target: run.v,
            degree: run.degree,
            n_t: run.n_t,
            n_p: run.n_p,
            penalty_stages: run.penalty_stages.clone(),
            energy: res.report,
            energy_ratio: res.report.e_bend / e0,
            fine_n_t: run.fine_n_t,
            fine_energy: res.fine,
            fine_energy_ratio: res.energy_ratio(),
            fine_gap: (res.fine.e_bend - res.report.e_bend).abs() / res.fine.e_bend,
            constraint_residual: res.constraint_residual(),
            iterations: res.iterations,
            stop_reasons: res.stop_reasons.clone(),
            params: res.params,
        }
    }
}

/// One row of `sweep.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub v_target: f64,
    pub degree: usize,
    pub n_t: usize,
    pub seed: u64,
    pub energy_ratio: f64,
    pub working_energy_ratio: f64,
    pub reduced_v: f64,
    pub constraint_residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckSummary {
    pub degree: usize,
    pub n_t: usize,
    pub n_p: usize,
    pub seed: u64,
    pub fd_step: f64,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub errors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructSummary {
    pub target: String,
    pub degree: usize,
    pub n_t: usize,
    pub n_p: usize,
    pub errors: ReconstructionErrors,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RunOutcome {
    Minimize(MinimizeSummary),
    Sweep(Vec<SweepRow>),
    Gradcheck(GradcheckSummary),
    Reconstruct(ReconstructSummary),
    ExportMesh { vertices: usize, faces: usize },
}

fn trace_rows(res: &ReducedVolumeResult) -> &[TraceRow] {
    &res.trace.rows
}

/// Random smooth star-shaped shape: unit sphere plus uniform noise of
/// amplitude `amp` on every non-constant mode.
pub fn random_shape(degree: usize, amp: f64, seed: u64) -> CoefficientArray {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut c = CoefficientArray::sphere(1.0, degree);
    for a in c.values_mut().iter_mut().skip(1) {
        *a += rng.gen_range(-amp..amp);
    }
    c
}

/// Validates `cfg`, runs it and writes the artifacts into `cfg.output`.
pub fn run(cfg: &RunConfig) -> Result<RunOutcome, CliError> {
    cfg.validate()?;
    let out = &cfg.output;
    fs::create_dir_all(out).map_err(|source| CliError::Io {
        path: out.clone(),
        source,
    })?;
    let outcome = match cfg.command {
        Command::Minimize => {
            let run = cfg.reduced_volume_run(cfg.v, cfg.seed)?;
            let res = minimize_reduced_volume(&run)?;
            write_json(&out.join("coeffs.json"), &CoeffsFile::from_coeffs(&res.coeffs))?;
            write_csv(&out.join("trace.csv"), trace_rows(&res))?;
            if cfg.mesh {
                write_mesh(&out.join("surface.obj"), &res.coeffs, run.fine_n_t, 2 * run.fine_n_t)?;
            }
            RunOutcome::Minimize(MinimizeSummary::new(&run, &res))
        }
        Command::Sweep => {
            let runs = cfg
                .v_list
                .iter()
                .enumerate()
                .map(|(i, &v)| cfg.reduced_volume_run(v, cfg.seed.wrapping_add(i as u64)))
                .collect::<Result<Vec<_>, _>>()?;
            let results: Vec<ReducedVolumeResult> =
                runs.par_iter().map(minimize_reduced_volume).collect::<Result<_, _>>()?;
            let rows: Vec<SweepRow> = runs
                .iter()
                .zip(&results)
                .map(|(run, res)| SweepRow {
                    v_target: run.v,
                    degree: run.degree,
                    n_t: run.n_t,
                    seed: run.seed,
                    energy_ratio: res.energy_ratio(),
                    working_energy_ratio: res.report.e_bend / res.params.sphere_energy(),
                    reduced_v: res.fine.reduced_v,
                    constraint_residual: res.constraint_residual(),
                    iterations: res.iterations,
                })
                .collect();
            write_csv(&out.join("sweep.csv"), &rows)?;
            RunOutcome::Sweep(rows)
        }
        Command::Gradcheck => {
            let (degree, n_t, n_p) = cfg.resolution(1.0);
            let hg = HarmonicGrid::build(degree, n_t, n_p)?;
            let coeffs = random_shape(degree, cfg.gradcheck_amplitude, cfg.seed);
            let mut params = cfg.energy_params();
            let base = total_energy(&coeffs, &hg, &params)?;
            // targets away from the current shape so the penalty terms contribute
            params.s_bar = 0.98 * base.s_area;
            params.v_bar = 1.02 * base.volume;
            let check = fd_gradient_check(&coeffs, &hg, &params, cfg.fd_step)?;
            write_json(&out.join("coeffs.json"), &CoeffsFile::from_coeffs(&coeffs))?;
            RunOutcome::Gradcheck(GradcheckSummary {
                degree,
                n_t,
                n_p,
                seed: cfg.seed,
                fd_step: cfg.fd_step,
                max_error: check.max_error,
                tolerance: cfg.gradcheck_tolerance,
                passed: check.max_error < cfg.gradcheck_tolerance,
                analytic: check.analytic,
                numeric: check.numeric,
                errors: check.errors,
            })
        }
        Command::Reconstruct => {
            let (degree, n_t, n_p) = cfg.resolution(1.0);
            let target = match &cfg.profile {
                Some(path) => TargetSurface::new(SplineProfile::from_csv(path)?, path.display().to_string()),
                None => TargetSurface::rbc_blend(cfg.rbc_blend, cfg.rim),
            };
            let hg = HarmonicGrid::build(degree, n_t, n_p)?;
            let coeffs = project_coefficients(&target, &hg)?;
            write_json(&out.join("coeffs.json"), &CoeffsFile::from_coeffs(&coeffs))?;
            if cfg.mesh {
                write_mesh(&out.join("surface.obj"), &coeffs, 64, 128)?;
            }
            let errors = reconstruction_errors(&target, &coeffs, &hg, &cfg.energy_params())?;
            RunOutcome::Reconstruct(ReconstructSummary {
                target: target.label.clone(),
                degree,
                n_t,
                n_p,
                errors,
            })
        }
        Command::ExportMesh => {
            let path = cfg.coeffs.as_ref().expect("validated");
            let coeffs = read_coeffs(path)?;
            let (_, n_t, n_p) = cfg.resolution(1.0);
            let mesh = write_mesh(&out.join("surface.obj"), &coeffs, n_t, n_p)?;
            RunOutcome::ExportMesh {
                vertices: mesh.vertices.len(),
                faces: mesh.faces.len(),
            }
        }
    };
    write_json(&out.join("summary.json"), &outcome)?;
    Ok(outcome)
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: &'a str,
    message: String,
}

/// Entry point of the binary: prints the summary, or an error JSON and a
/// nonzero status.
pub fn main_with(cli: Cli) -> ExitCode {
    let result = cli.into_config().and_then(|cfg| run(&cfg).map(|o| (cfg, o)));
    match result {
        Ok((_, outcome)) => {
            let _ = writeln!(
                std::io::stdout(),
                "{}",
                serde_json::to_string_pretty(&outcome).expect("serializable")
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            let report = ErrorReport {
                error: e.kind(),
                message: e.to_string(),
            };
            let _ = writeln!(
                std::io::stdout(),
                "{}",
                serde_json::to_string(&report).expect("serializable")
            );
            ExitCode::from(if matches!(e, CliError::Config(_) | CliError::Json { .. }) {
                2
            } else {
                1
            })
        }
    }
}
