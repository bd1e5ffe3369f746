//! Command-line front end and the seeded experiment runners behind `topostat experiment`.
//!
//! Experiments are deterministic in `(config, master_seed)`: each trial derives its own seeds,
//! trials may run on any number of threads, and rows are sorted before they are written.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::complex::{self, SimplicialComplex};
use crate::error::{Error, Result};
use crate::estimation::{self, Domain, EstimatorConfig, Method, Psd};
use crate::recovery::{self, PrecisionSpec, SelectionMask};
use crate::rng::derive_seed;
use crate::signals::{self, FilterSpec, ModelKind, SignalEnsemble};
use crate::spectral::{self, OperatorKind, SpectralBasis, TopologicalOperator};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExperimentKind {
    CovVsM,
    DenoiseVsSnr,
    InterpVsObserved,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::CovVsM => "cov",
            ExperimentKind::DenoiseVsSnr => "denoise",
            ExperimentKind::InterpVsObserved => "interp",
        }
    }

    pub fn sweep_param(self) -> &'static str {
        match self {
            ExperimentKind::CovVsM => "m",
            ExperimentKind::DenoiseVsSnr => "snr_db",
            ExperimentKind::InterpVsObserved => "observed_fraction",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "cov" => Some(ExperimentKind::CovVsM),
            "denoise" => Some(ExperimentKind::DenoiseVsSnr),
            "interp" => Some(ExperimentKind::InterpVsObserved),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ComplexSource {
    Random { n0: usize, p_edge: f64, p_tri: f64 },
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub complex: ComplexSource,
    pub operator: OperatorKind,
    /// Divide the operator by its largest eigenvalue magnitude before filtering.
    pub normalize: bool,
    pub filter: FilterSpec,
    /// `M` values, SNRs in dB, or observed fractions.
    pub sweep: Vec<f64>,
    pub methods: Vec<String>,
    pub trials: usize,
    pub master_seed: u64,
    /// Realizations per trial for the denoising and interpolation studies.
    pub signals: usize,
    /// Observation noise of the interpolation study.
    pub noise_variance: f64,
    /// SEM coefficient; defaults to the generating coefficient of first-order AR data.
    pub sem_alpha: Option<f64>,
    /// Orders always observed in the interpolation study; the sweep then draws the given
    /// fraction of the remaining rows.
    pub observed_orders: Option<Vec<usize>>,
    pub estimator: EstimatorConfig,
    /// Record wall-clock runtimes; when off the runtime column is 0 and output is reproducible.
    pub timing: bool,
    /// Worker threads, 0 for the rayon default.
    pub threads: usize,
}

/// SEM coefficient used when the data are not first-order AR and none is configured.
pub const DEFAULT_SEM_ALPHA: f64 = 0.3;

impl ExperimentConfig {
    /// Desk-scale defaults: `n0 = 20`, 10 trials.
    pub fn desk(experiment: ExperimentKind) -> Self {
        let (filter, sweep, methods, signals) = match experiment {
            ExperimentKind::CovVsM => (
                FilterSpec::Polynomial(vec![0.1; 3]),
                vec![100.0, 1000.0, 10000.0],
                ["sample", "correlogram", "periodogram", "ma-spatial", "ma-spectral", "ar-spatial", "ar-spectral"]
                    .map(String::from)
                    .to_vec(),
                0,
            ),
            ExperimentKind::DenoiseVsSnr => (
                FilterSpec::Polynomial(vec![0.1; 3]),
                vec![1.0, 5.0, 10.0, 20.0, 30.0],
                vec!["noisy".to_string(), "wiener".to_string()],
                1000,
            ),
            ExperimentKind::InterpVsObserved => (
                FilterSpec::AutoRegressive(vec![0.3]),
                vec![0.2, 0.3, 0.4, 0.5, 0.6, 0.7],
                ["map", "smooth", "sem", "zero"].map(String::from).to_vec(),
                100,
            ),
        };
        Self {
            experiment,
            complex: ComplexSource::Random {
                n0: 20,
                p_edge: 0.3,
                p_tri: 0.4,
            },
            operator: OperatorKind::Dirac,
            normalize: true,
            filter,
            sweep,
            methods,
            trials: 10,
            master_seed: 0,
            signals,
            noise_variance: 0.01,
            sem_alpha: None,
            observed_orders: None,
            estimator: EstimatorConfig::default(),
            timing: false,
            threads: 0,
        }
    }

    /// Paper-scale defaults: `n0 = 50`, `p_edge = 0.2`, `p_tri = 0.3`, 50 trials, `10^4`
    /// realizations.
    pub fn paper(experiment: ExperimentKind) -> Self {
        let mut cfg = Self::desk(experiment);
        cfg.complex = ComplexSource::Random {
            n0: 50,
            p_edge: 0.2,
            p_tri: 0.3,
        };
        cfg.trials = 50;
        if experiment != ExperimentKind::CovVsM {
            cfg.signals = 10_000;
        }
        if experiment == ExperimentKind::InterpVsObserved {
            cfg.sweep = (1..=9).map(|i| i as f64 / 10.0).collect();
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::config("trials", "at least one trial is required"));
        }
        if self.sweep.is_empty() {
            return Err(Error::config("sweep", "the sweep list is empty"));
        }
        if self.methods.is_empty() {
            return Err(Error::config("methods", "the method list is empty"));
        }
        if self.operator == OperatorKind::Custom {
            return Err(Error::config("operator", "experiments need a Hodge or Dirac operator"));
        }
        if let ComplexSource::Random { n0, p_edge, p_tri } = self.complex {
            if n0 == 0 {
                return Err(Error::config("n0", "at least one vertex is required"));
            }
            for (field, p) in [("p_edge", p_edge), ("p_tri", p_tri)] {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::config(field, format!("{p} is not a probability")));
                }
            }
        }
        for m in &self.methods {
            if !self.method_known(m) {
                return Err(Error::config(
                    "methods",
                    format!("`{m}` is not a {} method", self.experiment.name()),
                ));
            }
        }
        match self.experiment {
            ExperimentKind::CovVsM => {
                if let Some(v) = self.sweep.iter().find(|v| !(v.fract() == 0.0 && **v >= 1.0)) {
                    return Err(Error::config("sweep", format!("{v} is not a positive sample count")));
                }
            }
            ExperimentKind::DenoiseVsSnr => {
                if let Some(v) = self.sweep.iter().find(|v| !v.is_finite()) {
                    return Err(Error::config("sweep", format!("{v} is not a finite SNR")));
                }
            }
            ExperimentKind::InterpVsObserved => {
                if let Some(v) = self.sweep.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                    return Err(Error::config("sweep", format!("{v} is not a fraction")));
                }
            }
        }
        // the denoise sweep derives its own variance, but an explicit zero is still a mistake
        if !(self.noise_variance > 0.0 && self.noise_variance.is_finite()) {
            return Err(Error::config(
                "noise_variance",
                format!("noise variance must be positive, got {}", self.noise_variance),
            ));
        }
        if self.experiment != ExperimentKind::CovVsM && self.signals == 0 {
            return Err(Error::config("signals", "at least one realization is required"));
        }
        Ok(())
    }

    fn method_known(&self, m: &str) -> bool {
        match self.experiment {
            ExperimentKind::CovVsM => Method::from_tag(m).is_some(),
            ExperimentKind::DenoiseVsSnr => {
                matches!(m, "noisy" | "wiener" | "wiener-sample") || Method::from_tag(m).is_some()
            }
            ExperimentKind::InterpVsObserved => {
                matches!(m, "map" | "smooth" | "sem" | "zero")
                    || m.strip_prefix("mixed:").is_some_and(|g| g.parse::<f64>().is_ok_and(|g| g >= 0.0))
            }
        }
    }
}

/// One line of experiment output. `trial = None` marks a summary (median) row.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentRow {
    pub method: String,
    pub sweep_param: &'static str,
    pub sweep_value: f64,
    pub trial: Option<usize>,
    pub error: f64,
    pub runtime_s: f64,
    pub flag: String,
}

/// Lower median (element `(n - 1) / 2` of the sorted values); `None` when empty.
pub fn lower_median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(v[(v.len() - 1) / 2])
}

struct Trial {
    seed: u64,
    operator: TopologicalOperator,
    basis: SpectralBasis,
    covariance: DMatrix<f64>,
    psd: Psd,
}

fn build_operator(complex: &SimplicialComplex, kind: OperatorKind) -> Result<TopologicalOperator> {
    match kind {
        OperatorKind::Hodge(k) => spectral::hodge_laplacian(complex, k),
        OperatorKind::Dirac => spectral::dirac(complex),
        OperatorKind::Custom => Err(Error::config("operator", "expected `dirac` or `hodge:<k>`")),
    }
}

/// Operator and basis, optionally rescaled to unit spectral radius.
fn operator_basis(
    complex: &SimplicialComplex,
    kind: OperatorKind,
    normalize: bool,
) -> Result<(TopologicalOperator, SpectralBasis)> {
    let op = build_operator(complex, kind)?;
    let basis = spectral::eigendecompose(&op)?;
    if normalize {
        let s = basis.scale();
        Ok((op.scaled(1.0 / s)?, basis.scaled(1.0 / s)?))
    } else {
        Ok((op, basis))
    }
}

fn setup_trial(cfg: &ExperimentConfig, fixed: Option<&SimplicialComplex>, trial: usize) -> Result<Trial> {
    let seed = derive_seed(cfg.master_seed, trial as u64);
    let generated;
    let complex = match (&cfg.complex, fixed) {
        (_, Some(c)) => c,
        (ComplexSource::Random { n0, p_edge, p_tri }, None) => {
            generated = complex::random_complex(*n0, *p_edge, *p_tri, derive_seed(seed, 0))?;
            &generated
        }
        (ComplexSource::File(_), None) => unreachable!("file complexes are loaded up front"),
    };
    let (operator, basis) = operator_basis(complex, cfg.operator, cfg.normalize)?;
    let (covariance, psd) = signals::true_cov_psd(&basis, &cfg.filter)?;
    Ok(Trial {
        seed,
        operator,
        basis,
        covariance,
        psd,
    })
}

fn flag_string<T: Copy>(flags: &[T], name: impl Fn(T) -> &'static str) -> String {
    flags.iter().map(|&f| name(f)).collect::<Vec<_>>().join(";")
}

struct Timer {
    on: bool,
    start: Instant,
}

impl Timer {
    fn start(on: bool) -> Self {
        Self {
            on,
            start: Instant::now(),
        }
    }

    fn seconds(&self) -> f64 {
        if self.on {
            self.start.elapsed().as_secs_f64()
        } else {
            0.0
        }
    }
}

impl ExperimentConfig {
    fn row(&self, method: &str, sweep_value: f64, trial: usize) -> ExperimentRow {
        ExperimentRow {
            method: method.to_string(),
            sweep_param: self.experiment.sweep_param(),
            sweep_value,
            trial: Some(trial),
            error: f64::NAN,
            runtime_s: 0.0,
            flag: String::new(),
        }
    }
}

/// Scores a covariance estimate against the truth, turning a missing estimate into a flag.
fn score_estimate(
    row: &mut ExperimentRow,
    estimate: Result<Option<estimation::CovarianceEstimate>>,
    truth: &DMatrix<f64>,
) -> Result<()> {
    match estimate {
        Ok(Some(est)) => {
            row.error = estimation::rel_error(&est.matrix, truth)?;
            row.flag = flag_string(&est.flags, |f| f.name());
        }
        Ok(None) => row.flag = "singular-reconstruction".into(),
        Err(Error::ConvergenceFailure) => row.flag = "convergence-failure".into(),
        Err(e) => return Err(e),
    }
    Ok(())
}

fn cov_trial(cfg: &ExperimentConfig, t: &Trial, trial: usize) -> Result<Vec<ExperimentRow>> {
    let max_m = cfg.sweep.iter().fold(0.0f64, |a, &b| a.max(b)) as usize;
    let ensemble = signals::generate(&t.basis, &cfg.filter, max_m, derive_seed(t.seed, 1))?;
    let mut rows = Vec::new();
    for &m in &cfg.sweep {
        let prefix = ensemble.prefix(m as usize);
        for name in &cfg.methods {
            let method = Method::from_tag(name).expect("validated method tag");
            let mut row = cfg.row(name, m, trial);
            let timer = Timer::start(cfg.timing);
            let est = estimation::estimate(method, &t.basis, &prefix, &cfg.estimator);
            row.runtime_s = timer.seconds();
            score_estimate(&mut row, est, &t.covariance)?;
            rows.push(row);
        }
    }
    Ok(rows)
}

/// `sigma2 = (tr(C) / N) / 10^(snr_db / 10)`.
pub fn noise_variance_for_snr(covariance: &DMatrix<f64>, snr_db: f64) -> f64 {
    let power = covariance.trace() / covariance.nrows().max(1) as f64;
    power / 10f64.powf(snr_db / 10.0)
}

fn denoise_trial(cfg: &ExperimentConfig, t: &Trial, trial: usize) -> Result<Vec<ExperimentRow>> {
    let s = signals::generate(&t.basis, &cfg.filter, cfg.signals, derive_seed(t.seed, 1))?;
    let w = signals::white_noise(t.basis.dim(), cfg.signals, derive_seed(t.seed, 2));
    let mut rows = Vec::new();
    for &snr in &cfg.sweep {
        let sigma2 = noise_variance_for_snr(&t.covariance, snr);
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::config("sweep", format!("SNR {snr} dB gives noise variance {sigma2}")));
        }
        let y = SignalEnsemble::with_offsets(s.data() + w.data() * sigma2.sqrt(), s.offsets().to_vec())?;
        let mut filtered: Option<SignalEnsemble> = None;
        for name in &cfg.methods {
            let mut row = cfg.row(name, snr, trial);
            let timer = Timer::start(cfg.timing);
            match name.as_str() {
                "noisy" => row.error = estimation::rel_error(y.data(), s.data())?,
                "wiener" | "wiener-sample" => {
                    if filtered.is_none() {
                        filtered = Some(recovery::wiener_denoise(&t.basis, &t.psd, sigma2, &y, Domain::Spectral)?);
                    }
                    let f = filtered.as_ref().expect("filtered above");
                    row.error = if name == "wiener" {
                        estimation::rel_error(f.data(), s.data())?
                    } else {
                        estimation::rel_error(&estimation::sample_covariance(f).matrix, &t.covariance)?
                    };
                }
                tag => {
                    let method = Method::from_tag(tag).expect("validated method tag");
                    let est = estimation::estimate(method, &t.basis, &y, &cfg.estimator);
                    score_estimate(&mut row, est, &t.covariance)?;
                }
            }
            row.runtime_s = timer.seconds();
            rows.push(row);
        }
    }
    Ok(rows)
}

fn interp_mask(cfg: &ExperimentConfig, t: &Trial, fraction: f64, seed: u64) -> Result<SelectionMask> {
    let n = t.basis.dim();
    match &cfg.observed_orders {
        None => SelectionMask::random(n, (fraction * n as f64).floor() as usize, seed),
        Some(orders) => {
            let fixed = SelectionMask::from_orders(t.basis.offsets(), orders)?;
            let rest = fixed.unobserved();
            let extra = SelectionMask::random(rest.len(), (fraction * rest.len() as f64).floor() as usize, seed)?;
            let mut observed: Vec<usize> = fixed.observed().to_vec();
            observed.extend(extra.observed().iter().map(|&i| rest[i]));
            observed.sort_unstable();
            SelectionMask::new(n, observed)
        }
    }
}

fn sem_alpha(cfg: &ExperimentConfig) -> f64 {
    match (&cfg.sem_alpha, &cfg.filter) {
        (Some(a), _) => *a,
        (None, FilterSpec::AutoRegressive(a)) if a.len() == 1 => a[0],
        _ => DEFAULT_SEM_ALPHA,
    }
}

fn interp_trial(cfg: &ExperimentConfig, t: &Trial, trial: usize) -> Result<Vec<ExperimentRow>> {
    let n = t.basis.dim();
    let s = signals::generate(&t.basis, &cfg.filter, cfg.signals, derive_seed(t.seed, 1))?;
    let noise = signals::white_noise(n, cfg.signals, derive_seed(t.seed, 2));
    let noisy = s.data() + noise.data() * cfg.noise_variance.sqrt();
    let smooth = PrecisionSpec::Smoothness(t.operator.clone()).precision()?;
    let sem = PrecisionSpec::Sem {
        alpha: sem_alpha(cfg),
        operator: t.operator.clone(),
    }
    .precision()?;
    let needs_pg = cfg.methods.iter().any(|m| m.starts_with("mixed:"));
    let stationary = if needs_pg {
        let p = estimation::periodogram(&t.basis, &s)?;
        Some(PrecisionSpec::from_psd(&t.basis, &p, None).precision()?)
    } else {
        None
    };

    let mut rows = Vec::new();
    for (fi, &fraction) in cfg.sweep.iter().enumerate() {
        let mask = interp_mask(cfg, t, fraction, derive_seed(t.seed, 3 + fi as u64))?;
        let observed = mask.gather(&noisy)?;
        for name in &cfg.methods {
            let mut row = cfg.row(name, fraction, trial);
            let timer = Timer::start(cfg.timing);
            let out = match name.as_str() {
                "map" => recovery::interpolate_map(&t.covariance, &mask, cfg.noise_variance, &observed)?,
                "zero" => recovery::Recovered {
                    signals: mask.scatter(&observed)?,
                    flags: Vec::new(),
                },
                "smooth" => recovery::interpolate_with_precision(&smooth, false, &mask, cfg.noise_variance, &observed)?,
                "sem" => recovery::interpolate_with_precision(&sem, false, &mask, cfg.noise_variance, &observed)?,
                other => {
                    let gamma: f64 = other["mixed:".len()..].parse().expect("validated mixed weight");
                    let q = stationary.as_ref().expect("periodogram precision") + &smooth * gamma;
                    recovery::interpolate_with_precision(&q, true, &mask, cfg.noise_variance, &observed)?
                }
            };
            row.runtime_s = timer.seconds();
            row.error = estimation::rel_error(&out.signals, s.data())?;
            row.flag = flag_string(&out.flags, |f| f.name());
            rows.push(row);
        }
    }
    Ok(rows)
}

fn run_trials(
    cfg: &ExperimentConfig,
    expected: ExperimentKind,
    body: fn(&ExperimentConfig, &Trial, usize) -> Result<Vec<ExperimentRow>>,
) -> Result<Vec<ExperimentRow>> {
    if cfg.experiment != expected {
        return Err(Error::config(
            "experiment",
            format!("expected a `{}` configuration", expected.name()),
        ));
    }
    cfg.validate()?;
    let fixed = match &cfg.complex {
        ComplexSource::File(path) => Some(complex::read_scf(path)?),
        ComplexSource::Random { .. } => None,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::config("threads", e.to_string()))?;
    let per_trial: Vec<Vec<ExperimentRow>> = pool.install(|| {
        (0..cfg.trials)
            .into_par_iter()
            .map(|trial| {
                let t = setup_trial(cfg, fixed.as_ref(), trial)?;
                body(cfg, &t, trial)
            })
            .collect::<Result<_>>()
    })?;
    let mut rows: Vec<ExperimentRow> = per_trial.into_iter().flatten().collect();
    sort_rows(&mut rows);
    let summary = summarize(&rows);
    rows.extend(summary);
    Ok(rows)
}

fn sort_rows(rows: &mut [ExperimentRow]) {
    rows.sort_by(|a, b| {
        a.method
            .cmp(&b.method)
            .then(a.sweep_value.total_cmp(&b.sweep_value))
            .then(a.trial.cmp(&b.trial))
    });
}

/// Per-(method, sweep value) lower medians of the finite errors; expects sorted data rows.
fn summarize(rows: &[ExperimentRow]) -> Vec<ExperimentRow> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < rows.len() {
        let key = (&rows[start].method, rows[start].sweep_value);
        let end = (start..rows.len())
            .find(|&i| (&rows[i].method, rows[i].sweep_value) != key)
            .unwrap_or(rows.len());
        let group = &rows[start..end];
        let errors: Vec<f64> = group.iter().map(|r| r.error).filter(|e| e.is_finite()).collect();
        let runtimes: Vec<f64> = group.iter().map(|r| r.runtime_s).collect();
        let error = lower_median(&errors);
        out.push(ExperimentRow {
            method: group[0].method.clone(),
            sweep_param: group[0].sweep_param,
            sweep_value: group[0].sweep_value,
            trial: None,
            error: error.unwrap_or(f64::NAN),
            runtime_s: lower_median(&runtimes).unwrap_or(0.0),
            flag: if error.is_none() {
                "no-finite-trials".into()
            } else {
                String::new()
            },
        });
        start = end;
    }
    out
}

/// Covariance error against the number of realizations.
pub fn run_experiment_cov(cfg: &ExperimentConfig) -> Result<Vec<ExperimentRow>> {
    run_trials(cfg, ExperimentKind::CovVsM, cov_trial)
}

/// Denoising error against SNR.
pub fn run_experiment_denoise(cfg: &ExperimentConfig) -> Result<Vec<ExperimentRow>> {
    run_trials(cfg, ExperimentKind::DenoiseVsSnr, denoise_trial)
}

/// Interpolation error against the observed fraction.
pub fn run_experiment_interp(cfg: &ExperimentConfig) -> Result<Vec<ExperimentRow>> {
    run_trials(cfg, ExperimentKind::InterpVsObserved, interp_trial)
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ExperimentRow>> {
    match cfg.experiment {
        ExperimentKind::CovVsM => run_experiment_cov(cfg),
        ExperimentKind::DenoiseVsSnr => run_experiment_denoise(cfg),
        ExperimentKind::InterpVsObserved => run_experiment_interp(cfg),
    }
}

pub const EXPERIMENT_HEADER: &str = "method,sweep_param,sweep_value,trial,error,runtime_s,flag";

/// CSV text with comment lines describing the run, the header, and every row.
pub fn render_csv(cfg: &ExperimentConfig, rows: &[ExperimentRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# experiment={} operator={} normalized={} trials={} seed={}",
        cfg.experiment.name(),
        operator_name(cfg.operator),
        cfg.normalize,
        cfg.trials,
        cfg.master_seed
    );
    out.push_str("# summary rows (trial=median) hold the lower median of finite errors over trials\n");
    if cfg.experiment == ExperimentKind::DenoiseVsSnr {
        out.push_str("# snr_db = 10*log10((tr(C)/N)/sigma2)\n");
    }
    out.push_str(EXPERIMENT_HEADER);
    out.push('\n');
    for r in rows {
        let trial = r.trial.map_or_else(|| "median".to_string(), |t| t.to_string());
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.method, r.sweep_param, r.sweep_value, trial, r.error, r.runtime_s, r.flag
        );
    }
    out
}

fn operator_name(kind: OperatorKind) -> String {
    match kind {
        OperatorKind::Hodge(k) => format!("hodge:{k}"),
        OperatorKind::Dirac => "dirac".into(),
        OperatorKind::Custom => "custom".into(),
    }
}

pub fn parse_operator(s: &str) -> std::result::Result<OperatorKind, String> {
    if s == "dirac" {
        return Ok(OperatorKind::Dirac);
    }
    s.strip_prefix("hodge:")
        .and_then(|k| k.parse().ok())
        .map(OperatorKind::Hodge)
        .ok_or_else(|| format!("expected `dirac` or `hodge:<k>`, got `{s}`"))
}

fn parse_list(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| format!("`{v}` is not a number")))
        .collect()
}

/// A comma-separated list kept as one clap value.
#[derive(Clone, Debug)]
struct FloatList(Vec<f64>);

fn parse_float_list(s: &str) -> std::result::Result<FloatList, String> {
    parse_list(s).map(FloatList)
}

/// Filter from `ma:b0,b1,..`, `ar:a1,..`, `lowpass:eps`, `exp:t`, `sigmoid:a,b`, `gauss:t`
/// or `laplace:a,b`.
pub fn parse_filter(s: &str) -> std::result::Result<FilterSpec, String> {
    let (kind, values) = s
        .split_once(':')
        .ok_or_else(|| format!("expected `<model>:<values>`, got `{s}`"))?;
    let v = parse_list(values)?;
    let model = |k: ModelKind| {
        k.build(&v)
            .map(FilterSpec::Spectral)
            .map_err(|e| e.to_string())
    };
    match kind {
        "ma" => Ok(FilterSpec::Polynomial(v)),
        "ar" => Ok(FilterSpec::AutoRegressive(v)),
        "lowpass" => model(ModelKind::LowPassRational),
        "exp" => model(ModelKind::Exponential),
        "sigmoid" => model(ModelKind::Sigmoid),
        "gauss" => model(ModelKind::GaussianKernel),
        "laplace" => model(ModelKind::LaplacianKernel),
        _ => Err(format!("unknown filter model `{kind}`")),
    }
}

fn parse_kernel(s: &str) -> std::result::Result<ModelKind, String> {
    match s {
        "exp" => Ok(ModelKind::Exponential),
        "sigmoid" => Ok(ModelKind::Sigmoid),
        "gauss" => Ok(ModelKind::GaussianKernel),
        "laplace" => Ok(ModelKind::LaplacianKernel),
        _ => Err(format!("unknown kernel `{s}` (exp, sigmoid, gauss, laplace)")),
    }
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    Method::from_tag(s).ok_or_else(|| {
        let tags: Vec<&str> = Method::ALL.iter().map(|m| m.tag()).collect();
        format!("unknown method `{s}` ({})", tags.join(", "))
    })
}

fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

/// Signal matrix CSV: `# offsets=...`, header `m1,...,mM`, one row per simplex.
pub fn write_signals(path: impl AsRef<Path>, s: &SignalEnsemble) -> Result<()> {
    let mut out = String::new();
    let offsets: Vec<String> = s.offsets().iter().map(|o| o.to_string()).collect();
    let _ = writeln!(out, "# offsets={}", offsets.join(","));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record((1..=s.ncols()).map(|j| format!("m{j}")))?;
    for row in s.data().row_iter() {
        w.write_record(row.iter().map(|&x| fmt_f64(x)))?;
    }
    out.push_str(&String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("ascii output"));
    fs::write(path, out)?;
    Ok(())
}

pub fn read_signals(path: impl AsRef<Path>) -> Result<SignalEnsemble> {
    let text = fs::read_to_string(path)?;
    let mut offsets = None;
    for (i, line) in text.lines().enumerate() {
        if let Some(rest) = line.strip_prefix("# offsets=") {
            let parsed: std::result::Result<Vec<usize>, _> = rest.split(',').map(|x| x.trim().parse()).collect();
            offsets = Some(parsed.map_err(|_| Error::Parse {
                line: i + 1,
                message: format!("bad offsets `{rest}`"),
            })?);
        }
        if !line.starts_with('#') {
            break;
        }
    }
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .has_headers(true)
        .from_reader(text.as_bytes());
    let cols = reader.headers()?.len();
    let mut values = Vec::new();
    let mut rows = 0;
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != cols {
            return Err(Error::Parse {
                line,
                message: format!("expected {cols} values, found {}", record.len()),
            });
        }
        for field in record.iter() {
            values.push(field.trim().parse::<f64>().map_err(|_| Error::Parse {
                line,
                message: format!("`{field}` is not a number"),
            })?);
        }
        rows += 1;
    }
    let data = DMatrix::from_row_slice(rows, cols, &values);
    match offsets {
        Some(o) => SignalEnsemble::with_offsets(data, o),
        None => Ok(SignalEnsemble::new(data)),
    }
}

/// `index,value` CSV.
pub fn write_indexed(path: impl AsRef<Path>, values: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["index", "value"])?;
    for (i, v) in values.iter().enumerate() {
        w.write_record([i.to_string(), fmt_f64(*v)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_indexed(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let mut entries = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let bad = |message: String| Error::Parse { line, message };
        if record.len() != 2 {
            return Err(bad(format!("expected `index,value`, found {} fields", record.len())));
        }
        let i: usize = record[0].trim().parse().map_err(|_| bad(format!("bad index `{}`", &record[0])))?;
        let v: f64 = record[1].trim().parse().map_err(|_| bad(format!("bad value `{}`", &record[1])))?;
        entries.push((i, v));
    }
    let mut values = vec![f64::NAN; entries.len()];
    for (i, v) in entries {
        if i >= values.len() || !values[i].is_nan() {
            return Err(Error::Parse {
                line: 0,
                message: format!("indices must cover 0..{} exactly once", values.len()),
            });
        }
        values[i] = v;
    }
    Ok(values)
}

/// Mask file: one observed row index per line, `#` comments allowed.
pub fn read_mask(path: impl AsRef<Path>, n: usize) -> Result<SelectionMask> {
    let text = fs::read_to_string(path)?;
    let mut observed = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        observed.push(line.parse::<usize>().map_err(|_| Error::Parse {
            line: i + 1,
            message: format!("`{line}` is not a row index"),
        })?);
    }
    observed.sort_unstable();
    SelectionMask::new(n, observed)
}

pub fn write_mask(path: impl AsRef<Path>, mask: &SelectionMask) -> Result<()> {
    let mut out = String::new();
    for i in mask.observed() {
        let _ = writeln!(out, "{i}");
    }
    fs::write(path, out)?;
    Ok(())
}

#[derive(Parser, Debug)]
#[command(name = "topostat", version, about = "Stationary signals on simplicial complexes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample a random order-2 simplicial complex.
    GenComplex(GenComplexArgs),
    /// Generate a stationary signal ensemble on a complex.
    GenSignals(GenSignalsArgs),
    /// Estimate the PSD (and optionally covariance or model coefficients) of an ensemble.
    Estimate(EstimateArgs),
    /// Wiener-denoise an ensemble.
    Denoise(DenoiseArgs),
    /// Recover unobserved rows of an ensemble.
    Interpolate(InterpolateArgs),
    /// Run a seeded experiment and write its CSV.
    Experiment(ExperimentArgs),
}

#[derive(Args, Debug)]
struct Common {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Flat `key = value` file whose entries override command-line flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct OperatorArgs {
    /// Complex in SCF format.
    #[arg(long)]
    complex: PathBuf,
    /// `dirac` or `hodge:<k>`.
    #[arg(long, default_value = "dirac", value_parser = parse_operator)]
    operator: OperatorKind,
    /// Use the operator as is instead of scaling it to unit spectral radius.
    #[arg(long)]
    raw_operator: bool,
}

impl OperatorArgs {
    fn load(&self) -> Result<(SimplicialComplex, TopologicalOperator, SpectralBasis)> {
        let complex = complex::read_scf(&self.complex)?;
        let (op, basis) = operator_basis(&complex, self.operator, !self.raw_operator)?;
        Ok((complex, op, basis))
    }
}

#[derive(Args, Debug)]
struct GenComplexArgs {
    #[arg(long)]
    n0: usize,
    #[arg(long)]
    p_edge: f64,
    #[arg(long)]
    p_tri: f64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct GenSignalsArgs {
    #[command(flatten)]
    op: OperatorArgs,
    /// `ma:b0,b1,..`, `ar:a1,..`, `lowpass:eps`, `exp:t`, `sigmoid:a,b`, `gauss:t`, `laplace:a,b`.
    #[arg(long, value_parser = parse_filter)]
    filter: FilterSpec,
    /// Number of realizations.
    #[arg(long)]
    m: usize,
    /// Variance of additive white noise.
    #[arg(long)]
    noise_var: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    #[command(flatten)]
    op: OperatorArgs,
    #[arg(long)]
    signals: PathBuf,
    #[arg(long, value_parser = parse_method)]
    method: Method,
    /// PSD of the estimate as `index,value`.
    #[arg(long)]
    out: PathBuf,
    /// Full covariance estimate as a matrix CSV.
    #[arg(long)]
    cov_out: Option<PathBuf>,
    /// Fitted coefficients as `index,value`.
    #[arg(long)]
    coeffs: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    ma_order: usize,
    #[arg(long, default_value_t = 3)]
    ar_order: usize,
    #[arg(long, default_value = "gauss", value_parser = parse_kernel)]
    kernel: ModelKind,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PathArg {
    Spectral,
    Spatial,
}

#[derive(Args, Debug)]
struct DenoiseArgs {
    #[command(flatten)]
    op: OperatorArgs,
    #[arg(long)]
    signals: PathBuf,
    #[arg(long)]
    noise_var: f64,
    /// Signal PSD as `index,value`; estimated from the noisy periodogram when omitted.
    #[arg(long)]
    psd: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "spectral")]
    path: PathArg,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum InterpMethod {
    Map,
    Smooth,
    Sem,
    Zero,
}

#[derive(Args, Debug)]
struct InterpolateArgs {
    #[command(flatten)]
    op: OperatorArgs,
    /// Observed values: either all `N` rows (unobserved rows ignored) or the `P` observed rows.
    #[arg(long)]
    signals: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    #[arg(long, value_enum, default_value = "map")]
    method: InterpMethod,
    /// Signal PSD as `index,value` (required for `map`).
    #[arg(long)]
    psd: Option<PathBuf>,
    /// SEM coefficient.
    #[arg(long, default_value_t = DEFAULT_SEM_ALPHA)]
    alpha: f64,
    #[arg(long, default_value_t = 0.01)]
    noise_var: f64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    /// `cov`, `denoise` or `interp`.
    #[arg(long)]
    kind: String,
    /// Start from paper-scale instead of desk-scale defaults.
    #[arg(long)]
    paper_scale: bool,
    /// Complex file used for every trial instead of random complexes.
    #[arg(long)]
    complex: Option<PathBuf>,
    #[arg(long)]
    n0: Option<usize>,
    #[arg(long)]
    p_edge: Option<f64>,
    #[arg(long)]
    p_tri: Option<f64>,
    #[arg(long, value_parser = parse_operator)]
    operator: Option<OperatorKind>,
    #[arg(long)]
    raw_operator: bool,
    #[arg(long, value_parser = parse_filter)]
    filter: Option<FilterSpec>,
    /// Comma-separated sweep values.
    #[arg(long, value_parser = parse_float_list)]
    sweep: Option<FloatList>,
    /// Comma-separated method names.
    #[arg(long)]
    methods: Option<String>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    signals: Option<usize>,
    #[arg(long)]
    noise_var: Option<f64>,
    #[arg(long)]
    sem_alpha: Option<f64>,
    /// Comma-separated orders that are always observed.
    #[arg(long)]
    observed_orders: Option<String>,
    #[arg(long)]
    ma_order: Option<usize>,
    #[arg(long)]
    ar_order: Option<usize>,
    #[arg(long, value_parser = parse_kernel)]
    kernel: Option<ModelKind>,
    #[arg(long)]
    threads: Option<usize>,
    /// Record wall-clock runtimes (output is then not reproducible).
    #[arg(long)]
    timing: bool,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

impl ExperimentArgs {
    fn to_config(&self) -> Result<ExperimentConfig> {
        let kind = ExperimentKind::parse(&self.kind)
            .ok_or_else(|| Error::config("kind", format!("`{}` is not cov, denoise or interp", self.kind)))?;
        let mut cfg = if self.paper_scale {
            ExperimentConfig::paper(kind)
        } else {
            ExperimentConfig::desk(kind)
        };
        if let Some(path) = &self.complex {
            cfg.complex = ComplexSource::File(path.clone());
        } else if let ComplexSource::Random { n0, p_edge, p_tri } = &mut cfg.complex {
            *n0 = self.n0.unwrap_or(*n0);
            *p_edge = self.p_edge.unwrap_or(*p_edge);
            *p_tri = self.p_tri.unwrap_or(*p_tri);
        }
        if let Some(op) = self.operator {
            cfg.operator = op;
        }
        cfg.normalize = !self.raw_operator;
        if let Some(f) = &self.filter {
            cfg.filter = f.clone();
        }
        if let Some(s) = &self.sweep {
            cfg.sweep = s.0.clone();
        }
        if let Some(m) = &self.methods {
            cfg.methods = m.split(',').map(|x| x.trim().to_string()).filter(|x| !x.is_empty()).collect();
        }
        cfg.trials = self.trials.unwrap_or(cfg.trials);
        cfg.signals = self.signals.unwrap_or(cfg.signals);
        cfg.noise_variance = self.noise_var.unwrap_or(cfg.noise_variance);
        cfg.sem_alpha = self.sem_alpha.or(cfg.sem_alpha);
        if let Some(orders) = &self.observed_orders {
            let parsed: std::result::Result<Vec<usize>, _> = orders.split(',').map(|x| x.trim().parse()).collect();
            cfg.observed_orders = Some(parsed.map_err(|_| Error::config("observed_orders", "expected order indices"))?);
        }
        cfg.estimator.ma_order = self.ma_order.unwrap_or(cfg.estimator.ma_order);
        cfg.estimator.ar_order = self.ar_order.unwrap_or(cfg.estimator.ar_order);
        cfg.estimator.kernel = self.kernel.unwrap_or(cfg.estimator.kernel);
        cfg.threads = self.threads.unwrap_or(cfg.threads);
        cfg.timing = self.timing;
        cfg.master_seed = self.common.seed;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Flags that take no value; a config entry `flag = true` turns them on.
const SWITCHES: [&str; 3] = ["--raw-operator", "--timing", "--paper-scale"];

/// Splices `--config` entries into the argument list, replacing flags they override.
fn expand_config(args: Vec<String>) -> std::result::Result<Vec<String>, String> {
    let Some(pos) = args.iter().position(|a| a == "--config" || a.starts_with("--config=")) else {
        return Ok(args);
    };
    let path = match args[pos].strip_prefix("--config=") {
        Some(p) => p.to_string(),
        None => args.get(pos + 1).cloned().ok_or("`--config` needs a path")?,
    };
    let text = fs::read_to_string(&path).map_err(|e| format!("cannot read config `{path}`: {e}"))?;
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("{path}:{}: expected `key = value`", i + 1))?;
        let flag = format!("--{}", key.trim().replace('_', "-"));
        if flag == "--config" {
            return Err(format!("{path}:{}: configs cannot include other configs", i + 1));
        }
        entries.push((flag, value.trim().to_string()));
    }

    let mut out = Vec::with_capacity(args.len());
    let mut i = 0;
    while i < args.len() {
        let a = &args[i];
        let name = a.split('=').next().unwrap_or(a);
        if entries.iter().any(|(f, _)| f == name) {
            let takes_value = !SWITCHES.contains(&name) && !a.contains('=');
            i += if takes_value { 2 } else { 1 };
            continue;
        }
        out.push(a.clone());
        i += 1;
    }
    for (flag, value) in entries {
        if SWITCHES.contains(&flag.as_str()) {
            match value.as_str() {
                "true" => out.push(flag),
                "false" => {}
                _ => return Err(format!("`{flag}` expects true or false, got `{value}`")),
            }
        } else {
            out.push(flag);
            out.push(value);
        }
    }
    Ok(out)
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenComplex(a) => {
            let c = complex::random_complex(a.n0, a.p_edge, a.p_tri, a.common.seed)?;
            complex::write_scf(&c, &a.out)
        }
        Command::GenSignals(a) => {
            let (_, _, basis) = a.op.load()?;
            let mut s = signals::generate(&basis, &a.filter, a.m, a.common.seed)?;
            if let Some(v) = a.noise_var {
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(Error::NonpositiveNoiseVariance(v));
                }
                let w = signals::white_noise(basis.dim(), a.m, derive_seed(a.common.seed, 1));
                s = SignalEnsemble::tagged(s.data() + w.data() * v.sqrt(), &basis)?;
            }
            write_signals(&a.out, &s)
        }
        Command::Estimate(a) => {
            let (_, _, basis) = a.op.load()?;
            let s = read_signals(&a.signals)?;
            let cfg = EstimatorConfig {
                ma_order: a.ma_order,
                ar_order: a.ar_order,
                kernel: a.kernel,
                ..EstimatorConfig::default()
            };
            let est = estimation::estimate(a.method, &basis, &s, &cfg)?.ok_or_else(|| {
                Error::InvalidFilter("fitted AR polynomial vanishes on the spectrum; no covariance".into())
            })?;
            let p = estimation::correlogram(&basis, &est.matrix)?;
            write_indexed(&a.out, p.values().as_slice())?;
            if let Some(path) = &a.cov_out {
                write_signals(path, &SignalEnsemble::new(est.matrix.clone()))?;
            }
            if let Some(path) = &a.coeffs {
                write_indexed(path, est.params.as_deref().unwrap_or(&[]))?;
            }
            Ok(())
        }
        Command::Denoise(a) => {
            let (_, _, basis) = a.op.load()?;
            let y = read_signals(&a.signals)?;
            let p = match &a.psd {
                Some(path) => Psd::new(DVector::from_vec(read_indexed(path)?)),
                None => {
                    let pg = estimation::periodogram(&basis, &y)?;
                    Psd::new(pg.values().map(|x| (x - a.noise_var).max(0.0)))
                }
            };
            let path = match a.path {
                PathArg::Spectral => Domain::Spectral,
                PathArg::Spatial => Domain::Spatial,
            };
            let out = recovery::wiener_denoise(&basis, &p, a.noise_var, &y, path)?;
            write_signals(&a.out, &out)
        }
        Command::Interpolate(a) => {
            let (_, op, basis) = a.op.load()?;
            let n = basis.dim();
            let mask = read_mask(&a.mask, n)?;
            let s = read_signals(&a.signals)?;
            let observed = if s.nrows() == n {
                mask.gather(s.data())?
            } else {
                s.data().clone()
            };
            let out = match a.method {
                InterpMethod::Map => {
                    let path = a.psd.as_ref().ok_or_else(|| Error::config("psd", "`map` needs --psd"))?;
                    let p = Psd::new(DVector::from_vec(read_indexed(path)?));
                    let c = estimation::psd_to_cov(&basis, &p)?;
                    recovery::interpolate_map(&c, &mask, a.noise_var, &observed)?
                }
                InterpMethod::Smooth => {
                    recovery::interpolate_regularized(&PrecisionSpec::Smoothness(op), &mask, a.noise_var, &observed)?
                }
                InterpMethod::Sem => recovery::interpolate_regularized(
                    &PrecisionSpec::Sem {
                        alpha: a.alpha,
                        operator: op,
                    },
                    &mask,
                    a.noise_var,
                    &observed,
                )?,
                InterpMethod::Zero => recovery::Recovered {
                    signals: mask.scatter(&observed)?,
                    flags: Vec::new(),
                },
            };
            for flag in &out.flags {
                eprintln!("warning: {}", flag.name());
            }
            write_signals(&a.out, &SignalEnsemble::with_offsets(out.signals, basis.offsets().to_vec())?)
        }
        Command::Experiment(a) => {
            let cfg = a.to_config()?;
            let rows = run_experiment(&cfg)?;
            fs::write(&a.out, render_csv(&cfg, &rows))?;
            Ok(())
        }
    }
}

/// Parses `argv` (program name first), runs the command and returns the exit code:
/// 0 on success, 1 for data or numerical errors, 2 for usage and configuration errors.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<String>,
{
    let args: Vec<String> = argv.into_iter().map(Into::into).collect();
    let args = match expand_config(args) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("error: {msg}");
            return 2;
        }
    };
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let text = e.to_string();
            eprintln!("{}", text.lines().next().unwrap_or("error: invalid arguments"));
            return 2;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config { .. } => 2,
                _ => 1,
            }
        }
    }
}
