use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use qvol::analysis::{
    hankel_strings, kl_monte_carlo, llr_experiment, llr_histogram, model_hankel, nab_bounds, summarize_llr, BoundReport, LlrSummary,
    LLR_BINS, RANK_REL_TOL,
};
use qvol::chmm::{simulate, Observations};
use qvol::estimate::{
    fit, fit_classical, penalty_lambda, FitSpec, FittedModel, ModelKind,
};
use qvol::io::{model_from_json, model_to_json, ParamRecord};
use qvol::qhmm::{causal_break_test, random_params, AnsatzSpec, CausalBreakReport, Entanglement, QhmmModel};
use qvol::seed::derive_rng;
use qvol::SequenceModel;

use crate::config::{CandidateConfig, DataColumn, RunConfig};
use crate::{Cli, CliError, Command};

pub(crate) fn dispatch(cli: &Cli, stdout: &mut dyn Write) -> Result<(), CliError> {
    let cfg = load_config(cli.global.config.as_deref())?;
    let ctx = Ctx { cli, cfg: &cfg };
    match &cli.command {
        Command::Simulate => ctx.simulate(stdout),
        Command::Fit { data, kind, report } => ctx.fit(data, kind.as_deref(), report.as_deref(), stdout),
        Command::Llr { hist } => ctx.llr(hist.as_deref(), stdout),
        Command::MarkovTest { model, prefix_a, prefix_b, horizon } => {
            ctx.markov_test(model.as_deref(), prefix_a.as_deref(), prefix_b.as_deref(), *horizon, stdout)
        }
        Command::Hankel { model, depth } => ctx.hankel(model, *depth, stdout),
        Command::Bounds { model } => ctx.bounds(model.as_deref(), stdout),
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => RunConfig::parse(&read_input(p)?, &p.display().to_string()),
    }
}

fn read_input(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::validation(format!("cannot read {}: {e}", path.display())))
}

fn write_output(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::output(format!("cannot write {}: {e}", path.display())))
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
    s.push('\n');
    s.into_bytes()
}

/// `dir/stem.suffix` next to `out`.
fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.{suffix}"))
}

fn parse_kind(s: &str) -> Result<ModelKind, CliError> {
    match s {
        "cir" => Ok(ModelKind::Cir),
        "nonparam" => Ok(ModelKind::Nonparam),
        "qhmm" => Ok(ModelKind::Qhmm),
        _ => Err(CliError::validation(format!("unknown model kind `{s}` (expected cir, nonparam or qhmm)"))),
    }
}

fn parse_symbols(s: &str, flag: &str) -> Result<Vec<usize>, CliError> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|p| p.trim().parse().map_err(|e| CliError::validation(format!("{flag}: `{p}`: {e}"))))
        .collect()
}

fn load_model(path: &Path) -> Result<FittedModel, CliError> {
    model_from_json(&read_input(path)?).map_err(|e| {
        let mut e = CliError::from(e);
        e.msg = format!("{}: {}", path.display(), e.msg);
        e
    })
}

/// One column of a data file, parsed, with the file line of each value.
fn read_column<T>(path: &Path, column: &str, parse: impl Fn(&str) -> Result<T, String>) -> Result<Vec<(u64, T)>, CliError>
where
    T: Copy,
{
    let name = path.display();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::validation(format!("{name}: {e}")))?;
    let headers = rdr.headers().map_err(|e| CliError::validation(format!("{name}: {e}")))?;
    let idx = headers
        .iter()
        .position(|h| h.trim() == column)
        .ok_or_else(|| CliError::validation(format!("{name}: no `{column}` column in the header")))?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::validation(format!("{name}: {e}")))?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = rec.get(idx).ok_or_else(|| {
            CliError::validation(format!("{name} line {line}: missing column `{column}`"))
        })?;
        let v = parse(field.trim())
            .map_err(|e| CliError::validation(format!("{name} line {line}, column `{column}`: {e}")))?;
        out.push((line, v));
    }
    if out.is_empty() {
        return Err(CliError::validation(format!("{name}: no data rows")));
    }
    Ok(out)
}

#[derive(Serialize)]
struct FitReport {
    kind: ModelKind,
    n_latent: usize,
    n_symbols: usize,
    n_params: usize,
    t: usize,
    seed: u64,
    theta_hat: Vec<f64>,
    nll: f64,
    loglik_per_t: f64,
    /// Order-selection penalty at (T, n_latent, n_params); absent for T < 3.
    lambda_t: Option<f64>,
    /// loglik/T − Λ_T
    penalized_objective: Option<f64>,
    iterations: usize,
    evaluations: usize,
    converged: bool,
}

#[derive(Serialize)]
struct HistogramReport {
    bins: usize,
    edges: Vec<f64>,
    counts: Vec<usize>,
    summary: LlrSummary,
}

#[derive(Serialize)]
struct MarkovReport {
    source: &'static str,
    prefix_a: Vec<usize>,
    prefix_b: Vec<usize>,
    horizon: usize,
    words: Vec<Vec<usize>>,
    #[serde(flatten)]
    result: CausalBreakReport,
}

#[derive(Serialize)]
struct HankelReport {
    model: &'static str,
    depth: usize,
    n_obs: usize,
    n_strings: usize,
    rank: usize,
    /// n_L for classical models, (n_L^q)² for quantum ones.
    rank_bound: usize,
    rel_tol: f64,
    singular_values: Vec<f64>,
    strings: Vec<Vec<usize>>,
    entries: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct BoundsOutput {
    kl_source: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    kl_std_error: Option<f64>,
    #[serde(flatten)]
    report: BoundReport,
}

struct Ctx<'a> {
    cli: &'a Cli,
    cfg: &'a RunConfig,
}

impl Ctx<'_> {
    fn out(&self) -> Result<&Path, CliError> {
        self.cli.global.out.as_deref().ok_or_else(|| CliError::validation("--out is required"))
    }

    fn seed(&self) -> u64 {
        self.cli.global.seed.or(self.cfg.experiment.as_ref().map(|e| e.seed)).unwrap_or(0)
    }

    fn trials(&self) -> Result<usize, CliError> {
        let n = match self.cli.global.trials {
            Some(n) => n,
            None => self.cfg.experiment()?.trials,
        };
        if n == 0 {
            return Err(CliError::validation("trials must be at least 1"));
        }
        Ok(n)
    }

    fn horizon_t(&self) -> Result<usize, CliError> {
        let t = self.cfg.experiment()?.t;
        if t == 0 {
            return Err(CliError::validation("[experiment].t must be at least 1"));
        }
        Ok(t)
    }

    /// Writes `bytes` to --out, or prints them when no path was given.
    fn emit(&self, bytes: &[u8], stdout: &mut dyn Write) -> Result<bool, CliError> {
        match &self.cli.global.out {
            Some(p) => write_output(p, bytes).map(|_| true),
            None => stdout.write_all(bytes).map(|_| false).map_err(|e| CliError::output(e.to_string())),
        }
    }

    fn simulate(&self, stdout: &mut dyn Write) -> Result<(), CliError> {
        let dgp = self.cfg.dgp()?;
        let t = self.horizon_t()?;
        let out = self.out()?;
        let hmm = dgp.model()?;
        let sim = simulate(&hmm, t, self.seed());
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| CliError::output(e.to_string());
        w.write_record(["t", "spot_state", "vbar", "return", "symbol"]).map_err(csv_err)?;
        for i in 0..sim.len() {
            w.write_record([
                (i + 1).to_string(),
                sim.spot_states[i].to_string(),
                sim.vbar[i].to_string(),
                sim.returns[i].to_string(),
                sim.symbols[i].to_string(),
            ])
            .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::output(e.to_string()))?;
        write_output(out, &bytes)?;
        let _ = writeln!(stdout, "wrote {} rows to {}", sim.len(), out.display());
        Ok(())
    }

    fn fit(&self, data: &Path, kind: Option<&str>, report: Option<&Path>, stdout: &mut dyn Write) -> Result<(), CliError> {
        let dgp = self.cfg.dgp()?;
        let out = self.out()?;
        let mut cand: CandidateConfig = match (&self.cfg.fit, kind) {
            (Some(f), _) => f.clone(),
            (None, Some(_)) => toml::from_str("kind = \"cir\"").expect("minimal candidate parses"),
            (None, None) => return Err(CliError::validation("no model kind: pass --kind or add a [fit] section")),
        };
        if let Some(k) = kind {
            cand.kind = parse_kind(k)?;
        }
        let spec = cand.spec(dgp)?;
        let mut opt = self.cfg.optimizer();
        opt.seed = self.seed();

        let (result, t, model) = match (&spec, cand.data) {
            (FitSpec::Classical(c), DataColumn::Returns) => {
                let rows = read_column(data, "return", |s| {
                    s.parse::<f64>().map_err(|e| e.to_string()).and_then(|v| {
                        if v.is_finite() { Ok(v) } else { Err(format!("return {v} is not finite")) }
                    })
                })?;
                let r: Vec<f64> = rows.into_iter().map(|(_, v)| v).collect();
                let (res, m) = fit_classical(Observations::Returns(&r), c, &opt)?;
                (res, r.len(), FittedModel::Classical(m))
            }
            _ => {
                let n_o = spec.n_symbols();
                let rows = read_column(data, "symbol", |s| {
                    let v: usize = s.parse().map_err(|e| format!("`{s}`: {e}"))?;
                    if v < n_o { Ok(v) } else { Err(format!("symbol {v} outside 0..{n_o}")) }
                })?;
                let obs: Vec<usize> = rows.into_iter().map(|(_, v)| v).collect();
                let (res, m) = fit(&obs, &spec, &opt)?;
                (res, obs.len(), m)
            }
        };

        let consts = self.cfg.bounds.as_ref().map(|b| b.constants).unwrap_or_default();
        let lambda_t = if t >= 3 { Some(penalty_lambda(t, spec.n_latent(), spec.n_params(), &consts)?) } else { None };
        let loglik_per_t = -result.nll / t as f64;
        let rep = FitReport {
            kind: spec.model_kind(),
            n_latent: spec.n_latent(),
            n_symbols: spec.n_symbols(),
            n_params: spec.n_params(),
            t,
            seed: opt.seed,
            theta_hat: result.theta_hat.clone(),
            nll: result.nll,
            loglik_per_t,
            lambda_t,
            penalized_objective: lambda_t.map(|l| loglik_per_t - l),
            iterations: result.iterations,
            evaluations: result.evaluations,
            converged: result.converged,
        };
        let params = match &model {
            FittedModel::Classical(_) => Some(ParamRecord { kind: spec.model_kind(), theta: result.theta_hat.clone() }),
            FittedModel::Qhmm(_) => None,
        };
        let mut text = model_to_json(&model, params);
        text.push('\n');
        write_output(out, text.as_bytes())?;
        let report_path = report.map(Path::to_path_buf).unwrap_or_else(|| sibling(out, "report.json"));
        write_output(&report_path, &to_json(&rep))?;
        let _ = writeln!(
            stdout,
            "{:?} fit: nll = {}, {} parameters, converged = {}; model {} report {}",
            rep.kind,
            rep.nll,
            rep.n_params,
            rep.converged,
            out.display(),
            report_path.display()
        );
        Ok(())
    }

    fn llr(&self, hist: Option<&Path>, stdout: &mut dyn Write) -> Result<(), CliError> {
        let dgp_cfg = self.cfg.dgp()?;
        let llr = self.cfg.llr.as_ref().ok_or_else(|| CliError::validation("config is missing the [llr] section"))?;
        let out = self.out()?;
        let (trials, t, seed) = (self.trials()?, self.horizon_t()?, self.seed());
        let spec_i = llr.model_i.spec(dgp_cfg)?;
        let spec_j = llr.model_j.spec(dgp_cfg)?;
        let dgp = dgp_cfg.model()?;
        let samples = llr_experiment(&dgp, &spec_i, &spec_j, trials, t, &self.cfg.optimizer(), seed)?;

        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| CliError::output(e.to_string());
        w.write_record(["trial", "data_seed", "loglik_model_i", "loglik_model_j", "llr_log10", "error"])
            .map_err(csv_err)?;
        for s in &samples {
            w.write_record([
                s.trial.to_string(),
                s.data_seed.to_string(),
                s.loglik_model_i.to_string(),
                s.loglik_model_j.to_string(),
                s.llr_log10.to_string(),
                s.error.clone().unwrap_or_default(),
            ])
            .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::output(e.to_string()))?;
        write_output(out, &bytes)?;

        let summary = summarize_llr(&samples);
        let h = llr_histogram(&samples, LLR_BINS);
        let hist_path = hist.map(Path::to_path_buf).unwrap_or_else(|| sibling(out, "hist.json"));
        let report = HistogramReport { bins: LLR_BINS, edges: h.edges, counts: h.counts, summary: summary.clone() };
        write_output(&hist_path, &to_json(&report))?;
        let _ = writeln!(
            stdout,
            "llr: {} trials, {} failed, {} negative (fraction {:.4}), mean log10 LLR {:.4} (s.e. {:.4})",
            summary.trials, summary.failed, summary.negative, summary.fraction_negative, summary.mean, summary.std_error
        );
        if summary.failed == summary.trials {
            return Err(CliError::numerical("every trial failed; see the error column"));
        }
        Ok(())
    }

    fn markov_test(
        &self,
        model: Option<&Path>,
        prefix_a: Option<&str>,
        prefix_b: Option<&str>,
        horizon: Option<usize>,
        stdout: &mut dyn Write,
    ) -> Result<(), CliError> {
        let mc = self.cfg.markov.clone().unwrap_or_default();
        let (q, source) = match model {
            Some(p) => match load_model(p)? {
                FittedModel::Qhmm(q) => (q, "file"),
                FittedModel::Classical(_) => {
                    return Err(CliError::validation(
                        "markov-test is unsupported for classical models: the latent reset needs a QHMM",
                    ))
                }
            },
            None => {
                let spec = mc.random.ok_or_else(|| {
                    CliError::validation("markov-test needs --model or a [markov.random] ansatz")
                })?;
                spec.validate()?;
                let params = random_params(&spec, &mut derive_rng(self.seed(), 0, "markov-model"));
                (QhmmModel::from_params(spec, &params)?, "random")
            }
        };
        let pa = match prefix_a {
            Some(s) => parse_symbols(s, "--prefix-a")?,
            None => mc.prefix_a.clone().unwrap_or_else(|| vec![1, 1]),
        };
        let pb = match prefix_b {
            Some(s) => parse_symbols(s, "--prefix-b")?,
            None => mc.prefix_b.clone().unwrap_or_else(|| vec![0, 0]),
        };
        let h = horizon.or(mc.horizon).unwrap_or(3);
        let result = causal_break_test(&q, &pa, &pb, h)?;
        let words = hankel_strings(q.n_obs(), h)?.into_iter().filter(|w| w.len() == h).collect();
        let (markovian, diff) = (result.markovian, result.max_abs_diff);
        let report = MarkovReport { source, prefix_a: pa, prefix_b: pb, horizon: h, words, result };
        if self.emit(&to_json(&report), stdout)? {
            let _ = writeln!(stdout, "markovian = {markovian} (max abs diff {diff:e})");
        }
        Ok(())
    }

    fn hankel(&self, model: &Path, depth: Option<usize>, stdout: &mut dyn Write) -> Result<(), CliError> {
        let m = load_model(model)?;
        let depth = depth.or(self.cfg.hankel.as_ref().map(|h| h.depth)).unwrap_or(3);
        let h = model_hankel(&m, depth)?;
        let (kind, bound) = match &m {
            FittedModel::Classical(c) => ("classical", c.n_states()),
            FittedModel::Qhmm(q) => ("qhmm", q.n_latent() * q.n_latent()),
        };
        let rank = h.rank();
        let report = HankelReport {
            model: kind,
            depth,
            n_obs: h.n_obs(),
            n_strings: h.strings().len(),
            rank,
            rank_bound: bound,
            rel_tol: RANK_REL_TOL,
            singular_values: h.singular_values(),
            strings: h.strings().to_vec(),
            entries: h.entries().row_iter().map(|r| r.iter().copied().collect()).collect(),
        };
        if self.emit(&to_json(&report), stdout)? {
            let _ = writeln!(stdout, "hankel rank {rank} (bound {bound}) at depth {depth}");
        }
        Ok(())
    }

    fn bounds(&self, model: Option<&Path>, stdout: &mut dyn Write) -> Result<(), CliError> {
        let b = self.cfg.bounds.clone().unwrap_or_default();
        let dgp = self.cfg.dgp.as_ref();
        let t = match (b.t, &self.cfg.experiment) {
            (Some(t), _) => t,
            (None, Some(e)) => e.t,
            (None, None) => return Err(CliError::validation("bounds needs [bounds].t or [experiment].t")),
        };
        let n_l = b
            .n_l
            .or(dgp.map(|d| d.n_l))
            .ok_or_else(|| CliError::validation("bounds needs [bounds].n_l or a [dgp] section"))?;
        let root = (n_l as f64).sqrt().round() as usize;
        if n_l == 0 || root * root != n_l {
            return Err(CliError::validation(format!("n_L = {n_l} is not a positive perfect square")));
        }
        let m_classical = b.m_classical.unwrap_or(n_l * (n_l - 1));
        let m_quantum = match b.m_quantum {
            Some(m) => m,
            None => {
                let n_o = dgp.map(|d| d.n_o).ok_or_else(|| {
                    CliError::validation("bounds needs [bounds].m_quantum or a [dgp] section")
                })?;
                let spec = AnsatzSpec::for_sizes(root, n_o, b.reps, Entanglement::Full)
                    .map_err(|e| CliError::validation(format!("cannot derive m_quantum ({e}); set [bounds].m_quantum")))?;
                spec.n_params_total()
            }
        };
        let (kl, source, se) = match (b.kl_inf_estimate, model) {
            (Some(kl), _) => (kl, "config", None),
            (None, Some(p)) => {
                let m = load_model(p)?;
                let hmm = self.cfg.dgp()?.model()?;
                let trials = self.trials()?.max(2);
                let len = self.horizon_t()?;
                let est = kl_monte_carlo(&hmm, &m as &dyn SequenceModel, trials, len, self.seed())?;
                (est.estimate / len as f64, "monte-carlo", Some(est.std_error / len as f64))
            }
            (None, None) => {
                return Err(CliError::validation("bounds needs [bounds].kl_inf_estimate or --model"))
            }
        };
        let report = nab_bounds(kl, t, n_l, m_classical, m_quantum, &b.constants)?;
        let (nq, np) = (report.nab_q, report.nab_p);
        let out = BoundsOutput { kl_source: source, kl_std_error: se, report };
        if self.emit(&to_json(&out), stdout)? {
            let _ = writeln!(stdout, "nab_q = {nq:e}, nab_p = {np:e}");
        }
        Ok(())
    }
}
