mod args;

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use clr_impute::checkpoint::{Checkpoint, CheckpointError};
use clr_impute::config::{parse_config, to_args};
use clr_impute::metrics::RunMetrics;
use clr_impute::pipeline::{
    self, evaluate, fit, fit_tuned, Dataset, ModelSettings, PipelineError, Protocol, ResultRow,
    ResultsTable, Tuning,
};
use clr_impute::pso::SwarmConfig;
use clr_impute::sgd::{StopReason, TrainConfig, TrainReport};
use clr_impute::split::{split, SplitAssignment, Splits};
use clr_impute::synth::{generate, SynthSpec, TemporalMode};
use clr_impute::tensor::{
    load_coo, load_coo_infer_dims, load_indices, Dims, EntryIndex, SparseTensor,
};

use args::{
    Cli, Command, DataArgs, EvaluateArgs, ImputeArgs, IndexList, ModelArgs, OptimArgs, SplitArgs,
    SplitSource, SwarmArgs, SynthArgs, TemporalArg, TrainArgs, TuneArgs,
};

/// A failure mapped to the process exit status.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Numeric(m) => m,
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let msg = e.to_string();
        match e {
            PipelineError::Data(_) => Failure::Data(msg),
            PipelineError::Model(_) | PipelineError::Config(_) => Failure::Usage(msg),
            PipelineError::Metric(_) | PipelineError::Tune(_) | PipelineError::Diverged { .. } => {
                Failure::Numeric(msg)
            }
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Data(format!("{}: {e}", path.display()))
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| io_failure(path, e))
}

fn write_file(
    path: &Path,
    body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> CliResult<()> {
    let file = File::create(path).map_err(|e| io_failure(path, e))?;
    let mut out = BufWriter::new(file);
    body(&mut out)
        .and_then(|_| out.flush())
        .map_err(|e| io_failure(path, e))
}

/// Splices the options of a `--config FILE` manifest in front of the
/// command-line flags of the subcommand, so explicit flags override it.
fn expand_config(argv: Vec<String>) -> CliResult<Vec<String>> {
    let mut path = None;
    let mut rest = Vec::with_capacity(argv.len());
    let mut it = argv.into_iter();
    while let Some(arg) = it.next() {
        if arg == "--config" {
            match it.next() {
                Some(p) => path = Some(PathBuf::from(p)),
                None => return Err(Failure::Usage("--config needs a file".into())),
            }
        } else if let Some(p) = arg.strip_prefix("--config=") {
            path = Some(PathBuf::from(p));
        } else {
            rest.push(arg);
        }
    }
    let Some(path) = path else { return Ok(rest) };
    let text = std::fs::read_to_string(&path).map_err(|e| io_failure(&path, e))?;
    let pairs =
        parse_config(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    let insert_at = 2.min(rest.len());
    let mut out: Vec<String> = rest[..insert_at].to_vec();
    out.extend(to_args(&pairs));
    out.extend_from_slice(&rest[insert_at..]);
    Ok(out)
}

fn dims_of(d: (usize, usize, usize)) -> CliResult<Dims> {
    Dims::new(d.0, d.1, d.2).map_err(|e| Failure::Usage(e.to_string()))
}

fn load_tensor(path: &Path, dims: Option<Dims>) -> CliResult<SparseTensor> {
    let source = open(path)?;
    match dims {
        Some(d) => load_coo(source, d),
        None => load_coo_infer_dims(source),
    }
    .map_err(|e| io_failure(path, e))
}

fn load_data(args: &DataArgs) -> CliResult<SparseTensor> {
    let dims = args.dims.map(dims_of).transpose()?;
    load_tensor(&args.data, dims)
}

fn assignment(t: &SparseTensor, src: &SplitSource) -> CliResult<SplitAssignment> {
    match &src.split {
        Some(path) => SplitAssignment::read(open(path)?, t).map_err(|e| io_failure(path, e)),
        None => split(t, src.ratios, src.split_seed).map_err(|e| Failure::Usage(e.to_string())),
    }
}

fn build_splits(t: &SparseTensor, src: &SplitSource) -> CliResult<Splits> {
    let a = assignment(t, src)?;
    Splits::new(t, &a).map_err(|e| Failure::Data(e.to_string()))
}

fn train_config(o: &OptimArgs) -> CliResult<TrainConfig> {
    let cfg = TrainConfig {
        eta: o.eta,
        lambda: o.lambda,
        max_epochs: o.max_epochs,
        tol: o.tol,
        shuffle_seed: o.shuffle_seed,
    };
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(cfg)
}

fn model_settings(m: &ModelArgs) -> ModelSettings {
    ModelSettings {
        kind: m.model,
        rank: m.rank,
        kernel: m.kernel,
        init_seed: m.init_seed,
    }
}

fn swarm_config(s: &SwarmArgs) -> CliResult<SwarmConfig> {
    let cfg = SwarmConfig {
        particles: s.particles,
        inertia: s.inertia,
        cognitive: s.cognitive,
        social: s.social,
        eta_bounds: s.eta_bounds,
        lambda_bounds: s.lambda_bounds,
        velocity_clamp: (
            s.velocity_clamp * (s.eta_bounds.1 - s.eta_bounds.0),
            s.velocity_clamp * (s.lambda_bounds.1 - s.lambda_bounds.0),
        ),
        seed: s.swarm_seed,
    };
    cfg.validate().map_err(Failure::Usage)?;
    Ok(cfg)
}

fn report_training(report: &TrainReport) -> CliResult<()> {
    let last = report.epochs.last();
    eprintln!(
        "{} after {} epoch(s); objective {}; validation RMSE {}",
        report.stop_reason.as_str(),
        report.epochs.len(),
        last.map_or("-".into(), |e| format!("{:.6}", e.objective)),
        last.and_then(|e| e.val_rmse)
            .map_or("-".into(), |v| format!("{v:.6}")),
    );
    if report.stop_reason == StopReason::Diverged {
        return Err(Failure::Numeric(format!(
            "training diverged after {} epoch(s); the last finite model was saved",
            report.epochs.len()
        )));
    }
    Ok(())
}

fn run_synth(a: SynthArgs) -> CliResult<()> {
    let temporal = match a.temporal {
        TemporalArg::Iid => TemporalMode::Iid,
        TemporalArg::Ar => TemporalMode::SmoothAr { rho: a.rho },
    };
    let spec = SynthSpec {
        noise_sigma: a.noise,
        observed_fraction: a.observed,
        factor_scale: a.factor_scale,
        bias_scale: a.bias_scale,
        slot_bias_scale: a.slot_bias_scale,
        ..SynthSpec::new(dims_of(a.dims)?, a.rank, temporal, a.seed)
    };
    let (tensor, truth) = generate(&spec).map_err(Failure::Usage)?;
    write_file(&a.out, |w| tensor.write_coo(w))?;
    if let Some(path) = &a.truth {
        write_file(path, |w| truth.write_coo(w))?;
    }
    eprintln!("wrote {} observed entries", tensor.len());
    Ok(())
}

fn run_split(a: SplitArgs) -> CliResult<()> {
    let t = load_data(&a.data)?;
    let ratios = (a.ratios[0], a.ratios[1], a.ratios[2]);
    let s = split(&t, ratios, a.seed).map_err(|e| Failure::Usage(e.to_string()))?;
    write_file(&a.out, |w| s.write(&t, w))?;
    let [tr, va, te] = s.counts();
    eprintln!("train {tr}, validation {va}, test {te}");
    Ok(())
}

fn run_train(a: TrainArgs) -> CliResult<()> {
    let cfg = train_config(&a.optim)?;
    let t = load_data(&a.data)?;
    let splits = build_splits(&t, &a.split)?;
    let (model, report) = fit(&splits, &model_settings(&a.model), &cfg)?;
    if let Some(path) = &a.log {
        write_file(path, |w| report.write_log(w))?;
    }
    let ckpt = pipeline::checkpoint(model, &splits);
    write_file(&a.checkpoint, |w| ckpt.write(w))?;
    report_training(&report)
}

fn run_tune(a: TuneArgs) -> CliResult<()> {
    let cfg = train_config(&a.optim)?;
    let swarm = swarm_config(&a.swarm)?;
    let t = load_data(&a.data)?;
    let splits = build_splits(&t, &a.split)?;
    let (model, report) = fit_tuned(&splits, &model_settings(&a.model), &swarm, &cfg)?;
    if let Some(path) = &a.log {
        write_file(path, |w| report.train.write_log(w))?;
    }
    if let Some(path) = &a.trace {
        write_file(path, |w| report.write_trace(w))?;
    }
    let ckpt = pipeline::checkpoint(model, &splits);
    write_file(&a.checkpoint, |w| ckpt.write(w))?;
    eprintln!(
        "global best: eta {}, lambda {}, validation RMSE {:.6}",
        report.gb.position.eta, report.gb.position.lambda, report.gb.q
    );
    report_training(&report.train)
}

fn dataset_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn read_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    Checkpoint::read(open(path)?).map_err(|e: CheckpointError| io_failure(path, e))
}

fn score_checkpoint(a: &EvaluateArgs, path: &Path) -> CliResult<ResultsTable> {
    let ckpt = read_checkpoint(path)?;
    let dims = match a.dims {
        Some(d) => dims_of(d)?,
        None => ckpt.model.dims(),
    };
    let mut rows = Vec::new();
    for data in &a.data {
        let t = load_tensor(data, Some(dims))?;
        let splits = build_splits(&t, &a.split)?;
        if ckpt.norm.is_some_and(|n| n != splits.norm) {
            return Err(Failure::Data(format!(
                "{}: training entries do not match the checkpoint's normalization",
                data.display()
            )));
        }
        let metrics: RunMetrics = if a.denormalized {
            pipeline::test_metrics_raw(&ckpt.model, &splits)
        } else {
            pipeline::test_metrics(&ckpt.model, &splits)
        }
        .map_err(|e| Failure::Numeric(e.to_string()))?;
        rows.push(ResultRow {
            dataset: dataset_name(data),
            model: ckpt
                .model
                .kind()
                .parse()
                .expect("checkpoint kinds are model kinds"),
            run: 0,
            metrics,
            stop_reason: StopReason::MaxEpochs,
            seconds: 0.0,
        });
    }
    Ok(ResultsTable { rows })
}

fn run_protocol(a: &EvaluateArgs) -> CliResult<ResultsTable> {
    if a.runs == 0 {
        return Err(Failure::Usage("--runs must be at least 1".into()));
    }
    if a.split.split.is_some() && a.data.len() > 1 {
        return Err(Failure::Usage(
            "--split applies to a single --data file".into(),
        ));
    }
    let train = train_config(&a.optim)?;
    let tuning = if a.tuned {
        Tuning::Swarm(swarm_config(&a.swarm)?)
    } else {
        Tuning::Fixed
    };
    let dims = a.dims.map(dims_of).transpose()?;
    let tensors = a
        .data
        .iter()
        .map(|p| load_tensor(p, dims))
        .collect::<CliResult<Vec<_>>>()?;
    let fixed = match &a.split.split {
        Some(_) => Some(assignment(&tensors[0], &a.split)?),
        None => None,
    };
    let datasets: Vec<Dataset<'_>> = a
        .data
        .iter()
        .zip(&tensors)
        .map(|(p, t)| Dataset {
            name: dataset_name(p),
            tensor: t,
            assignment: fixed.as_ref(),
        })
        .collect();
    let mut seen = HashSet::new();
    let models = a
        .models
        .iter()
        .filter(|m| seen.insert(**m))
        .map(|&kind| ModelSettings {
            kind,
            rank: a.rank,
            kernel: a.kernel,
            init_seed: a.init_seed,
        })
        .collect();
    let protocol = Protocol {
        models,
        train,
        tuning,
        runs: a.runs,
        ratios: a.split.ratios,
        split_seed: a.split.split_seed,
        raw_scale: a.denormalized,
    };
    Ok(evaluate(&datasets, &protocol)?)
}

fn run_evaluate(a: EvaluateArgs) -> CliResult<()> {
    let table = match &a.checkpoint {
        Some(path) => score_checkpoint(&a, path)?,
        None => run_protocol(&a)?,
    };
    if let Some(path) = &a.rows {
        write_file(path, |w| table.write_rows(w, a.with_time))?;
    }
    let stdout = std::io::stdout();
    table
        .write_summary(stdout.lock())
        .map_err(|e| Failure::Data(format!("stdout: {e}")))
}

fn impute_targets(a: &ImputeArgs, dims: Dims) -> CliResult<Vec<EntryIndex>> {
    if let Some(path) = &a.indices {
        return load_indices(open(path)?, dims).map_err(|e| io_failure(path, e));
    }
    let data = a
        .data
        .as_ref()
        .expect("clap requires --data without --indices");
    let t = load_tensor(data, Some(dims))?;
    let observed: HashSet<EntryIndex> = t.entries().iter().map(|e| e.idx).collect();
    let select = |list: &Option<IndexList>, n: usize, what: &str| -> CliResult<Vec<usize>> {
        match list {
            None => Ok((0..n).collect()),
            Some(IndexList(l)) => match l.iter().find(|&&x| x >= n) {
                Some(bad) => Err(Failure::Usage(format!("{what} {bad} is outside 0..{n}"))),
                None => Ok(l.clone()),
            },
        }
    };
    let is = select(&a.stations, dims.stations, "station")?;
    let js = select(&a.parameters, dims.parameters, "parameter")?;
    let ks = select(&a.slots, dims.slots, "slot")?;
    let mut out = Vec::new();
    for &i in &is {
        for &j in &js {
            for &k in &ks {
                let idx = EntryIndex::new(i, j, k);
                if !observed.contains(&idx) {
                    out.push(idx);
                }
            }
        }
    }
    Ok(out)
}

fn run_impute(a: ImputeArgs) -> CliResult<()> {
    let ckpt = read_checkpoint(&a.checkpoint)?;
    let targets = impute_targets(&a, ckpt.model.dims())?;
    write_file(&a.out, |w| {
        writeln!(w, "i,j,k,value")?;
        for idx in &targets {
            let y = ckpt.model.predict(*idx);
            let x = ckpt.norm.map_or(y, |n| n.invert(y));
            writeln!(w, "{},{},{},{x}", idx.i, idx.j, idx.k)?;
        }
        Ok(())
    })?;
    eprintln!("wrote {} predictions", targets.len());
    Ok(())
}

fn run(argv: Vec<String>) -> CliResult<()> {
    let argv = expand_config(argv)?;
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = write!(std::io::stdout(), "{e}");
            return Ok(());
        }
        Err(e) => return Err(Failure::Usage(e.to_string().trim_end().to_owned())),
    };
    match cli.command {
        Command::Synth(a) => run_synth(a),
        Command::Split(a) => run_split(a),
        Command::Train(a) => run_train(a),
        Command::Tune(a) => run_tune(a),
        Command::Evaluate(a) => run_evaluate(a),
        Command::Impute(a) => run_impute(a),
    }
}

fn main() -> ExitCode {
    match run(std::env::args().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message().trim_start_matches("error: "));
            ExitCode::from(f.code())
        }
    }
}
