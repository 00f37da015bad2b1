//! Command-line front end: data generation, training, evaluation, sweeps and
//! the numerical checks.
//!
//! Every subcommand accepts `--config FILE`, a flat `key = value` file whose
//! pairs are read as if they were flags; flags given on the command line win.
//! Exit codes: 0 on success, 1 for configuration errors, 2 for numerical failures.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use srwdro::adversary::AttackConfig;
use srwdro::certificates::{
    certificate_probability, covering_number_greedy, feasibility_monte_carlo, robustness_certificate,
    write_certificate_csv, CertificateInputs, CertificateRow, FeasibilityConfig,
};
use srwdro::data::{make_synthetic_spec, DomainBox, SyntheticKind, SyntheticSpec};
use srwdro::harness::{
    evaluate, load_checkpoint, parse_config_file, run_experiment, save_checkpoint, train, write_curve_csv,
    write_history_csv, write_runs_csv, write_summary_json, write_table_csv, Experiment, Summary, TrainConfig,
};
use srwdro::metrics::{kl_divergence, lp_metric_weights, tv_distance, wasserstein_p_weights, CostMatrix, Norm};
use srwdro::oracle::{dual_value, sr_loss_exact, write_oracle_csv, FiniteInstance, OracleRecord};
use srwdro::{Activation, AmbiguityParams, Arch, Dataset, Error, Result};

#[derive(Parser, Debug)]
#[command(name = "srwdro", version, about = "Statistically robust Wasserstein DRO toolkit")]
#[command(args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset as CSV.
    GenData(GenDataArgs),
    /// Train one model; writes history.csv, summary.json and model.ckpt.
    Train(TrainArgs),
    /// Natural or PGD accuracy of a checkpoint.
    Eval(EvalArgs),
    /// Grid of (gamma, eps) configurations over several seeds.
    Sweep(SweepArgs),
    /// Compare the enumerated robust loss with its dual on random instances.
    OracleCheck(OracleArgs),
    /// Generalization certificate, optionally audited by Monte Carlo.
    Certify(CertifyArgs),
    /// Distances between two weight vectors on a common support.
    Metrics(MetricsArgs),
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[arg(long, default_value = "two_moons")]
    kind: SyntheticKind,
    #[arg(long, default_value_t = 400)]
    n: usize,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 0.0)]
    label_noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Default)]
struct ConfigArgs {
    #[arg(long)]
    kind: Option<SyntheticKind>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    label_noise: Option<f64>,
    #[arg(long)]
    data_seed: Option<u64>,
    /// Training CSV (f0,...,label); replaces the synthetic training set.
    #[arg(long)]
    train_csv: Option<PathBuf>,
    #[arg(long)]
    test_csv: Option<PathBuf>,
    /// `softmax` or `mlp`.
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    hidden: Option<usize>,
    /// `tanh` or `relu`.
    #[arg(long)]
    activation: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lr_decay: Option<f64>,
    /// Comma-separated, e.g. `30,45`; empty for no decay.
    #[arg(long)]
    decay_epochs: Option<String>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    norm: Option<Norm>,
    #[arg(long)]
    attack_steps: Option<usize>,
    #[arg(long)]
    attack_step_size: Option<f64>,
    #[arg(long)]
    attack_seed: Option<u64>,
    #[arg(long)]
    lambda_lr: Option<f64>,
    #[arg(long)]
    lambda_init: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    eval_eps: Option<f64>,
    #[arg(long)]
    eval_steps: Option<usize>,
    #[arg(long)]
    eval_step_size: Option<f64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long, default_value = "run")]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    /// Dataset CSV; without it the synthetic test split of the config flags is used.
    #[arg(long)]
    data: Option<PathBuf>,
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Evaluate on clean inputs only.
    #[arg(long)]
    natural: bool,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Comma-separated statistical budgets.
    #[arg(long, default_value = "0,0.05,0.1,0.2")]
    gammas: String,
    /// Comma-separated adversarial budgets; defaults to the single `--eps`.
    #[arg(long)]
    epsilons: Option<String>,
    #[arg(long, default_value = "0,1,2")]
    seeds: String,
    #[arg(long, default_value = "sweep")]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct OracleArgs {
    /// Support size of each random instance.
    #[arg(long, default_value_t = 3)]
    m: usize,
    #[arg(long, default_value_t = 20)]
    instances: usize,
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    #[arg(long, default_value_t = 0.1)]
    gamma: f64,
    #[arg(long, default_value_t = 1)]
    p: u32,
    #[arg(long, default_value_t = 60)]
    grid_res: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CertifyArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    gamma: f64,
    /// Adversarial budget, or `sigma` with `--robust`.
    #[arg(long)]
    eps: f64,
    /// Report the robustness variant; `--train-eps` is then added to the budget.
    #[arg(long)]
    robust: bool,
    #[arg(long, default_value_t = 0.0)]
    train_eps: f64,
    #[arg(long, default_value_t = 1)]
    p: u32,
    /// Diameter of the space; taken from `--points` when those are given.
    #[arg(long)]
    diam: Option<f64>,
    /// Covering number; computed greedily from `--points` when omitted.
    #[arg(long)]
    m_cover: Option<usize>,
    /// One-dimensional support points, comma-separated.
    #[arg(long)]
    points: Option<String>,
    /// True distribution over `--points`, for the Monte Carlo audit.
    #[arg(long)]
    true_dist: Option<String>,
    #[arg(long, default_value_t = 0)]
    trials: usize,
    #[arg(long, default_value_t = 60)]
    grid_res: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct MetricsArgs {
    /// Comma-separated weights.
    #[arg(long)]
    mu: String,
    #[arg(long)]
    nu: String,
    /// One-dimensional support points, comma-separated; defaults to 0, 1, 2, ...
    #[arg(long)]
    points: Option<String>,
    #[arg(long, default_value_t = 1)]
    p: u32,
}

fn parse_list<T: FromStr>(text: &str, what: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| Error::Config(format!("{what}: bad entry `{s}`: {e}"))))
        .collect()
}

impl ConfigArgs {
    fn to_config(&self) -> Result<TrainConfig> {
        let mut c = TrainConfig::default();
        let d = &mut c.data;
        macro_rules! set {
            ($dst:expr, $src:expr) => {
                if let Some(v) = $src.clone() {
                    $dst = v;
                }
            };
        }
        set!(d.kind, self.kind);
        set!(d.n_train, self.n_train);
        set!(d.n_test, self.n_test);
        set!(d.noise, self.noise);
        set!(d.label_noise, self.label_noise);
        set!(d.seed, self.data_seed);
        set!(c.epochs, self.epochs);
        set!(c.batch_size, self.batch_size);
        set!(c.lr, self.lr);
        set!(c.lr_decay, self.lr_decay);
        if let Some(text) = &self.decay_epochs {
            c.decay_epochs = parse_list(text, "decay_epochs")?;
        }
        set!(c.momentum, self.momentum);
        set!(c.weight_decay, self.weight_decay);
        set!(c.ambiguity.eps, self.eps);
        set!(c.ambiguity.gamma, self.gamma);
        set!(c.ambiguity.tau, self.tau);
        set!(c.norm, self.norm);
        set!(c.attack_steps, self.attack_steps);
        set!(c.attack_step_size, self.attack_step_size);
        set!(c.attack_seed, self.attack_seed);
        set!(c.lambda_lr, self.lambda_lr);
        set!(c.lambda_init, self.lambda_init);
        set!(c.seed, self.seed);
        set!(c.eval.eps, self.eval_eps);
        set!(c.eval.steps, self.eval_steps);
        set!(c.eval.step_size, self.eval_step_size);
        c.eval.norm = c.norm;

        // shape is refitted to the data in `datasets`
        let (input, classes) = (c.arch.input_dim(), c.arch.num_classes());
        let hidden = self.hidden.unwrap_or(match c.arch {
            Arch::Mlp1 { hidden, .. } => hidden,
            _ => 32,
        });
        let activation = match self.activation.as_deref() {
            None | Some("tanh") => Activation::Tanh,
            Some("relu") => Activation::Relu,
            Some(other) => return Err(Error::UnknownKind(format!("activation `{other}`"))),
        };
        c.arch = match self.arch.as_deref() {
            None | Some("mlp") | Some("mlp1") => Arch::Mlp1 {
                input,
                hidden,
                classes,
                activation,
            },
            Some("softmax") | Some("softmax_linear") => Arch::SoftmaxLinear { input, classes },
            Some(other) => return Err(Error::UnknownKind(format!("arch `{other}`"))),
        };
        Ok(c)
    }

    /// Training and test sets, with the model shape fitted to them.
    fn datasets(&self, cfg: &mut TrainConfig) -> Result<(Dataset, Dataset)> {
        let (train, test) = match &self.train_csv {
            None => cfg.data.build()?,
            Some(path) => {
                let train = Dataset::load_csv(path, None, None)?;
                let test = match &self.test_csv {
                    Some(p) => Dataset::load_csv(p, Some(train.num_classes), None)?,
                    None => train.clone(),
                };
                let classes = train.num_classes.max(test.num_classes);
                let domain = union(&train.domain, &test.domain);
                (
                    Dataset::new(train.samples, train.dim, classes, domain.clone())?,
                    Dataset::new(test.samples, test.dim, classes, domain)?,
                )
            }
        };
        cfg.arch = fit_arch(cfg.arch, train.dim, train.num_classes.max(2));
        Ok((train, test))
    }
}

fn fit_arch(arch: Arch, input: usize, classes: usize) -> Arch {
    match arch {
        Arch::SoftmaxLinear { .. } => Arch::SoftmaxLinear { input, classes },
        Arch::Mlp1 { hidden, activation, .. } => Arch::Mlp1 {
            input,
            hidden,
            classes,
            activation,
        },
    }
}

fn union(a: &DomainBox, b: &DomainBox) -> DomainBox {
    DomainBox {
        lo: a.lo.iter().zip(&b.lo).map(|(x, y)| x.min(*y)).collect(),
        hi: a.hi.iter().zip(&b.hi).map(|(x, y)| x.max(*y)).collect(),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn cmd_gen_data(a: &GenDataArgs) -> Result<()> {
    let d = make_synthetic_spec(&SyntheticSpec {
        kind: a.kind,
        n: a.n,
        noise: a.noise,
        label_noise: a.label_noise,
        seed: a.seed,
    })?;
    d.save_csv(&a.out)?;
    println!("wrote {} samples to {}", d.len(), a.out.display());
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mut cfg = a.cfg.to_config()?;
    let (tr, te) = a.cfg.datasets(&mut cfg)?;
    let (model, history) = train(&cfg, &tr, &te)?;
    create_dir(&a.out_dir)?;
    write_history_csv(&history, fs::File::create(a.out_dir.join("history.csv"))?)?;
    let summary = Summary::new(&cfg, &history);
    write_summary_json(&summary, fs::File::create(a.out_dir.join("summary.json"))?)?;
    save_checkpoint(&model, a.out_dir.join("model.ckpt"))?;
    println!(
        "{}",
        json!({
            "natural_acc": summary.natural_acc,
            "final_robust": summary.final_robust,
            "best_robust": summary.best_robust,
            "best_epoch": summary.best_epoch,
            "out_dir": a.out_dir,
        })
    );
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let model = load_checkpoint(&a.model)?;
    let mut cfg = a.cfg.to_config()?;
    let data = match &a.data {
        Some(p) => Dataset::load_csv(p, Some(model.arch.num_classes()), None)?,
        None => a.cfg.datasets(&mut cfg)?.1,
    };
    let attack: Option<AttackConfig> = (!a.natural).then(|| cfg.eval.config(cfg.attack_seed));
    let (acc, loss) = evaluate(&model, &data, attack.as_ref())?;
    println!(
        "{}",
        json!({ "accuracy": acc, "mean_loss": loss, "attack": attack, "n": data.len() })
    );
    Ok(())
}

fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    let base = a.cfg.to_config()?;
    let gammas: Vec<f64> = parse_list(&a.gammas, "gammas")?;
    let epsilons: Vec<f64> = match &a.epsilons {
        Some(t) => parse_list(t, "epsilons")?,
        None => vec![base.ambiguity.eps],
    };
    let seeds: Vec<u64> = parse_list(&a.seeds, "seeds")?;
    let mut configs = Vec::new();
    for &eps in &epsilons {
        for &gamma in &gammas {
            let mut c = base.clone();
            c.ambiguity.eps = eps;
            c.ambiguity.gamma = gamma;
            configs.push((format!("eps{eps}_gamma{gamma}"), c));
        }
    }
    let result = run_experiment(&Experiment { configs, seeds })?;
    create_dir(&a.out_dir.join("curves"))?;
    write_table_csv(&result.table, fs::File::create(a.out_dir.join("table.csv"))?)?;
    write_runs_csv(&result.runs, fs::File::create(a.out_dir.join("runs.csv"))?)?;
    fs::write(a.out_dir.join("summary.json"), serde_json::to_string_pretty(&result)?)?;
    for r in &result.runs {
        if let Some(h) = &r.history {
            let name = format!("curve_{}_seed{}.csv", r.label, r.seed);
            write_curve_csv(h, fs::File::create(a.out_dir.join("curves").join(name))?)?;
        }
        if let Some(e) = &r.error {
            eprintln!("run {} seed {} failed: {e}", r.label, r.seed);
        }
    }
    for row in &result.table {
        println!("{}", serde_json::to_string(row)?);
    }
    Ok(())
}

fn cmd_oracle_check(a: &OracleArgs) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut records = Vec::new();
    let mut gaps = Vec::new();
    for _ in 0..a.instances {
        let pts: Vec<Vec<f64>> = (0..a.m).map(|_| vec![rng.random::<f64>()]).collect();
        let losses: Vec<f64> = (0..a.m).map(|_| rng.random::<f64>()).collect();
        let raw: Vec<f64> = (0..a.m).map(|_| 0.05 + rng.random::<f64>()).collect();
        let total: f64 = raw.iter().sum();
        let base: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let inst = FiniteInstance::new(
            CostMatrix::pairwise(&pts, Norm::L1)?,
            losses,
            base,
            AmbiguityParams {
                eps: a.eps,
                gamma: a.gamma,
                p: a.p,
                ..AmbiguityParams::default()
            },
        )?;
        let exact = sr_loss_exact(&inst, a.grid_res)?;
        let dual = dual_value(&inst)?;
        gaps.push((dual - exact).abs());
        records.push(OracleRecord {
            instance_hash: inst.hash(a.grid_res),
            eps: a.eps,
            gamma: a.gamma,
            value: exact,
        });
    }
    if let Some(path) = &a.out {
        write_oracle_csv(&records, fs::File::create(path)?)?;
    }
    let max_gap = gaps.iter().copied().fold(0.0, f64::max);
    println!("{}", json!({ "instances": a.instances, "grid_res": a.grid_res, "max_gap": max_gap }));
    Ok(())
}

fn line_cost(points: &str) -> Result<CostMatrix> {
    let pts: Vec<Vec<f64>> = parse_list::<f64>(points, "points")?.into_iter().map(|v| vec![v]).collect();
    CostMatrix::pairwise(&pts, Norm::L1)
}

fn cmd_certify(a: &CertifyArgs) -> Result<()> {
    let cost = a.points.as_deref().map(line_cost).transpose()?;
    let diam = match (&cost, a.diam) {
        (Some(c), _) => c.diam(),
        (None, Some(d)) => d,
        (None, None) => return Err(Error::Config("give --diam or --points".into())),
    };
    let delta = srwdro::certificates::delta_of(a.eps, diam, a.p)?;
    let m_cover = match (a.m_cover, &cost) {
        (Some(m), _) => m,
        (None, Some(c)) => covering_number_greedy(c, delta)?,
        (None, None) => return Err(Error::Config("give --m-cover or --points".into())),
    };
    let inputs = CertificateInputs {
        n: a.n,
        gamma: a.gamma,
        eps_or_sigma: a.eps,
        diam,
        p: a.p,
        m_cover,
    };
    let (budget, cert) = if a.robust {
        robustness_certificate(a.train_eps, &inputs)?
    } else {
        (a.eps, certificate_probability(&inputs)?)
    };
    let mut freq = None;
    if a.trials > 0 {
        let (Some(c), Some(td)) = (&cost, &a.true_dist) else {
            return Err(Error::Config("the Monte Carlo audit needs --points and --true-dist".into()));
        };
        let dist: Vec<f64> = parse_list(td, "true_dist")?;
        freq = Some(feasibility_monte_carlo(
            &dist,
            c,
            &FeasibilityConfig {
                n: a.n,
                eps: a.eps,
                gamma: a.gamma,
                p: a.p,
                trials: a.trials,
                seed: a.seed,
                grid_res: a.grid_res,
            },
        )?);
    }
    if let Some(path) = &a.out {
        let row = CertificateRow {
            n: a.n,
            eps: a.eps,
            gamma: a.gamma,
            p: a.p,
            m_cover,
            bound: cert.clamped,
            empirical_freq: freq.unwrap_or(f64::NAN),
            trials: a.trials,
        };
        write_certificate_csv(&[row], fs::File::create(path)?)?;
    }
    println!(
        "{}",
        json!({
            "delta": cert.delta,
            "m_cover": m_cover,
            "raw": cert.raw,
            "probability": cert.clamped,
            "vacuous": cert.vacuous,
            "training_budget": budget,
            "empirical_freq": freq,
        })
    );
    Ok(())
}

fn cmd_metrics(a: &MetricsArgs) -> Result<()> {
    let mu: Vec<f64> = parse_list(&a.mu, "mu")?;
    let nu: Vec<f64> = parse_list(&a.nu, "nu")?;
    let cost = match &a.points {
        Some(p) => line_cost(p)?,
        None => CostMatrix::from_fn(mu.len(), mu.len(), |i, j| (i as f64 - j as f64).abs())?,
    };
    let w = wasserstein_p_weights(&mu, &nu, &cost, a.p)?;
    let kl = kl_divergence(&mu, &nu)?;
    let out = json!({
        "wasserstein": w,
        "kl": if kl.is_finite() { json!(kl) } else { json!("inf") },
        "tv": tv_distance(&mu, &nu)?,
        "levy_prokhorov": lp_metric_weights(&mu, &nu, &cost)?,
        "p": a.p,
    });
    println!("{out}");
    Ok(())
}

/// Splices `--config FILE` pairs in front of the subcommand's own flags.
fn expand_config(args: Vec<String>) -> Result<Vec<String>> {
    let mut rest = Vec::with_capacity(args.len());
    let mut files = Vec::new();
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            files.push(it.next().ok_or_else(|| Error::Config("--config needs a path".into()))?);
        } else if let Some(p) = a.strip_prefix("--config=") {
            files.push(p.to_string());
        } else {
            rest.push(a);
        }
    }
    if files.is_empty() || rest.len() < 2 {
        return Ok(rest);
    }
    let mut injected = Vec::new();
    for f in files {
        let text = fs::read_to_string(&f).map_err(|e| Error::Config(format!("cannot read {f}: {e}")))?;
        for (k, v) in parse_config_file(&text)? {
            injected.push(format!("--{}={v}", k.replace('_', "-")));
        }
    }
    let mut out = rest[..2].to_vec();
    out.extend(injected);
    out.extend_from_slice(&rest[2..]);
    Ok(out)
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.cmd {
        Command::GenData(a) => cmd_gen_data(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::OracleCheck(a) => cmd_oracle_check(a),
        Command::Certify(a) => cmd_certify(a),
        Command::Metrics(a) => cmd_metrics(a),
    }
}

fn main() -> ExitCode {
    let args = match expand_config(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let config = e.is_config() || matches!(e, Error::Io(_));
            ExitCode::from(if config { 1 } else { 2 })
        }
    }
}
