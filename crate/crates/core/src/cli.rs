//! Command-line front end.
//!
//! Settings resolve as built-in defaults, then the `--config` file, then
//! flags. The config file is `key = value` per line with `#` comments; the
//! recognised keys are listed in [`CONFIG_KEYS`].

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use crate::ann::{read_model_file, write_model_file, Activation, Mlp};
use crate::error::{Error, Result};
use crate::harness::{compare_controllers, run_scenario_strided, write_file, AnnSource, ControllerSpec, ScenarioSpec};
use crate::mpc::{CostForm, MpcConfig, TieBreak};
use crate::pi::PiGains;
use crate::plant::{ConverterParams, ConverterState, DiscreteModel};
use crate::train::{
    collect_dataset, default_dataset_path, evaluate_splits, grid_search, split_dataset, train_brt, Dataset,
    TrainOptions, TrainReport,
};

pub const OUT_ENV: &str = "BOOST_IMITATOR_OUT";
pub const DEFAULT_OUT: &str = "out";
pub const MODEL_FILE: &str = "model.txt";

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DIVERGED: u8 = 2;
pub const EXIT_TRAINING: u8 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "boost-imitator",
    version,
    about = "Boost converter MPC, imitation-trained network and PI baseline"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Run one scenario and write its trace and metrics.
    Simulate,
    /// Roll out the MPC expert and write the training dataset.
    Collect,
    /// Split the dataset and train the network (optionally over a grid).
    Train,
    /// Score a trained model against the dataset splits.
    Evaluate,
    /// Run several controllers on one scenario side by side.
    Compare,
}

#[derive(Args, Debug, Default, Clone)]
pub struct Flags {
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// fig7, fig8, fig9 or collect
    #[arg(long, global = true, value_name = "NAME")]
    pub scenario: Option<String>,
    #[arg(long, global = true, value_name = "mpc|pi|ann")]
    pub controller: Option<String>,
    /// Controllers for `compare`, comma separated.
    #[arg(long, global = true, value_name = "LIST")]
    pub controllers: Option<String>,
    #[arg(long, global = true, value_name = "PATH")]
    pub model: Option<PathBuf>,
    #[arg(long, global = true, value_name = "PATH")]
    pub dataset: Option<PathBuf>,
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_name = "N")]
    pub hidden: Option<usize>,
    /// Hidden sizes to search, e.g. "5,10,15,20,25".
    #[arg(long, global = true, value_name = "LIST")]
    pub grid: Option<String>,
    /// Override the scenario duration in seconds.
    #[arg(long, global = true, value_name = "SECONDS")]
    pub duration: Option<f64>,
    /// Keep every Nth plant step in written traces.
    #[arg(long, global = true, value_name = "N")]
    pub stride: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ControllerKind {
    Mpc,
    Pi,
    Ann,
}

impl FromStr for ControllerKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "mpc" => Ok(Self::Mpc),
            "pi" => Ok(Self::Pi),
            "ann" => Ok(Self::Ann),
            other => Err(format!("unknown controller `{other}` (expected mpc, pi or ann)")),
        }
    }
}

impl ControllerKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Mpc => "mpc",
            Self::Pi => "pi",
            Self::Ann => "ann",
        }
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "v_in",
    "l",
    "r_damp",
    "c_f",
    "control_period",
    "plant_step",
    "diode_clamp",
    "scenario",
    "controller",
    "controllers",
    "v_ref",
    "duration",
    "initial_i_l",
    "initial_v_c",
    "model",
    "dataset",
    "out",
    "seed",
    "hidden",
    "grid",
    "kp",
    "ki",
    "duty_min",
    "duty_max",
    "tie_break",
    "discrete_model",
    "cost_form",
    "max_epochs",
    "hidden_activation",
    "trace_stride",
];

/// Fully resolved settings for one command.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub params: ConverterParams,
    /// `None` selects the command's own default scenario.
    pub scenario: Option<String>,
    pub controller: ControllerKind,
    pub controllers: Vec<ControllerKind>,
    pub v_ref: Option<f64>,
    pub duration: Option<f64>,
    pub initial_state: ConverterState,
    pub model: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    /// `None` until resolved against the environment.
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub hidden: usize,
    pub grid: Option<Vec<usize>>,
    pub pi: PiGains,
    pub mpc: MpcConfig,
    pub train: TrainOptions,
    pub trace_stride: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            params: ConverterParams::default(),
            scenario: None,
            controller: ControllerKind::Mpc,
            controllers: vec![ControllerKind::Pi, ControllerKind::Ann],
            v_ref: None,
            duration: None,
            initial_state: ConverterState::default(),
            model: None,
            dataset: None,
            out: None,
            seed: 0,
            hidden: 15,
            grid: None,
            pi: PiGains::default(),
            mpc: MpcConfig::default(),
            train: TrainOptions::default(),
            trace_stride: 1,
        }
    }
}

fn parse<T: FromStr>(value: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| format!("cannot parse `{value}`: {e}"))
}

pub fn parse_list<T: FromStr>(value: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    let items = value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(parse)
        .collect::<std::result::Result<Vec<T>, String>>()?;
    if items.is_empty() {
        return Err(format!("empty list `{value}`"));
    }
    Ok(items)
}

fn parse_bool(value: &str) -> std::result::Result<bool, String> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(format!("expected true or false, got `{value}`")),
    }
}

impl RunConfig {
    /// Apply one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        match key {
            "v_in" => self.params.v_in = parse(value)?,
            "l" => self.params.l = parse(value)?,
            "r_damp" => self.params.r_damp = parse(value)?,
            "c_f" => self.params.c_f = parse(value)?,
            "control_period" => self.params.control_period = parse(value)?,
            "plant_step" => self.params.plant_step = parse(value)?,
            "diode_clamp" => self.params.diode_clamp = parse_bool(value)?,
            "scenario" => self.scenario = Some(value.to_string()),
            "controller" => self.controller = value.parse()?,
            "controllers" => self.controllers = parse_list(value)?,
            "v_ref" => self.v_ref = Some(parse(value)?),
            "duration" => self.duration = Some(parse(value)?),
            "initial_i_l" => self.initial_state.i_l = parse(value)?,
            "initial_v_c" => self.initial_state.v_c = parse(value)?,
            "model" => self.model = Some(PathBuf::from(value)),
            "dataset" => self.dataset = Some(PathBuf::from(value)),
            "out" => self.out = Some(PathBuf::from(value)),
            "seed" => self.seed = parse(value)?,
            "hidden" => self.hidden = parse(value)?,
            "grid" => self.grid = Some(parse_list(value)?),
            "kp" => self.pi.kp = parse(value)?,
            "ki" => self.pi.ki = parse(value)?,
            "duty_min" => self.pi.duty_min = parse(value)?,
            "duty_max" => self.pi.duty_max = parse(value)?,
            "tie_break" => {
                self.mpc.tie_break = match value {
                    "keep_previous" => TieBreak::KeepPrevious,
                    "prefer_zero" => TieBreak::PreferZero,
                    _ => return Err(format!("expected keep_previous or prefer_zero, got `{value}`")),
                }
            }
            "discrete_model" => {
                self.mpc.model = match value {
                    "euler" => DiscreteModel::Euler,
                    "printed" => DiscreteModel::PrintedVariant,
                    _ => return Err(format!("expected euler or printed, got `{value}`")),
                }
            }
            "cost_form" => {
                self.mpc.cost_form = match value {
                    "squared_error" => CostForm::SquaredError,
                    "squared_reference" => CostForm::SquaredReference,
                    _ => return Err(format!("expected squared_error or squared_reference, got `{value}`")),
                }
            }
            "max_epochs" => self.train.max_epochs = parse(value)?,
            "hidden_activation" => self.train.hidden_activation = parse::<Activation>(value)?,
            "trace_stride" => self.trace_stride = parse(value)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    pub fn apply_config_text(&mut self, text: &str, path: &Path) -> Result<()> {
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: k + 1,
                msg,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            self.set(key.trim(), value.trim()).map_err(err)?;
        }
        Ok(())
    }

    pub fn apply_flags(&mut self, f: &Flags) -> Result<()> {
        let usage = |flag: &str, msg: String| Error::InvalidScenario(format!("--{flag}: {msg}"));
        if let Some(s) = &f.scenario {
            self.scenario = Some(s.clone());
        }
        if let Some(c) = &f.controller {
            self.controller = c.parse().map_err(|m| usage("controller", m))?;
        }
        if let Some(c) = &f.controllers {
            self.controllers = parse_list(c).map_err(|m| usage("controllers", m))?;
        }
        if let Some(m) = &f.model {
            self.model = Some(m.clone());
        }
        if let Some(d) = &f.dataset {
            self.dataset = Some(d.clone());
        }
        if let Some(o) = &f.out {
            self.out = Some(o.clone());
        }
        if let Some(s) = f.seed {
            self.seed = s;
        }
        if let Some(h) = f.hidden {
            self.hidden = h;
        }
        if let Some(g) = &f.grid {
            self.grid = Some(parse_list(g).map_err(|m| usage("grid", m))?);
        }
        if let Some(d) = f.duration {
            self.duration = Some(d);
        }
        if let Some(s) = f.stride {
            self.trace_stride = s;
        }
        Ok(())
    }

    /// Defaults, then the config file, then flags, then the output directory
    /// fallback from the environment.
    pub fn resolve(flags: &Flags, env_out: Option<PathBuf>) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(path) = &flags.config {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            cfg.apply_config_text(&text, path)?;
        }
        cfg.apply_flags(flags)?;
        if cfg.out.is_none() {
            cfg.out = Some(env_out.unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)));
        }
        cfg.params.validate()?;
        if cfg.trace_stride == 0 {
            return Err(Error::InvalidScenario("trace_stride must be at least 1".into()));
        }
        Ok(cfg)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
    }

    pub fn model_path(&self) -> PathBuf {
        self.model.clone().unwrap_or_else(|| self.out_dir().join(MODEL_FILE))
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.dataset
            .clone()
            .unwrap_or_else(|| default_dataset_path(&self.out_dir()))
    }

    fn controller_spec(&self, kind: ControllerKind, model: Option<&Arc<Mlp>>) -> ControllerSpec {
        match kind {
            ControllerKind::Mpc => ControllerSpec::Mpc(self.mpc),
            ControllerKind::Pi => ControllerSpec::Pi(self.pi),
            ControllerKind::Ann => match model {
                Some(net) => ControllerSpec::Ann(AnnSource::Model(Arc::clone(net))),
                None => ControllerSpec::Ann(AnnSource::File(self.model_path())),
            },
        }
    }

    pub fn scenario_name<'a>(&'a self, default: &'a str) -> &'a str {
        self.scenario.as_deref().unwrap_or(default)
    }

    pub fn scenario_spec(&self, default: &str, kind: ControllerKind) -> Result<ScenarioSpec> {
        let name = self.scenario_name(default);
        let mut spec = ScenarioSpec::builtin(name).ok_or_else(|| {
            Error::InvalidScenario(format!(
                "unknown scenario `{name}` (expected fig7, fig8, fig9 or collect)"
            ))
        })?;
        spec.controller = self.controller_spec(kind, None);
        if let Some(v) = self.v_ref {
            spec.v_ref = v;
        }
        if let Some(d) = self.duration {
            spec.duration = d;
        }
        spec.initial_state = self.initial_state;
        spec.seed = self.seed;
        Ok(spec)
    }
}

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Diverged { .. } | Error::NonFiniteState { .. } => EXIT_DIVERGED,
        Error::Training(_) | Error::InvalidDataset(_) => EXIT_TRAINING,
        _ => EXIT_USAGE,
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let env_out = std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from);
    let cfg = RunConfig::resolve(&cli.flags, env_out)?;
    match cli.command {
        Command::Simulate => cmd_simulate(&cfg),
        Command::Collect => cmd_collect(&cfg),
        Command::Train => cmd_train(&cfg),
        Command::Evaluate => cmd_evaluate(&cfg),
        Command::Compare => cmd_compare(&cfg),
    }
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<()> {
    let spec = cfg.scenario_spec("fig7", cfg.controller)?;
    for w in spec.warnings(&cfg.params) {
        eprintln!("warning: {w}");
    }
    let stem = format!("{}_{}", spec.name, cfg.controller.name());
    let out = cfg.out_dir();
    let trace_path = out.join(format!("trace_{stem}.csv"));
    match run_scenario_strided(&spec, &cfg.params, cfg.trace_stride) {
        Ok(run) => {
            write_file(&trace_path, &run.trace.to_csv())?;
            let metrics_path = out.join(format!("metrics_{stem}.txt"));
            let kv = format!(
                "scenario = {}\ncontroller = {}\n{}",
                spec.name,
                cfg.controller.name(),
                run.metrics.to_kv()
            );
            write_file(&metrics_path, &kv)?;
            print!("{kv}");
            println!("wrote {} and {}", trace_path.display(), metrics_path.display());
            Ok(())
        }
        Err(aborted) => {
            write_file(&trace_path, &aborted.partial.to_csv())?;
            eprintln!("partial trace written to {}", trace_path.display());
            Err(aborted.error)
        }
    }
}

pub fn cmd_collect(cfg: &RunConfig) -> Result<()> {
    let spec = cfg.scenario_spec("collect", ControllerKind::Mpc)?;
    let d = collect_dataset(&spec, &cfg.params)?;
    let path = cfg
        .dataset
        .clone()
        .unwrap_or_else(|| default_dataset_path(&cfg.out_dir()));
    write_file(&path, &d.to_csv())?;
    let on = d.samples.iter().filter(|s| s.label.as_u8() == 1).count();
    println!(
        "collected {} samples from scenario {} ({} with u = 1); wrote {}",
        d.len(),
        spec.name,
        on,
        path.display()
    );
    Ok(())
}

fn report_text(final_report: &TrainReport, candidates: &[TrainReport], best: usize) -> String {
    let mut out = String::new();
    if candidates.len() > 1 {
        writeln!(out, "grid search over hidden sizes (selection by validation accuracy)").unwrap();
        writeln!(
            out,
            "{:>8} {:>8} {:>18} {:>8} {:>12} {:>12}",
            "hidden", "epochs", "stop", "gamma", "train_acc", "val_acc"
        )
        .unwrap();
        for (k, r) in candidates.iter().enumerate() {
            writeln!(
                out,
                "{:>8} {:>8} {:>18} {:>8.2} {:>12.6} {:>12.6}{}",
                r.hidden_dim,
                r.epochs_run,
                r.stop_reason.name(),
                r.effective_params_gamma,
                r.train_accuracy,
                r.validation_accuracy,
                if k == best { "  selected" } else { "" }
            )
            .unwrap();
        }
        out.push('\n');
    }
    writeln!(out, "selected network").unwrap();
    for line in final_report.to_kv().lines() {
        writeln!(out, "    {line}").unwrap();
    }
    out
}

pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let data_path = cfg.dataset_path();
    let d = split_dataset(Dataset::read(&data_path)?, cfg.seed)?;
    let (net, mut report, candidates, best) = match &cfg.grid {
        Some(grid) => {
            let g = grid_search(&d, grid, cfg.seed, &cfg.train)?;
            let report = g.reports[g.best_index].clone();
            (g.best, report, g.reports, g.best_index)
        }
        None => {
            let (net, report) = train_brt(&d, cfg.hidden, cfg.seed, &cfg.train)?;
            (net, report.clone(), vec![report], 0)
        }
    };
    // the test split is first looked at here, after selection
    let conf = evaluate_splits(&net, &d)?;
    report.test_accuracy = Some(conf.test.accuracy());

    let out = cfg.out_dir();
    let model_path = out.join(MODEL_FILE);
    if let Some(dir) = model_path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_model_file(&net, &model_path)?;
    let mut kv = report.to_kv();
    for r in &candidates {
        writeln!(
            kv,
            "candidate_{}_validation_accuracy = {}",
            r.hidden_dim, r.validation_accuracy
        )
        .unwrap();
    }
    write_file(&out.join("train_report.kv"), &kv)?;
    write_file(&out.join("train_report.txt"), &report_text(&report, &candidates, best))?;
    write_file(&out.join("confusion.kv"), &conf.to_kv())?;
    write_file(&out.join("confusion.txt"), &conf.to_text())?;
    println!(
        "hidden {}: overall accuracy {:.4}, test {:.4}, validation {:.4} ({} epochs, {})",
        report.hidden_dim,
        conf.all.accuracy(),
        conf.test.accuracy(),
        conf.validation.accuracy(),
        report.epochs_run,
        report.stop_reason.name()
    );
    println!("wrote {} and reports under {}", model_path.display(), out.display());
    Ok(())
}

pub fn cmd_evaluate(cfg: &RunConfig) -> Result<()> {
    let net = read_model_file(&cfg.model_path())?;
    let d = split_dataset(Dataset::read(&cfg.dataset_path())?, cfg.seed)?;
    let conf = evaluate_splits(&net, &d)?;
    let out = cfg.out_dir();
    let mut kv = format!("hidden_dim = {}\n", net.hidden_dim());
    writeln!(kv, "imitation_agreement_test = {}", conf.test.accuracy()).unwrap();
    kv.push_str(&conf.to_kv());
    write_file(&out.join("evaluation.kv"), &kv)?;
    write_file(&out.join("evaluation.txt"), &conf.to_text())?;
    println!(
        "overall accuracy {:.4}; agreement with the expert on the test split {:.4}",
        conf.all.accuracy(),
        conf.test.accuracy()
    );
    Ok(())
}

pub fn cmd_compare(cfg: &RunConfig) -> Result<()> {
    let scenario = cfg.scenario_name("fig9");
    let model = if cfg.controllers.contains(&ControllerKind::Ann) {
        Some(Arc::new(read_model_file(&cfg.model_path())?))
    } else {
        None
    };
    let specs = cfg
        .controllers
        .iter()
        .map(|&k| {
            let mut s = cfg.scenario_spec("fig9", k)?;
            s.controller = cfg.controller_spec(k, model.as_ref());
            s.name = k.name().to_string();
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;
    let report = compare_controllers(&specs, &cfg.params, cfg.trace_stride)?;
    let out = cfg.out_dir();
    let csv = out.join(format!("comparison_{scenario}.csv"));
    let txt = out.join(format!("comparison_{scenario}.txt"));
    write_file(&csv, &report.to_csv())?;
    let summary = format!("scenario = {scenario}\n{}", report.summary());
    write_file(&txt, &summary)?;
    print!("{summary}");
    println!("wrote {} and {}", csv.display(), txt.display());
    Ok(())
}
