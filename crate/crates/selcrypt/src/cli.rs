//! Command-line entry point: train, select, protect, assign, decrypt, eval,
//! attack and analyze, plus a synthetic data generator.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use selcrypt_core::analysis::{degradation_curve, hierarchy_table, imperceptibility_report, CurveConfig, Strategy};
use selcrypt_core::attacks::{evaluate_attack, run_attack, transfer_locations, AttackKind, AttackSpec, SURROGATE_FAMILY, WAVELET_LEVELS};
use selcrypt_core::data::{fraction_slice, DeskData, SyntheticSpec};
use selcrypt_core::dprm::{decrypt_with_permission, encrypt_model, CipherBundle, SecretKey, DEFAULT_RHO};
use selcrypt_core::nn::{evaluate, train, TrainConfig, DESK_TRAINING};
use selcrypt_core::permission::assign;
use selcrypt_core::pss::{partition_from_maps, select_model, SelectConfig};
use selcrypt_core::Model;

use crate::config::{pick, RunConfig};
use crate::formats::{self, load, save, save_private, ImportanceFile};
use crate::render;

#[derive(Debug, Parser)]
#[command(name = "selcrypt", version, about = "Selective encryption of convolutional network weights")]
pub struct Cli {
    /// JSON config file; flags take precedence over it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset.
    GenData(GenData),
    /// Train a model (the reference architecture unless --model is given).
    Train(TrainArgs),
    /// Fit importance maps and cut the tiered dominated set.
    Select(SelectArgs),
    /// Encrypt the selected weights; writes the protected model and the bundle.
    Protect(ProtectArgs),
    /// Issue a level-m permission from a bundle.
    Assign(AssignArgs),
    /// Decrypt the tiers a permission releases.
    Decrypt(DecryptArgs),
    /// Score a model on a dataset.
    Eval(EvalArgs),
    /// Run attacks against a protected model; one JSON line per attack.
    Attack(AttackArgs),
    /// Statistical analyses.
    #[command(subcommand)]
    Analyze(Analyze),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Args)]
pub struct GenData {
    #[arg(long)]
    pub out: PathBuf,
    /// Reference split of the chosen family.
    #[arg(long, value_enum, default_value = "train", conflicts_with = "count")]
    pub split: Split,
    /// Generate a custom set of this many samples instead of a reference split.
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub family: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from this model instead of a fresh reference model.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Initialization seed of a fresh model (defaults to --seed).
    #[arg(long)]
    pub init_seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub step_size: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Considered (protectable) conv layers, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub considered: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub fraction: Option<f64>,
    #[arg(long)]
    pub tiers: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub select_epochs: Option<usize>,
    #[arg(long)]
    pub select_step: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ProtectArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub importance: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub bundle: PathBuf,
    /// Derive the tier keys from this seed; without it keys come from OS entropy.
    #[arg(long)]
    pub key_seed: Option<u64>,
    #[arg(long)]
    pub rho: Option<f64>,
    /// Re-cut the partition from the stored maps with this fraction.
    #[arg(long)]
    pub fraction: Option<f64>,
    #[arg(long)]
    pub tiers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct AssignArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    /// Permission level, 1 up to the tier count.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..))]
    pub level: u8,
    #[arg(long, required_unless_present = "json")]
    pub out: Option<PathBuf>,
    /// Print a JSON rendering to stdout.
    #[arg(long)]
    pub json: bool,
    /// Include key material in the JSON rendering.
    #[arg(long, requires = "json")]
    pub unsafe_show_keys: bool,
}

#[derive(Debug, Args)]
pub struct DecryptArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub permission: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    /// Protected model.
    #[arg(long)]
    pub model: PathBuf,
    /// Bundle of the protected model; supplies the goal and the baseline.
    #[arg(long)]
    pub bundle: PathBuf,
    /// Training set the attacker's slice is drawn from.
    #[arg(long)]
    pub train: PathBuf,
    /// Held-out evaluation set.
    #[arg(long)]
    pub test: PathBuf,
    /// Attack name (e.g. wavelet:haar, retrain:transfer) or "all".
    #[arg(long, default_value = "all")]
    pub kind: String,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub levels: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub data_fraction: Option<f64>,
    /// Selection fraction the transfer attacker uses on its surrogate.
    #[arg(long)]
    pub fraction: Option<f64>,
    #[arg(long)]
    pub surrogate_family: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Analyze {
    /// Degradation curve per strategy and fraction, as CSV.
    Curve(CurveArgs),
    /// KS and mutual-information report of a protected model, as JSON.
    Report(ReportArgs),
    /// Score at every permission level, as JSON.
    Hierarchy(HierarchyArgs),
}

#[derive(Debug, Args)]
pub struct CurveArgs {
    /// Pretrained model.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Importance maps, required for the pss strategy.
    #[arg(long)]
    pub importance: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "pss,random,mean,descending,ascending")]
    pub strategies: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "0,0.05,0.1,0.2,0.5,1")]
    pub fractions: Vec<f64>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub bundle: PathBuf,
}

#[derive(Debug, Args)]
pub struct HierarchyArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
}

/// Parse `argv` and run. Returns the process exit code; usage errors exit
/// 2, failures print one `error:` line and exit 1.
pub fn main_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match run(cli, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let chain: Vec<String> = e.chain().map(|c| c.to_string()).collect();
            let _ = writeln!(err, "error: {}", chain.join(": ").replace('\n', " "));
            1
        }
    }
}

pub fn run(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::GenData(a) => gen_data(a, &cfg, err),
        Command::Train(a) => train_cmd(a, &cfg, err).context("train"),
        Command::Select(a) => select_cmd(a, &cfg, err).context("select"),
        Command::Protect(a) => protect_cmd(a, &cfg, err).context("protect"),
        Command::Assign(a) => assign_cmd(a, out, err).context("assign"),
        Command::Decrypt(a) => decrypt_cmd(a, err).context("decrypt"),
        Command::Eval(a) => eval_cmd(a, out, err).context("eval"),
        Command::Attack(a) => attack_cmd(a, &cfg, out, err).context("attack"),
        Command::Analyze(a) => analyze_cmd(a, &cfg, out, err).context("analyze"),
    }
}

fn seed_line(err: &mut dyn Write, seed: u64) -> Result<()> {
    writeln!(err, "seed: {seed}")?;
    Ok(())
}

fn load_model(p: &Path) -> Result<Model> {
    load(p, formats::read_model)
}

fn load_bundle(p: &Path) -> Result<CipherBundle> {
    load(p, formats::read_bundle)
}

fn gen_data(a: GenData, cfg: &RunConfig, err: &mut dyn Write) -> Result<()> {
    let family = pick(a.family, &cfg.family, 42);
    let data = match a.count {
        Some(n) => {
            let seed = pick(a.seed, &cfg.seed, 0);
            seed_line(err, seed)?;
            SyntheticSpec { family, ..SyntheticSpec::default() }.generate(n, seed)
        }
        None => {
            // Reference splits derive their seeds from the family.
            seed_line(err, family)?;
            let d = DeskData::new(family);
            match a.split {
                Split::Train => d.train,
                Split::Test => d.test,
            }
        }
    };
    save(&a.out, &formats::write_dataset(&data))
}

fn train_cmd(a: TrainArgs, cfg: &RunConfig, err: &mut dyn Write) -> Result<()> {
    let seed = pick(a.seed, &cfg.seed, DESK_TRAINING.seed);
    seed_line(err, seed)?;
    let data = load(&a.data, formats::read_dataset)?;
    let mut model = match &a.model {
        Some(p) => load_model(p)?,
        None => Model::desk_reference(a.init_seed.unwrap_or(seed)),
    };
    if let Some(c) = a.considered.or_else(|| cfg.considered.clone()) {
        model.set_considered(c)?;
    }
    let tc = TrainConfig {
        epochs: pick(a.epochs, &cfg.epochs, DESK_TRAINING.epochs),
        step_size: pick(a.step_size, &cfg.step_size, DESK_TRAINING.step_size),
        batch_size: pick(a.batch_size, &cfg.batch_size, DESK_TRAINING.batch_size),
        momentum: DESK_TRAINING.momentum,
        seed,
    };
    let trained = train(&model, &data, &tc)?;
    save(&a.out, &formats::write_model(&trained))
}

fn select_config(cfg: &RunConfig, fraction: Option<f64>, tiers: Option<usize>, seed: u64) -> SelectConfig {
    let d = SelectConfig::default();
    SelectConfig {
        fraction: pick(fraction, &cfg.fraction, d.fraction),
        tiers: pick(tiers, &cfg.tiers, d.tiers),
        lambda: cfg.lambda.unwrap_or(d.lambda),
        epochs: cfg.select_epochs.unwrap_or(d.epochs),
        step_size: cfg.select_step.unwrap_or(d.step_size),
        seed,
        ..d
    }
}

fn select_cmd(a: SelectArgs, cfg: &RunConfig, err: &mut dyn Write) -> Result<()> {
    let seed = pick(a.seed, &cfg.seed, 0);
    seed_line(err, seed)?;
    let model = load_model(&a.model)?;
    let data = load(&a.data, formats::read_dataset)?;
    let mut sc = select_config(cfg, a.fraction, a.tiers, seed);
    sc.lambda = pick(a.lambda, &cfg.lambda, sc.lambda);
    sc.epochs = pick(a.select_epochs, &cfg.select_epochs, sc.epochs);
    sc.step_size = pick(a.select_step, &cfg.select_step, sc.step_size);
    let (maps, part) = select_model(&model, &data, &sc)?;
    for (m, l) in part.empty_cells() {
        writeln!(err, "warning: tier {m} has no weights in layer {l}")?;
    }
    save(&a.out, &formats::write_importance(&ImportanceFile { maps, partition: Some(part) }))
}

fn protect_cmd(a: ProtectArgs, cfg: &RunConfig, err: &mut dyn Write) -> Result<()> {
    let model = load_model(&a.model)?;
    let imp = load(&a.importance, formats::read_importance)?;
    let part = match (&imp.partition, a.fraction.is_some() || a.tiers.is_some()) {
        (Some(p), false) => p.clone(),
        _ => {
            let sc = select_config(cfg, a.fraction, a.tiers, 0);
            partition_from_maps(&imp.maps, sc.fraction, sc.tiers)?
        }
    };
    let keys = match a.key_seed.or(cfg.key_seed) {
        Some(s) => {
            seed_line(err, s)?;
            SecretKey::derive_set(s, part.tiers)
        }
        None => {
            writeln!(err, "seed: none (keys from OS entropy; pass --key-seed to reproduce)")?;
            let mut rng = rand::rng();
            (0..part.tiers).map(|_| SecretKey::from_rng(&mut rng)).collect()
        }
    };
    let rho = pick(a.rho, &cfg.rho, DEFAULT_RHO);
    let (protected, bundle) = encrypt_model(&model, &part, &keys, rho)?;
    save(&a.out, &formats::write_model(&protected))?;
    save_private(&a.bundle, &formats::write_bundle(&bundle))
}

fn assign_cmd(a: AssignArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    seed_line(err, 0)?;
    let bundle = load_bundle(&a.bundle)?;
    let perm = assign(&bundle, a.level as usize)?;
    let bytes = formats::write_permission(&perm);
    if let Some(p) = &a.out {
        save_private(p, &bytes)?;
    }
    if a.json {
        writeln!(out, "{}", render::permission_json(&perm, a.unsafe_show_keys, bytes.len()))?;
    }
    Ok(())
}

fn decrypt_cmd(a: DecryptArgs, err: &mut dyn Write) -> Result<()> {
    seed_line(err, 0)?;
    let path = a.permission.ok_or_else(|| anyhow!("no permission given (--permission); the protected model stays encrypted"))?;
    let protected = load_model(&a.model)?;
    let perm = load(&path, formats::read_permission)?;
    let plain = decrypt_with_permission(&protected, &perm)?;
    save(&a.out, &formats::write_model(&plain))
}

fn eval_cmd(a: EvalArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    seed_line(err, 0)?;
    let model = load_model(&a.model)?;
    let data = load(&a.data, formats::read_dataset)?;
    writeln!(out, "{}", json!({ "score": evaluate(&model, &data)?, "samples": data.len() }))?;
    Ok(())
}

fn level_score(protected: &Model, bundle: &CipherBundle, level: usize, data: &selcrypt_core::Dataset) -> Result<f64> {
    Ok(evaluate(&decrypt_with_permission(protected, &assign(bundle, level)?)?, data)?)
}

fn attack_cmd(a: AttackArgs, cfg: &RunConfig, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let seed = pick(a.seed, &cfg.seed, 0);
    seed_line(err, seed)?;
    let kinds: Vec<AttackKind> = if a.kind == "all" {
        AttackKind::ALL.to_vec()
    } else {
        vec![AttackKind::parse(&a.kind).ok_or_else(|| anyhow!("unknown attack {:?}", a.kind))?]
    };
    let protected = load_model(&a.model)?;
    let bundle = load_bundle(&a.bundle)?;
    let train_set = load(&a.train, formats::read_dataset)?;
    let test = load(&a.test, formats::read_dataset)?;
    let goal = level_score(&protected, &bundle, 1, &test)?;
    let baseline = level_score(&protected, &bundle, bundle.tiers(), &test)?;

    let mut spec = AttackSpec::new(kinds[0], seed);
    spec.window = pick(a.window, &cfg.window, spec.window);
    spec.levels = pick(a.levels, &cfg.levels, WAVELET_LEVELS);
    spec.data_fraction = pick(a.data_fraction, &cfg.data_fraction, spec.data_fraction);
    spec.retrain.epochs = pick(a.epochs, &cfg.epochs, spec.retrain.epochs);
    spec.validate()?;
    let slice = fraction_slice(&train_set, spec.data_fraction, seed);

    let transfer = if kinds.contains(&AttackKind::Transfer) {
        let family = pick(a.surrogate_family, &cfg.surrogate_family, SURROGATE_FAMILY);
        let fraction = pick(a.fraction, &cfg.fraction, SelectConfig::default().fraction);
        let other = DeskData::new(family);
        let surrogate = train(&Model::desk_reference(family), &other.train, &TrainConfig { seed: family, ..DESK_TRAINING })?;
        Some(transfer_locations(&surrogate, &other.train, &SelectConfig { fraction, seed, ..SelectConfig::default() })?)
    } else {
        None
    };

    for kind in kinds {
        spec.kind = kind;
        let attacked = run_attack(&spec, &protected, &slice, transfer.as_ref())?;
        let r = evaluate_attack(kind.name(), &attacked, &test, goal, baseline)?;
        let extra = json!({
            "seed": seed,
            "window": spec.window,
            "levels": spec.levels,
            "epochs": spec.retrain.epochs,
            "data_fraction": spec.data_fraction,
            "attacker_samples": slice.len(),
        });
        writeln!(out, "{}", render::attack_json(&r, extra))?;
    }
    Ok(())
}

fn analyze_cmd(a: Analyze, cfg: &RunConfig, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    match a {
        Analyze::Curve(c) => {
            let seed = pick(c.seed, &cfg.seed, 0);
            seed_line(err, seed)?;
            let model = load_model(&c.model)?;
            let data = load(&c.data, formats::read_dataset)?;
            let strategies = c
                .strategies
                .iter()
                .map(|s| Strategy::parse(s).ok_or_else(|| anyhow!("unknown strategy {s:?}")))
                .collect::<Result<Vec<_>>>()?;
            let maps = match &c.importance {
                Some(p) => Some(load(p, formats::read_importance)?.maps),
                None if strategies.contains(&Strategy::Pss) => bail!("the pss strategy needs --importance"),
                None => None,
            };
            let cc = CurveConfig { trials: pick(c.trials, &cfg.trials, 20), rho: pick(c.rho, &cfg.rho, DEFAULT_RHO), seed };
            let table = degradation_curve(&model, &data, maps.as_deref(), &strategies, &c.fractions, &cc)?;
            match &c.out {
                Some(p) => save(p, table.to_csv().as_bytes())?,
                None => write!(out, "{}", table.to_csv())?,
            }
        }
        Analyze::Report(r) => {
            seed_line(err, 0)?;
            let protected = load_model(&r.model)?;
            let bundle = load_bundle(&r.bundle)?;
            let rep = imperceptibility_report(&protected, &bundle)?;
            for l in &rep.skipped {
                writeln!(err, "warning: layer {l} has fewer than 8 ciphertext values; KS skipped")?;
            }
            writeln!(out, "{}", render::report_json(&rep))?;
        }
        Analyze::Hierarchy(h) => {
            seed_line(err, 0)?;
            let protected = load_model(&h.model)?;
            let bundle = load_bundle(&h.bundle)?;
            let data = load(&h.data, formats::read_dataset)?;
            let scores = hierarchy_table(&protected, &bundle, &data)?;
            writeln!(out, "{}", json!({ "levels": (0..scores.len()).collect::<Vec<_>>(), "scores": scores }))?;
        }
    }
    Ok(())
}
