//! Command-line interface: dataset generation, operator training,
//! sampling, tree composition, evaluation, and the averaging baseline.
//!
//! Exit codes: 0 on success, 2 for usage or configuration errors, 3 for
//! runtime failures. The resolved configuration is printed to stderr as
//! JSON before each command runs.
//!
//! Environment: `POPS_ENCODER` selects the encoder backend (`mock`,
//! default) and `POPS_RENDERER` the default renderer id.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::clients::{renderer_by_id, EncoderClient, MockEncoder, RenderOptions};
use crate::datagen::{
    gen_composition, gen_instruct, gen_scene, gen_texturing, gen_toy, gen_union, load_dataset,
    AtrDirSource, GenConfig, MockAtrSource, MockClients, ToyOracle,
};
use crate::embedding::{self, Embedding, EmbeddingBatch};
use crate::metrics::{aggregate, image_similarity, text_similarity, to_csv, EvalRecord};
use crate::ops::{builtin_spec, OperatorName};
use crate::prior::{FreezePolicy, PriorConfig, PriorNet};
use crate::schedule::{sample, GuidanceConfig, NoiseSchedule, SampleConfig, ScheduleKind};
use crate::trainer::{load_net, TrainConfig, Trainer};
use crate::tree::{self, EvalContext, OperatorRegistry};
use crate::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "pops", about = "Semantic operators in image-embedding space", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a paired training dataset.
    Datagen(DatagenArgs),
    /// Fine-tune an operator prior on a dataset.
    Train(TrainArgs),
    /// Sample an embedding from a trained operator.
    Sample(SampleArgs),
    /// Evaluate a program of composed operators.
    Compose(ComposeArgs),
    /// Score a trained operator against a dataset.
    Eval(EvalArgs),
    /// Embedding-averaging baseline.
    Avg(AvgArgs),
}

#[derive(Args, Debug, serde::Serialize)]
struct DatagenArgs {
    /// texturing | scene | union | instruct | composition
    #[arg(long)]
    operator: Option<String>,
    /// Toy oracle instead of a client pipeline:
    /// midpoint | first_arg | weighted_mix | rotate
    #[arg(long)]
    toy_oracle: Option<String>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Embedding dimensionality (mock encoder).
    #[arg(long, default_value_t = 16)]
    dim: usize,
    /// Mixing weight for the weighted_mix oracle.
    #[arg(long, default_value_t = 0.5)]
    mix_weight: f64,
    /// Scene pipeline: probability of the white-background branch.
    #[arg(long, default_value_t = 0.5)]
    white_background_prob: f64,
    /// Composition pipeline: directory of parsed clothing segments
    /// (mock source when omitted).
    #[arg(long)]
    atr_root: Option<PathBuf>,
}

#[derive(Args, Debug, serde::Serialize)]
struct TrainArgs {
    /// Dataset directory produced by `datagen`.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint path to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 500)]
    steps: usize,
    /// toy | reference
    #[arg(long, default_value = "toy")]
    preset: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, default_value_t = 4)]
    layers: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    /// linear | cosine
    #[arg(long, default_value = "linear")]
    schedule: String,
    #[arg(long, default_value_t = 1000)]
    timesteps: usize,
    /// Resume training from this checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Warm-start weights from this checkpoint (fresh optimizer).
    #[arg(long)]
    warm_start: Option<PathBuf>,
    /// Comma-separated transformer layers to train; all when omitted.
    #[arg(long)]
    freeze_except_layers: Option<String>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Override the training operator (defaults to the dataset's).
    #[arg(long)]
    operator: Option<String>,
}

#[derive(Args, Debug, serde::Serialize)]
struct SampleArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Conditions as SLOT=REF, where REF is `file.pops#idx` or
    /// `text:...` (mock-encoded). Repeatable; omit for null-input
    /// sampling.
    #[arg(long = "condition")]
    conditions: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 25)]
    steps: usize,
    #[arg(long, default_value_t = 4.0)]
    scale: f64,
    /// Output embedding file.
    #[arg(long)]
    out: PathBuf,
    /// Also render the embedding to this PNG.
    #[arg(long)]
    render: Option<PathBuf>,
    #[arg(long)]
    renderer: Option<String>,
}

#[derive(Args, Debug, serde::Serialize)]
struct ComposeArgs {
    /// Program file (s-expressions), or `-` for stdin.
    #[arg(long)]
    program: PathBuf,
    /// Operator checkpoints to load; repeatable.
    #[arg(long = "ckpt")]
    ckpts: Vec<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 25)]
    steps: usize,
    #[arg(long, default_value_t = 4.0)]
    scale: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    render: Option<PathBuf>,
    #[arg(long)]
    renderer: Option<String>,
    /// Base directory for leaf paths in the program.
    #[arg(long)]
    base_dir: Option<PathBuf>,
}

#[derive(Args, Debug, serde::Serialize)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// CSV output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Evaluate at most this many samples.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 25)]
    steps: usize,
    #[arg(long, default_value_t = 4.0)]
    scale: f64,
    /// Method label for the report rows.
    #[arg(long)]
    method: Option<String>,
    /// Suppress the full-scale reference context row.
    #[arg(long, default_value_t = false)]
    no_reference_row: bool,
}

#[derive(Args, Debug, serde::Serialize)]
struct AvgArgs {
    /// Embedding refs (`file.pops` averages the whole file,
    /// `file.pops#idx` one item). Repeatable.
    #[arg(long = "input")]
    inputs: Vec<String>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    render: Option<PathBuf>,
    #[arg(long)]
    renderer: Option<String>,
}

/// Entry point used by the binary; parses `std::env::args`.
pub fn run() -> i32 {
    let args: Vec<String> = std::env::args().collect();
    run_with_args(&args)
}

fn is_usage_error(err: &Error) -> bool {
    matches!(
        err,
        Error::Config(_)
            | Error::UnsupportedOption { .. }
            | Error::UnknownOperator(_)
            | Error::Parse { .. }
            | Error::BadRef(_)
            | Error::ManifestNotFound(_)
            | Error::MissingCheckpoint(_)
    )
}

/// Testable entry point; `args[0]` is the program name.
pub fn run_with_args(args: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successes.
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Datagen(a) => with_config("datagen", &a, cmd_datagen),
        Command::Train(a) => with_config("train", &a, cmd_train),
        Command::Sample(a) => with_config("sample", &a, cmd_sample),
        Command::Compose(a) => with_config("compose", &a, cmd_compose),
        Command::Eval(a) => with_config("eval", &a, cmd_eval),
        Command::Avg(a) => with_config("avg", &a, cmd_avg),
    };
    match result {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            if is_usage_error(&err) {
                2
            } else {
                3
            }
        }
    }
}

fn with_config<A: serde::Serialize>(
    name: &str,
    args: &A,
    f: impl FnOnce(&A) -> Result<()>,
) -> Result<()> {
    let resolved = serde_json::json!({
        "command": name,
        "args": serde_json::to_value(args)?,
        "encoder": encoder_id_from_env(),
        "renderer": renderer_id_from_env(),
    });
    eprintln!("{resolved}");
    f(args)
}

fn encoder_id_from_env() -> String {
    std::env::var("POPS_ENCODER").unwrap_or_else(|_| "mock".to_string())
}

fn renderer_id_from_env() -> String {
    std::env::var("POPS_RENDERER").unwrap_or_else(|_| "mock".to_string())
}

fn make_encoder(dim: usize) -> Result<MockEncoder> {
    let id = encoder_id_from_env();
    if id != "mock" {
        return Err(Error::Config(format!(
            "encoder {id:?} needs an external service; set POPS_ENCODER=mock"
        )));
    }
    Ok(MockEncoder::new(dim))
}

fn render_embedding(e: &Embedding, path: &Path, renderer_flag: &Option<String>, seed: u64) -> Result<()> {
    let id = renderer_flag.clone().unwrap_or_else(renderer_id_from_env);
    let renderer = renderer_by_id(&id)?;
    let img = renderer.render(e, &RenderOptions { seed, spatial_condition: None })?;
    let bytes = img.to_png_bytes()?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn write_one(out: &Path, e: Embedding, encoder_id: &str) -> Result<()> {
    let batch = EmbeddingBatch::new(vec![e])?;
    embedding::write_embeddings(out, &batch, encoder_id)
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

fn cmd_datagen(a: &DatagenArgs) -> Result<()> {
    let header = match (&a.toy_oracle, &a.operator) {
        (Some(oracle), _) => {
            let oracle = match oracle.as_str() {
                "midpoint" => ToyOracle::Midpoint,
                "first_arg" => ToyOracle::FirstArg,
                "weighted_mix" => ToyOracle::WeightedMix(a.mix_weight),
                "rotate" => ToyOracle::RotateByFixedMatrix { d: a.dim, seed: a.seed },
                other => {
                    return Err(Error::Config(format!("unknown toy oracle {other:?}")))
                }
            };
            gen_toy(&oracle, a.dim, a.n, a.seed, &a.out)?
        }
        (None, Some(op)) => {
            let op = OperatorName::parse(op)?;
            let mocks = MockClients::new(a.dim);
            let clients = mocks.as_clients();
            let config = GenConfig { seed: a.seed, white_background_prob: a.white_background_prob };
            match op {
                OperatorName::Texturing => gen_texturing(&clients, a.n, &config, &a.out)?,
                OperatorName::Scene => gen_scene(&clients, a.n, &config, &a.out)?,
                OperatorName::Union => gen_union(&clients, a.n, &config, &a.out)?,
                OperatorName::Instruct => gen_instruct(&clients, a.n, &config, &a.out)?,
                OperatorName::Composition => match &a.atr_root {
                    Some(root) => {
                        let source = AtrDirSource::open(root)?;
                        gen_composition(&source, clients.encoder, a.n, a.seed, &a.out)?
                    }
                    None => {
                        let source = MockAtrSource { count: a.n, seed: a.seed };
                        gen_composition(&source, clients.encoder, a.n, a.seed, &a.out)?
                    }
                },
                OperatorName::Identity => {
                    return Err(Error::Config(
                        "identity has no generation pipeline; use --toy-oracle first_arg".into(),
                    ))
                }
            }
        }
        (None, None) => {
            return Err(Error::Config("pass --operator or --toy-oracle".into()))
        }
    };
    println!(
        "wrote {} samples ({} attempted) to {}",
        header.emitted,
        header.attempted,
        a.out.display()
    );
    Ok(())
}

fn parse_layer_list(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad layer index {p:?}")))
        })
        .collect()
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let (header, dataset) = load_dataset(&a.data)?;

    let mut trainer = if let Some(resume) = &a.resume {
        Trainer::load(resume)?
    } else {
        let operator = match &a.operator {
            Some(op) => OperatorName::parse(op)?,
            None => header.operator,
        };
        let spec = builtin_spec(operator);
        let schedule_kind = match a.schedule.as_str() {
            "linear" => ScheduleKind::Linear,
            "cosine" => ScheduleKind::Cosine,
            other => return Err(Error::Config(format!("unknown schedule {other:?}"))),
        };
        let schedule = NoiseSchedule::new(schedule_kind, a.timesteps);
        let mut config = match a.preset.as_str() {
            "toy" => TrainConfig::toy(a.seed),
            "reference" => TrainConfig::reference(a.seed),
            other => return Err(Error::Config(format!("unknown preset {other:?}"))),
        };
        if let Some(lr) = a.lr {
            config.lr = lr;
        }
        if let Some(b) = a.batch_size {
            config.batch_size = b;
        }
        let policy = match &a.freeze_except_layers {
            Some(list) => FreezePolicy::Subset(parse_layer_list(list)?),
            None => FreezePolicy::All,
        };
        let net = match &a.warm_start {
            Some(path) => load_net(path)?.0,
            None => {
                let prior = PriorConfig {
                    d: header.d,
                    layers: a.layers,
                    heads: a.heads,
                    width: a.width,
                    ..PriorConfig::toy(header.d)
                };
                PriorNet::init(&prior, a.seed)?
            }
        };
        Trainer::new(net, schedule, spec, policy, config)?
    };

    let ckpt_dir = a.out.parent().map(Path::to_path_buf).unwrap_or_default();
    let losses = trainer.fit(&dataset, a.steps, Some(&ckpt_dir), a.checkpoint_every)?;
    trainer.save(&a.out)?;
    println!(
        "trained {} steps, final loss {:.6}, checkpoint {}",
        trainer.step_count(),
        losses.last().copied().unwrap_or(f64::NAN),
        a.out.display()
    );
    Ok(())
}

fn resolve_condition(spec: &str, base: &Path, encoder: &dyn EncoderClient) -> Result<(usize, Embedding)> {
    let (slot, reference) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("condition {spec:?} is not SLOT=REF")))?;
    let slot: usize = slot
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad slot in {spec:?}")))?;
    let e = if let Some(text) = reference.strip_prefix("text:") {
        encoder.encode_text(text)?
    } else {
        let (file, idx) = reference
            .rsplit_once('#')
            .map(|(f, i)| (f, i.parse::<usize>()))
            .unwrap_or((reference, Ok(0)));
        let idx = idx.map_err(|_| Error::BadRef(reference.to_string()))?;
        let batch = embedding::read_embeddings(&base.join(file))?;
        batch
            .items()
            .get(idx)
            .cloned()
            .ok_or_else(|| Error::BadRef(reference.to_string()))?
    };
    Ok((slot, e))
}

fn cmd_sample(a: &SampleArgs) -> Result<()> {
    let (net, spec, schedule) = load_net(&a.ckpt)?;
    let encoder = make_encoder(net.config().d)?;
    let base = std::env::current_dir().map_err(|e| Error::io(Path::new("."), e))?;
    let conditions = a
        .conditions
        .iter()
        .map(|c| resolve_condition(c, &base, &encoder))
        .collect::<Result<Vec<_>>>()?;
    for (slot, _) in &conditions {
        if !spec.slot_map.contains_slot(*slot) {
            return Err(Error::SlotOutOfRange(*slot));
        }
    }
    let config = SampleConfig {
        steps: a.steps,
        guidance: GuidanceConfig { scale: a.scale, ..GuidanceConfig::default() },
        seed: a.seed,
        renorm_to: None,
    };
    let e = sample(&net, &schedule, &conditions, &config)?;
    write_one(&a.out, e.clone(), "mock")?;
    if let Some(png) = &a.render {
        render_embedding(&e, png, &a.renderer, a.seed)?;
    }
    println!("sampled {} -> {}", spec.name, a.out.display());
    Ok(())
}

fn cmd_compose(a: &ComposeArgs) -> Result<()> {
    let source = if a.program == Path::new("-") {
        use std::io::Read as _;
        let mut s = String::new();
        std::io::stdin()
            .read_to_string(&mut s)
            .map_err(|e| Error::io(Path::new("<stdin>"), e))?;
        s
    } else {
        std::fs::read_to_string(&a.program).map_err(|e| Error::io(&a.program, e))?
    };
    let program = tree::parse(&source)?;

    let mut registry = OperatorRegistry::new();
    let mut dim = None;
    for path in &a.ckpts {
        let name = registry.load_checkpoint(path)?;
        let d = registry.get(name)?.0.config().d;
        if *dim.get_or_insert(d) != d {
            return Err(Error::DimMismatch { expected: dim.unwrap(), got: d });
        }
    }
    let dim = dim.ok_or_else(|| Error::Config("compose needs at least one --ckpt".into()))?;
    let encoder = make_encoder(dim)?;
    let mut ctx = EvalContext::new(&registry, &encoder);
    ctx.base_seed = a.seed;
    ctx.steps = a.steps;
    ctx.default_scale = a.scale;
    if let Some(base) = &a.base_dir {
        ctx.base_dir = base.clone();
    }
    let e = tree::evaluate(&program, &ctx)?;
    write_one(&a.out, e.clone(), "mock")?;
    if let Some(png) = &a.render {
        render_embedding(&e, png, &a.renderer, a.seed)?;
    }
    println!("composed program -> {}", a.out.display());
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let (net, spec, schedule) = load_net(&a.ckpt)?;
    let (_, dataset) = load_dataset(&a.data)?;
    let take = a.n.unwrap_or(dataset.samples.len()).min(dataset.samples.len());
    let method = a.method.clone().unwrap_or_else(|| spec.name.to_string());

    let mut records = Vec::with_capacity(take);
    for (i, s) in dataset.samples.iter().take(take).enumerate() {
        let config = SampleConfig {
            steps: a.steps,
            guidance: GuidanceConfig { scale: a.scale, ..GuidanceConfig::default() },
            seed: crate::datagen::derive_seed(a.seed, i as u64),
            renorm_to: None,
        };
        let pred = sample(&net, &schedule, &s.conditions, &config)?;
        let image_sim = image_similarity(&pred, &s.target).ok();
        let text_sim = s.e_text.as_ref().and_then(|t| text_similarity(&pred, t).ok());
        records.push(EvalRecord { method: method.clone(), image_sim, text_sim, sentence_sim: None });
    }
    let csv = to_csv(&aggregate(&records), !a.no_reference_row);
    match &a.out {
        Some(path) => std::fs::write(path, &csv).map_err(|e| Error::io(path, e))?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn cmd_avg(a: &AvgArgs) -> Result<()> {
    if a.inputs.is_empty() {
        return Err(Error::Config("avg needs at least one --input".into()));
    }
    let mut items = Vec::new();
    for reference in &a.inputs {
        let (file, idx) = reference
            .rsplit_once('#')
            .map(|(f, i)| (f, Some(i.to_string())))
            .unwrap_or((reference.as_str(), None));
        let batch = embedding::read_embeddings(Path::new(file))?;
        match idx {
            Some(i) => {
                let i: usize = i.parse().map_err(|_| Error::BadRef(reference.clone()))?;
                items.push(
                    batch
                        .items()
                        .get(i)
                        .cloned()
                        .ok_or_else(|| Error::BadRef(reference.clone()))?,
                );
            }
            None => items.extend(batch.items().iter().cloned()),
        }
    }
    let avg = embedding::average(&EmbeddingBatch::new(items)?)?;
    write_one(&a.out, avg.clone(), "mock")?;
    if let Some(png) = &a.render {
        render_embedding(&avg, png, &a.renderer, 0)?;
    }
    println!("averaged {} inputs -> {}", a.inputs.len(), a.out.display());
    Ok(())
}
