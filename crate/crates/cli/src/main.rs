//! `ctc`: command-line front end for the trit-plane codec.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tritcodec::cdr::CdrTrainConfig;
use tritcodec::coder::Container;
use tritcodec::crr::{CrrRouter, CrrTrainConfig};
use tritcodec::eval::{
    ablation, ablation_methods, latent_psnr, log_spaced_budgets, psnr, psnr_from_mse, sweep as run_sweep,
};
use tritcodec::pipeline::codec::{chunks_for_budget, decode_at, encode, Asset, Budget, Toggles};
use tritcodec::pipeline::training::{refit_synthesis, train_cdr_router, train_crr_router};
use tritcodec::pipeline::transform::{DEFAULT_LEVEL_WEIGHTS, DEFAULT_RIDGE};
use tritcodec::pipeline::{generate_image, generate_latents, CodecConfig, Image, Models, SourceMode, SyntheticSpec};
use tritcodec::tensor::Latent;
use tritcodec::tritplane::OrderingMode;
use tritcodec::{selftest, Error};

const THREADS_ENV: &str = "CTC_THREADS";

#[derive(Parser, Debug)]
#[command(name = "ctc", version, about = "Progressive trit-plane codec")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Codec configuration file (`key=value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Directory holding trained models.
    #[arg(long, global = true)]
    models: Option<PathBuf>,
    /// Seed for synthetic assets and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Serialize trits in raster order instead of by priority.
    #[arg(long, global = true)]
    raster_order: bool,
    #[arg(long, global = true)]
    no_crr: bool,
    #[arg(long, global = true)]
    no_cdr: bool,
    #[arg(long, global = true)]
    no_refit: bool,
}

#[derive(Args, Debug, Clone)]
struct Source {
    /// Input image (PGM or PPM); repeatable for training commands.
    #[arg(long)]
    input: Vec<PathBuf>,
    /// Synthetic AR(1) latent, e.g. `seed=1,c=4,h=32,w=32,rho=0.9,sigma=10:20`.
    #[arg(long, conflicts_with_all = ["input", "synthetic_image"])]
    synthetic: Option<String>,
    /// Synthetic image, e.g. `seed=1,w=64,h=64,c=1,rho=0.95,contrast=40`.
    #[arg(long, conflicts_with = "input")]
    synthetic_image: Option<String>,
    /// Number of synthetic assets, seeded consecutively.
    #[arg(long, default_value_t = 1)]
    count: u64,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Encode one asset into a progressive stream.
    Encode {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        output: PathBuf,
    },
    /// Decode a stream, optionally within a budget.
    Decode {
        #[arg(long)]
        input: PathBuf,
        /// `full`, a byte count, or `l<level>`.
        #[arg(long, default_value = "full")]
        budget: String,
        /// Reconstructed image (PNM) or latent (binary) destination.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Reference image file, or a synthetic spec prefixed with `latent:` or `image:`.
        #[arg(long)]
        reference: Option<String>,
    },
    /// Cut a stream to a budget without decoding it.
    Truncate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        budget: String,
        #[arg(long)]
        output: PathBuf,
    },
    /// Train the three CRR router slots.
    TrainCrr {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Train the three CDR router slots.
    TrainCdr {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Refit the synthesis matrix on image assets.
    RefitDecoder {
        #[command(flatten)]
        source: Source,
        #[arg(long, default_value_t = DEFAULT_RIDGE)]
        ridge: f64,
    },
    /// Rate-distortion sweep of one asset written as CSV.
    Sweep {
        #[command(flatten)]
        source: Source,
        /// Number of log-spaced byte budgets.
        #[arg(long, default_value_t = 30)]
        points: usize,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// BD-rates of the toggle grid against the all-off baseline.
    Ablate {
        #[command(flatten)]
        source: Source,
        #[arg(long, default_value_t = 30)]
        points: usize,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run the built-in invariant checks.
    Selftest,
}

/// Failure with its exit status.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::InvalidParameter(_) => 2,
            Error::ModelMismatch(_) => 4,
            _ => 3,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure { code: 3, message: e.to_string() }
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure { code: 2, message: msg.into() }
}

type Run<T = ()> = Result<T, Failure>;

struct Context {
    cfg: CodecConfig,
    toggles: Toggles,
    seed: Option<u64>,
    models_dir: Option<PathBuf>,
}

impl Context {
    fn new(c: &Common) -> Run<Self> {
        let mut cfg = match &c.config {
            Some(p) => CodecConfig::load(p).map_err(|e| match e {
                Error::Io(io) => usage(format!("cannot read config {}: {io}", p.display())),
                other => other.into(),
            })?,
            None => CodecConfig::default(),
        };
        for kv in &c.overrides {
            let (k, v) = kv.split_once('=').ok_or_else(|| usage(format!("--set expects KEY=VALUE, got '{kv}'")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        if c.raster_order {
            cfg.ordering = OrderingMode::Raster;
        }
        cfg.validate()?;
        let toggles = Toggles { crr: !c.no_crr, cdr: !c.no_cdr, refit: !c.no_refit };
        Ok(Context { cfg, toggles, seed: c.seed, models_dir: c.models.clone() })
    }

    fn models(&self) -> Run<Models> {
        match &self.models_dir {
            Some(d) => Ok(Models::load(d)?),
            None => Ok(Models::default()),
        }
    }

    /// Models already present in the output directory, if any.
    fn existing_models(&self) -> Run<(PathBuf, Models)> {
        let dir = self.models_dir.clone().ok_or_else(|| usage("--models DIR is required"))?;
        let m = if dir.is_dir() { Models::load(&dir)? } else { Models::default() };
        Ok((dir, m))
    }

    fn encoder_crr(&self, models: &Models) -> CrrRouter {
        if self.toggles.crr {
            models.crr.clone()
        } else {
            CrrRouter::default()
        }
    }

    fn config_for(&self, assets: &[Asset]) -> CodecConfig {
        let mut cfg = self.cfg.clone();
        if let Some(a) = assets.first() {
            cfg.source = match a {
                Asset::Latent { .. } => SourceMode::Latent,
                Asset::Image(_) => SourceMode::Image,
            };
        }
        cfg
    }
}

fn parse_image_spec(text: &str) -> Run<(u64, usize, usize, usize, f64, f64)> {
    let (mut seed, mut w, mut h, mut c, mut rho, mut contrast) = (1u64, 64usize, 64usize, 1usize, 0.95, 40.0);
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = part.split_once('=').ok_or_else(|| usage(format!("expected key=value in '{part}'")))?;
        let bad = || usage(format!("bad value '{v}' for {k}"));
        match k {
            "seed" => seed = v.parse().map_err(|_| bad())?,
            "w" => w = v.parse().map_err(|_| bad())?,
            "h" => h = v.parse().map_err(|_| bad())?,
            "c" => c = v.parse().map_err(|_| bad())?,
            "rho" => rho = v.parse().map_err(|_| bad())?,
            "contrast" => contrast = v.parse().map_err(|_| bad())?,
            _ => return Err(usage(format!("unknown synthetic image key '{k}'"))),
        }
    }
    Ok((seed, w, h, c, rho, contrast))
}

fn synthetic_latents(spec: &str, seed: Option<u64>, count: u64) -> Run<Vec<Asset>> {
    let mut s = SyntheticSpec::parse(spec)?;
    if let Some(seed) = seed {
        s.seed = seed;
    }
    (0..count)
        .map(|k| {
            let (y, field) = generate_latents(&s.with_seed(s.seed.wrapping_add(k)))?;
            Ok(Asset::Latent { y, field })
        })
        .collect()
}

fn synthetic_images(spec: &str, seed: Option<u64>, count: u64) -> Run<Vec<Asset>> {
    let (s, w, h, c, rho, contrast) = parse_image_spec(spec)?;
    let s = seed.unwrap_or(s);
    (0..count)
        .map(|k| Ok(Asset::Image(generate_image(s.wrapping_add(k), w, h, c, rho, contrast).map_err(|e| usage(e.to_string()))?)))
        .collect()
}

fn load_assets(src: &Source, seed: Option<u64>) -> Run<Vec<Asset>> {
    if src.count == 0 {
        return Err(usage("--count must be positive"));
    }
    if let Some(spec) = &src.synthetic {
        return synthetic_latents(spec, seed, src.count);
    }
    if let Some(spec) = &src.synthetic_image {
        return synthetic_images(spec, seed, src.count);
    }
    if src.input.is_empty() {
        return Err(usage("one of --input, --synthetic or --synthetic-image is required"));
    }
    src.input.iter().map(|p| Ok(Asset::Image(Image::read_pnm(p)?))).collect()
}

fn single_asset(src: &Source, seed: Option<u64>) -> Run<Asset> {
    let mut assets = load_assets(src, seed)?;
    if assets.len() != 1 {
        return Err(usage("this command takes exactly one asset"));
    }
    Ok(assets.remove(0))
}

fn read_file(path: &Path) -> Run<Vec<u8>> {
    std::fs::read(path).map_err(|e| Failure { code: 3, message: format!("{}: {e}", path.display()) })
}

fn parse_budget(s: &str) -> Run<Budget> {
    s.parse::<Budget>().map_err(|e| usage(e.to_string()))
}

fn summary(pairs: &[(&str, String)]) {
    let line = pairs.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" ");
    println!("{line}");
}

fn fmt_db(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.6}")
    } else {
        "inf".into()
    }
}

fn write_latent(path: &Path, y: &Latent) -> Run {
    let d = y.dims();
    let mut out = Vec::with_capacity(16 + 8 * y.len());
    out.extend_from_slice(b"CTCY");
    for v in [d.channels, d.height, d.width] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for v in y.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Quality of a reconstruction against a reference given on the command line.
fn reference_psnr(reference: &str, latent: &Latent, image: Option<&Image>) -> Run<f64> {
    if let Some(spec) = reference.strip_prefix("latent:") {
        let (y, _) = generate_latents(&SyntheticSpec::parse(spec)?)?;
        return Ok(psnr_from_mse(y.mse(latent)?));
    }
    let orig = match reference.strip_prefix("image:") {
        Some(spec) => {
            let (s, w, h, c, rho, contrast) = parse_image_spec(spec)?;
            generate_image(s, w, h, c, rho, contrast)?
        }
        None => Image::read_pnm(Path::new(reference))?,
    };
    let img = image.ok_or_else(|| Failure { code: 3, message: "stream holds a latent, not an image".into() })?;
    Ok(psnr(img, &orig)?)
}

fn cmd_encode(ctx: &Context, source: &Source, output: &Path) -> Run {
    let asset = single_asset(source, ctx.seed)?;
    let cfg = ctx.config_for(std::slice::from_ref(&asset));
    let models = ctx.models()?;
    let enc = encode(&asset, &cfg, &ctx.encoder_crr(&models))?;
    std::fs::write(output, &enc.bytes)?;
    let pixels = asset.pixels();
    let quality = match &asset {
        Asset::Latent { .. } => latent_psnr(&enc.target, &enc.quantized_latent())?,
        Asset::Image(_) => f64::NAN,
    };
    let mut pairs = vec![
        ("cmd", "encode".to_string()),
        ("bytes", enc.bytes.len().to_string()),
        ("header_bytes", enc.header_len.to_string()),
        ("bpp", format!("{:.6}", 8.0 * enc.bytes.len() as f64 / pixels as f64)),
        ("depth", enc.depth.to_string()),
        ("chunks", Container::parse(&enc.bytes)?.chunks.len().to_string()),
        ("clamped", enc.clamped.to_string()),
    ];
    if quality.is_finite() || quality == f64::INFINITY {
        pairs.push(("psnr_full", fmt_db(quality)));
    }
    summary(&pairs);
    Ok(())
}

fn cmd_decode(ctx: &Context, input: &Path, budget: &str, output: Option<&Path>, reference: Option<&str>) -> Run {
    let budget = parse_budget(budget)?;
    let bytes = read_file(input)?;
    let models = ctx.models()?;
    let d = decode_at(&bytes, budget, &models, ctx.toggles)?;
    let header = Container::parse(&bytes)?.header;
    let pixels = match &d.image {
        Some(img) => img.pixels(),
        None => header.dims.plane(),
    };
    if let Some(out) = output {
        match &d.image {
            Some(img) => img.write_pnm(out)?,
            None => write_latent(out, &d.latent)?,
        }
    }
    let mut pairs = vec![
        ("cmd", "decode".to_string()),
        ("bytes", d.bytes_used.to_string()),
        ("bpp", format!("{:.6}", 8.0 * d.bytes_used as f64 / pixels as f64)),
        ("level", format!("{:.6}", d.level)),
    ];
    if let Some(r) = reference {
        pairs.push(("psnr", fmt_db(reference_psnr(r, &d.latent, d.image.as_ref())?)));
    }
    summary(&pairs);
    Ok(())
}

fn cmd_truncate(input: &Path, budget: &str, output: &Path) -> Run {
    let budget = parse_budget(budget)?;
    let bytes = read_file(input)?;
    let c = Container::parse(&bytes)?;
    let k = chunks_for_budget(&c, budget);
    let offsets = c.offsets();
    let end = c.header_len() + if k == 0 { 0 } else { offsets[k - 1] + c.chunks[k - 1].bytes as usize };
    std::fs::write(output, &bytes[..end])?;
    summary(&[
        ("cmd", "truncate".to_string()),
        ("bytes", end.to_string()),
        ("chunks", k.to_string()),
        ("of", c.chunks.len().to_string()),
    ]);
    Ok(())
}

fn cmd_train_crr(ctx: &Context, source: &Source, epochs: Option<usize>) -> Run {
    let assets = load_assets(source, ctx.seed)?;
    let cfg = ctx.config_for(&assets);
    let (dir, mut models) = ctx.existing_models()?;
    let mut tc = CrrTrainConfig { bounds: cfg.bounds, ..CrrTrainConfig::default() };
    if let Some(e) = epochs {
        tc.epochs = e;
    }
    if let Some(s) = ctx.seed {
        tc.seed = s;
    }
    let (router, report) = train_crr_router(&assets, &cfg, &tc)?;
    models.crr = router;
    models.save(&dir)?;
    let mut pairs = vec![
        ("cmd", "train-crr".to_string()),
        ("depth", report.depth.to_string()),
        ("skipped_assets", report.skipped_assets.to_string()),
    ];
    let mut detail = String::new();
    for (slot, n, r) in &report.slots {
        let _ = write!(
            detail,
            "{}{slot:?}:{n}:{:.4}:{:.4}",
            if detail.is_empty() { "" } else { "," },
            r.heldout_loss,
            r.heldout_raw_cross_entropy
        );
    }
    pairs.push(("slots", detail));
    summary(&pairs);
    Ok(())
}

fn cmd_train_cdr(ctx: &Context, source: &Source, steps: Option<usize>) -> Run {
    let assets = load_assets(source, ctx.seed)?;
    let cfg = ctx.config_for(&assets);
    let (dir, mut models) = ctx.existing_models()?;
    let mut tc = CdrTrainConfig::default();
    if let Some(s) = steps {
        tc.steps = s;
    }
    if let Some(s) = ctx.seed {
        tc.seed = s;
    }
    let crr = ctx.encoder_crr(&models);
    let (router, reports) = train_cdr_router(&assets, &cfg, &crr, &tc)?;
    models.cdr = router;
    models.save(&dir)?;
    let detail: Vec<String> = reports
        .iter()
        .map(|(slot, r)| format!("{slot:?}:{:.4}:{:.4}", r.heldout_refined, r.heldout_unrefined))
        .collect();
    summary(&[("cmd", "train-cdr".to_string()), ("slots", detail.join(","))]);
    Ok(())
}

fn cmd_refit(ctx: &Context, source: &Source, ridge: f64) -> Run {
    let assets = load_assets(source, ctx.seed)?;
    if !matches!(assets.first(), Some(Asset::Image(_))) {
        return Err(usage("refit-decoder needs image assets (--input or --synthetic-image)"));
    }
    let cfg = ctx.config_for(&assets);
    let (dir, mut models) = ctx.existing_models()?;
    let toggles = Toggles { refit: false, ..ctx.toggles };
    let (w, report) = refit_synthesis(&assets, &cfg, &models, toggles, &DEFAULT_LEVEL_WEIGHTS, ridge)?;
    models.synthesis = Some(w);
    models.save(&dir)?;
    summary(&[
        ("cmd", "refit-decoder".to_string()),
        ("ridge", format!("{:e}", report.ridge)),
        ("ridge_fallback", report.ridge_fallback.to_string()),
        ("blocks", report.blocks.to_string()),
    ]);
    Ok(())
}

fn write_or_print(output: Option<&Path>, text: &str) -> Run {
    match output {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_sweep(ctx: &Context, source: &Source, points: usize, output: Option<&Path>) -> Run {
    if points == 0 {
        return Err(usage("--points must be positive"));
    }
    let asset = single_asset(source, ctx.seed)?;
    let cfg = ctx.config_for(std::slice::from_ref(&asset));
    let models = ctx.models()?;
    let enc = encode(&asset, &cfg, &ctx.encoder_crr(&models))?;
    let mut budgets = log_spaced_budgets(enc.header_len, enc.bytes.len(), points);
    budgets.push(Budget::Full);
    let s = run_sweep(&asset, &cfg, &models, ctx.toggles, &budgets)?;
    write_or_print(output, &s.to_csv()?)?;
    let last = s.rows.last().expect("full budget present");
    summary(&[
        ("cmd", "sweep".to_string()),
        ("points", s.rows.len().to_string()),
        ("bytes", s.total_bytes.to_string()),
        ("psnr_full", fmt_db(last.psnr)),
    ]);
    Ok(())
}

fn cmd_ablate(ctx: &Context, source: &Source, points: usize, output: Option<&Path>) -> Run {
    let assets = load_assets(source, ctx.seed)?;
    let cfg = ctx.config_for(&assets);
    let models = ctx.models()?;
    let image = cfg.source == SourceMode::Image;
    let table = ablation(&assets, &cfg, &models, &ablation_methods(image), points)?;
    if let Some(p) = output {
        std::fs::write(p, table.to_csv())?;
    }
    print!("{}", table.to_text());
    let pairs: Vec<(&str, String)> = std::iter::once(("cmd", "ablate".to_string()))
        .chain(table.rows.iter().map(|r| (r.method.name, format!("{:.4}", r.bd_rate))))
        .collect();
    summary(&pairs);
    Ok(())
}

fn cmd_selftest() -> Run {
    let checks = selftest::run();
    for c in &checks {
        println!("{} {}", if c.passed { "ok  " } else { "FAIL" }, c.name);
    }
    let passed = checks.iter().filter(|c| c.passed).count();
    summary(&[("cmd", "selftest".to_string()), ("passed", passed.to_string()), ("total", checks.len().to_string())]);
    if passed == checks.len() {
        Ok(())
    } else {
        Err(Failure { code: 3, message: format!("{} self-checks failed", checks.len() - passed) })
    }
}

fn configure_threads() -> Run {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.parse().map_err(|_| usage(format!("{THREADS_ENV} must be a positive integer, got '{v}'")))?;
        if n == 0 {
            return Err(usage(format!("{THREADS_ENV} must be positive")));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure { code: 3, message: e.to_string() })?;
    }
    Ok(())
}

fn run(cli: Cli) -> Run {
    configure_threads()?;
    let ctx = Context::new(&cli.common)?;
    match &cli.command {
        Command::Encode { source, output } => cmd_encode(&ctx, source, output),
        Command::Decode { input, budget, output, reference } => {
            cmd_decode(&ctx, input, budget, output.as_deref(), reference.as_deref())
        }
        Command::Truncate { input, budget, output } => cmd_truncate(input, budget, output),
        Command::TrainCrr { source, epochs } => cmd_train_crr(&ctx, source, *epochs),
        Command::TrainCdr { source, steps } => cmd_train_cdr(&ctx, source, *steps),
        Command::RefitDecoder { source, ridge } => cmd_refit(&ctx, source, *ridge),
        Command::Sweep { source, points, output } => cmd_sweep(&ctx, source, *points, output.as_deref()),
        Command::Ablate { source, points, output } => cmd_ablate(&ctx, source, *points, output.as_deref()),
        Command::Selftest => cmd_selftest(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message.lines().next().unwrap_or(""));
            ExitCode::from(f.code)
        }
    }
}
