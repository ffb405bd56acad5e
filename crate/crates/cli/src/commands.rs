use std::collections::HashSet;
use std::ffi::OsString;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use vdea::data::io::{load_dataset, load_matrices, save_dataset, save_matrices};
use vdea::data::{
    build_pocdr_dataset, generate_synthetic, ingest_and_preprocess, PocdrDataset, PreprocessConfig,
    SplitKind, SyntheticConfig,
};
use vdea::eval::{
    evaluate_topk, export_embeddings, run_ablation, sweep_cells, write_ablation_csv,
    AblationOptions, AblationRow,
};
use vdea::trainer::{checkpoint_load, checkpoint_save};

use crate::args::{
    AblateArgs, BuildArgs, Command, ConfigArgs, EvalArgs, ExportArgs, IngestArgs, ProtocolArgs,
    SynthArgs, TrainArgs,
};
use crate::config::RunConfig;
use crate::failure::Failure;
use crate::manifest::Manifest;

const MANIFEST: &str = "manifest.json";

pub fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Ingest(a) => ingest(a),
        Command::Synth(a) => synth(a),
        Command::Build(a) => build(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate(a),
        Command::ExportEmbeddings(a) => export(a),
    }
}

fn require_exists(path: &Path, flag: &str) -> Result<(), Failure> {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::usage(format!(
            "{flag} {} does not exist",
            path.display()
        )))
    }
}

fn ingest(a: IngestArgs) -> Result<(), Failure> {
    require_exists(&a.source, "--source")?;
    require_exists(&a.target, "--target")?;
    let config = PreprocessConfig {
        positive_threshold: a.min_rating,
        min_interactions: a.min_interactions,
    };
    let manifest = Manifest::new("ingest", config)?
        .input(&a.source)?
        .input(&a.target)?;
    let (source, target) =
        ingest_and_preprocess(File::open(&a.source)?, File::open(&a.target)?, config)?;
    save_matrices(&a.out, &source, &target)?;
    manifest.write(&a.out.join(MANIFEST))?;
    info!(
        "source {} users x {} items ({} positives), target {} x {} ({})",
        source.n_users(),
        source.n_items(),
        source.nnz(),
        target.n_users(),
        target.n_items(),
        target.nnz()
    );
    Ok(())
}

fn synth(a: SynthArgs) -> Result<(), Failure> {
    let mut c = SyntheticConfig::default();
    c.clusters = a.clusters.unwrap_or(c.clusters);
    c.users = a.users.unwrap_or(c.users);
    if let Some(items) = a.items {
        c.source_items = items;
        c.target_items = items;
    }
    c.target_items = a.target_items.unwrap_or(c.target_items);
    c.overlap_ratio = a.ku.unwrap_or(c.overlap_ratio);
    c.seed = a.seed.unwrap_or(c.seed);
    c.noise = a.noise.unwrap_or(c.noise);
    c.source_density = a.source_density.unwrap_or(c.source_density);
    c.target_density = a.target_density.unwrap_or(c.target_density);
    let dataset = generate_synthetic(&c)?;
    save_dataset(&a.out, &dataset)?;
    Manifest::new("synth", &c)?
        .seed("data", c.seed)
        .write(&a.out.join(MANIFEST))?;
    info!(
        "{} users, {} + {} items, {} revealed overlapped users",
        c.users,
        c.source_items,
        c.target_items,
        dataset.overlap.len()
    );
    Ok(())
}

fn build(a: BuildArgs) -> Result<(), Failure> {
    require_exists(&a.source_data, "--source-data")?;
    let config = serde_json::json!({ "ku": a.ku, "seed": a.seed });
    let manifest = Manifest::new("build", config)?
        .seed("data", a.seed)
        .input(&a.source_data)?;
    let (source, target) = load_matrices(&a.source_data)?;
    let dataset = build_pocdr_dataset(source, target, a.ku, a.seed)?;
    save_dataset(&a.out, &dataset)?;
    manifest.write(&a.out.join(MANIFEST))?;
    info!("{} revealed overlapped users", dataset.overlap.len());
    Ok(())
}

/// A run configuration after flags, file and defaults.
struct Resolved {
    config: RunConfig,
    overrides: Vec<&'static str>,
    config_file: Option<PathBuf>,
    data: PathBuf,
    out: PathBuf,
}

impl Resolved {
    fn new(
        common: &ConfigArgs,
        extra: impl FnOnce(&mut RunConfig, &mut Vec<&'static str>),
    ) -> Result<Self, Failure> {
        if let Some(p) = &common.config {
            require_exists(p, "--config")?;
        }
        let mut config = RunConfig::load(common.config.as_deref())?;
        let mut overrides = Vec::new();
        if let Some(d) = &common.data {
            config.data = Some(d.clone());
            overrides.push("data");
        }
        if let Some(o) = &common.out {
            config.out = Some(o.clone());
            overrides.push("out");
        }
        for (key, flag, slot) in [
            ("data_seed", common.data_seed, &mut config.data_seed),
            ("model_seed", common.model_seed, &mut config.model_seed),
            ("noise_seed", common.noise_seed, &mut config.noise_seed),
        ] {
            if let Some(v) = flag {
                *slot = v;
                overrides.push(key);
            }
        }
        extra(&mut config, &mut overrides);
        let data = config.data.clone().ok_or_else(|| {
            Failure::usage("--data is required (as a flag or the \"data\" key of --config)")
        })?;
        let out = config.out.clone().ok_or_else(|| {
            Failure::usage("--out is required (as a flag or the \"out\" key of --config)")
        })?;
        require_exists(&data, "--data")?;
        config.validate()?;
        Ok(Resolved {
            config,
            overrides,
            config_file: common.config.clone(),
            data,
            out,
        })
    }

    /// Writes `manifest.json` and `config.json` into the output directory.
    fn record(
        &self,
        command: &'static str,
        dataset: &PocdrDataset,
        extra: &[&Path],
    ) -> Result<(), Failure> {
        fs::create_dir_all(&self.out)?;
        let c = &self.config;
        let mut m = Manifest::new(command, c)?
            .overrides(self.overrides.clone())
            .seed("dataset", dataset.seed)
            .seed("data", c.data_seed)
            .seed("model", c.model_seed)
            .seed("noise", c.noise_seed)
            .seed("protocol", c.protocol_seed)
            .input(&self.data)?;
        for p in self
            .config_file
            .iter()
            .map(PathBuf::as_path)
            .chain(extra.iter().copied())
        {
            m = m.input(p)?;
        }
        m.write(&self.out.join(MANIFEST))?;
        let mut text = serde_json::to_string_pretty(c)?;
        text.push('\n');
        fs::write(self.out.join("config.json"), text)?;
        Ok(())
    }
}

fn apply_protocol(p: &ProtocolArgs, c: &mut RunConfig, o: &mut Vec<&'static str>) {
    if let Some(k) = p.k {
        c.k = k;
        o.push("k");
    }
    if let Some(n) = p.negatives {
        c.negatives = n;
        o.push("negatives");
    }
    if let Some(s) = p.protocol_seed {
        c.protocol_seed = s;
        o.push("protocol_seed");
    }
    if p.full_catalog {
        c.full_catalog = true;
        o.push("full_catalog");
    }
}

fn train(a: TrainArgs) -> Result<(), Failure> {
    let r = Resolved::new(&a.common, |c, o| {
        if let Some(v) = a.variant {
            c.variant = v;
            o.push("variant");
        }
        if let Some(e) = a.epochs {
            c.epochs = e;
            o.push("epochs");
        }
    })?;
    let dataset = load_dataset(&r.data)?;
    r.record("train", &dataset, &[])?;
    let (model, log) = vdea::trainer::train(&r.config.train_config(), &dataset)?;
    checkpoint_save(&model, &r.out.join("model.ckpt"))?;
    log.write_csv(BufWriter::new(File::create(r.out.join("train_log.csv"))?))?;
    if let Some(best) = log.best() {
        info!(
            "best epoch {}: validation HR@5 {:.4} / {:.4}",
            best.epoch, best.hr5_src, best.hr5_tgt
        );
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<(), Failure> {
    require_exists(&a.checkpoint, "--checkpoint")?;
    let r = Resolved::new(&a.common, |c, o| apply_protocol(&a.protocol, c, o))?;
    let dataset = load_dataset(&r.data)?;
    r.record("eval", &dataset, &[&a.checkpoint])?;
    let model = checkpoint_load(&a.checkpoint)?;
    let report = evaluate_topk(&model, &dataset, a.split.into(), &r.config.protocol())?;
    report.write_csv(BufWriter::new(File::create(r.out.join("metrics.csv"))?))?;
    for m in [&report.source, &report.target] {
        info!(
            "{}: HR@{k} {:.4}, NDCG@{k} {:.4} over {} pairs",
            m.domain.as_str(),
            m.hr,
            m.ndcg,
            m.pairs,
            k = report.protocol.k
        );
    }
    Ok(())
}

fn ablate(a: AblateArgs) -> Result<(), Failure> {
    let r = Resolved::new(&a.common, |c, o| apply_protocol(&a.protocol, c, o))?;
    let mut seen = HashSet::new();
    if let Some(dup) = a.values.iter().find(|v| !seen.insert(v.trim())) {
        return Err(Failure::usage(format!("--values lists {dup:?} twice")));
    }
    let dataset = load_dataset(&r.data)?;
    r.record("ablate", &dataset, &[])?;
    let cells = sweep_cells(
        &r.config.train_config(),
        dataset.overlap.ratio(),
        a.sweep,
        &a.values,
    )?;
    let options = AblationOptions {
        protocol: r.config.protocol(),
        split: SplitKind::from(a.split),
        cache_dir: Some(r.out.join("cache")),
        discrepancy_seed: r.config.model_seed,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs as usize)
        .build()
        .map_err(|e| Failure::usage(format!("cannot start {} workers: {e}", a.jobs)))?;
    // Each cell owns its seeds and cache entry; rows come back in cell order.
    let rows: Vec<AblationRow> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| {
                run_ablation(&dataset, std::slice::from_ref(cell), &options)
                    .map(|mut v| v.remove(0))
            })
            .collect::<vdea::Result<_>>()
    })?;
    write_ablation_csv(
        &rows,
        BufWriter::new(File::create(r.out.join("ablation.csv"))?),
    )?;
    let failed = rows.iter().filter(|r| r.outcome.is_err()).count();
    if failed > 0 {
        warn!(
            "{failed} of {} cells failed; see the error column of ablation.csv",
            rows.len()
        );
    }
    Ok(())
}

fn export(a: ExportArgs) -> Result<(), Failure> {
    require_exists(&a.data, "--data")?;
    require_exists(&a.checkpoint, "--checkpoint")?;
    let dataset = load_dataset(&a.data)?;
    let config = serde_json::json!({ "data": a.data, "checkpoint": a.checkpoint, "out": a.out });
    let manifest = Manifest::new("export-embeddings", config)?
        .seed("dataset", dataset.seed)
        .input(&a.data)?
        .input(&a.checkpoint)?;
    let model = checkpoint_load(&a.checkpoint)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    export_embeddings(&model, &dataset, &a.out)?;
    let mut path = OsString::from(a.out.as_os_str());
    path.push(".manifest.json");
    manifest.write(Path::new(&path))?;
    Ok(())
}
