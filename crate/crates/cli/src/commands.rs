use std::fs;
use std::path::{Path, PathBuf};

use deepfeat::data::{load_dataset, save_dataset, synth_generate, Dataset, SynthSpec};
use deepfeat::learned::{GlobalBranch, GlobalBranchConfig, LocalBranch, LocalBranchConfig};
use deepfeat::llm::{BpeVocab, FeatureCache, Gpt2Config, Gpt2Weights};
use deepfeat::nn::ParamStore;
use deepfeat::rng::{stream, Stream};
use deepfeat::rocket::KernelBank;
use deepfeat::train::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
use deepfeat::train::{
    evaluate, run_ablation, train, write_history, AblationMode, AblationResult, EvalReport, FeatureSources,
    FeatureTable, LlmResources, Metric,
};
use deepfeat::{Error, Tensor};
use serde::Serialize;

use crate::config::{parse_mode, Resolved};
use crate::{AblateArgs, Branch, Command, EvalArgs, EvalSplit, ExtractArgs, InitWeightsArgs, ReportArgs, SynthArgs, TrainArgs};

pub const CACHE_ENV: &str = "DEEPFEAT_CACHE_DIR";

#[derive(Debug)]
pub enum Failure {
    /// Bad flags, config or input data: exit code 2.
    Usage(String),
    /// Anything else: exit code 1.
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_validation() {
            Failure::Usage(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

type Outcome = Result<(), Failure>;

pub fn run(cmd: Command) -> Outcome {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::Extract(a) => extract(a),
        Command::InitWeights(a) => init_weights(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate(a),
        Command::Report(a) => report(a),
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

fn print_json(value: &impl Serialize) -> Outcome {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Runtime(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Outcome {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Runtime(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| io_failure(path, e))
}

fn synth(a: SynthArgs) -> Outcome {
    let spec = match &a.spec {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?;
            serde_json::from_str::<SynthSpec>(&text).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?
        }
        None => SynthSpec::default(),
    };
    let ds = synth_generate(&spec, a.seed)?;
    save_dataset(&ds, &a.out)?;
    print_json(&ds.describe())
}

fn cache() -> FeatureCache {
    let dir = std::env::var_os(CACHE_ENV).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("deepfeat-cache"));
    FeatureCache::new(dir)
}

fn llm_resources(weights: Option<&Path>, cfg: deepfeat::llm::LlmBranchConfig) -> Result<LlmResources, Failure> {
    let path = weights.ok_or_else(|| Failure::Usage("the language-model branch needs --weights".into()))?;
    if !path.is_file() {
        return Err(Failure::Usage(format!("weights file {} does not exist", path.display())));
    }
    let w = Gpt2Weights::<f32>::load(path)?;
    Ok(LlmResources::new(BpeVocab::gpt2()?, w, cfg)?.with_cache(cache()))
}

fn write_matrix(path: &Path, ds: &Dataset, rows: &[Tensor<f32>]) -> Outcome {
    let width = rows.first().map_or(0, |r| r.len());
    let mut text = String::from("id,label");
    for i in 0..width {
        text.push_str(&format!(",f{i}"));
    }
    text.push('\n');
    for (s, r) in ds.samples.iter().zip(rows) {
        text.push_str(&format!("{},{}", s.id, ds.classes[s.label]));
        for v in r.data() {
            text.push_str(&format!(",{v:?}"));
        }
        text.push('\n');
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_failure(parent, e))?;
    }
    fs::write(path, text).map_err(|e| io_failure(path, e))
}

fn extract(a: ExtractArgs) -> Outcome {
    if a.branch == Branch::Pf && a.weights.is_none() {
        return Err(Failure::Usage("--branch pf needs --weights".into()));
    }
    if a.kernels == Some(0) {
        return Err(Failure::Usage("kernel count must be positive".into()));
    }
    let ds = load_dataset(&a.dataset)?;
    let series: Vec<Vec<f32>> = ds.samples.iter().map(|s| s.values.iter().map(|&v| v as f32).collect()).collect();
    let rows: Vec<Tensor<f32>> = match a.branch {
        Branch::Rf => {
            let bank = KernelBank::with_size(
                a.rocket_seed.unwrap_or(deepfeat::rocket::DEFAULT_SEED),
                a.kernels.unwrap_or(deepfeat::rocket::NUM_KERNELS),
            );
            bank.extract_all(&series)?
        }
        Branch::Pf => llm_resources(a.weights.as_deref(), Default::default())?.features(&ds)?,
        Branch::Global | Branch::Local => learned_rows(&a, &series)?,
    };
    write_matrix(&a.out, &ds, &rows)?;
    log::info!("wrote {} × {} features to {}", rows.len(), rows.first().map_or(0, |r| r.len()), a.out.display());
    Ok(())
}

fn learned_rows(a: &ExtractArgs, series: &[Vec<f32>]) -> Result<Vec<Tensor<f32>>, Failure> {
    let (store, global, local) = match &a.checkpoint {
        Some(dir) => {
            let (model, _) = load_checkpoint::<f32>(dir)?;
            if !model.config.mode.uses_learned() {
                return Err(Failure::Usage(format!("checkpoint mode `{}` has no learned branches", model.config.mode)));
            }
            (model.store, model.global, model.local)
        }
        None => {
            let mut store = ParamStore::new();
            let mut rng = stream(a.seed, Stream::Init);
            let g = GlobalBranch::new(&mut store, GlobalBranchConfig::default(), &mut rng)?;
            let l = LocalBranch::new(&mut store, LocalBranchConfig::default(), &mut rng)?;
            (store, Some(g), Some(l))
        }
    };
    let rows = match (a.branch, global, local) {
        (Branch::Global, Some(g), _) => series.iter().map(|s| g.features(&store, s)).collect::<deepfeat::Result<Vec<_>>>()?,
        (Branch::Local, _, Some(l)) => series.iter().map(|s| l.features(&store, s)).collect::<deepfeat::Result<Vec<_>>>()?,
        _ => return Err(Failure::Runtime("learned branch missing from model".into())),
    };
    Ok(rows)
}

fn init_weights(a: InitWeightsArgs) -> Outcome {
    let cfg = Gpt2Config { n_layer: a.layers, n_head: a.heads, n_embd: a.heads * 64, n_ctx: a.context, ..Gpt2Config::small() };
    let w = Gpt2Weights::<f32>::random(cfg, a.seed)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_failure(parent, e))?;
    }
    w.to_archive()?.write(&a.out)?;
    #[derive(Serialize)]
    struct Written<'a> {
        path: &'a Path,
        config: Gpt2Config,
        fingerprint: String,
    }
    print_json(&Written { path: &a.out, config: cfg, fingerprint: w.fingerprint() })
}

struct Prepared {
    dataset: Dataset,
    table: FeatureTable<f32>,
    llm_fingerprint: Option<String>,
}

fn prepare(r: &Resolved, modes: &[AblationMode]) -> Result<Prepared, Failure> {
    let dataset = load_dataset(&r.dataset)?;
    let needs_llm = modes.iter().any(|m| m.uses_llm());
    let needs_rocket = modes.iter().any(|m| m.uses_rocket());
    let llm = if needs_llm { Some(llm_resources(r.weights.as_deref(), r.llm.clone())?) } else { None };
    let bank = needs_rocket.then(|| KernelBank::with_size(r.rocket_seed, r.rocket_kernels));
    let table = FeatureTable::build(&dataset, modes, FeatureSources { rocket: bank.as_ref(), llm: llm.as_ref() })?;
    Ok(Prepared { dataset, table, llm_fingerprint: llm.map(|l| l.weights.fingerprint()) })
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    mode: AblationMode,
    selected_epoch: usize,
    accuracy: f64,
    macro_f1: f64,
    test: &'a EvalReport,
    val: Option<&'a EvalReport>,
}

fn train_cmd(a: TrainArgs) -> Outcome {
    let mut r = Resolved::from_flags(&a.flags)?;
    if let Some(m) = &a.mode {
        r.train.mode = parse_mode(m)?;
    }
    r.train.validate()?;
    let p = prepare(&r, &[r.train.mode])?;
    let split = r.train.split(&p.dataset.labels(), p.dataset.num_classes())?;
    let out = train(&r.train, &p.table, &split)?;
    let meta = CheckpointMeta {
        model: out.model.config.clone(),
        train: r.train.clone(),
        classes: p.dataset.classes.clone(),
        dataset_name: p.dataset.name.clone(),
        dataset_hash: p.dataset.content_hash(),
        rocket_seed: r.rocket_seed,
        rocket_kernels: r.rocket_kernels,
        llm: r.train.mode.uses_llm().then(|| r.llm.clone()),
        llm_fingerprint: p.llm_fingerprint.clone(),
        selected_epoch: out.selected_epoch,
    };
    save_checkpoint(&r.out, &out.model, &meta)?;
    write_history(r.out.join("history.csv"), &out.history)?;
    let summary = TrainSummary {
        mode: r.train.mode,
        selected_epoch: out.selected_epoch,
        accuracy: out.test_report.accuracy,
        macro_f1: out.test_report.macro_f1,
        test: &out.test_report,
        val: out.val_report.as_ref(),
    };
    write_json(&r.out.join("report.json"), &summary)?;
    print_json(&summary)
}

fn eval(a: EvalArgs) -> Outcome {
    if !a.checkpoint.join(deepfeat::train::checkpoint::META_FILE).is_file() {
        return Err(Failure::Usage(format!("{} is not a checkpoint directory", a.checkpoint.display())));
    }
    let (model, meta) = load_checkpoint::<f32>(&a.checkpoint)?;
    let dataset = load_dataset(&a.dataset)?;
    if dataset.classes != meta.classes {
        return Err(Failure::Usage(format!(
            "dataset classes {:?} differ from the checkpoint's {:?}",
            dataset.classes, meta.classes
        )));
    }
    let mode = model.config.mode;
    let llm = if mode.uses_llm() {
        let res = llm_resources(a.weights.as_deref(), meta.llm.clone().unwrap_or_default())?;
        if meta.llm_fingerprint.as_deref().is_some_and(|f| f != res.weights.fingerprint()) {
            return Err(Failure::Usage("--weights differ from the ones the checkpoint was trained with".into()));
        }
        Some(res)
    } else {
        None
    };
    let bank = mode.uses_rocket().then(|| KernelBank::with_size(meta.rocket_seed, meta.rocket_kernels));
    let table = FeatureTable::build(&dataset, &[mode], FeatureSources { rocket: bank.as_ref(), llm: llm.as_ref() })?;
    let indices = match a.split {
        EvalSplit::All => (0..dataset.len()).collect(),
        EvalSplit::Test => meta.train.split(&dataset.labels(), dataset.num_classes())?.test,
    };
    let report = evaluate(&model, &table, &indices)?;
    if let Some(path) = &a.out {
        write_json(path, &report)?;
    }
    print_json(&report)
}

fn ablate(a: AblateArgs) -> Outcome {
    let mut r = Resolved::from_flags(&a.flags)?;
    if let Some(modes) = &a.modes {
        r.modes = modes.iter().map(|m| parse_mode(m)).collect::<Result<_, _>>()?;
    }
    if let Some(n) = a.runs {
        r.runs = n;
    }
    if let Some(n) = a.jobs {
        r.jobs = n;
    }
    let cfg = r.ablation();
    cfg.validate()?;
    let p = prepare(&r, &cfg.modes)?;
    let split = r.train.split(&p.dataset.labels(), p.dataset.num_classes())?;
    let result = run_ablation(&cfg, &p.dataset.name, &p.table, &split)?;
    result.write_report(&r.out)?;
    print_json(&result.summary())
}

fn report(a: ReportArgs) -> Outcome {
    let mut all = AblationResult::default();
    for p in &a.runs {
        all.runs.extend(AblationResult::read_runs(p)?.runs);
    }
    if all.runs.is_empty() {
        return Err(Failure::Usage("run files contain no runs".into()));
    }
    all.write_report(&a.out)?;
    for row in all.table(Metric::Accuracy) {
        println!("{}", row.join(","));
    }
    Ok(())
}
