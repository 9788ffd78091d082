use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::net::{IpAddr, SocketAddr};
use std::path::Path;

use serde::Serialize;
use weaklab::ablation::{
    load_toxicity_files, run_sweep, run_sweep_on_matrix, synthetic_gold_dataset, synthetic_pool, AblationGrid,
    PoolConfig, SweepConfig,
};
use weaklab::active::{conflict_score_with, eligible_pool, retire_lf as retire, select_batch, SelectionConfig};
use weaklab::campaign::{read_rounds, Campaign};
use weaklab::classifier::{
    dataset_features, evaluate as evaluate_model, hyperparameter_search, ClassifierModel, ConfigReport, SearchData,
};
use weaklab::label_model::{apply_generative, fit_generative, lf_learned_accuracy};
use weaklab::rng::derive_seed;
use weaklab::rules::{apply_rule_lfs, read_rules};
use weaklab::stats::{all_lf_stats, fleiss_kappa, mean_pairwise_kappa, pairwise_kappas, render_lf_table, Kappa};
use weaklab::{Dataset, LabelMatrix, LabelModelParams, LabelSpace, LfKind};
use weaklab_service::{Project, ProjectStore};

use crate::config::ProjectConfig;
use crate::{
    AblateArgs, ApplyArgs, EvaluateArgs, Failure, ForceArgs, Format, IngestArgs, KappaArgs, ReplayArgs, RetireArgs,
    SampleArgs, SampleStrategy, ServeArgs, TrainArgs,
};

pub struct Ctx {
    pub config: ProjectConfig,
    pub format: Format,
}

impl Ctx {
    fn space(&self) -> LabelSpace {
        self.config.label_space.clone()
    }

    fn dataset(&self) -> Result<Dataset, Failure> {
        let path = &self.config.paths.dataset;
        require(path, "dataset")?;
        Ok(Dataset::read_jsonl(path, self.space())?)
    }

    fn matrix(&self, dataset: &Dataset) -> Result<LabelMatrix, Failure> {
        let path = &self.config.paths.matrix;
        require(path, "label matrix")?;
        Ok(LabelMatrix::read_jsonl(path, dataset)?)
    }

    fn params(&self) -> Result<LabelModelParams, Failure> {
        let path = &self.config.paths.params;
        require(path, "label model parameters (run fit-label-model)")?;
        Ok(LabelModelParams::read_json(path)?)
    }

    fn records<T: Serialize>(&self, items: impl IntoIterator<Item = T>) -> Result<(), Failure> {
        for item in items {
            println!("{}", serde_json::to_string(&item).map_err(|e| Failure::Data(e.to_string()))?);
        }
        Ok(())
    }
}

fn require(path: &Path, what: &str) -> Result<(), Failure> {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("{what} not found: {}", path.display())))
    }
}

fn refuse_overwrite(path: &Path, force: bool) -> Result<(), Failure> {
    if path.exists() && !force {
        return Err(Failure::Usage(format!(
            "{} already exists; pass --force to overwrite it",
            path.display()
        )));
    }
    Ok(())
}

fn pct(k: &Kappa) -> String {
    if k.degenerate {
        format!("{}*", k.percent())
    } else {
        k.percent()
    }
}

#[derive(Serialize)]
struct IngestSummary {
    examples: usize,
    gold: usize,
    rules: usize,
    lfs: usize,
    votes: usize,
}

pub fn ingest(ctx: &Ctx, args: &IngestArgs) -> Result<(), Failure> {
    let paths = &ctx.config.paths;
    require(&args.examples, "examples file")?;
    let dataset = Dataset::read_jsonl(&args.examples, ctx.space())?;
    let base = match &args.votes {
        Some(v) => {
            require(v, "votes file")?;
            LabelMatrix::read_jsonl(v, &dataset)?
        }
        None if paths.matrix.exists() => LabelMatrix::read_jsonl(&paths.matrix, &dataset)?,
        None => LabelMatrix::for_dataset(&dataset),
    };
    // Rule votes are always recomputed so ingest can run again after editing rules.
    let mut matrix = base.filter_votes(|_, lf| base.lf(lf).kind != LfKind::Rule);
    let rules_path = match &args.rules {
        Some(r) => {
            require(r, "rules file")?;
            Some(r.clone())
        }
        None => paths.rules.exists().then(|| paths.rules.clone()),
    };
    let rules = match rules_path {
        Some(p) => read_rules(p)?,
        None => Vec::new(),
    };
    for rule in &rules {
        matrix.ensure_lf(&rule.lf_id(), LfKind::Rule)?;
    }
    matrix.apply(&apply_rule_lfs(&dataset, &rules)?)?;

    for p in [&paths.dataset, &paths.matrix] {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
    }
    dataset.write_jsonl(&paths.dataset)?;
    matrix.write_jsonl(&paths.matrix, &dataset)?;

    let summary = IngestSummary {
        examples: dataset.len(),
        gold: dataset.gold_indices().count(),
        rules: rules.len(),
        lfs: matrix.active_lfs().filter(|&lf| matrix.lf_vote_count(lf) > 0).count(),
        votes: matrix.num_votes(),
    };
    match ctx.format {
        Format::Records => ctx.records([summary]),
        Format::Table => {
            println!(
                "ingested {} examples ({} with gold), {} rules, {} labeling functions, {} votes",
                summary.examples, summary.gold, summary.rules, summary.lfs, summary.votes
            );
            Ok(())
        }
    }
}

pub fn lf_stats(ctx: &Ctx) -> Result<(), Failure> {
    let dataset = ctx.dataset()?;
    let matrix = ctx.matrix(&dataset)?;
    let stats = all_lf_stats(&matrix, &dataset);
    match ctx.format {
        Format::Records => ctx.records(&stats),
        Format::Table => {
            print!("{}", render_lf_table(&stats));
            Ok(())
        }
    }
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum KappaRecord<'a> {
    Cohen { lf_a: &'a str, lf_b: &'a str, kappa: Kappa },
    MeanCohen { value: f64 },
    Fleiss { lfs: &'a [&'a str], kappa: Kappa },
}

pub fn kappa(ctx: &Ctx, args: &KappaArgs) -> Result<(), Failure> {
    let dataset = ctx.dataset()?;
    let matrix = ctx.matrix(&dataset)?;
    let ids: Vec<String> = if args.lfs.is_empty() {
        matrix
            .active_lfs()
            .map(|lf| matrix.lf(lf))
            .filter(|lf| lf.kind == LfKind::Annotator)
            .map(|lf| lf.id.clone())
            .collect()
    } else {
        args.lfs.clone()
    };
    let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
    if refs.len() < 2 {
        return Err(weaklab::Error::TooFewRaters(refs.len()).into());
    }
    let pairs = pairwise_kappas(&matrix, &refs)?;
    let mean = mean_pairwise_kappa(&pairs);
    let fleiss = match fleiss_kappa(&matrix, &refs) {
        Ok(k) => Some(k),
        Err(weaklab::Error::NoCoLabeled) => None,
        Err(e) => return Err(e.into()),
    };
    match ctx.format {
        Format::Records => {
            let mut out: Vec<KappaRecord> = pairs
                .iter()
                .map(|p| KappaRecord::Cohen {
                    lf_a: &p.lf_a,
                    lf_b: &p.lf_b,
                    kappa: p.kappa,
                })
                .collect();
            out.extend(mean.map(|value| KappaRecord::MeanCohen { value }));
            out.extend(fleiss.map(|kappa| KappaRecord::Fleiss { lfs: &refs, kappa }));
            ctx.records(out)
        }
        Format::Table => {
            let width = refs.iter().map(|r| r.len()).max().unwrap_or(4).max(4);
            println!("{:<width$}  {:<width$}  {:>6}  {:>5}", "LF A", "LF B", "Kappa", "Items");
            for p in &pairs {
                println!("{:<width$}  {:<width$}  {:>6}  {:>5}", p.lf_a, p.lf_b, pct(&p.kappa), p.kappa.items);
            }
            match mean {
                Some(m) => println!("Mean pairwise Cohen's kappa: {}", weaklab::stats::format_kappa_percent(m)),
                None => println!("No pair of LFs labeled a common example."),
            }
            if let Some(k) = fleiss {
                println!("Fleiss' kappa ({} raters, {} items): {}", refs.len(), k.items, pct(&k));
            }
            if pairs.iter().any(|p| p.kappa.degenerate) || fleiss.is_some_and(|k| k.degenerate) {
                println!("* chance agreement is 1 (one class used throughout); reported as 0");
            }
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct LfAccuracy<'a> {
    lf_id: &'a str,
    learned_accuracy: f64,
}

#[derive(Serialize)]
struct FitSummary<'a> {
    iterations: usize,
    converged: bool,
    final_objective: Option<f64>,
    prior: &'a [f64],
    lfs: Vec<LfAccuracy<'a>>,
}

pub fn fit_label_model(ctx: &Ctx, args: &ForceArgs) -> Result<(), Failure> {
    let out = &ctx.config.paths.params;
    refuse_overwrite(out, args.force)?;
    let dataset = ctx.dataset()?;
    let matrix = ctx.matrix(&dataset)?;
    let params = fit_generative(&matrix, &dataset, &ctx.config.label_model)?;
    params.write_json(out)?;
    let summary = FitSummary {
        iterations: params.log_likelihood_trace.len(),
        converged: params.converged,
        final_objective: params.log_likelihood_trace.last().copied(),
        prior: &params.prior,
        lfs: params
            .lf_ids
            .iter()
            .map(|id| Ok(LfAccuracy {
                lf_id: id,
                learned_accuracy: lf_learned_accuracy(&params, id)?,
            }))
            .collect::<weaklab::Result<_>>()?,
    };
    match ctx.format {
        Format::Records => ctx.records([&summary]),
        Format::Table => {
            let state = if summary.converged { "converged" } else { "stopped" };
            println!("EM {state} after {} iterations", summary.iterations);
            let classes = params.label_space.classes();
            let width = summary.lfs.iter().map(|l| l.lf_id.len()).chain(classes.iter().map(String::len)).max().unwrap_or(2).max(5);
            println!("{:<width$}  {:>8}", "Class", "Prior");
            for (c, p) in classes.iter().zip(summary.prior) {
                println!("{c:<width$}  {p:>8.3}");
            }
            println!();
            println!("{:<width$}  {:>8}", "LF", "Accuracy");
            for l in &summary.lfs {
                println!("{:<width$}  {:>8.3}", l.lf_id, l.learned_accuracy);
            }
            println!("wrote {}", out.display());
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct ClassMass<'a> {
    class: &'a str,
    mass: f64,
}

pub fn apply_label_model(ctx: &Ctx, args: &ApplyArgs) -> Result<(), Failure> {
    let params = ctx.params()?;
    let dataset = ctx.dataset()?;
    let matrix = ctx.matrix(&dataset)?;
    let posteriors = apply_generative(&params, &matrix, &dataset)?;
    let out = args.output.as_ref().unwrap_or(&ctx.config.paths.posteriors);
    posteriors.write_jsonl(out)?;
    let distribution = posteriors.class_distribution();
    let rows: Vec<ClassMass> = params
        .label_space
        .classes()
        .iter()
        .zip(&distribution)
        .map(|(c, &mass)| ClassMass { class: c, mass })
        .collect();
    match ctx.format {
        Format::Records => ctx.records(&rows),
        Format::Table => {
            let width = rows.iter().map(|r| r.class.len()).max().unwrap_or(5).max(5);
            println!("{:<width$}  {:>8}", "Class", "Mass");
            for r in &rows {
                println!("{:<width$}  {:>8.3}", r.class, r.mass);
            }
            println!("wrote {} posteriors to {}", posteriors.len(), out.display());
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct SampleRow {
    example_id: String,
    strategy: weaklab::active::Strategy,
    votes: usize,
    conflicts: usize,
}

pub fn sample(ctx: &Ctx, args: &SampleArgs) -> Result<(), Failure> {
    let dataset = ctx.dataset()?;
    let matrix = ctx.matrix(&dataset)?;
    let pool: Vec<String> = match &args.pool {
        Some(p) => {
            require(p, "pool file")?;
            fs::read_to_string(p)?
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect()
        }
        None => eligible_pool(&matrix, &dataset),
    };
    let config = SelectionConfig {
        conflict_weight: match args.strategy {
            SampleStrategy::Auto => ctx.config.active.conflict_weight,
            SampleStrategy::Conflict => 1.0,
            SampleStrategy::LeastLabeled => 0.0,
        },
        kinds: ctx.config.active.score_kinds,
    };
    let batch = select_batch(&pool, &matrix, &dataset, args.batch, args.seed, &config)?;
    let rows: Vec<SampleRow> = batch
        .into_iter()
        .map(|s| {
            let i = dataset.index_of(&s.example_id)?;
            let conflicts = conflict_score_with(&matrix, &dataset, &s.example_id, config.kinds)?.pair_disagreements;
            Ok(SampleRow {
                votes: matrix.vote_count(i),
                conflicts,
                example_id: s.example_id,
                strategy: s.strategy,
            })
        })
        .collect::<weaklab::Result<_>>()?;
    match ctx.format {
        Format::Records => ctx.records(&rows),
        Format::Table => {
            let width = rows.iter().map(|r| r.example_id.len()).max().unwrap_or(7).max(7);
            println!("{:<width$}  {:<13}  {:>5}  {:>9}", "Example", "Strategy", "Votes", "Conflicts");
            for r in &rows {
                let strategy = serde_json::to_value(r.strategy).map_err(|e| Failure::Data(e.to_string()))?;
                println!(
                    "{:<width$}  {:<13}  {:>5}  {:>9}",
                    r.example_id,
                    strategy.as_str().unwrap_or_default(),
                    r.votes,
                    r.conflicts
                );
            }
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct Retired<'a> {
    lf_id: &'a str,
    votes_dropped: usize,
    returned_to_pool: Vec<String>,
}

pub fn retire_lf(ctx: &Ctx, args: &RetireArgs) -> Result<(), Failure> {
    let dataset = ctx.dataset()?;
    let mut matrix = ctx.matrix(&dataset)?;
    let lf = matrix.active_lf_idx(&args.lf_id)?;
    let votes_dropped = matrix.lf_vote_count(lf);
    let mut pool = BTreeSet::new();
    let returned = retire(&mut matrix, &dataset, &args.lf_id, &mut pool)?;
    matrix.write_jsonl(&ctx.config.paths.matrix, &dataset)?;
    let report = Retired {
        lf_id: &args.lf_id,
        votes_dropped,
        returned_to_pool: returned,
    };
    match ctx.format {
        Format::Records => ctx.records([&report]),
        Format::Table => {
            println!(
                "retired {}: dropped {} votes, {} examples lost their last vote",
                report.lf_id,
                report.votes_dropped,
                report.returned_to_pool.len()
            );
            for id in &report.returned_to_pool {
                println!("  {id}");
            }
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct SearchRow<'a> {
    #[serde(flatten)]
    report: &'a ConfigReport,
    selected: bool,
}

pub fn train(ctx: &Ctx, args: &TrainArgs) -> Result<(), Failure> {
    if !(args.validation_fraction > 0.0 && args.validation_fraction < 1.0) {
        return Err(Failure::Usage("--validation-fraction must be in (0, 1)".into()));
    }
    let configs: Vec<_> = ctx
        .config
        .search_grid()?
        .iter()
        .map(|c| weaklab::classifier::TrainConfig { seed: args.seed, ..c.clone() })
        .collect();
    let model_path = ctx.config.paths.model_file();
    refuse_overwrite(&model_path, args.force)?;
    let params = ctx.params()?;
    let dataset = ctx.dataset()?;
    let matrix = ctx.matrix(&dataset)?;
    let posteriors = apply_generative(&params, &matrix, &dataset)?;

    // Only examples with at least one vote carry a label signal.
    let mut covered: Vec<usize> = (0..dataset.len()).filter(|&i| matrix.vote_count(i) > 0).collect();
    covered.sort_by_key(|&i| derive_seed(args.seed, &[i as u64]));
    let n_val = ((covered.len() as f64 * args.validation_fraction).round() as usize).max(1);
    if covered.len() <= n_val {
        return Err(Failure::Data(format!(
            "{} covered examples are too few to split for validation",
            covered.len()
        )));
    }
    let (val, fit) = covered.split_at(n_val);
    let features = dataset_features(&dataset, &ctx.config.features)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| features[i].clone()).collect::<Vec<_>>();
    let train_features = pick(fit);
    let train_targets: Vec<Vec<f64>> = fit.iter().map(|&i| posteriors.probs[i].clone()).collect();
    let validation_features = pick(val);
    let validation_labels: Vec<usize> = val.iter().map(|&i| posteriors.hard_label(i)).collect();
    let outcome = hyperparameter_search(
        &SearchData {
            train_features: &train_features,
            train_targets: &train_targets,
            validation_features: &validation_features,
            validation_labels: &validation_labels,
        },
        &configs,
        &ctx.config.features,
        dataset.label_space(),
    )?;
    fs::create_dir_all(&ctx.config.paths.models)?;
    outcome.model.write_json(&model_path)?;
    let report_path = ctx.config.paths.models.join("search.json");
    let report = serde_json::to_string_pretty(&outcome.reports).map_err(|e| Failure::Data(e.to_string()))?;
    fs::write(&report_path, report + "\n")?;

    let rows: Vec<SearchRow> = outcome
        .reports
        .iter()
        .map(|r| SearchRow {
            report: r,
            selected: r.index == outcome.best_index,
        })
        .collect();
    match ctx.format {
        Format::Records => ctx.records(&rows),
        Format::Table => {
            println!("{:>2}  {:>8}  {:>6}  {:>6}  {:>8}  {:>9}", "#", "L2", "LR", "Epochs", "Val.acc", "Loss");
            for r in &rows {
                let c = &r.report.config;
                let acc = r.report.validation_accuracy.map_or("-".into(), |a| format!("{a:.3}"));
                let loss = r.report.final_loss.map_or("-".into(), |l| format!("{l:.4}"));
                let mark = if r.selected { " *" } else { "" };
                println!(
                    "{:>2}  {:>8.0e}  {:>6}  {:>6}  {:>8}  {:>9}{mark}",
                    r.report.index, c.l2, c.learning_rate, r.report.epochs, acc, loss
                );
                if let Some(e) = &r.report.error {
                    println!("    excluded: {e}");
                }
            }
            println!(
                "trained on {} examples, validated on {}; wrote {}",
                fit.len(),
                val.len(),
                model_path.display()
            );
            Ok(())
        }
    }
}

pub fn evaluate(ctx: &Ctx, args: &EvaluateArgs) -> Result<(), Failure> {
    let model_path = ctx.config.paths.model_file();
    require(&model_path, "classifier model (run train)")?;
    let model = ClassifierModel::read_json(&model_path)?;
    let source = match &args.test {
        Some(p) => {
            require(p, "test file")?;
            Dataset::read_jsonl(p, model.label_space.clone())?
        }
        None => ctx.dataset()?,
    };
    let gold_idx: Vec<usize> = source.gold_indices().collect();
    if gold_idx.is_empty() {
        return Err(weaklab::Error::Empty("gold-labeled test set").into());
    }
    let test = source.select(&gold_idx)?;
    let features = dataset_features(&test, &model.feature_spec)?;
    let gold: Vec<usize> = test.examples().iter().filter_map(|e| e.gold).collect();
    let report = evaluate_model(&model, &features, &gold, args.min_support)?;
    match ctx.format {
        Format::Records => ctx.records([&report]),
        Format::Table => {
            print!("{}", report.render_table(&args.exclude));
            Ok(())
        }
    }
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum AblationRecord {
    Cell {
        n_annotators: usize,
        examples_cap: usize,
        mean_accuracy: f64,
        mean_coverage: f64,
    },
    MinimalCap {
        n_annotators: usize,
        target_accuracy: f64,
        examples_cap: Option<usize>,
    },
}

fn render_grid(grid: &AblationGrid) -> String {
    let mut out = String::new();
    let _ = write!(out, "{:>10}", "annot\\cap");
    for cap in &grid.examples_caps {
        let _ = write!(out, "  {cap:>7}");
    }
    out.push('\n');
    for &n in &grid.annotator_counts {
        let _ = write!(out, "{n:>10}");
        for &cap in &grid.examples_caps {
            let acc = grid.cell(n, cap).map_or("-".into(), |c| format!("{:.3}", c.mean_accuracy));
            let _ = write!(out, "  {acc:>7}");
        }
        out.push('\n');
    }
    out.push('\n');
    let _ = writeln!(out, "Smallest cap reaching each target accuracy:");
    let _ = write!(out, "{:>10}", "annot\\acc");
    let targets: Vec<f64> = grid
        .minimal_caps
        .iter()
        .filter(|m| m.n_annotators == grid.annotator_counts[0])
        .map(|m| m.target_accuracy)
        .collect();
    for t in &targets {
        let _ = write!(out, "  {t:>7}");
    }
    out.push('\n');
    for &n in &grid.annotator_counts {
        let _ = write!(out, "{n:>10}");
        for m in grid.minimal_caps.iter().filter(|m| m.n_annotators == n) {
            let cap = m.examples_cap.map_or("-".into(), |c| c.to_string());
            let _ = write!(out, "  {cap:>7}");
        }
        out.push('\n');
    }
    out
}

pub fn ablate(ctx: &Ctx, args: &AblateArgs) -> Result<(), Failure> {
    let config = SweepConfig {
        annotator_counts: args.annotators.clone(),
        examples_caps: args.caps.clone(),
        trials: args.trials,
        test_per_class: args.test_per_class,
        targets: args.targets.clone(),
        label_model: ctx.config.label_model.clone(),
    };
    let grid = match (&args.toxicity_comments, &args.toxicity_annotations) {
        (Some(comments), Some(annotations)) => {
            require(comments, "comments file")?;
            require(annotations, "annotations file")?;
            let (dataset, matrix) = load_toxicity_files(comments, annotations)?;
            run_sweep_on_matrix(&dataset, &matrix, &config, args.seed)?
        }
        _ => {
            let space = if args.classes == 2 {
                LabelSpace::binary_toxicity()
            } else {
                LabelSpace::numbered(args.classes)?
            };
            let dataset = synthetic_gold_dataset(space, args.examples)?;
            let pool_config = PoolConfig {
                size: args.pool_size,
                num_classes: args.classes,
                ..PoolConfig::default()
            };
            let pool = synthetic_pool(&pool_config, args.pool_seed.unwrap_or(args.seed))?;
            run_sweep(&dataset, &pool, &config, args.seed)?
        }
    };
    fs::create_dir_all(&args.out)?;
    let grid_path = args.out.join("grid.csv");
    let summary_path = args.out.join("summary.csv");
    grid.write_grid_csv(fs::File::create(&grid_path)?)?;
    grid.write_summary_csv(fs::File::create(&summary_path)?)?;
    match ctx.format {
        Format::Records => {
            let cells = grid.cells.iter().map(|c| AblationRecord::Cell {
                n_annotators: c.n_annotators,
                examples_cap: c.examples_cap,
                mean_accuracy: c.mean_accuracy,
                mean_coverage: c.mean_coverage,
            });
            let caps = grid.minimal_caps.iter().map(|m| AblationRecord::MinimalCap {
                n_annotators: m.n_annotators,
                target_accuracy: m.target_accuracy,
                examples_cap: m.examples_cap,
            });
            ctx.records(cells.chain(caps))
        }
        Format::Table => {
            println!("Mean label model accuracy over {} trials:", args.trials);
            print!("{}", render_grid(&grid));
            println!("wrote {} and {}", grid_path.display(), summary_path.display());
            Ok(())
        }
    }
}

pub fn serve(ctx: &Ctx, args: &ServeArgs) -> Result<(), Failure> {
    let service = &ctx.config.service;
    let host = args.host.as_deref().unwrap_or(&service.host);
    let ip: IpAddr = host
        .parse()
        .map_err(|_| Failure::Usage(format!("--host must be an IP address, got `{host}`")))?;
    let addr = SocketAddr::new(ip, args.port.unwrap_or(service.port));
    let dataset = ctx.dataset()?;
    let matrix = ctx.matrix(&dataset)?;
    let mut annotators = ctx.config.active.annotators.clone();
    annotators.extend(args.annotators.iter().cloned());
    let store = ProjectStore {
        rounds_log: ctx.config.paths.rounds_log.clone(),
        state_dir: ctx.config.paths.state_dir.clone(),
    };
    let project = Project::open(dataset, matrix, ctx.config.campaign_config(), &annotators, store)?;
    let origin = args.allowed_origin.as_deref().or(service.allowed_origin.as_deref());
    weaklab_service::run(addr, project, origin)?;
    Ok(())
}

#[derive(Serialize)]
struct ReplaySummary {
    rounds: usize,
    votes: usize,
    out: String,
}

pub fn replay(ctx: &Ctx, args: &ReplayArgs) -> Result<(), Failure> {
    for name in ["params.json", "model.json"] {
        refuse_overwrite(&args.out.join(name), args.force)?;
    }
    let log = &ctx.config.paths.rounds_log;
    require(log, "rounds log")?;
    let dataset = ctx.dataset()?;
    let initial = ctx.matrix(&dataset)?;
    let rounds = read_rounds(log)?;
    let campaign = Campaign::replay(dataset, initial, ctx.config.campaign_config(), &rounds)?;
    campaign.write_outputs(&args.out)?;
    let summary = ReplaySummary {
        rounds: rounds.len(),
        votes: campaign.matrix().num_votes(),
        out: args.out.display().to_string(),
    };
    match ctx.format {
        Format::Records => ctx.records([&summary]),
        Format::Table => {
            println!(
                "replayed {} rounds ({} votes); wrote matrix.jsonl, params.json and model.json to {}",
                summary.rounds, summary.votes, summary.out
            );
            Ok(())
        }
    }
}
