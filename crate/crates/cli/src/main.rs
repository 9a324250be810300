use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use pairscore::config::ProtocolConfig;
use pairscore::dataset::{load_documents, make_fold_map, synth_corpus, write_documents, FoldMap};
use pairscore::protocol::report::{
    best_freq_table, best_rows_table, correlation_table, fold_matrix_table, paired_table, spread_table,
    trait_means_long, trait_means_table, TextTable,
};
use pairscore::protocol::{
    best_variant_freq, contrast, paired_comparison, run_matrix, spread_summary, stage1_stage2_correlation,
    standard_contrasts, trait_means, Diagnostic, Factor, ResultTable, Workspace, CONFIG_FILE,
};
use pairscore::stage2::{Stage1Setting, VariantSpec};

#[derive(Parser)]
#[command(name = "pairscore", version, about = "Pairwise-ranking transfer for analytic essay scoring")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Settings file; defaults apply to anything it leaves out.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one setting, e.g. `--set stage1.lr=1e-3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Documents CSV (overrides `paths.documents`).
    #[arg(long)]
    documents: Option<PathBuf>,
    /// Fold map CSV (overrides `paths.folds`).
    #[arg(long)]
    folds: Option<PathBuf>,
    /// Output directory (overrides `paths.out`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunSel {
    #[arg(long = "trait")]
    trait_name: String,
    /// Held-out fold.
    #[arg(long)]
    fold: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic labelled corpus.
    Synth {
        #[arg(long, default_value_t = 500)]
        docs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Label noise standard deviation.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Assign documents to folds.
    GenFolds {
        #[arg(long)]
        documents: PathBuf,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate and cache both pair sets for one run.
    GenPairs {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        run: RunSel,
    },
    /// Train one Stage-1 ranker (generating its pairs).
    Stage1 {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        run: RunSel,
        /// Setting: small_standard, small_one_epoch, large_standard or large_one_epoch.
        #[arg(long, default_value = "small_standard")]
        setting: String,
    },
    /// Train and evaluate one Stage-2 variant; transfer variants load their Stage-1 artifact.
    Stage2 {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        run: RunSel,
        /// Variant code (baseline, SWS, SF-r1, ...) or family:size:duration.
        #[arg(long)]
        variant: VariantSpec,
    },
    /// Run (or resume) the full trait × fold × variant matrix.
    Matrix {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Summaries over a results file.
    Analyze {
        #[command(subcommand)]
        what: Analysis,
    },
}

#[derive(Args)]
struct Source {
    /// `results.jsonl`, or a long-form `trait,fold,variant,test_qwk` CSV.
    #[arg(long)]
    results: PathBuf,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
    /// Settings file (fold seeds for CSV input, spread denominator).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Subcommand)]
enum Analysis {
    /// Mean test QWK per trait and variant.
    TraitMeans {
        #[command(flatten)]
        src: Source,
        /// One row per (trait, variant) with range and spread.
        #[arg(long)]
        long: bool,
    },
    /// How often each variant is best per (trait, fold).
    BestFreq {
        #[command(flatten)]
        src: Source,
        /// Also list the winner of every run.
        #[arg(long)]
        rows: bool,
    },
    /// Paired comparison across the 15 runs. Without --vary, all standard contrasts.
    Paired {
        #[command(flatten)]
        src: Source,
        /// Factor to vary: duration or pair_set.
        #[arg(long)]
        vary: Option<Factor>,
        /// Fixed levels, e.g. `--fix fusion --fix small`.
        #[arg(long)]
        fix: Vec<String>,
    },
    /// Stage-1 diagnostic vs Stage-2 QWK correlation.
    Corr {
        #[command(flatten)]
        src: Source,
        #[arg(long, default_value = "pairtest_acc")]
        diagnostic: Diagnostic,
        #[arg(long)]
        per_trait: bool,
    },
    /// Baseline vs best-transfer spread.
    Spread {
        #[command(flatten)]
        src: Source,
    },
    /// Fold-level QWK matrix.
    Table {
        #[command(flatten)]
        src: Source,
    },
}

fn build_config(path: Option<&Path>, sets: &[String]) -> Result<ProtocolConfig> {
    let mut cfg = match path {
        Some(p) => ProtocolConfig::load(p)?,
        None => ProtocolConfig::default(),
    };
    for s in sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| anyhow!("--set expects KEY=VALUE, got {s:?}"))?;
        cfg.set(k.trim(), v.trim())?;
    }
    Ok(cfg)
}

fn workspace(c: &Common) -> Result<Workspace> {
    let mut cfg = build_config(c.config.as_deref(), &c.sets)?;
    if let Some(p) = &c.documents {
        cfg.documents = Some(p.clone());
    }
    if let Some(p) = &c.folds {
        cfg.folds = Some(p.clone());
    }
    if let Some(p) = &c.out {
        cfg.out_dir = Some(p.clone());
    }
    let docs = cfg.documents.clone().ok_or_else(|| anyhow!("no documents file (--documents or paths.documents)"))?;
    let folds = cfg.folds.clone().ok_or_else(|| anyhow!("no fold map (--folds or paths.folds)"))?;
    let out = cfg.out_dir.clone().ok_or_else(|| anyhow!("no output directory (--out or paths.out)"))?;
    let corpus = load_documents(&docs, &cfg.traits)?;
    let fold_map = FoldMap::load(&folds)?;
    Ok(Workspace::new(cfg, corpus, fold_map, out)?)
}

fn echo_config(ws: &Workspace) -> Result<()> {
    std::fs::create_dir_all(&ws.out).with_context(|| format!("creating {}", ws.out.display()))?;
    let path = ws.out.join(CONFIG_FILE);
    std::fs::write(&path, ws.cfg.to_text()).with_context(|| format!("writing {}", path.display()))
}

fn parse_setting(s: &str) -> Result<Stage1Setting> {
    Stage1Setting::ALL
        .into_iter()
        .find(|x| x.slug() == s)
        .ok_or_else(|| anyhow!("unknown Stage-1 setting {s:?}; expected one of small_standard, small_one_epoch, large_standard, large_one_epoch"))
}

fn load_table(src: &Source) -> Result<(ResultTable, ProtocolConfig)> {
    let cfg = build_config(src.config.as_deref(), &src.sets)?;
    let table = if src.results.extension().is_some_and(|e| e == "csv") {
        let text = std::fs::read_to_string(&src.results).with_context(|| format!("reading {}", src.results.display()))?;
        ResultTable::from_matrix_csv(&text, |f| cfg.seed_for(f).ok())?
    } else {
        ResultTable::load(&src.results)?
    };
    if table.is_empty() {
        bail!("{} holds no records", src.results.display());
    }
    Ok((table, cfg))
}

fn emit(t: &TextTable, format: Format) {
    match format {
        Format::Text => print!("{}", t.to_text()),
        Format::Csv => print!("{}", t.to_csv()),
    }
}

fn analyze(what: Analysis) -> Result<()> {
    match what {
        Analysis::TraitMeans { src, long } => {
            let (table, cfg) = load_table(&src)?;
            let rows = trait_means(&table, cfg.std_kind)?;
            emit(&if long { trait_means_long(&rows) } else { trait_means_table(&rows) }, src.format);
        }
        Analysis::BestFreq { src, rows } => {
            let (table, _) = load_table(&src)?;
            let b = best_variant_freq(&table)?;
            emit(&best_freq_table(&b), src.format);
            if rows {
                println!();
                emit(&best_rows_table(&b), src.format);
            }
        }
        Analysis::Paired { src, vary, fix } => {
            let (table, _) = load_table(&src)?;
            let contrasts = match vary {
                Some(f) => {
                    let fixed: Vec<&str> = fix.iter().map(String::as_str).collect();
                    let (a, b) = contrast(f, &fixed)?;
                    vec![(fix.join(" "), a, b)]
                }
                None => {
                    if !fix.is_empty() {
                        bail!("--fix needs --vary");
                    }
                    standard_contrasts().into_iter().map(|(_, l, a, b)| (l, a, b)).collect()
                }
            };
            let rows = contrasts
                .into_iter()
                .map(|(l, a, b)| Ok((l, paired_comparison(&table, a, b)?)))
                .collect::<Result<Vec<_>>>()?;
            emit(&paired_table(&rows), src.format);
        }
        Analysis::Corr { src, diagnostic, per_trait } => {
            let (table, _) = load_table(&src)?;
            emit(&correlation_table(&stage1_stage2_correlation(&table, diagnostic, per_trait)?), src.format);
        }
        Analysis::Spread { src } => {
            let (table, cfg) = load_table(&src)?;
            let s = spread_summary(&table, cfg.std_kind)?;
            emit(&spread_table(&s), src.format);
            if matches!(src.format, Format::Text) {
                println!(
                    "best transfer beats baseline in {}/{} runs; mean gain {:+.4}",
                    s.transfer_wins, s.baseline.n, s.mean_best_gain
                );
            }
        }
        Analysis::Table { src } => {
            let (table, _) = load_table(&src)?;
            emit(&fold_matrix_table(&table), src.format);
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { docs, seed, noise, out } => {
            let s = synth_corpus(docs, seed, noise)?;
            write_documents(&out, &s.corpus, &s.params.traits)?;
            println!("wrote {docs} documents to {}", out.display());
        }
        Command::GenFolds { documents, k, seed, out } => {
            // Fold assignment needs only the ids.
            let corpus = load_documents(&documents, &[])?;
            let map = make_fold_map(&corpus.ids(), k, seed)?;
            map.save(&out)?;
            let sizes: Vec<String> = map.sizes().iter().map(|(f, n)| format!("{f}={n}")).collect();
            println!("wrote {} ({})", out.display(), sizes.join(" "));
        }
        Command::GenPairs { common, run } => {
            let ws = workspace(&common)?;
            echo_config(&ws)?;
            let plan = ws.plan(&run.trait_name, &run.fold)?;
            let pairs = ws.generate_pairs(&plan)?;
            plan.check_integrity(pairs.values().flat_map(|p| [&p.train, &p.val, &p.pairtest]))?;
            for (size, p) in &pairs {
                println!(
                    "{}: train {} val {} pairtest {} pairs",
                    size.as_str(),
                    p.train.len(),
                    p.val.len(),
                    p.pairtest.len()
                );
            }
        }
        Command::Stage1 { common, run, setting } => {
            let setting = parse_setting(&setting)?;
            let ws = workspace(&common)?;
            echo_config(&ws)?;
            let plan = ws.plan(&run.trait_name, &run.fold)?;
            let pairs = ws.generate_pairs(&plan)?;
            plan.check_integrity(pairs.values().flat_map(|p| [&p.train, &p.val, &p.pairtest]))?;
            let art = ws.train_stage1(&plan, &pairs, setting)?;
            let d = &art.diagnostics;
            println!(
                "{}: best epoch {} of {}, val acc {:.4}, pair-test acc {}",
                ws.stage1_dir(&run.trait_name, &run.fold, setting).display(),
                d.best_epoch,
                d.epochs_run,
                d.val_acc,
                d.pairtest_acc.map_or("n/a".into(), |a| format!("{a:.4}"))
            );
        }
        Command::Stage2 { common, run, variant } => {
            let ws = workspace(&common)?;
            echo_config(&ws)?;
            let plan = ws.plan(&run.trait_name, &run.fold)?;
            let artifact = match variant.setting() {
                Some(s) => Some(ws.load_stage1(&run.trait_name, &run.fold, s)?),
                None => None,
            };
            let r = ws.train_stage2(&plan, variant, artifact.as_ref())?;
            println!(
                "{} {} {} (seed {}): test QWK {:.4}, val QWK {:.4}, best epoch {}",
                r.trait_name, r.fold, r.variant, r.seed, r.test_qwk, r.val_qwk, r.best_epoch
            );
        }
        Command::Matrix { common, jobs } => {
            let ws = workspace(&common)?;
            let table = run_matrix(&ws, jobs.max(1))?;
            println!("{} records in {}", table.len(), ws.out.join(pairscore::protocol::RESULTS_FILE).display());
        }
        Command::Analyze { what } => analyze(what)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
