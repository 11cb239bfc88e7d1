use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use cane::community::select_bridge_users;
use cane::corpus::{dedup_usernames, load_posts, resolve_duplicates, write_posts, DedupPolicy};
use cane::downstream::{data_efficiency_sweep, export_engagement_benchmark, generate_walks, write_walks};
use cane::migration::{build_timeline, permutation_test};
use cane::pipeline::{read_labels, run_pipeline, Artifacts, RunConfig, RunSummary, Stage};
use cane::synth::{gen_planted_corpus, write_synth, SynthConfig};
use cane::temporal::DAY;

#[derive(Parser)]
#[command(name = "cane", version, about = "Cross-platform user networks from post embeddings")]
struct Cli {
    /// `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for stage artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Single-threaded embedding training for bit-identical output.
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true")]
    deterministic: Option<bool>,
    /// Override a config key, e.g. `--set k=20`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load posts and embeddings, apply the activity filter.
    Ingest {
        #[arg(long)]
        posts: Option<PathBuf>,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        min_activity: Option<usize>,
    },
    /// DP-Means narrative clustering.
    Cluster {
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// User × narrative affiliation matrix.
    Affiliate {
        #[arg(long)]
        scheme: Option<String>,
    },
    /// Static kNN user graph.
    Graph {
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        method: Option<String>,
    },
    /// Temporal graph snapshots.
    Tgraph,
    /// Louvain communities and bridge users.
    Communities,
    /// Recompute bridge selection from stored communities.
    Bridges {
        #[arg(long)]
        entropy_min: Option<f64>,
        #[arg(long)]
        min_size: Option<usize>,
    },
    /// Migration detection and transfer-entropy tests.
    Migrate,
    /// Transfer entropy for one narrative between two platforms.
    Te {
        #[arg(long)]
        narrative: usize,
        #[arg(long)]
        src: String,
        #[arg(long)]
        dst: String,
    },
    /// Write node2vec walks of the stored graph.
    Walks,
    /// Node2vec + cross-validated classification of user labels.
    Eval {
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Data-efficiency sweep over nested post subsets.
    Sweep {
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        step: u32,
        /// Also score a degree-preserving rewired graph at each level.
        #[arg(long)]
        control: bool,
    },
    /// Export engagement feature/label matrices around a cutoff.
    ExportEngagement {
        /// Unix seconds.
        #[arg(long)]
        cutoff: i64,
        #[arg(long, default_value_t = 7)]
        horizon: u32,
        #[arg(long)]
        dir: Option<PathBuf>,
    },
    /// Generate a planted synthetic corpus.
    Synth(SynthArgs),
    /// Find (and optionally remove) duplicate cross-platform accounts.
    Dedup {
        #[arg(long)]
        posts: PathBuf,
        #[arg(long, default_value_t = 0.9)]
        threshold: f64,
        /// drop-fewer, drop-both or keep-earliest; writes the filtered posts.
        #[arg(long)]
        policy: Option<DedupPolicy>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run the pipeline end to end (or the listed stages).
    Run {
        #[arg(long, value_delimiter = ',')]
        stages: Vec<Stage>,
    },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    dir: PathBuf,
    #[arg(long)]
    communities: Option<usize>,
    #[arg(long)]
    users_per_community: Option<usize>,
    #[arg(long)]
    bridge_users: Option<usize>,
    #[arg(long)]
    narratives: Option<usize>,
    #[arg(long)]
    posts_per_user: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    migration_fraction: Option<f64>,
    #[arg(long)]
    strength: Option<f64>,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut c = match &cli.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    for kv in &cli.overrides {
        let (k, v) = kv.split_once('=').with_context(|| format!("--set expects KEY=VALUE, got `{kv}`"))?;
        c.set(k.trim(), v)?;
    }
    if let Some(s) = cli.seed {
        c.seed = s;
    }
    if let Some(o) = &cli.out {
        c.out = o.clone();
    }
    if let Some(d) = cli.deterministic {
        c.deterministic = d;
    }
    c.validate()?;
    Ok(c)
}

fn report(summary: &RunSummary) {
    for s in &summary.executed {
        eprintln!("{s}: done");
    }
    for s in &summary.cached {
        eprintln!("{s}: cached");
    }
    for s in &summary.skipped {
        eprintln!("{s}: skipped (no labels)");
    }
}

fn stage(c: &RunConfig, s: Stage) -> Result<()> {
    report(&run_pipeline(c, &[s])?);
    Ok(())
}

fn write_json(value: &impl serde::Serialize, path: &Path) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn labels_for(c: &RunConfig, flag: Option<PathBuf>) -> Result<BTreeMap<String, String>> {
    match flag.or_else(|| c.labels.clone()) {
        Some(p) => Ok(read_labels(p)?),
        None => bail!("no label file; pass --labels or set `labels`"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let mut c = load_config(&cli)?;
    let out = c.out.clone();
    let art = Artifacts::new(&out);
    match cli.command {
        Command::Ingest {
            posts,
            embeddings,
            min_activity,
        } => {
            c.posts = posts.or(c.posts);
            c.embeddings = embeddings.or(c.embeddings);
            c.min_activity = min_activity.unwrap_or(c.min_activity);
            stage(&c, Stage::Ingest)?;
        }
        Command::Cluster { lambda } => {
            if let Some(l) = lambda {
                c.cluster.lambda = l;
            }
            stage(&c, Stage::Cluster)?;
        }
        Command::Affiliate { scheme } => {
            if let Some(s) = scheme {
                c.set("scheme", &s)?;
            }
            stage(&c, Stage::Affiliate)?;
        }
        Command::Graph { k, method } => {
            if let Some(k) = k {
                c.k = k;
            }
            if let Some(m) = method {
                c.set("method", &m)?;
            }
            stage(&c, Stage::Graph)?;
        }
        Command::Tgraph => stage(&c, Stage::Tgraph)?,
        Command::Communities => stage(&c, Stage::Communities)?,
        Command::Migrate => stage(&c, Stage::Migrate)?,
        Command::Eval { labels } => {
            c.labels = labels.or(c.labels);
            if c.labels.is_none() {
                bail!("no label file; pass --labels or set `labels`");
            }
            stage(&c, Stage::Evaluate)?;
        }
        Command::Bridges { entropy_min, min_size } => {
            let posts = art.posts()?;
            let (partition, _) = art.bridges()?;
            let r = select_bridge_users(
                &partition,
                &posts.user_platforms(),
                entropy_min.unwrap_or(c.entropy_min),
                min_size.unwrap_or(c.min_size),
            )?
            .with_post_share(&posts);
            write_json(&r, &out.join("bridges.json"))?;
            println!(
                "{} bridge communities, {} bridge users ({:.1}% of users)",
                r.bridge_ids.len(),
                r.bridge_users.len(),
                100.0 * r.user_share
            );
        }
        Command::Te { narrative, src, dst } => {
            let posts = art.posts()?;
            let model = art.model()?;
            let tl = build_timeline(&posts, &model, narrative, c.migration.bin)?;
            let series = |p: &str| {
                tl.series
                    .get(p)
                    .with_context(|| format!("platform `{p}` not in corpus"))
            };
            let m = &c.seeded().migration;
            let (te, p) = permutation_test(series(&src)?, series(&dst)?, m.history, m.n_perm, m.seed)?;
            println!(
                "{}",
                serde_json::json!({ "narrative": narrative, "src": src, "dst": dst, "te": te, "p": p })
            );
        }
        Command::Walks => {
            let posts = art.posts()?;
            let g = art.graph(&posts)?;
            let n = c.seeded().node2vec;
            let walks = generate_walks(&g, n.p, n.q, n.walk_length, n.walks_per_node, n.seed)?;
            write_walks(&walks, &g, out.join("walks.txt"))?;
            eprintln!("{} walks written", walks.len());
        }
        Command::Sweep { labels, step, control } => {
            let labels = labels_for(&c, labels)?;
            let posts = art.posts()?;
            let emb = art.embeddings(&posts)?;
            let r = data_efficiency_sweep(&posts, &emb, &labels, &c.network_config(), step, control)?;
            write_json(&r, &out.join("sweep.json"))?;
            for l in &r.levels {
                println!("{:>3}%\t{:.4}\t{:.4}", l.percent, l.auc, l.macro_f1);
            }
            if let Some(p) = r.efficiency_percent {
                println!("efficiency point: {p}%");
            }
        }
        Command::ExportEngagement { cutoff, horizon, dir } => {
            let posts = art.posts()?;
            let model = art.model()?;
            let g = art.graph(&posts)?;
            let dir = dir.unwrap_or_else(|| out.join("engagement"));
            let b = export_engagement_benchmark(&g, &model, &posts, cutoff, horizon, &dir)?;
            eprintln!(
                "{} users × {} narratives, horizon {} s, written to {}",
                b.users.len(),
                b.num_narratives,
                horizon as i64 * DAY,
                dir.display()
            );
        }
        Command::Synth(a) => {
            let mut s = SynthConfig {
                seed: c.seed,
                ..Default::default()
            };
            s.communities = a.communities.unwrap_or(s.communities);
            s.users_per_community = a.users_per_community.unwrap_or(s.users_per_community);
            s.bridge_users = a.bridge_users.unwrap_or(s.bridge_users);
            s.narratives = a.narratives.unwrap_or(s.narratives);
            s.posts_per_user = a.posts_per_user.unwrap_or(s.posts_per_user);
            s.dim = a.dim.unwrap_or(s.dim);
            s.noise = a.noise.unwrap_or(s.noise);
            s.migration_fraction = a.migration_fraction.unwrap_or(s.migration_fraction);
            s.strength = a.strength.unwrap_or(s.strength);
            let corpus = gen_planted_corpus(&s)?;
            write_synth(&corpus, &a.dir)?;
            eprintln!("{} posts by {} users written to {}", corpus.posts.len(), corpus.posts.num_users(), a.dir.display());
        }
        Command::Dedup {
            posts,
            threshold,
            policy,
            output,
        } => {
            let all = load_posts(&posts)?;
            let mut seen = BTreeMap::new();
            for p in all.posts() {
                seen.entry(p.user_id.clone()).or_insert_with(|| p.platform.clone());
            }
            let users: Vec<(String, String)> = seen.into_iter().collect();
            let pairs = dedup_usernames(&users, threshold)?;
            for p in &pairs {
                println!("{}\t{}\t{:.4}", p.user_a, p.user_b, p.similarity);
            }
            if let Some(policy) = policy {
                let kept = resolve_duplicates(&all, &pairs, policy);
                let path = output.unwrap_or_else(|| out.join("posts.dedup.jsonl"));
                if let Some(parent) = path.parent() {
                    fs::create_dir_all(parent)?;
                }
                write_posts(&kept, &path)?;
                eprintln!("{} of {} users kept, written to {}", kept.num_users(), all.num_users(), path.display());
            }
        }
        Command::Run { stages } => {
            let stages = if stages.is_empty() { Stage::ALL.to_vec() } else { stages };
            report(&run_pipeline(&c, &stages)?);
        }
    }
    Ok(())
}
