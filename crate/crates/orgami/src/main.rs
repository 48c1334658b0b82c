use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use orgami::export::export;
use orgami::run::{run_scenario, RunOptions, TraceBundle};
use orgami::scenario::{
    load_scenario, read_profile_csv, Experiment, LoadError, ProfileSpec, Scenario,
};

const EXIT_VALIDATION: u8 = 2;
const EXIT_VERDICT: u8 = 3;
const EXIT_RUNTIME: u8 = 4;

#[derive(Parser)]
#[command(
    name = "orgami",
    version,
    about = "Run, analyze and export organic-computing scenarios"
)]
struct Cli {
    /// Replaces the seed of every scenario.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root; each scenario writes to <out>/<name>/. ORGAMI_OUT takes precedence.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// State-space limit for Petri-net exploration.
    #[arg(long, global = true)]
    max_states: Option<usize>,
    /// Print nothing but errors.
    #[arg(long, global = true)]
    quiet: bool,
    /// Worker threads for benchmark sweeps.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run scenarios of any experiment and export their bundles.
    Run {
        #[arg(required = true)]
        scenarios: Vec<PathBuf>,
    },
    /// Run a Petri-net analysis scenario.
    Analyze { scenario: PathBuf },
    /// Run a deployment-mapping scenario.
    Map { scenario: PathBuf },
    /// Run a voting scenario, optionally on a profile CSV.
    Vote {
        scenario: PathBuf,
        /// Rows are decision makers, columns candidates.
        #[arg(long)]
        profile: Option<PathBuf>,
    },
    /// Check scenarios against the schema without running them.
    Validate {
        #[arg(required = true)]
        scenarios: Vec<PathBuf>,
    },
}

struct Ctx {
    out: PathBuf,
    opts: RunOptions,
    quiet: bool,
}

impl Ctx {
    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let ctx = Ctx {
        out: std::env::var_os("ORGAMI_OUT").map_or(cli.out, PathBuf::from),
        opts: RunOptions {
            seed: cli.seed,
            max_states: cli.max_states,
            jobs: cli.jobs,
        },
        quiet: cli.quiet,
    };
    let code = match cli.command {
        Command::Run { scenarios } => scenarios
            .iter()
            .map(|p| load(p).and_then(|s| execute(&ctx, &s)))
            .map(|r| r.err().unwrap_or(0))
            .max()
            .unwrap_or(0),
        Command::Analyze { scenario } => single(&ctx, &scenario, "petri", None),
        Command::Map { scenario } => single(&ctx, &scenario, "deploy", None),
        Command::Vote { scenario, profile } => single(&ctx, &scenario, "vote", profile.as_deref()),
        Command::Validate { scenarios } => scenarios
            .iter()
            .map(|p| match load(p) {
                Ok(s) => {
                    ctx.say(format!(
                        "{}: ok ({} experiment)",
                        p.display(),
                        s.experiment.kind()
                    ));
                    0
                }
                Err(code) => code,
            })
            .max()
            .unwrap_or(0),
    };
    ExitCode::from(code)
}

fn load(path: &Path) -> Result<Scenario, u8> {
    load_scenario(path).map_err(|e| {
        eprintln!("{e}");
        match e {
            LoadError::Io { .. } => EXIT_RUNTIME,
            LoadError::Parse { .. } | LoadError::Validation { .. } => EXIT_VALIDATION,
        }
    })
}

fn single(ctx: &Ctx, path: &Path, kind: &str, profile: Option<&Path>) -> u8 {
    let result = load(path).and_then(|mut s| {
        if s.experiment.kind() != kind {
            eprintln!(
                "{}: expected a {kind} experiment, found {}",
                path.display(),
                s.experiment.kind()
            );
            return Err(EXIT_VALIDATION);
        }
        if let (Some(csv), Experiment::Vote(v)) = (profile, &mut s.experiment) {
            let p = read_profile_csv(csv).map_err(|e| {
                eprintln!("{e}");
                EXIT_VALIDATION
            })?;
            let nodes = s.topology.build(s.seed).map_or(0, |t| t.len());
            if p.decision_makers() != nodes {
                eprintln!(
                    "{}: {} decision makers for {nodes} nodes",
                    csv.display(),
                    p.decision_makers()
                );
                return Err(EXIT_VALIDATION);
            }
            v.profile = ProfileSpec::Rows(p.rows().to_vec());
        }
        execute(ctx, &s)
    });
    result.err().unwrap_or(0)
}

fn dir_name(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "-_.".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn execute(ctx: &Ctx, s: &Scenario) -> Result<u8, u8> {
    let bundle = run_scenario(s, &ctx.opts).map_err(|e| {
        eprintln!("{e}");
        EXIT_RUNTIME
    })?;
    let dir = ctx.out.join(dir_name(&s.name));
    let files = export(&bundle, &dir).map_err(|e| {
        eprintln!("{e}");
        EXIT_RUNTIME
    })?;
    summarize(ctx, &bundle, &dir, files.len());
    if bundle.passed() {
        Ok(0)
    } else {
        Err(EXIT_VERDICT)
    }
}

fn summarize(ctx: &Ctx, b: &TraceBundle, dir: &Path, files: usize) {
    for v in b.failures() {
        eprintln!("{}: FAILED {}: {}", b.meta.scenario, v.check, v.detail);
    }
    let passed = b.verdicts.iter().filter(|v| v.passed).count();
    ctx.say(format!(
        "{}: {} ({} module), {passed}/{} checks passed, {files} file(s) in {}",
        b.meta.scenario,
        b.meta.experiment,
        b.meta.module,
        b.verdicts.len(),
        dir.display()
    ));
}
