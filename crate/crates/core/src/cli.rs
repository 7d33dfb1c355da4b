//! Command-line front end.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::bisim::{check_bisim, DEFAULT_TOLERANCE};
use crate::harmony::{check_harmony, run_corpus, GenParams, HarmonyReport, StateRecord, Verdict};
use crate::parser::{parse, SpecFile};
use crate::statespace::{
    explore, export_ctmc, export_imc, extract_ctmc, steady_state, ExploreError, ExportFormat, Imc,
    Semantics, DEFAULT_MAX_STATES,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_BOUND: i32 = 3;

/// Default state bound for each generated spec of a random harmony run.
pub const DEFAULT_RANDOM_MAX_STATES: usize = 200;

#[derive(Parser, Debug)]
#[command(
    name = "stochpi",
    version,
    about = "Markovian pi-calculus state spaces, CTMCs and equivalence checks"
)]
struct Cli {
    /// Emit JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
    /// Write output to this file instead of standard output.
    #[arg(long, global = true, value_name = "PATH")]
    out_file: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SemanticsArg {
    Labeled,
    Reduction,
}

impl From<SemanticsArg> for Semantics {
    fn from(s: SemanticsArg) -> Self {
        match s {
            SemanticsArg::Labeled => Semantics::Labeled,
            SemanticsArg::Reduction => Semantics::Reduction,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Dot,
    Csv,
}

impl From<FormatArg> for ExportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Dot => ExportFormat::Dot,
            FormatArg::Csv => ExportFormat::Csv,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse a file and check its definitions for guardedness.
    Check { file: PathBuf },
    /// Print the transitions of every reachable state.
    Lts {
        file: PathBuf,
        #[arg(long, value_enum, default_value = "reduction")]
        semantics: SemanticsArg,
        #[arg(long, default_value_t = DEFAULT_MAX_STATES)]
        max_states: usize,
    },
    /// Export the interactive Markov chain.
    Imc {
        file: PathBuf,
        #[arg(long, value_enum, default_value = "reduction")]
        semantics: SemanticsArg,
        #[arg(long, value_enum, default_value = "dot")]
        out: FormatArg,
        #[arg(long, default_value_t = DEFAULT_MAX_STATES)]
        max_states: usize,
    },
    /// Print the CTMC generator, optionally with its steady state.
    Ctmc {
        file: PathBuf,
        /// Also solve for the steady-state distribution.
        #[arg(long)]
        steady: bool,
        #[arg(long, value_enum, default_value = "reduction")]
        semantics: SemanticsArg,
        /// Export the chain as DOT or CSV instead of the generator listing.
        #[arg(long, value_enum)]
        out: Option<FormatArg>,
        #[arg(long, default_value_t = DEFAULT_MAX_STATES)]
        max_states: usize,
    },
    /// Check strong Markovian bisimilarity of two specs.
    Bisim {
        file_a: PathBuf,
        file_b: PathBuf,
        /// Absolute tolerance when comparing rates.
        #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
        tol: f64,
        #[arg(long, value_enum, default_value = "reduction")]
        semantics: SemanticsArg,
        #[arg(long, default_value_t = DEFAULT_MAX_STATES)]
        max_states: usize,
    },
    /// Compare the two engines on a spec or on random specs.
    Harmony {
        #[arg(required_unless_present = "random", conflicts_with = "random")]
        file: Option<PathBuf>,
        /// Number of random specs to generate.
        #[arg(long, value_name = "COUNT")]
        random: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// State bound; defaults to 10000 for a file and 200 per random spec.
        #[arg(long)]
        max_states: Option<usize>,
        /// Term depth of random specs.
        #[arg(long, default_value_t = GenParams::default().size)]
        size: usize,
    },
}

/// Failure carrying the exit code and the message for standard error.
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<ExploreError> for Failure {
    fn from(e: ExploreError) -> Self {
        match &e {
            ExploreError::StateBoundExceeded { frontier, .. } => {
                let mut message = e.to_string();
                for s in frontier.iter().take(5) {
                    let _ = write!(message, "\n  frontier: {s}");
                }
                Failure {
                    code: EXIT_BOUND,
                    message,
                }
            }
            ExploreError::Restore(_) => Failure {
                code: EXIT_FAILURE,
                message: e.to_string(),
            },
        }
    }
}

/// Output of a successful command; `code` distinguishes property failures.
struct Output {
    code: i32,
    text: String,
}

impl Output {
    fn ok(text: String) -> Self {
        Output {
            code: EXIT_OK,
            text,
        }
    }
}

fn load(path: &Path) -> Result<SpecFile, Failure> {
    let src =
        fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    parse(&src).map_err(|e| Failure::usage(format!("{}:{}: {e}", path.display(), e.pos())))
}

fn json_line<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string(value).expect("serializable");
    s.push('\n');
    s
}

/// Runs the command line `args` (program name first) and returns the exit
/// code. Regular output goes to `--out-file` or `stdout`, diagnostics to
/// `stderr`.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            let sink: &mut dyn Write = if e.use_stderr() { stderr } else { stdout };
            let _ = sink.write_all(rendered.as_bytes());
            return code;
        }
    };
    let result = execute(&cli);
    match result {
        Ok(out) => {
            let written = match &cli.out_file {
                Some(path) => fs::write(path, &out.text),
                None => stdout.write_all(out.text.as_bytes()),
            };
            if let Err(e) = written {
                let _ = writeln!(stderr, "error: cannot write output: {e}");
                return EXIT_USAGE;
            }
            out.code
        }
        Err(f) => {
            let _ = writeln!(stderr, "error: {}", f.message);
            f.code
        }
    }
}

fn execute(cli: &Cli) -> Result<Output, Failure> {
    match &cli.command {
        Command::Check { file } => check(file, cli.json),
        Command::Lts {
            file,
            semantics,
            max_states,
        } => {
            let spec = load(file)?;
            let imc = explore(&spec, (*semantics).into(), *max_states)?;
            Ok(Output::ok(if cli.json {
                json_line(&ImcJson::from(&imc))
            } else {
                lts_text(&imc)
            }))
        }
        Command::Imc {
            file,
            semantics,
            out,
            max_states,
        } => {
            let spec = load(file)?;
            let imc = explore(&spec, (*semantics).into(), *max_states)?;
            Ok(Output::ok(if cli.json {
                json_line(&ImcJson::from(&imc))
            } else {
                export_imc(&imc, (*out).into())
            }))
        }
        Command::Ctmc {
            file,
            steady,
            semantics,
            out,
            max_states,
        } => ctmc(
            file,
            *steady,
            (*semantics).into(),
            *out,
            *max_states,
            cli.json,
        ),
        Command::Bisim {
            file_a,
            file_b,
            tol,
            semantics,
            max_states,
        } => {
            let (a, b) = (load(file_a)?, load(file_b)?);
            let report = check_bisim(&a, &b, (*semantics).into(), *tol, *max_states)?;
            let code = if report.equivalent {
                EXIT_OK
            } else {
                EXIT_FAILURE
            };
            let text = if cli.json {
                json_line(&BisimJson {
                    equivalent: report.equivalent,
                    splitter: report.splitter.as_ref().map(ToString::to_string),
                    states: [report.states.0, report.states.1],
                    blocks: report.blocks,
                    alphabet: report.alphabet.clone(),
                })
            } else if report.equivalent {
                "equivalent\n".to_string()
            } else {
                let mut s = "not equivalent\n".to_string();
                if let Some(sp) = &report.splitter {
                    let _ = writeln!(s, "splitter: {sp}");
                }
                s
            };
            Ok(Output { code, text })
        }
        Command::Harmony {
            file,
            random,
            seed,
            max_states,
            size,
        } => match (file, random) {
            (Some(file), _) => {
                let spec = load(file)?;
                let report = check_harmony(&spec, max_states.unwrap_or(DEFAULT_MAX_STATES))?;
                let mut text = String::new();
                harmony_text(&mut text, None, &report, cli.json);
                let code = if report.passed() {
                    EXIT_OK
                } else {
                    EXIT_FAILURE
                };
                Ok(Output { code, text })
            }
            (None, Some(count)) => {
                let params = GenParams {
                    size: *size,
                    max_states: max_states.unwrap_or(DEFAULT_RANDOM_MAX_STATES),
                    ..GenParams::default()
                };
                let mut text = String::new();
                let mut code = EXIT_OK;
                let mut failed = 0;
                for entry in run_corpus(*seed, *count, &params) {
                    match &entry.report {
                        Ok(report) => {
                            if !report.passed() {
                                failed += 1;
                                code = code.max(EXIT_FAILURE);
                            }
                            harmony_text(
                                &mut text,
                                Some((entry.index, entry.seed)),
                                report,
                                cli.json,
                            );
                        }
                        Err(e) => {
                            failed += 1;
                            code = EXIT_BOUND;
                            if cli.json {
                                text.push_str(&json_line(&SpecErrorJson {
                                    spec: entry.index,
                                    seed: entry.seed,
                                    error: e.clone(),
                                }));
                            } else {
                                let _ = writeln!(
                                    text,
                                    "spec {} (seed {}): error: {e}",
                                    entry.index, entry.seed
                                );
                            }
                        }
                    }
                }
                if !cli.json {
                    let _ = writeln!(text, "{} specs, {failed} failed", count);
                }
                Ok(Output { code, text })
            }
            (None, None) => Err(Failure::usage("harmony needs FILE or --random COUNT")),
        },
    }
}

fn check(file: &Path, json: bool) -> Result<Output, Failure> {
    #[derive(Serialize)]
    struct CheckJson {
        ok: bool,
        definitions: usize,
        error: Option<String>,
    }
    match load(file) {
        Ok(spec) => Ok(Output::ok(if json {
            json_line(&CheckJson {
                ok: true,
                definitions: spec.defs.len(),
                error: None,
            })
        } else {
            format!("ok: {} definition(s)\n", spec.defs.len())
        })),
        Err(f) if f.code == EXIT_USAGE && file.exists() => {
            if json {
                Ok(Output {
                    code: EXIT_FAILURE,
                    text: json_line(&CheckJson {
                        ok: false,
                        definitions: 0,
                        error: Some(f.message),
                    }),
                })
            } else {
                Err(Failure {
                    code: EXIT_FAILURE,
                    message: f.message,
                })
            }
        }
        Err(f) => Err(f),
    }
}

fn ctmc(
    file: &Path,
    steady: bool,
    semantics: Semantics,
    out: Option<FormatArg>,
    max_states: usize,
    json: bool,
) -> Result<Output, Failure> {
    let spec = load(file)?;
    let imc = explore(&spec, semantics, max_states)?;
    let chain = extract_ctmc(&imc).map_err(|e| Failure {
        code: EXIT_FAILURE,
        message: e.to_string(),
    })?;
    let pi = if steady {
        Some(steady_state(&chain).map_err(|e| Failure {
            code: EXIT_FAILURE,
            message: e.to_string(),
        })?)
    } else {
        None
    };
    if json {
        #[derive(Serialize)]
        struct CtmcJson<'a> {
            states: &'a [String],
            initial: usize,
            generator: Vec<Vec<f64>>,
            steady_state: Option<Vec<f64>>,
        }
        let q = chain.generator();
        let generator = (0..chain.len())
            .map(|i| (0..chain.len()).map(|j| q[(i, j)]).collect())
            .collect();
        return Ok(Output::ok(json_line(&CtmcJson {
            states: &chain.labels,
            initial: chain.initial,
            generator,
            steady_state: pi,
        })));
    }
    if let Some(format) = out {
        let mut text = export_ctmc(&chain, format.into());
        if let Some(pi) = pi {
            for (i, p) in pi.iter().enumerate() {
                let _ = writeln!(text, "# steady {i} {p}");
            }
        }
        return Ok(Output::ok(text));
    }
    let mut text = String::new();
    let _ = writeln!(text, "states:");
    for (i, l) in chain.labels.iter().enumerate() {
        let mark = if i == chain.initial { " (initial)" } else { "" };
        let _ = writeln!(text, "  {i}: {l}{mark}");
    }
    let _ = writeln!(text, "generator:");
    let q = chain.generator();
    for i in 0..chain.len() {
        let row: Vec<String> = (0..chain.len()).map(|j| q[(i, j)].to_string()).collect();
        let _ = writeln!(text, "  [{}]", row.join(", "));
    }
    if let Some(pi) = pi {
        let _ = writeln!(text, "steady state:");
        for (i, p) in pi.iter().enumerate() {
            let _ = writeln!(text, "  {i}: {p}");
        }
    }
    Ok(Output::ok(text))
}

fn lts_text(imc: &Imc) -> String {
    let mut text = String::new();
    let _ = writeln!(text, "semantics: {}", imc.provenance);
    for (i, s) in imc.states.iter().enumerate() {
        let mark = if i == imc.initial { " (initial)" } else { "" };
        let _ = writeln!(text, "state {i}{mark}: {s}");
        for d in imc.tau_successors(i) {
            let _ = writeln!(text, "  -[tau]-> {d}");
        }
        for e in imc.markov_from(i) {
            match &e.id {
                Some(id) => {
                    let _ = writeln!(text, "  -[({}, {id})]-> {}", e.rate, e.dst);
                }
                None => {
                    let _ = writeln!(text, "  -[{}]-> {}", e.rate, e.dst);
                }
            }
        }
    }
    text
}

fn harmony_text(text: &mut String, spec: Option<(usize, u64)>, report: &HarmonyReport, json: bool) {
    if json {
        #[derive(Serialize)]
        struct Line<'a> {
            #[serde(skip_serializing_if = "Option::is_none")]
            spec: Option<usize>,
            #[serde(skip_serializing_if = "Option::is_none")]
            seed: Option<u64>,
            #[serde(flatten)]
            record: &'a StateRecord,
        }
        for r in &report.states {
            text.push_str(&json_line(&Line {
                spec: spec.map(|s| s.0),
                seed: spec.map(|s| s.1),
                record: r,
            }));
        }
        if let Some(m) = &report.imc_mismatch {
            text.push_str(&json_line(&serde_json::json!({
                "spec": spec.map(|s| s.0),
                "imc_mismatch": m,
            })));
        }
        return;
    }
    let prefix = match spec {
        Some((i, seed)) => format!("spec {i} (seed {seed}): "),
        None => String::new(),
    };
    for r in report.violations() {
        let kind = match r.verdict {
            Verdict::Violation => "violation",
            _ => "possible congruence-incompleteness",
        };
        let _ = writeln!(
            text,
            "{prefix}state {} {}: {kind} (reductions {}, stochastic {}, rates {})",
            r.state, r.key, r.reductions, r.stochastic, r.rates
        );
    }
    if let Some(m) = &report.imc_mismatch {
        let _ = writeln!(text, "{prefix}engines disagree: {m}");
    }
    let verdict = if report.passed() { "pass" } else { "FAIL" };
    let _ = writeln!(text, "{prefix}{} states, {verdict}", report.states.len());
}

#[derive(Serialize)]
struct MarkovJson {
    target: usize,
    rate: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    id: Option<String>,
}

#[derive(Serialize)]
struct StateJson {
    index: usize,
    term: String,
    tau: Vec<usize>,
    markov: Vec<MarkovJson>,
}

#[derive(Serialize)]
struct ImcJson {
    semantics: String,
    initial: usize,
    states: Vec<StateJson>,
}

impl From<&Imc> for ImcJson {
    fn from(imc: &Imc) -> Self {
        ImcJson {
            semantics: imc.provenance.to_string(),
            initial: imc.initial,
            states: imc
                .states
                .iter()
                .enumerate()
                .map(|(i, s)| StateJson {
                    index: i,
                    term: s.to_string(),
                    tau: imc.tau_successors(i).into_iter().collect(),
                    markov: imc
                        .markov_from(i)
                        .map(|e| MarkovJson {
                            target: e.dst,
                            rate: e.rate.to_string(),
                            id: e.id.as_ref().map(ToString::to_string),
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

#[derive(Serialize)]
struct BisimJson {
    equivalent: bool,
    splitter: Option<String>,
    states: [usize; 2],
    blocks: usize,
    alphabet: Vec<String>,
}

#[derive(Serialize)]
struct SpecErrorJson {
    spec: usize,
    seed: u64,
    error: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let mut argv = vec!["stochpi"];
        argv.extend_from_slice(args);
        let code = run(argv, &mut out, &mut err);
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    fn file(dir: &Path, name: &str, src: &str) -> String {
        let p = dir.join(name);
        fs::write(&p, src).unwrap();
        p.to_string_lossy().into_owned()
    }

    fn tempdir(tag: &str) -> PathBuf {
        let d = std::env::temp_dir().join(format!("stochpi-cli-{tag}-{}", std::process::id()));
        fs::create_dir_all(&d).unwrap();
        d
    }

    #[test]
    fn check_and_imc() {
        let d = tempdir("imc");
        let f = file(&d, "ex10.spi", "A() := (5).A()\nmain := A() | A()\n");
        assert_eq!(run_args(&["check", &f]).0, EXIT_OK);
        let (code, out, _) = run_args(&["imc", &f, "--out", "csv"]);
        assert_eq!(code, EXIT_OK);
        assert_eq!(out, "0,0,5\n0,0,5\n");
    }

    #[test]
    fn check_failures() {
        let d = tempdir("check");
        let f = file(&d, "bad.spi", "A() := A()\nmain := A()\n");
        let (code, _, err) = run_args(&["check", &f]);
        assert_eq!(code, EXIT_FAILURE);
        assert!(err.contains("unguarded"), "{err}");
        let (code, _, _) = run_args(&["imc", &f]);
        assert_eq!(code, EXIT_USAGE);
        assert_eq!(run_args(&["frobnicate"]).0, EXIT_USAGE);
    }

    #[test]
    fn bisim_verdicts() {
        let d = tempdir("bisim");
        let a = file(&d, "p23.spi", "main := (2).0 + (3).0\n");
        let b = file(&d, "p5.spi", "main := (5).0\n");
        let c = file(&d, "tau.spi", "main := tau.(5).0\n");
        let (code, out, _) = run_args(&["bisim", &a, &b]);
        assert_eq!((code, out.as_str()), (EXIT_OK, "equivalent\n"));
        let (code, out, _) = run_args(&["bisim", &c, &b]);
        assert_eq!(code, EXIT_FAILURE);
        assert!(out.contains("tau"));
    }

    #[test]
    fn bound_exit_code() {
        let d = tempdir("bound");
        let f = file(&d, "grow.spi", "A() := tau.(A() | A())\nmain := A()\n");
        let (code, _, err) = run_args(&["imc", &f, "--max-states", "4"]);
        assert_eq!(code, EXIT_BOUND);
        assert!(err.contains("frontier"));
    }

    #[test]
    fn ctmc_steady_json() {
        let d = tempdir("ctmc");
        let f = file(
            &d,
            "cycle.spi",
            "A() := (2).B()\nB() := (3).A()\nmain := A()\n",
        );
        let (code, out, _) = run_args(&["--json", "ctmc", &f, "--steady"]);
        assert_eq!(code, EXIT_OK);
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["generator"][0][1], 2.0);
        let pi = v["steady_state"].as_array().unwrap();
        assert!((pi[0].as_f64().unwrap() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn out_file() {
        let d = tempdir("outfile");
        let f = file(&d, "nil.spi", "main := 0\n");
        let target = d.join("out.dot");
        let (code, out, _) = run_args(&["imc", &f, "--out-file", target.to_str().unwrap()]);
        assert_eq!(code, EXIT_OK);
        assert!(out.is_empty());
        assert!(fs::read_to_string(target).unwrap().starts_with("digraph"));
    }

    #[test]
    fn harmony_random_is_deterministic() {
        let args = ["harmony", "--random", "5", "--seed", "3", "--json"];
        let (code, a, _) = run_args(&args);
        assert_eq!(code, EXIT_OK);
        let (_, b, _) = run_args(&args);
        assert_eq!(a, b);
        for line in a.lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            assert_eq!(v["verdict"], "pass");
        }
    }
}
