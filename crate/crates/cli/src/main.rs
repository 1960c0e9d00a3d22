//! Command-line monitor: loads a protocol specification written as
//! multiset rewrite rules, decomposes it, and checks a stream of observed
//! library-call events against it, either online (standard input) or
//! offline (pre-recorded trace file), optionally through a chain of
//! trace-rewriting layers.
//!
//! Exit status: 0 when the stream ends cleanly with at least one live
//! configuration, 1 when an event is rejected (a compliance verdict),
//! 2 on specification or usage errors.

use std::collections::BTreeSet;
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::Parser;
use msrmon_core::{
    elaborate, layer_from_spec, parse_spec, select_role, split_ruleset, ExtendedRule,
    FormatRegistry, Mode, MonitorState, Pipeline, PipelineRejection, ProgramEvent, RewriteLayer,
    RunMode, DEFAULT_MAX_CONFIGS,
};

/// Runtime compliance monitor for library-call event streams.
///
/// Events arrive one JSON object per line, for example
/// {"name":"hmac","args":["736563…","0002"],"ret":"9b54"}, with byte
/// fields hex-encoded. The monitor applies the specification's rules to
/// each event and rejects the stream at the first event no rule accepts.
#[derive(Parser, Debug)]
#[command(name = "msrmon", version)]
struct Args {
    /// Protocol specification to monitor against
    #[arg(long, value_name = "PATH")]
    spec: PathBuf,

    /// Agent role to monitor (required when the spec attributes roles)
    #[arg(long, value_name = "NAME")]
    role: Option<String>,

    /// Pre-recorded trace file (offline mode)
    #[arg(long, value_name = "PATH", conflicts_with = "stdin")]
    trace: Option<PathBuf>,

    /// Read events from standard input (online mode)
    #[arg(long)]
    stdin: bool,

    /// Trace-rewriting layer spec (mode: rewrite), applied in the order
    /// given; may be repeated
    #[arg(long, value_name = "PATH")]
    layer: Vec<PathBuf>,

    /// Executable whose standard output supplies setup events, consumed
    /// before the regular stream
    #[arg(long, value_name = "PATH")]
    setup: Option<PathBuf>,

    /// Process to send SIGTERM when the stream is rejected
    #[arg(long, value_name = "PID")]
    kill_pid: Option<i32>,

    /// Write the accepted stream's output trace(s) to this file
    #[arg(long, value_name = "PATH")]
    emit_trace: Option<PathBuf>,

    /// Maximum number of live configurations before aborting
    #[arg(long, value_name = "N", default_value_t = DEFAULT_MAX_CONFIGS)]
    max_configs: usize,

    /// Print the decomposed rule set and exit
    #[arg(long)]
    dump_decomposed: bool,

    /// Increase log verbosity (-v progress, -vv per-event detail)
    #[arg(short, action = clap::ArgAction::Count)]
    verbose: u8,
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("msrmon: error: {err:#}");
            ExitCode::from(2)
        }
    }
}

/// Preprocessor flags for spec parsing: MONITOR is always set; the
/// MONITOR_FLAGS environment variable adds more (comma/space separated).
fn preprocessor_flags() -> BTreeSet<String> {
    let mut flags: BTreeSet<String> = ["MONITOR".to_string()].into_iter().collect();
    if let Ok(extra) = std::env::var("MONITOR_FLAGS") {
        for flag in extra.split([',', ' ']).filter(|s| !s.is_empty()) {
            flags.insert(flag.to_string());
        }
    }
    flags
}

fn log(args: &Args, level: u8, msg: &str) {
    if args.verbose >= level {
        eprintln!("msrmon: {msg}");
    }
}

fn run(args: &Args) -> Result<ExitCode> {
    let flags = preprocessor_flags();
    let (sink_rules, formats) = load_sink(args, &flags)?;
    let layers = load_layers(args, &flags)?;

    if args.dump_decomposed {
        dump_decomposed(args, &layers, &sink_rules);
        return Ok(ExitCode::SUCCESS);
    }

    let mut sink = MonitorState::new(sink_rules, formats, RunMode::Monitor);
    sink.set_max_configs(args.max_configs);
    let mut pipeline = Pipeline::new(layers, sink);

    if let Some(script) = &args.setup {
        let fed = feed_setup_events(args, &mut pipeline, script)?;
        match fed {
            Verdict::Accepted => {}
            Verdict::Rejected(rejection) => return finish_rejected(args, rejection),
        }
    }

    let verdict = match (&args.trace, args.stdin) {
        (Some(path), false) => {
            let file = fs::File::open(path)
                .with_context(|| format!("cannot open trace file {}", path.display()))?;
            let reader = io::BufReader::new(file);
            feed_lines(args, &mut pipeline, reader.lines(), &path.display().to_string())?
        }
        (None, true) => {
            let stdin = io::stdin();
            let reader = stdin.lock();
            feed_lines(args, &mut pipeline, reader.lines(), "stdin")?
        }
        (None, false) => bail!("no event source: pass --trace PATH or --stdin"),
        (Some(_), true) => unreachable!("clap rejects --trace with --stdin"),
    };

    match verdict {
        Verdict::Accepted => finish_accepted(args, &mut pipeline),
        Verdict::Rejected(rejection) => finish_rejected(args, rejection),
    }
}

/// Loads, elaborates, role-selects and decomposes the main specification.
fn load_sink(args: &Args, flags: &BTreeSet<String>) -> Result<(Vec<ExtendedRule>, FormatRegistry)> {
    let path = &args.spec;
    let source = fs::read_to_string(path)
        .with_context(|| format!("cannot read spec {}", path.display()))?;
    let spec = parse_spec(&source, flags)
        .with_context(|| format!("cannot parse spec {}", path.display()))?;
    if spec.mode == Some(Mode::Rewrite) {
        bail!(
            "{} is a rewrite layer (mode: rewrite); pass it with --layer and \
             give --spec a monitoring specification",
            path.display()
        );
    }
    for warning in &spec.warnings {
        log(args, 1, &format!("{}: {warning}", path.display()));
    }

    let elaborated = elaborate(&spec);
    for warning in &elaborated.warnings {
        log(args, 1, &format!("{}: {warning}", path.display()));
    }

    let rules = if elaborated.roles.is_empty() {
        if let Some(role) = &args.role {
            log(args, 1, &format!("spec attributes no roles; --role {role} has no effect"));
        }
        for (rule, errors) in &elaborated.rule_errors {
            bail!("rule {rule}: {}", errors.join("; "));
        }
        elaborated.rules.clone()
    } else {
        let role = args.role.as_deref().ok_or_else(|| {
            let available: Vec<&str> = elaborated.roles.iter().map(|s| s.as_str()).collect();
            anyhow!("spec attributes roles; pick one with --role ({})", available.join(", "))
        })?;
        let selection = select_role(&elaborated, role)?;
        for warning in &selection.warnings {
            log(args, 1, &format!("{}: {warning}", path.display()));
        }
        selection.rules
    };

    let split = split_ruleset(&rules).context("rule decomposition failed")?;
    log(args, 2, &format!("{} rules after decomposition", split.len()));
    Ok((split, spec.formats))
}

fn load_layers(args: &Args, flags: &BTreeSet<String>) -> Result<Vec<RewriteLayer>> {
    let mut layers = Vec::new();
    for path in &args.layer {
        let source = fs::read_to_string(path)
            .with_context(|| format!("cannot read layer spec {}", path.display()))?;
        let spec = parse_spec(&source, flags)
            .with_context(|| format!("cannot parse layer spec {}", path.display()))?;
        let name = layer_name(path);
        let (layer, lints) = layer_from_spec(&spec, &name)
            .with_context(|| format!("cannot load layer {}", path.display()))?;
        for lint in lints {
            log(args, 1, &format!("{}: {lint}", path.display()));
        }
        layers.push(layer);
    }
    Ok(layers)
}

fn layer_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn dump_decomposed(args: &Args, layers: &[RewriteLayer], sink_rules: &[ExtendedRule]) {
    let mut out = String::new();
    for (i, layer) in layers.iter().enumerate() {
        out.push_str(&format!("== layer {i} ({}) ==\n\n", layer.name()));
        for rule in layer.monitor().rules() {
            out.push_str(&format!("{rule}\n\n"));
        }
    }
    if !layers.is_empty() {
        out.push_str(&format!("== monitor ({}) ==\n\n", args.spec.display()));
    }
    for rule in sink_rules {
        out.push_str(&format!("{rule}\n\n"));
    }
    print!("{out}");
}

enum Verdict {
    Accepted,
    Rejected(Box<PipelineRejection>),
}

/// Runs the setup script and feeds its standard output through the
/// pipeline ahead of the regular stream.
fn feed_setup_events(args: &Args, pipeline: &mut Pipeline, script: &Path) -> Result<Verdict> {
    let output = std::process::Command::new(script)
        .output()
        .with_context(|| format!("cannot run setup script {}", script.display()))?;
    if !output.status.success() {
        bail!("setup script {} exited with {}", script.display(), output.status);
    }
    let text = String::from_utf8(output.stdout)
        .with_context(|| format!("setup script {} wrote non-UTF-8 output", script.display()))?;
    let origin = format!("setup script {}", script.display());
    feed_lines(args, pipeline, text.lines().map(|l| Ok(l.to_string())), &origin)
}

/// Feeds event lines into the pipeline one at a time; the same path serves
/// online and offline input, so the two modes cannot diverge.
fn feed_lines(
    args: &Args,
    pipeline: &mut Pipeline,
    lines: impl Iterator<Item = io::Result<String>>,
    origin: &str,
) -> Result<Verdict> {
    for (i, line) in lines.enumerate() {
        let line = line.with_context(|| format!("cannot read from {origin}"))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let event = ProgramEvent::from_json_line(line)
            .map_err(|e| anyhow!("{origin} line {}: {e}", i + 1))?;
        let verdict = pipeline
            .process_event(&event)
            .with_context(|| format!("{origin} line {}", i + 1))?;
        for diag in pipeline.take_diagnostics() {
            log(args, 2, &diag);
        }
        if let Some(rejection) = verdict {
            return Ok(Verdict::Rejected(Box::new(rejection)));
        }
        log(
            args,
            2,
            &format!("ok {} ({} configurations)", event.describe(), pipeline.sink().config_count()),
        );
    }
    Ok(Verdict::Accepted)
}

fn finish_accepted(args: &Args, pipeline: &mut Pipeline) -> Result<ExitCode> {
    let sink = pipeline.sink();
    log(
        args,
        1,
        &format!(
            "accepted: {} events, {} live configurations",
            sink.events_processed(),
            sink.config_count()
        ),
    );
    if let Some(path) = &args.emit_trace {
        write_output_traces(path, pipeline.sink())
            .with_context(|| format!("cannot write output trace to {}", path.display()))?;
    }
    Ok(ExitCode::SUCCESS)
}

/// Writes the distinct output traces of the surviving configurations,
/// one entry per line, separated by `# trace k of n` headers when the
/// verdict is non-deterministic.
fn write_output_traces(path: &Path, sink: &MonitorState) -> io::Result<()> {
    let traces = sink.output_traces();
    let mut file = io::BufWriter::new(fs::File::create(path)?);
    let total = traces.len();
    for (i, trace) in traces.iter().enumerate() {
        if total > 1 {
            writeln!(file, "# trace {} of {total}", i + 1)?;
        }
        for entry in trace {
            writeln!(file, "{entry}")?;
        }
    }
    file.flush()
}

fn finish_rejected(args: &Args, rejection: Box<PipelineRejection>) -> Result<ExitCode> {
    eprintln!("{rejection}");
    if let Some(pid) = args.kill_pid {
        terminate(args, pid);
    }
    Ok(ExitCode::from(1))
}

fn terminate(args: &Args, pid: i32) {
    let rc = unsafe { libc::kill(pid as libc::pid_t, libc::SIGTERM) };
    if rc == 0 {
        log(args, 1, &format!("sent SIGTERM to process {pid}"));
    } else {
        let err = io::Error::last_os_error();
        eprintln!("msrmon: cannot signal process {pid}: {err}");
    }
}
