//! `kdfxor`: run honest sessions, the attack suite, the masked-sum demos,
//! the XOR/KDF benchmark, and the transcript auditor.
//!
//! Exit codes: 0 when the outcome is the expected one, 1 when a protocol
//! rejected, an attack deviated or an audit failed, 2 on invalid input.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use kdfxor_core::attacks::{self, AttackId, AttackVerdict};
use kdfxor_core::audit::{audit_text, encode_record, encode_records};
use kdfxor_core::bench;
use kdfxor_core::crypto::{KdfAlgorithm, SeedStream};
use kdfxor_core::protocols::{run_scheme, Scheme, SchemeConfig};
use kdfxor_core::smpc::{self, GroupSpec, KeyLedger, Mode};

#[derive(Parser, Debug)]
#[command(name = "kdfxor", version, about = "KDF+XOR key distribution laboratory")]
struct Cli {
    /// Seed for every random choice [default: 0, or the scenario's own].
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Emit JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one honest session.
    Run(RunArgs),
    /// Run attacks against their baseline and fixed targets.
    Attack(AttackArgs),
    /// Masked-sum computation and its attacks.
    Smpc(SmpcArgs),
    /// Time XOR against the reference KDF.
    Bench(BenchArgs),
    /// Re-derive every payload and outcome in a transcript.
    Audit(AuditArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long, conflicts_with = "scenario")]
    scheme: Option<String>,
    /// Scenario JSON file.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Party count for A3_TREE, B2V1 and B2V2, center included.
    #[arg(long)]
    n: Option<usize>,
    /// REFERENCE_KEYED_HASH or TOY_MIX.
    #[arg(long)]
    kdf: Option<String>,
    #[arg(long)]
    key_bytes: Option<usize>,
    /// Write the session as JSON Lines.
    #[arg(long)]
    transcript: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AttackArgs {
    #[arg(long, conflicts_with = "all", required_unless_present = "all")]
    id: Option<String>,
    #[arg(long)]
    all: bool,
    /// Seeds per target, starting at --seed.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    /// Directory for one JSON Lines transcript per attack and target.
    #[arg(long)]
    transcripts: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SmpcArgs {
    /// Instance JSON file; flags override its fields.
    #[arg(long)]
    instance: Option<PathBuf>,
    /// 1, 2 or 3.
    #[arg(long, default_value_t = 1)]
    scheme: u8,
    /// ADDITIVE_MOD_N, MULTIPLICATIVE_MOD_P or INTEGER_LEAKY.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    n: Option<u64>,
    /// Comma-separated d_A,d_B,d_C.
    #[arg(long)]
    inputs: Option<String>,
    /// Comma-separated AB=..,AC=..,BC=.. (plus AD, BD, CD for scheme 3).
    #[arg(long)]
    keys: Option<String>,
    /// tamper or output-control.
    #[arg(long)]
    attack: Option<String>,
    /// Aggregate forced by output-control.
    #[arg(long)]
    target: Option<u64>,
    /// Party whose broadcast is tampered with.
    #[arg(long, default_value = "B")]
    victim: String,
    /// Offset added by tamper.
    #[arg(long, default_value_t = 1)]
    delta: u64,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, default_value_t = 128)]
    key_bits: usize,
    #[arg(long, default_value_t = 200_000)]
    iterations: u64,
}

#[derive(Args, Debug)]
struct AuditArgs {
    path: PathBuf,
}

/// A CLI failure with its exit code.
struct Fail(u8, String);

fn usage(msg: impl Into<String>) -> Fail {
    Fail(2, msg.into())
}

type Out = Result<(u8, Value, String), Fail>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let seed = cli.seed.unwrap_or(0);
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a, cli.seed),
        Command::Attack(a) => cmd_attack(a, seed),
        Command::Smpc(a) => cmd_smpc(a, seed),
        Command::Bench(a) => cmd_bench(a, seed),
        Command::Audit(a) => cmd_audit(a),
    };
    match result {
        Ok((code, value, text)) => {
            let body = if cli.json {
                serde_json::to_string_pretty(&value).expect("json") + "\n"
            } else {
                text
            };
            // A closed pipe is not an error worth reporting.
            let _ = std::io::stdout().write_all(body.as_bytes());
            ExitCode::from(code)
        }
        Err(Fail(code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), Fail> {
    fs::write(path, text).map_err(|e| usage(format!("cannot write {}: {e}", path.display())))
}

fn read_file(path: &Path) -> Result<String, Fail> {
    fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))
}

fn cmd_run(a: &RunArgs, seed: Option<u64>) -> Out {
    let mut cfg = match (&a.scheme, &a.scenario) {
        (Some(s), None) => {
            let scheme = Scheme::parse(s).ok_or_else(|| usage(format!("unknown scheme {s:?}")))?;
            let default_n = match scheme {
                Scheme::B2V1 => 4,
                _ => 7,
            };
            SchemeConfig::standard(scheme, a.n.unwrap_or(default_n), seed.unwrap_or(0))
        }
        (None, Some(path)) => {
            SchemeConfig::from_json(&read_file(path)?).map_err(|e| usage(e.to_string()))?
        }
        _ => return Err(usage("give --scheme or --scenario")),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(k) = &a.kdf {
        cfg.kdf = KdfAlgorithm::parse(k).ok_or_else(|| usage(format!("unknown kdf {k:?}")))?;
    }
    if let Some(b) = a.key_bytes {
        cfg.key_bytes = b;
    }
    if a.scheme.is_some() || a.kdf.is_some() || a.key_bytes.is_some() {
        cfg.validate().map_err(|e| usage(e.to_string()))?;
    }
    let rec = run_scheme(&cfg).map_err(|e| usage(e.to_string()))?;
    if let Some(path) = &a.transcript {
        write_file(path, &encode_record(&rec))?;
    }
    let verdict = rec.check_honest(&cfg);
    let mut text = format!(
        "{} seed={} kdf={} events={}\n",
        cfg.scheme,
        cfg.seed,
        cfg.kdf.name(),
        rec.transcript.events.len()
    );
    let mut parties = BTreeMap::new();
    for (id, st) in &rec.parties {
        let key = st.accepted_key().map(|k| k.to_hex());
        text.push_str(&format!(
            "  {id:<4} {:?} {}\n",
            st.status(),
            key.clone().unwrap_or_else(|| format!("{:?}", st.cause()))
        ));
        parties.insert(
            id.to_string(),
            json!({"status": format!("{:?}", st.status()).to_uppercase(), "key_hex": key,
                   "believed_peers": st.believed_peers}),
        );
    }
    for w in &rec.warnings {
        text.push_str(&format!("  warning: {w}\n"));
    }
    let (code, result) = match &verdict {
        Ok(k) => (0, format!("agreed {}", k.to_hex())),
        Err(e) => (1, format!("FAILED {e}")),
    };
    text.push_str(&format!("{result}\n"));
    let value = json!({
        "scheme": cfg.scheme.name(), "seed": cfg.seed, "kdf": cfg.kdf.name(),
        "events": rec.transcript.events.len(), "ok": verdict.is_ok(),
        "key_hex": verdict.as_ref().ok().map(|k| k.to_hex()),
        "error": verdict.err(), "parties": parties, "warnings": rec.warnings,
    });
    Ok((code, value, text))
}

fn transcript_name(v: &AttackVerdict) -> String {
    format!("{}-{}.jsonl", v.attack, v.target)
}

fn cmd_attack(a: &AttackArgs, seed: u64) -> Out {
    let ids = match &a.id {
        Some(id) => vec![AttackId::parse(id).map_err(|e| usage(e.to_string()))?],
        None => AttackId::ALL.to_vec(),
    };
    if a.seeds == 0 {
        return Err(usage("--seeds must be positive"));
    }
    if let Some(dir) = &a.transcripts {
        fs::create_dir_all(dir).map_err(|e| usage(format!("{}: {e}", dir.display())))?;
    }
    let mut files: BTreeMap<String, String> = BTreeMap::new();
    let mut sink = |v: &AttackVerdict| {
        if a.transcripts.is_some() {
            files
                .entry(transcript_name(v))
                .or_default()
                .push_str(&encode_records(&v.records));
        }
    };
    let report = attacks::run_suite(&ids, seed, a.seeds, &mut sink).map_err(|e| Fail(1, e.to_string()))?;
    if let Some(dir) = &a.transcripts {
        for (name, text) in &files {
            write_file(&dir.join(name), text)?;
        }
    }
    let mut text = String::new();
    for block in &report.attacks {
        for r in std::iter::once(&block.baseline).chain(&block.fixed_replays) {
            text.push_str(&format!(
                "{:<14} vs {:<4} {:>4}/{:<4} successes, {} audited\n",
                r.attack.name(),
                r.target.name(),
                r.successes,
                r.seeds,
                r.audited
            ));
        }
    }
    let deviations = report.deviations();
    for d in &deviations {
        text.push_str(&format!("DEVIATION {d}\n"));
    }
    text.push_str(if report.expected_world() {
        "expected world: baselines fall, fixes hold\n"
    } else {
        "unexpected world\n"
    });
    let mut value = serde_json::to_value(&report).expect("json");
    value["expected_world"] = json!(report.expected_world());
    value["deviations"] = json!(deviations);
    Ok((u8::from(!report.expected_world()), value, text))
}

fn parse_list(s: &str) -> Result<Vec<u64>, Fail> {
    s.split(',')
        .map(|x| x.trim().parse::<u64>().map_err(|e| usage(format!("bad value {x:?}: {e}"))))
        .collect()
}

fn parse_keys(s: &str) -> Result<BTreeMap<String, u64>, Fail> {
    s.split(',')
        .map(|kv| {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| usage(format!("bad key {kv:?}, expected NAME=VALUE")))?;
            let v = v.trim().parse::<u64>().map_err(|e| usage(format!("bad key {kv:?}: {e}")))?;
            Ok((k.trim().to_owned(), v))
        })
        .collect()
}

fn smpc_err(e: smpc::SmpcError) -> Fail {
    usage(format!("{} ({})", e, e.code()))
}

fn cmd_smpc(a: &SmpcArgs, seed: u64) -> Out {
    let file: Option<smpc::Instance> = match &a.instance {
        Some(p) => Some(
            serde_json::from_str(&read_file(p)?).map_err(|e| usage(format!("bad instance: {e}")))?,
        ),
        None => None,
    };
    let mode = match &a.mode {
        Some(m) => Mode::parse(m).ok_or_else(|| usage(format!("unknown mode {m:?}")))?,
        None => file.as_ref().map_or(Mode::ADDITIVE_MOD_N, |f| f.mode),
    };
    let n = a.n.or(file.as_ref().map(|f| f.n)).unwrap_or(13);
    let spec = GroupSpec::new(mode, n).map_err(smpc_err)?;
    if !(1..=3).contains(&a.scheme) {
        return Err(usage("--scheme must be 1, 2 or 3"));
    }
    let mut rng = SeedStream::new(seed);
    let inputs: Vec<i128> = match (&a.inputs, &file) {
        (Some(s), _) => parse_list(s)?.into_iter().map(i128::from).collect(),
        (None, Some(f)) => f.inputs(),
        (None, None) => (0..3).map(|_| spec.sample(&mut rng)).collect(),
    };
    let mut names = vec!["AB", "AC", "BC"];
    if a.scheme == 3 {
        names.extend(["AD", "BD", "CD"]);
    }
    let keys: BTreeMap<String, i128> = match (&a.keys, &file) {
        (Some(s), _) => parse_keys(s)?.into_iter().map(|(k, v)| (k, i128::from(v))).collect(),
        (None, Some(f)) => f.key_map(),
        (None, None) => names.iter().map(|k| ((*k).to_owned(), spec.sample(&mut rng))).collect(),
    };
    let mut ledger = KeyLedger::new();
    let ks = ledger.issue(keys.clone());
    let base = json!({"mode": mode, "n": n, "inputs": inputs.iter().map(|x| x.to_string()).collect::<Vec<_>>(),
                      "keys": keys.iter().map(|(k, v)| (k.clone(), v.to_string())).collect::<BTreeMap<_, _>>()});
    let num = |v: &i128| json!(v.to_string());

    match a.attack.as_deref() {
        None => {}
        Some("tamper") => {
            let delta = i128::from(a.delta);
            let v = smpc::atk_broadcast_tamper(&spec, &inputs, &ks, &mut ledger, &a.victim, delta, seed)
                .map_err(smpc_err)?;
            let mut text = format!("tamper {} by {}: honest sum {}\n", v.victim, v.offset, v.honest_sum);
            for (p, r) in &v.recovered {
                text.push_str(&format!("  {p} recovered {}\n", r.map_or("nothing".into(), |x| x.to_string())));
            }
            text.push_str(&format!("undetected shift: {}\n", v.success));
            let value = json!({"instance": base, "attack": "tamper", "victim": v.victim, "delta": num(&v.offset),
                "honest_sum": num(&v.honest_sum),
                "recovered": v.recovered.iter().map(|(p, r)| (p.to_string(), r.map(|x| x.to_string()))).collect::<BTreeMap<_, _>>(),
                "success": v.success});
            return Ok((u8::from(!v.success), value, text));
        }
        Some("output-control") => {
            let target = i128::from(a.target.ok_or_else(|| usage("output-control needs --target"))?);
            let v = smpc::output_control_run(&spec, &inputs, &ks, &mut ledger, target).map_err(smpc_err)?;
            let text = format!(
                "C replaces d_C={} with {}; aggregate {} (honest {}), target {}: {}\n",
                v.honest_input,
                v.forced_input,
                v.forced_sum,
                v.honest_sum,
                v.target,
                if v.success { "forced" } else { "missed" }
            );
            let value = json!({"instance": base, "attack": "output-control", "target": num(&v.target),
                "honest_input": num(&v.honest_input), "forced_input": num(&v.forced_input),
                "honest_sum": num(&v.honest_sum), "forced_sum": num(&v.forced_sum), "success": v.success});
            return Ok((u8::from(!v.success), value, text));
        }
        Some(other) => return Err(usage(format!("unknown smpc attack {other:?}"))),
    }

    let (value, text) = match a.scheme {
        1 => {
            let out = if mode == Mode::MULTIPLICATIVE_MOD_P {
                smpc::multiplicative_run(&spec, &inputs, &ks, &mut ledger)
            } else {
                smpc::scheme1_run(&spec, &inputs, &ks, &mut ledger)
            }
            .map_err(smpc_err)?;
            let mut text = format!("Δ = {:?}\naggregate = {}\n", out.deltas, out.sum);
            if mode == Mode::INTEGER_LEAKY {
                text.push_str(&format!("leakage bound on d_A: {}\n", smpc::leakage_bound(out.deltas[0], n)));
            }
            (
                json!({"instance": base, "scheme": 1, "deltas": out.deltas.iter().map(num).collect::<Vec<_>>(),
                       "aggregate": num(&out.sum),
                       "leakage_bound_d_A": (mode == Mode::INTEGER_LEAKY).then(|| smpc::leakage_bound(out.deltas[0], n).to_string())}),
                text,
            )
        }
        2 => {
            let out = smpc::scheme2_run(&spec, &inputs, &ks, &mut ledger).map_err(smpc_err)?;
            let cands = if n <= 64 {
                Some(smpc::observer_candidate_sums(&spec, out.public).map_err(smpc_err)?)
            } else {
                None
            };
            let text = format!(
                "public Δ_A, Δ_B = {:?}\nC's aggregate = {}\nobserver candidates: {}\n",
                out.public,
                out.c_sum,
                cands.as_ref().map_or("not enumerated".into(), |c| format!("{} values", c.len()))
            );
            (
                json!({"instance": base, "scheme": 2, "public": out.public.iter().map(num).collect::<Vec<_>>(),
                       "c_aggregate": num(&out.c_sum),
                       "observer_candidates": cands.map(|c| c.iter().map(|x| x.to_string()).collect::<Vec<_>>())}),
                text,
            )
        }
        _ => {
            let out = smpc::scheme3_run(&spec, &inputs, &ks, &mut ledger).map_err(smpc_err)?;
            let text = format!("Δ* = {:?}\nD's aggregate = {}\n", out.starred, out.d_sum);
            (
                json!({"instance": base, "scheme": 3, "starred": out.starred.iter().map(num).collect::<Vec<_>>(),
                       "d_aggregate": num(&out.d_sum)}),
                text,
            )
        }
    };
    Ok((0, value, text))
}

fn cmd_bench(a: &BenchArgs, seed: u64) -> Out {
    let r = bench::compare(a.key_bits, a.iterations, seed).map_err(|e| usage(e.to_string()))?;
    let mut text = r.table();
    let code = if r.ratio >= 10.0 {
        0
    } else if r.ratio >= 3.0 {
        text.push_str("note: ratio below 10 but KDF still dominates by at least 3x\n");
        0
    } else {
        text.push_str("KDF does not dominate XOR by 3x\n");
        1
    };
    Ok((code, serde_json::to_value(&r).expect("json"), text))
}

fn cmd_audit(a: &AuditArgs) -> Out {
    let text = read_file(&a.path)?;
    match audit_text(&text) {
        Ok(r) => Ok((
            0,
            json!({"ok": true, "report": r}),
            format!(
                "ok: {} records, {} events, claims {}/{} hold\n",
                r.records, r.events, r.claims_holding, r.claims
            ),
        )),
        Err(e) => {
            let value = json!({"ok": false, "seq": e.seq(), "error": e.to_string()});
            Ok((1, value, format!("MISMATCH {e}\n")))
        }
    }
}
