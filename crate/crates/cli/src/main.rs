use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fairdiag::adversarial::history_csv;
use fairdiag::config::{DataSource, RunConfig};
use fairdiag::experiment::{adversarial_phase, load_data, pretrain_frozen, vanilla_report};
use fairdiag::info::{read_predictions, FairnessReport};
use fairdiag::jsd::pretrain_history_csv;
use fairdiag::kv::{fmt_f64, KvDoc};
use fairdiag::scm::{direct_effect, PathSelector};
use fairdiag::synth::{generate_dataset, ground_truth_discrete_projection};
use fairdiag::theorem::{
    cmi_s_x_given_y, cmi_s_yhat_given_y, counterexample_theorem1, counterexample_theorem2,
    max_abs_direct_effect, verify_theorem1, verify_theorem2,
};
use fairdiag::Error;

/// Smallest conditional dependence a counterexample must exhibit, in nats.
const COUNTEREXAMPLE_MIN_CMI: f64 = 0.05;

#[derive(Parser)]
#[command(
    name = "fairdiag",
    version,
    about = "Diagnosis-fairness metrics, theorem checks and fair-mask training"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score a prediction file (header s,y,yhat[,score]).
    Evaluate(EvaluateArgs),
    /// Randomized checks of both sufficiency theorems plus their counterexamples.
    Verify(VerifyArgs),
    /// Write a synthetic biased dataset as CSV.
    Synth(SynthArgs),
    /// Pretrain, freeze and train the fair mask; write run artifacts.
    Train(TrainArgs),
    /// Emit table rows (ACC% AUC% EO*100 DP*100 ADF*1000) from reports or histories.
    Report(ReportArgs),
}

#[derive(Args)]
struct EvaluateArgs {
    input: PathBuf,
    /// Write the metrics as key=value text.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also print the scaled table row.
    #[arg(long)]
    scale_paper: bool,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Largest |DE| or I(S;Yhat|Y) accepted as zero.
    #[arg(long, default_value = "1e-10")]
    tol: f64,
}

#[derive(Args)]
struct SynthArgs {
    /// Run configuration; only the dataset keys are used.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides data_seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides n.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Also write the 4-cell discrete projection of the generating graph.
    #[arg(long)]
    scm: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// key=value file with TrainConfig fields and dataset keys (or data=path).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Artifacts root; the run lands in <out>/<name>.
    #[arg(long, default_value = "run")]
    out: PathBuf,
    #[arg(long, default_value = "default")]
    name: String,
    /// Overrides the training seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Mask strength [reference default: 0.2].
    #[arg(long)]
    eta: Option<f64>,
    /// Entropy weight [reference default: 1.0].
    #[arg(long)]
    alpha: Option<f64>,
    /// Utility weight [reference default: 1.0].
    #[arg(long)]
    beta: Option<f64>,
    /// Sets lr_g, lr_d and lr_pre [reference value: 1e-4; the desk preset uses 0.05].
    #[arg(long)]
    lr: Option<f64>,
    /// Training fraction [reference default: 0.9].
    #[arg(long)]
    split: Option<f64>,
}

#[derive(Args)]
struct ReportArgs {
    /// Metric files (key=value) or history CSVs.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Scale history rows into table units (metric files always are).
    #[arg(long)]
    scale_paper: bool,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Evaluation(_) => 3,
        Error::Numeric(_) | Error::Training { .. } => 4,
        _ => 2,
    }
}

fn read(path: &Path) -> fairdiag::Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Argument(format!("{}: {e}", path.display())))
}

fn evaluate(args: &EvaluateArgs) -> fairdiag::Result<()> {
    let records = read_predictions(&read(&args.input)?)?;
    let report = FairnessReport::evaluate(&records)?;
    println!("rows = {}", records.len());
    println!("{report}");
    if args.scale_paper {
        println!("{}", report.paper_row());
    }
    if let Some(out) = &args.out {
        let mut doc = KvDoc::new();
        report.write_kv(&mut doc, "");
        fs::write(out, doc.to_text())?;
    }
    Ok(())
}

fn verify(args: &VerifyArgs) -> fairdiag::Result<bool> {
    let mut ok = true;
    for report in [
        verify_theorem1(args.trials, args.seed, args.tol)?,
        verify_theorem2(args.trials, args.seed, args.tol)?,
    ] {
        println!("{report}");
        ok &= report.passed();
    }
    let ce1 = counterexample_theorem1();
    let (de1, cmi1) = (max_abs_direct_effect(&ce1)?, cmi_s_x_given_y(&ce1)?);
    let pass1 = de1 <= args.tol && cmi1 >= COUNTEREXAMPLE_MIN_CMI;
    println!(
        "counterexample=1 max_abs_de={} cmi_s_x_given_y={} holds={pass1}",
        fmt_f64(de1),
        fmt_f64(cmi1)
    );
    let ce2 = counterexample_theorem2();
    let (adf2, cmi2) = (cmi_s_yhat_given_y(&ce2)?, cmi_s_x_given_y(&ce2)?);
    let pass2 = adf2 <= args.tol && cmi2 >= COUNTEREXAMPLE_MIN_CMI;
    println!(
        "counterexample=2 cmi_s_yhat_given_y={} cmi_s_x_given_y={} holds={pass2}",
        fmt_f64(adf2),
        fmt_f64(cmi2)
    );
    Ok(ok && pass1 && pass2)
}

fn load_run_config(path: Option<&Path>) -> fairdiag::Result<RunConfig> {
    match path {
        Some(p) => RunConfig::from_text(&read(p)?),
        None => Ok(RunConfig::default()),
    }
}

fn synth(args: &SynthArgs) -> fairdiag::Result<()> {
    let run = load_run_config(args.config.as_deref())?;
    let DataSource::Synthetic { mut spec, mut n } = run.data else {
        return Err(Error::Argument(
            "synth needs dataset keys, not data=".into(),
        ));
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(rows) = args.n {
        n = rows;
    }
    let data = generate_dataset(&spec, n)?;
    fs::write(&args.out, data.to_csv())?;
    println!(
        "wrote {} rows x {} features to {}",
        data.len(),
        data.dim(),
        args.out.display()
    );
    if let Some(path) = &args.scm {
        let scm = ground_truth_discrete_projection(&spec)?;
        fs::write(path, scm.to_text())?;
        let de = direct_effect(&scm, PathSelector::new(1, 0), 0)?;
        println!("projected DE(Yhat=1) = {:.6}", de[1]);
    }
    Ok(())
}

fn train(args: &TrainArgs) -> fairdiag::Result<()> {
    let mut run = load_run_config(args.config.as_deref())?;
    let t = &mut run.train;
    if let Some(v) = args.seed {
        t.seed = v;
    }
    if let Some(v) = args.eta {
        t.eta = v;
    }
    if let Some(v) = args.alpha {
        t.alpha = v;
    }
    if let Some(v) = args.beta {
        t.beta = v;
    }
    if let Some(v) = args.lr {
        (t.lr_g, t.lr_d, t.lr_pre) = (v, v, v);
    }
    if let Some(v) = args.split {
        t.split = v;
    }
    t.validate()?;
    let cfg = run.train;
    let data = load_data(&run)?;

    let dir = args.out.join(&args.name);
    let nets = dir.join("nets");
    fs::create_dir_all(&nets)?;
    fs::write(dir.join("config"), run.to_text())?;

    let (pre, frozen) = pretrain_frozen(&data, &cfg)?;
    fs::write(dir.join("pretrain.csv"), pretrain_history_csv(&pre.history))?;
    let vanilla = vanilla_report(&frozen, &data, &cfg)?;
    let adv = adversarial_phase(&frozen, &data, &cfg)?;
    fs::write(dir.join("history.csv"), history_csv(&adv.history))?;

    for (name, net) in [
        ("encoder", &frozen.encoder),
        ("head", &frozen.head),
        ("critic", &pre.critic),
        ("generator", &adv.g),
        ("discriminator", &adv.d),
    ] {
        fs::write(nets.join(format!("{name}.txt")), net.to_text())?;
    }
    let last = adv.final_report();
    let mut doc = KvDoc::new();
    vanilla.write_kv(&mut doc, "vanilla.");
    last.write_kv(&mut doc, "final.");
    fs::write(dir.join("report.txt"), doc.to_text())?;

    println!("run directory: {}", dir.display());
    println!("vanilla (eta = 0)\n{vanilla}");
    println!("masked (eta = {})\n{last}", cfg.eta);
    println!("vanilla {}", vanilla.paper_row());
    println!("masked  {}", last.paper_row());
    Ok(())
}

fn report_rows(text: &str, scale_paper: bool) -> fairdiag::Result<Vec<String>> {
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    if first.trim() == "epoch,acc,auc,dp,eo,adf" {
        return history_rows(text, scale_paper);
    }
    let doc = KvDoc::parse(text)?;
    let mut rows = Vec::new();
    if doc.contains("acc") {
        rows.push(FairnessReport::read_kv(&doc, "")?.paper_row());
    }
    for label in ["vanilla", "final"] {
        if doc.contains(&format!("{label}.acc")) {
            rows.push(format!(
                "{label} {}",
                FairnessReport::read_kv(&doc, &format!("{label}."))?.paper_row()
            ));
        }
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 1,
            msg: "no acc/auc/dp/eo/adf keys found".into(),
        });
    }
    Ok(rows)
}

fn history_rows(text: &str, scale_paper: bool) -> fairdiag::Result<Vec<String>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: &str| Error::Parse {
            line: i + 1,
            msg: msg.into(),
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(bad("expected 6 fields"));
        }
        let epoch: usize = f[0].trim().parse().map_err(|_| bad("bad epoch"))?;
        let mut v = [0.0; 5];
        for (slot, field) in v.iter_mut().zip(&f[1..]) {
            *slot = field.trim().parse().map_err(|_| bad("bad number"))?;
        }
        let r = FairnessReport {
            acc: v[0],
            auc: v[1],
            dp: v[2],
            eo: v[3],
            adf_nats: v[4],
        };
        if scale_paper {
            rows.push(format!("{epoch} {}", r.paper_row()));
        } else {
            rows.push(format!(
                "{epoch} {:.6} {:.6} {:.6} {:.6} {:.6}",
                r.acc, r.auc, r.eo, r.dp, r.adf_nats
            ));
        }
    }
    Ok(rows)
}

fn report(args: &ReportArgs) -> fairdiag::Result<()> {
    for path in &args.inputs {
        let rows = report_rows(&read(path)?, args.scale_paper).map_err(|e| match e {
            Error::Parse { line, msg } => Error::Parse {
                line,
                msg: format!("{}: {msg}", path.display()),
            },
            other => other,
        })?;
        for row in rows {
            println!("{row}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Evaluate(a) => evaluate(a),
        Command::Verify(a) => match verify(a) {
            Ok(true) => Ok(()),
            Ok(false) => Err(Error::Evaluation(
                "theorem check reported violations".into(),
            )),
            Err(e) => Err(e),
        },
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
