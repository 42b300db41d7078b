use std::io::Read;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dpsql_core::algebra::{logical_outputs, Catalog, MechanismId};
use dpsql_core::budget::{load_ledger, store_ledger, BudgetLedger, CompositionMode};
use dpsql_core::eval::{eval_query, load_database, RandomSource, Table};
use dpsql_core::mechanisms::load_rules;
use dpsql_core::service::{
    serve, BinValue, ErrorCode, Gateway, Operation, RewriteRequest, ServiceError,
};
use dpsql_core::sql::Dialect;

#[derive(Parser)]
#[command(name = "dpsql", version, about = "Rewrites statistical SQL queries into differentially private SQL")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rewrite a query, charge the budget, print the SQL.
    Rewrite(RewriteArgs),
    /// Report which mechanisms support a query. Never charges the budget.
    Analyze(QueryArgs),
    /// Rewrite a query and evaluate it on CSV data in memory.
    Run(RunArgs),
    /// Serve newline-delimited JSON requests over TCP.
    Serve(ServeArgs),
    /// Create or inspect a budget ledger.
    #[command(subcommand)]
    Budget(BudgetCommand),
}

#[derive(Clone, Copy, ValueEnum)]
enum MechanismChoice {
    Auto,
    Elastic,
    Restricted,
    Wpinq,
    Saa,
}

impl MechanismChoice {
    fn id(self) -> Option<MechanismId> {
        match self {
            MechanismChoice::Auto => None,
            MechanismChoice::Elastic => Some(MechanismId::Elastic),
            MechanismChoice::Restricted => Some(MechanismId::Restricted),
            MechanismChoice::Wpinq => Some(MechanismId::Wpinq),
            MechanismChoice::Saa => Some(MechanismId::Saa),
        }
    }
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    catalog: PathBuf,
    #[arg(long)]
    epsilon: f64,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long, value_enum, default_value = "auto")]
    mechanism: MechanismChoice,
    #[arg(long, default_value = "ansi")]
    dialect: Dialect,
    /// Comma-separated histogram bins for grouping columns without a
    /// domain table.
    #[arg(long, value_delimiter = ',')]
    bins: Option<Vec<String>>,
    /// Database size; defaults to the protected table's rowCount.
    #[arg(long)]
    db_size: Option<u64>,
    /// Selection rules JSON file; defaults to the built-in rules.
    #[arg(long)]
    rules: Option<PathBuf>,
    /// File holding the query; read from stdin when absent.
    #[arg(long)]
    query: Option<PathBuf>,
    /// Print the analysis as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct RewriteArgs {
    #[command(flatten)]
    query: QueryArgs,
    #[arg(long)]
    ledger: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    query: QueryArgs,
    #[arg(long)]
    ledger: Option<PathBuf>,
    /// Directory with one `<table>.csv` per catalog table.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// With more than one trial, prints the mean and standard deviation of
    /// every numeric cell across trials.
    #[arg(long, default_value_t = 1)]
    trials: u64,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:7878")]
    listen: String,
    #[arg(long)]
    catalog: PathBuf,
    #[arg(long)]
    ledger: Option<PathBuf>,
    #[arg(long)]
    rules: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeChoice {
    Standard,
    Advanced,
}

#[derive(Subcommand)]
enum BudgetCommand {
    /// Write a new, empty ledger.
    Init {
        #[arg(long)]
        ledger: PathBuf,
        #[arg(long)]
        total_epsilon: f64,
        #[arg(long, default_value_t = 0.0)]
        total_delta: f64,
        #[arg(long, value_enum, default_value = "standard")]
        mode: ModeChoice,
        /// Slack delta for advanced composition.
        #[arg(long, default_value_t = 1e-6)]
        delta_prime: f64,
        /// Replace an existing ledger.
        #[arg(long)]
        force: bool,
    },
    /// Print totals and remaining budget.
    Show {
        #[arg(long)]
        ledger: PathBuf,
    },
}

fn fail(e: &ServiceError) -> ExitCode {
    eprintln!("{}", serde_json::json!({ "error": e }));
    ExitCode::from(e.code.exit_code() as u8)
}

fn bad(message: impl Into<String>) -> ServiceError {
    ServiceError::new(ErrorCode::BadRequest, message)
}

fn gateway(catalog: &Path, ledger: Option<PathBuf>, rules: Option<&Path>) -> Result<Gateway, ServiceError> {
    let catalog = Catalog::load(catalog).map_err(|e| ServiceError::new(ErrorCode::CatalogError, e.to_string()))?;
    let mut g = Gateway::new(catalog, ledger);
    if let Some(path) = rules {
        g.rules = load_rules(path)?;
    }
    Ok(g)
}

fn request(args: &QueryArgs, op: Operation) -> Result<RewriteRequest, ServiceError> {
    let sql = match &args.query {
        Some(path) => std::fs::read_to_string(path).map_err(|e| bad(format!("{}: {e}", path.display())))?,
        None => {
            let mut s = String::new();
            std::io::stdin().read_to_string(&mut s).map_err(|e| bad(format!("stdin: {e}")))?;
            s
        }
    };
    Ok(RewriteRequest {
        op,
        sql,
        epsilon: args.epsilon,
        delta: args.delta,
        mechanism: args.mechanism.id(),
        bins: args.bins.as_ref().map(|b| b.iter().map(|s| BinValue::parse(s)).collect()),
        dialect: args.dialect,
        db_size: args.db_size,
    })
}

fn rewrite(args: RewriteArgs) -> Result<(), ServiceError> {
    if args.ledger.is_none() {
        eprintln!("warning: no --ledger given; the privacy budget is not tracked");
    }
    let g = gateway(&args.query.catalog, args.ledger, args.query.rules.as_deref())?;
    let mut response = g.rewrite(&request(&args.query, Operation::Rewrite)?)?;
    let sql = std::mem::take(&mut response.rewritten_sql);
    eprintln!("{}", serde_json::to_string(&response).expect("serializes"));
    println!("{sql}");
    Ok(())
}

fn analyze(args: QueryArgs) -> Result<(), ServiceError> {
    let g = gateway(&args.catalog, None, args.rules.as_deref())?;
    let report = g.analyze(&request(&args, Operation::Analyze)?)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report).expect("serializes"));
        return Ok(());
    }
    let features: Vec<String> = report.features.iter().map(|f| f.to_string()).collect();
    println!("features: {}", features.join(", "));
    for v in &report.verdicts {
        let score = v.score.map(|s| format!("score {s}")).unwrap_or_else(|| "no rule".into());
        match &v.excluded {
            None => println!("{:<10} supported, {score}", v.mechanism.as_str()),
            Some(why) => println!("{:<10} excluded ({score}): {why}", v.mechanism.as_str()),
        }
    }
    match report.chosen {
        Some(m) => println!("chosen: {m}"),
        None => println!("chosen: none"),
    }
    if let Some(s) = report.sensitivity {
        println!("sensitivity: {s}");
    }
    for line in &report.trace {
        println!("  {line}");
    }
    if report.chosen.is_none() {
        return Err(ServiceError::new(ErrorCode::NoMechanism, "no mechanism supports this query"));
    }
    Ok(())
}

fn print_table(t: &Table) {
    let names: Vec<&str> = t.schema.attrs.iter().map(|a| a.name.as_str()).collect();
    println!("{}", names.join(","));
    for row in &t.rows {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        println!("{}", cells.join(","));
    }
}

fn run(args: RunArgs) -> Result<(), ServiceError> {
    if args.trials == 0 {
        return Err(bad("--trials must be at least 1"));
    }
    let g = gateway(&args.query.catalog, args.ledger, args.query.rules.as_deref())?;
    let req = request(&args.query, Operation::Rewrite)?;
    let db = load_database(&args.data, &g.catalog).map_err(|e| bad(e.to_string()))?;
    let plan = g.plan(&req)?;
    // Charges the ledger exactly once for all trials.
    let mut response = g.rewrite(&req)?;
    response.rewritten_sql.clear();
    eprintln!("{}", serde_json::to_string(&response).expect("serializes"));

    let mut rng = RandomSource::seeded(args.seed);
    let evaluate = |rng: &mut RandomSource| eval_query(&plan.query, &db, rng).map_err(|e| bad(e.to_string()));
    if args.trials == 1 {
        print_table(&evaluate(&mut rng)?);
        return Ok(());
    }
    let first = evaluate(&mut rng)?;
    let (rows, cols) = (first.rows.len(), first.schema.attrs.len());
    let mut sums = vec![vec![(0.0f64, 0.0f64); cols]; rows];
    let mut add = |t: &Table| {
        for (r, row) in t.rows.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                if let Some(x) = v.as_f64() {
                    sums[r][c].0 += x;
                    sums[r][c].1 += x * x;
                }
            }
        }
    };
    add(&first);
    for _ in 1..args.trials {
        add(&evaluate(&mut rng)?);
    }
    let n = args.trials as f64;
    let logical = logical_outputs(&plan.query.top, &g.catalog).map_err(|e| bad(e.to_string()))?;
    let names: Vec<&str> = first.schema.attrs.iter().map(|a| a.name.as_str()).collect();
    println!("{}", names.join(","));
    for (r, row) in first.rows.iter().enumerate() {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, v)| match v.as_f64() {
                Some(_) if !logical[c] => {
                    let (s, sq) = sums[r][c];
                    let mean = s / n;
                    let var = ((sq - n * mean * mean) / (n - 1.0)).max(0.0);
                    format!("{mean:.6}±{:.6}", var.sqrt())
                }
                _ => v.to_string(),
            })
            .collect();
        println!("{}", cells.join(","));
    }
    Ok(())
}

fn serve_cmd(args: ServeArgs) -> Result<(), ServiceError> {
    let g = gateway(&args.catalog, args.ledger, args.rules.as_deref())?;
    let listener = TcpListener::bind(&args.listen).map_err(|e| bad(format!("{}: {e}", args.listen)))?;
    let addr = listener.local_addr().map_err(|e| bad(e.to_string()))?;
    eprintln!("{}", serde_json::json!({ "listening": addr.to_string() }));
    serve(Arc::new(g), listener).map_err(|e| bad(e.to_string()))
}

fn budget(cmd: BudgetCommand) -> Result<(), ServiceError> {
    match cmd {
        BudgetCommand::Init { ledger, total_epsilon, total_delta, mode, delta_prime, force } => {
            if ledger.exists() && !force {
                return Err(bad(format!("{} exists; pass --force to replace it", ledger.display())));
            }
            let mode = match mode {
                ModeChoice::Standard => CompositionMode::Standard,
                ModeChoice::Advanced => CompositionMode::Advanced { delta_prime },
            };
            let l = BudgetLedger::new(total_epsilon, total_delta, mode)?;
            store_ledger(&l, &ledger)?;
            Ok(())
        }
        BudgetCommand::Show { ledger } => {
            let l = load_ledger(&ledger)?;
            let spent = l.spent();
            let left = l.remaining();
            println!(
                "{}",
                serde_json::json!({
                    "totalEpsilon": l.total_epsilon,
                    "totalDelta": l.total_delta,
                    "mode": l.mode,
                    "charges": l.entries.len(),
                    "spentEpsilon": spent.epsilon,
                    "spentDelta": spent.delta,
                    "remainingEpsilon": left.epsilon,
                    "remainingDelta": left.delta,
                    "version": l.version,
                })
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Rewrite(a) => rewrite(a),
        Command::Analyze(a) => analyze(a),
        Command::Run(a) => run(a),
        Command::Serve(a) => serve_cmd(a),
        Command::Budget(c) => budget(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}
