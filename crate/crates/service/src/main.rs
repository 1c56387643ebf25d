use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use panvas_service::client::Client;
use panvas_service::ServiceConfig;
use serde_json::json;

#[derive(Parser)]
#[command(name = "panvas-server", version, about = "Panvas platform service")]
struct Cli {
    /// Config file. PANVAS_CONFIG takes precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the HTTP service.
    Serve,
    /// Resolve a prediction market on a running service.
    ResolveMarket {
        market: u64,
        outcome: Outcome,
        #[command(flatten)]
        remote: Remote,
    },
    /// Advance the logical clock on a running service.
    Tick {
        #[arg(default_value_t = 1)]
        ticks: u64,
        #[command(flatten)]
        remote: Remote,
    },
    /// Settle the current reward epoch on a running service.
    SettleEpoch {
        #[command(flatten)]
        remote: Remote,
    },
}

#[derive(clap::Args)]
struct Remote {
    /// API base; defaults to the configured listen address.
    #[arg(long)]
    url: Option<String>,
    /// Admin bearer token; defaults to the configured or generated one.
    #[arg(long, env = "PANVAS_ADMIN_TOKEN")]
    admin_token: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Outcome {
    Accept,
    Reject,
}

fn admin_call(config: &ServiceConfig, remote: Remote, path: &str, body: serde_json::Value) -> anyhow::Result<ExitCode> {
    let url = remote.url.unwrap_or_else(|| format!("http://{}/api/v1", config.server.listen));
    let token = match remote.admin_token.or_else(|| config.server.admin_token.clone()) {
        Some(t) => t,
        None => std::fs::read_to_string(config.server.data_dir.join(panvas_service::service::ADMIN_TOKEN_FILE))?
            .trim()
            .to_string(),
    };
    let reply = Client::new(url).post(path, Some(&token), &body)?;
    println!("{}", serde_json::to_string_pretty(&reply.body)?);
    Ok(if reply.ok() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn main() -> ExitCode {
    tracing_subscriber::fmt().with_env_filter(tracing_subscriber::EnvFilter::from_default_env()).init();
    let cli = Cli::parse();
    let config = match ServiceConfig::resolve(cli.config.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{}: {e}", e.code());
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Cmd::Serve => {
            let runtime = tokio::runtime::Runtime::new().expect("tokio runtime");
            runtime.block_on(panvas_service::serve(config)).map(|_| ExitCode::SUCCESS)
        }
        Cmd::ResolveMarket { market, outcome, remote } => {
            let outcome = match outcome {
                Outcome::Accept => "ACCEPT",
                Outcome::Reject => "REJECT",
            };
            admin_call(&config, remote, &format!("/admin/markets/{market}/resolve"), json!({ "outcome": outcome }))
        }
        Cmd::Tick { ticks, remote } => admin_call(&config, remote, "/admin/tick", json!({ "ticks": ticks })),
        Cmd::SettleEpoch { remote } => admin_call(&config, remote, "/admin/settle-epoch", json!({})),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            match e.downcast_ref::<panvas_service::StartupError>() {
                Some(s) => eprintln!("{}: {s}", s.code()),
                None => eprintln!("error: {e:#}"),
            }
            ExitCode::FAILURE
        }
    }
}
