use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use serde_json::{json, Value};
use url::Url;

use snappattern::control::{self, ServiceConfig};
use snappattern::manifest::{parse_manifests_in, plan_injection, render_plan_stream, PatternSelection};
use snappattern::metrics::{collect_run, export_csv_string, export_series_json, CollectorConfig, HttpPrometheus, RunMeta};
use snappattern::pipeline::{router_for, Role, StageUrls};
use snappattern::proxy::{PatternKind, PolicyDocument, ProxyRuntimeConfig};
use snappattern::workload::{
    parse_duration_s, read_outcomes_csv, run_load, summarize, CsvSink, HttpRequester, ProfileName, SummaryWindow,
    WorkloadProfile,
};

#[derive(Parser)]
#[command(name = "snappattern", version, about = "Inject cloud design patterns into a pipeline and measure them")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pattern proxy process.
    Proxy {
        #[command(subcommand)]
        action: ProxyCmd,
    },
    /// Standalone load generation.
    Load {
        #[command(subcommand)]
        action: LoadCmd,
    },
    /// Standalone metrics collection.
    Metrics {
        #[command(subcommand)]
        action: MetricsCmd,
    },
    /// Offline manifest planning.
    Manifest {
        #[command(subcommand)]
        action: ManifestCmd,
    },
    /// Pipeline fixture servers.
    Fixture {
        #[command(subcommand)]
        action: FixtureCmd,
    },
    /// Run the control service.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Control service client.
    Api {
        #[arg(long, default_value = "http://127.0.0.1:7070/", global = true)]
        api: Url,
        #[command(subcommand)]
        action: ApiCmd,
    },
}

#[derive(Subcommand)]
enum ProxyCmd {
    /// Serve a policy file; environment variables override its fields.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        listen: Option<String>,
        #[arg(long)]
        upstream: Option<String>,
    },
}

#[derive(Subcommand)]
enum LoadCmd {
    Run {
        #[arg(long)]
        profile: ProfileName,
        /// Seconds, or a suffixed duration such as `2m`.
        #[arg(long)]
        duration: String,
        #[arg(long = "target", required = true)]
        targets: Vec<Url>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        step_users: Option<u32>,
        #[arg(long)]
        step_interval: Option<u64>,
    },
}

#[derive(Subcommand)]
enum MetricsCmd {
    Collect {
        #[arg(long)]
        run: String,
        #[arg(long, default_value = "baseline")]
        pattern: String,
        #[arg(long, default_value = "custom")]
        workload: String,
        #[arg(long)]
        from: u64,
        #[arg(long)]
        to: u64,
        #[arg(long)]
        prom: Url,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        series: Option<PathBuf>,
        #[arg(long, default_value_t = snappattern::metrics::DEFAULT_WINDOW_SECONDS)]
        window: u64,
    },
}

#[derive(Subcommand)]
enum ManifestCmd {
    /// Print the documents an injection would apply.
    Plan {
        #[arg(long)]
        manifests: PathBuf,
        #[arg(long)]
        pattern: PatternKind,
        #[arg(long)]
        target: String,
        /// Policy block as JSON.
        #[arg(long)]
        params: Option<String>,
        #[arg(long, default_value = snappattern::manifest::DEFAULT_PIPELINE_NAMESPACE)]
        namespace: String,
    },
}

#[derive(Subcommand)]
enum FixtureCmd {
    /// Serve one pipeline role; the coordinator reads stage URLs from the environment.
    Serve {
        #[arg(long)]
        stage: Role,
        #[arg(long, default_value = "0.0.0.0:8080")]
        listen: String,
    },
}

#[derive(Subcommand)]
enum ApiCmd {
    /// Create or delete the cluster.
    Cluster {
        #[arg(value_parser = ["up", "down"])]
        action: String,
    },
    /// Upload a manifest file; prints the new set id.
    Upload { file: PathBuf },
    Deploy { manifest_set: String },
    Services {
        #[arg(long)]
        namespace: Option<String>,
    },
    Inject {
        #[arg(long)]
        manifest_set: String,
        #[arg(long)]
        pattern: PatternKind,
        #[arg(long)]
        target: String,
        #[arg(long)]
        params: Option<String>,
    },
    Remove { injection: String },
    Run {
        #[arg(long)]
        profile: ProfileName,
        #[arg(long)]
        duration: String,
        #[arg(long = "target", required = true)]
        targets: Vec<Url>,
        #[arg(long)]
        injection: Option<String>,
    },
    Status { run: String },
    /// Download a finished run's metrics CSV (or series JSON).
    Export {
        run: String,
        #[arg(long)]
        series: bool,
    },
}

fn parse_params(raw: Option<&str>) -> Result<Value> {
    raw.map(|s| serde_json::from_str(s).context("--params must be JSON"))
        .transpose()
        .map(|v| v.unwrap_or(Value::Null))
}

fn profile_from(
    name: ProfileName,
    duration: &str,
    targets: Vec<Url>,
    step_users: Option<u32>,
    step_interval: Option<u64>,
) -> Result<WorkloadProfile> {
    let duration_s = parse_duration_s(duration)?;
    let mut profile = match name.step_users() {
        Some(_) => WorkloadProfile::named(name, duration_s, targets)?,
        None => WorkloadProfile {
            name,
            step_users: step_users.ok_or_else(|| anyhow!("custom profile needs --step-users"))?,
            step_interval_s: snappattern::workload::DEFAULT_STEP_INTERVAL_S,
            duration_s,
            targets,
            request: Default::default(),
        },
    };
    if let Some(i) = step_interval {
        profile.step_interval_s = i;
    }
    profile.validate()?;
    Ok(profile)
}

async fn shutdown_signal() {
    let _ = tokio::signal::ctrl_c().await;
}

async fn api_call(method: reqwest::Method, url: Url, body: Option<reqwest::Body>) -> Result<String> {
    let mut req = reqwest::Client::new().request(method, url);
    if let Some(b) = body {
        req = req.header("content-type", "application/json").body(b);
    }
    let resp = req.send().await?;
    let status = resp.status();
    let text = resp.text().await?;
    if !status.is_success() {
        bail!("{status}: {text}");
    }
    Ok(text)
}

async fn run_api(base: Url, cmd: ApiCmd) -> Result<()> {
    use reqwest::Method;
    let at = |p: &str| base.join(p).map_err(anyhow::Error::from);
    let json_body = |v: Value| Some(reqwest::Body::from(v.to_string()));
    let out = match cmd {
        ApiCmd::Cluster { action } => {
            let method = if action == "up" { Method::POST } else { Method::DELETE };
            api_call(method, at("cluster")?, None).await?
        }
        ApiCmd::Upload { file } => {
            let text = std::fs::read_to_string(&file).with_context(|| file.display().to_string())?;
            reqwest::Client::new()
                .post(at("manifest-sets")?)
                .body(text)
                .send()
                .await?
                .text()
                .await?
        }
        ApiCmd::Deploy { manifest_set } => {
            api_call(Method::POST, at(&format!("manifest-sets/{manifest_set}/deploy"))?, None).await?
        }
        ApiCmd::Services { namespace } => {
            let mut url = at("services")?;
            if let Some(ns) = namespace {
                url.query_pairs_mut().append_pair("namespace", &ns);
            }
            api_call(Method::GET, url, None).await?
        }
        ApiCmd::Inject {
            manifest_set,
            pattern,
            target,
            params,
        } => {
            let selection = PatternSelection::new(pattern, &target).with_parameters(parse_params(params.as_deref())?);
            let body = json!({"manifest_set_id": manifest_set, "selection": selection});
            api_call(Method::POST, at("injections")?, json_body(body)).await?
        }
        ApiCmd::Remove { injection } => api_call(Method::DELETE, at(&format!("injections/{injection}"))?, None).await?,
        ApiCmd::Run {
            profile,
            duration,
            targets,
            injection,
        } => {
            let body = json!({
                "profile": profile.as_str(),
                "duration_s": parse_duration_s(&duration)?,
                "targets": targets,
                "injection_id": injection,
            });
            api_call(Method::POST, at("runs")?, json_body(body)).await?
        }
        ApiCmd::Status { run } => api_call(Method::GET, at(&format!("runs/{run}"))?, None).await?,
        ApiCmd::Export { run, series } => {
            let file = if series { "series.json" } else { "metrics.csv" };
            api_call(Method::GET, at(&format!("runs/{run}/{file}"))?, None).await?
        }
    };
    println!("{}", out.trim_end());
    Ok(())
}

#[tokio::main]
async fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match cli.command {
        Command::Proxy {
            action: ProxyCmd::Run { config, listen, upstream },
        } => {
            let text = std::fs::read_to_string(&config).with_context(|| config.display().to_string())?;
            let doc = PolicyDocument::parse_with_process_env(&text)?;
            let runtime = ProxyRuntimeConfig::resolve(doc, listen.as_deref(), upstream.as_deref())?;
            let listener = tokio::net::TcpListener::bind(runtime.listen_address).await?;
            tracing::info!(addr = %listener.local_addr()?, pattern = %runtime.policy.kind().as_str(), upstream = %runtime.upstream_base, "proxy listening");
            let engine = Arc::new(snappattern::proxy::PatternEngine::from_config(&runtime));
            snappattern::proxy::server::serve(listener, engine, shutdown_signal()).await?;
        }
        Command::Load {
            action:
                LoadCmd::Run {
                    profile,
                    duration,
                    targets,
                    out,
                    step_users,
                    step_interval,
                },
        } => {
            let profile = profile_from(profile, &duration, targets, step_users, step_interval)?;
            let interval = profile.step_interval_s;
            let sink = Arc::new(CsvSink::create(&out).map_err(|e| anyhow!(e.0))?);
            let stats = run_load(profile, Arc::new(HttpRequester::default()), sink).wait().await?;
            let outcomes = read_outcomes_csv(&out)?;
            let report = summarize(
                &outcomes,
                &SummaryWindow {
                    start_unix_ms: stats.started_at_unix_ms,
                    duration_s: stats.duration_s,
                    step_interval_s: interval,
                },
            );
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Metrics {
            action:
                MetricsCmd::Collect {
                    run,
                    pattern,
                    workload,
                    from,
                    to,
                    prom,
                    out,
                    series,
                    window,
                },
        } => {
            let config = CollectorConfig {
                window_seconds: window,
                ..CollectorConfig::default()
            };
            let meta = RunMeta {
                run_id: run,
                pattern,
                workload,
                from_unix_s: from,
                to_unix_s: to,
            };
            let table = collect_run(&HttpPrometheus::new(prom), &config, &meta).await?;
            for m in &table.missing {
                tracing::warn!(namespace = %m.namespace, column = %m.column, "missing: {}", m.reason);
            }
            std::fs::write(&out, export_csv_string(&table))?;
            if let Some(path) = series {
                std::fs::write(path, export_series_json(&table))?;
            }
        }
        Command::Manifest {
            action:
                ManifestCmd::Plan {
                    manifests,
                    pattern,
                    target,
                    params,
                    namespace,
                },
        } => {
            let text = std::fs::read_to_string(&manifests).with_context(|| manifests.display().to_string())?;
            let set = parse_manifests_in(&text, &namespace)?;
            let mut selection = PatternSelection::new(pattern, &target).with_parameters(parse_params(params.as_deref())?);
            selection.target_namespace = namespace;
            let plan = plan_injection(&set, &selection)?;
            print!("{}", render_plan_stream(&plan));
        }
        Command::Fixture {
            action: FixtureCmd::Serve { stage, listen },
        } => {
            let urls = match stage {
                Role::Coordinator => Some(StageUrls::from_env().map_err(|e| anyhow!(e))?),
                _ => None,
            };
            let router = router_for(stage, urls).map_err(|e| anyhow!(e))?;
            let listener = tokio::net::TcpListener::bind(&listen).await?;
            tracing::info!(addr = %listener.local_addr()?, role = %stage, "fixture listening");
            axum::serve(listener, router).with_graceful_shutdown(shutdown_signal()).await?;
        }
        Command::Serve { config } => {
            let config = ServiceConfig::discover(config.as_deref())?;
            let listen = config.listen.clone();
            let app = control::open_from_config(config).map_err(|e| anyhow!(e))?;
            let listener = tokio::net::TcpListener::bind(&listen).await?;
            tracing::info!(addr = %listener.local_addr()?, "control service listening");
            axum::serve(listener, control::router(app)).with_graceful_shutdown(shutdown_signal()).await?;
        }
        Command::Api { api, action } => run_api(api, action).await?,
    }
    Ok(())
}
