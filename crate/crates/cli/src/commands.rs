use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use curio_client::{ClientError, CurioClient};
use curio_core::api::{
    validate_card_text, CorpusPaths, RetrieveRequest, ScoreRequest, ValidateResponse,
};
use curio_core::appcards::{parse_card, render_card, CardStore};
use curio_core::config::RunConfig;
use curio_core::divergence::{info_gain, InfoGainReport};
use curio_core::dump::{is_paired, parse_dump, read_paired_steps, read_steps, DumpError};
use curio_core::gate::{AppAccumulator, GateBook};
use curio_core::harness::{read_episode_log, replay_log, EpisodeReport, EpisodeStatus, Retrieval};
use curio_core::retrieval::{
    local_clients, retrieve_and_update, RetrievalError, RetrievalRequest, TemplateConsolidator,
};
use serde::Serialize;

use crate::{CardsCommand, Cli, Command};

pub enum Failure {
    Runtime(String),
    Input(String),
    Refused(String),
}

impl Failure {
    pub fn message(&self) -> String {
        match self {
            Failure::Runtime(m) | Failure::Input(m) => format!("error: {m}"),
            Failure::Refused(m) => format!("refused: {m}"),
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            Failure::Runtime(_) => 1,
            Failure::Input(_) => 2,
            Failure::Refused(_) => 4,
        })
    }
}

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        match e.status().map(|s| s.as_u16()) {
            Some(409) => Failure::Refused(e.to_string()),
            Some(400 | 404 | 422) => Failure::Input(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

type Outcome = Result<ExitCode, Failure>;

const PARTIAL: u8 = 3;

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn to_json(value: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn absolute(path: &Path) -> String {
    std::path::absolute(path)
        .unwrap_or_else(|_| path.to_path_buf())
        .to_string_lossy()
        .into_owned()
}

enum Backend {
    Local,
    Remote(CurioClient, tokio::runtime::Runtime),
}

impl Backend {
    fn call<T>(
        client: &CurioClient,
        rt: &tokio::runtime::Runtime,
        f: impl AsyncFnOnce(&CurioClient) -> Result<T, ClientError>,
    ) -> Result<T, Failure> {
        Ok(rt.block_on(f(client))?)
    }
}

pub fn run(cli: &Cli) -> Outcome {
    let config = RunConfig::resolve(cli.config.as_deref(), &cli.overrides())
        .map_err(|e| Failure::Input(e.to_string()))?;
    let backend = match &cli.server {
        None => Backend::Local,
        Some(url) => {
            let client = CurioClient::new(url).map_err(|e| Failure::Input(e.to_string()))?;
            let rt = tokio::runtime::Builder::new_current_thread()
                .enable_all()
                .build()
                .map_err(|e| Failure::Runtime(e.to_string()))?;
            Backend::Remote(client, rt)
        }
    };
    match &cli.command {
        Command::Score { prior, posterior } => {
            score(&backend, &config, prior, posterior.as_deref())
        }
        Command::Cards(c) => cards(&backend, &config, c),
        Command::Replay {
            log,
            out,
            retrieve,
            save_gate_state,
            ..
        } => replay(
            &backend,
            &config,
            log,
            out.as_deref(),
            *retrieve,
            save_gate_state.as_deref(),
        ),
        Command::Retrieve {
            app,
            out,
            force,
            gate_state,
            report,
            focus,
            ..
        } => {
            let report = match report {
                Some(p) => Some(
                    serde_json::from_str::<InfoGainReport>(&read(p)?)
                        .map_err(|e| Failure::Input(format!("{}: {e}", p.display())))?,
                ),
                None => None,
            };
            let args = RetrieveArgs {
                app,
                force: *force,
                gate_state: gate_state.as_deref(),
                report,
                focus,
                out: out.as_deref(),
            };
            retrieve(&backend, &config, args)
        }
    }
}

fn score(backend: &Backend, config: &RunConfig, prior: &Path, posterior: Option<&Path>) -> Outcome {
    let k = config.distributions.k;
    let base = config.distributions.log_base;
    let prior_text = read(prior)?;

    let report = match backend {
        Backend::Local => {
            let (p, q) = match posterior {
                Some(post) => (
                    read_steps(&prior_text, k, base).map_err(located(prior))?,
                    read_steps(&read(post)?, k, base).map_err(located(post))?,
                ),
                None if is_paired(&prior_text) => {
                    read_paired_steps(&prior_text, k, base).map_err(located(prior))?
                }
                None => {
                    return Err(Failure::Input(format!(
                        "{}: expected a posterior dump or a {{\"prior\", \"posterior\"}} document",
                        prior.display()
                    )))
                }
            };
            info_gain(&p, &q, config.divergence.lambda)
                .map_err(|e| Failure::Input(e.to_string()))?
        }
        Backend::Remote(client, rt) => {
            let records = |text: &str, path: &Path| {
                parse_dump(text)
                    .map(|rs| rs.into_iter().map(|(_, r)| r).collect::<Vec<_>>())
                    .map_err(located(path))
            };
            let (p, q) = match posterior {
                Some(post) => (records(&prior_text, prior)?, records(&read(post)?, post)?),
                None => {
                    let v: serde_json::Value = serde_json::from_str(&prior_text)
                        .map_err(|e| Failure::Input(format!("{}: {e}", prior.display())))?;
                    let side = |name: &str| {
                        serde_json::from_value(v.get(name).cloned().unwrap_or_default()).map_err(
                            |e| Failure::Input(format!("{}: {name}: {e}", prior.display())),
                        )
                    };
                    (side("prior")?, side("posterior")?)
                }
            };
            let req = ScoreRequest {
                prior: p,
                posterior: q,
                lambda: Some(config.divergence.lambda),
                k: Some(k),
                log_base: Some(base),
            };
            Backend::call(client, rt, async |c| c.score(&req).await)?
        }
    };
    print!("{}", to_json(&report));
    Ok(ExitCode::SUCCESS)
}

fn located(path: &Path) -> impl Fn(DumpError) -> Failure + '_ {
    move |e| Failure::Input(format!("{}: {e}", path.display()))
}

fn local_store(config: &RunConfig) -> Result<CardStore, Failure> {
    match &config.paths.store_root {
        Some(root) => CardStore::open(root).map_err(|e| Failure::Runtime(e.to_string())),
        None => Ok(CardStore::in_memory()),
    }
}

fn require_store(config: &RunConfig) -> Result<CardStore, Failure> {
    if config.paths.store_root.is_none() {
        return Err(Failure::Input(
            "no card store: pass --store-root or set paths.store_root".into(),
        ));
    }
    local_store(config)
}

fn cards(backend: &Backend, config: &RunConfig, cmd: &CardsCommand) -> Outcome {
    match cmd {
        CardsCommand::Validate { files } => {
            let mut failed = 0;
            for path in files {
                let text = match read(path) {
                    Ok(t) => t,
                    Err(f) => {
                        eprintln!("{}", f.message());
                        failed += 1;
                        continue;
                    }
                };
                let verdict: ValidateResponse = match backend {
                    Backend::Local => validate_card_text(&text),
                    Backend::Remote(client, rt) => {
                        Backend::call(client, rt, async |c| c.validate_card(&text).await)?
                    }
                };
                match verdict.error {
                    None => println!("{}: ok", path.display()),
                    Some(e) => {
                        eprintln!("{}: {}: {}", path.display(), e.error, e.message);
                        failed += 1;
                    }
                }
            }
            if failed > 0 {
                return Err(Failure::Input(format!(
                    "{failed} of {} card files invalid",
                    files.len()
                )));
            }
            Ok(ExitCode::SUCCESS)
        }
        CardsCommand::Render { file } => {
            let text = read(file)?;
            let rendered = match backend {
                Backend::Local => parse_card(&text).map(|c| render_card(&c)).map_err(|e| {
                    Failure::Input(format!("{}: {}: {e}", file.display(), e.kind()))
                })?,
                Backend::Remote(client, rt) => {
                    Backend::call(client, rt, async |c| c.render_card(&text).await)?.rendered
                }
            };
            print!("{rendered}");
            Ok(ExitCode::SUCCESS)
        }
        CardsCommand::List => {
            let rows: Vec<(String, u32, usize)> = match backend {
                Backend::Local => require_store(config)?
                    .current_cards()
                    .map(|c| (c.app_name().to_string(), c.version(), c.entries().len()))
                    .collect(),
                Backend::Remote(client, rt) => {
                    Backend::call(client, rt, async |c| c.cards().await)?
                        .into_iter()
                        .map(|s| (s.app_name, s.version, s.entries))
                        .collect()
                }
            };
            for (name, version, entries) in rows {
                println!("{name}\tv{version}\t{entries} entries");
            }
            Ok(ExitCode::SUCCESS)
        }
        CardsCommand::Add { files } => {
            let texts = files
                .iter()
                .map(|p| read(p))
                .collect::<Result<Vec<_>, _>>()?;
            let mut store = match backend {
                Backend::Local => Some(require_store(config)?),
                Backend::Remote(..) => None,
            };
            for (path, text) in files.iter().zip(&texts) {
                let card = match (&mut store, backend) {
                    (Some(store), _) => {
                        let card = parse_card(text).map_err(|e| {
                            Failure::Input(format!("{}: {}: {e}", path.display(), e.kind()))
                        })?;
                        store
                            .put(card)
                            .map_err(|e| Failure::Runtime(e.to_string()))?
                    }
                    (None, Backend::Remote(client, rt)) => {
                        Backend::call(client, rt, async |c| c.put_card(text).await)?.card
                    }
                    (None, Backend::Local) => unreachable!(),
                };
                println!("{}\tv{}", card.app_name(), card.version());
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn load_book(path: Option<&Path>) -> Result<GateBook, Failure> {
    match path {
        Some(p) if p.exists() => serde_json::from_str(&read(p)?)
            .map_err(|e| Failure::Input(format!("{}: {e}", p.display()))),
        _ => Ok(GateBook::new()),
    }
}

fn replay(
    backend: &Backend,
    config: &RunConfig,
    log_path: &Path,
    out: Option<&Path>,
    retrieve: bool,
    save_gate_state: Option<&Path>,
) -> Outcome {
    let text = read(log_path)?;
    let report: EpisodeReport = match backend {
        Backend::Local => {
            let log = read_episode_log(&text)
                .map_err(|e| Failure::Input(format!("{}: {e}", log_path.display())))?;
            if let Some(fault) = &log.fault {
                eprintln!(
                    "warning: {}: line {}: {}",
                    log_path.display(),
                    fault.line,
                    fault.message
                );
            }
            let clients = if retrieve {
                let paths = &config.paths;
                let clients = local_clients(
                    paths.corpus_docs.as_deref(),
                    paths.corpus_git.as_deref(),
                    paths.corpus_traj.as_deref(),
                );
                if clients.is_empty() {
                    return Err(Failure::Input(
                        "--retrieve needs at least one corpus".into(),
                    ));
                }
                clients
            } else {
                Vec::new()
            };
            let retrieval = Retrieval {
                clients: &clients,
                consolidator: &TemplateConsolidator,
            };
            let mut store = local_store(config)?;
            let mut book = GateBook::new();
            let report = replay_log(&log, config, Some(retrieval), &mut book, &mut store);
            if let Some(p) = save_gate_state {
                write(p, &to_json(&book))?;
            }
            report
        }
        Backend::Remote(client, rt) => {
            if save_gate_state.is_some() {
                return Err(Failure::Input(
                    "--save-gate-state is not available with --server".into(),
                ));
            }
            Backend::call(client, rt, async |c| c.replay(&text, retrieve).await)?
        }
    };

    let json = to_json(&report);
    match out {
        Some(p) => {
            write(p, &json)?;
            print!("{}", report.summary());
        }
        None => {
            print!("{json}");
            eprint!("{}", report.summary());
        }
    }
    Ok(match report.status {
        EpisodeStatus::Complete => ExitCode::SUCCESS,
        EpisodeStatus::Partial { .. } => ExitCode::from(PARTIAL),
    })
}

struct RetrieveArgs<'a> {
    app: &'a str,
    force: bool,
    gate_state: Option<&'a Path>,
    report: Option<InfoGainReport>,
    focus: &'a [String],
    out: Option<&'a Path>,
}

fn retrieve(backend: &Backend, config: &RunConfig, args: RetrieveArgs<'_>) -> Outcome {
    let mut book = load_book(args.gate_state)?;
    let (rendered, acc) = match backend {
        Backend::Local => {
            let paths = &config.paths;
            let clients = local_clients(
                paths.corpus_docs.as_deref(),
                paths.corpus_git.as_deref(),
                paths.corpus_traj.as_deref(),
            );
            if clients.is_empty() {
                return Err(Failure::Input(
                    "no corpora: pass --corpus-docs, --corpus-git or --corpus-traj".into(),
                ));
            }
            let mut store = local_store(config)?;
            let mut acc = book
                .get(args.app)
                .cloned()
                .unwrap_or_else(|| AppAccumulator::new(args.app));
            let request = RetrievalRequest {
                app_id: args.app,
                gate: &config.gate,
                report: args.report.as_ref(),
                actions: &[],
                clients: &clients,
                consolidator: &TemplateConsolidator,
                limits: config.retrieval,
                force: args.force,
                extra_focus: args.focus,
            };
            let card = retrieve_and_update(&request, &mut acc, &mut store).map_err(|e| match e {
                RetrievalError::GateNotTriggered { u, tau } => Failure::Refused(format!(
                    "gate for {} has not fired: U = {u} does not exceed tau = {tau}; pass --force to retrieve anyway",
                    args.app
                )),
                RetrievalError::Store(e) => Failure::Runtime(e.to_string()),
                RetrievalError::ConsolidatorFailure(m) => Failure::Runtime(m),
                other => Failure::Input(format!("{}: {other}", other.kind())),
            })?;
            if config.paths.store_root.is_none() {
                eprintln!("note: no --store-root, the new card is not persisted");
            }
            (render_card(&card), acc)
        }
        Backend::Remote(client, rt) => {
            let paths = &config.paths;
            let opt = |p: &Option<PathBuf>| p.as_deref().map(absolute);
            let req = RetrieveRequest {
                app: args.app.to_string(),
                report: args.report.clone(),
                actions: Vec::new(),
                force: args.force,
                focus: args.focus.to_vec(),
                max_units: Some(config.retrieval.max_units),
                accumulator: args.gate_state.map(|_| {
                    book.get(args.app)
                        .cloned()
                        .unwrap_or_else(|| AppAccumulator::new(args.app))
                }),
                corpora: CorpusPaths {
                    docs: opt(&paths.corpus_docs),
                    git: opt(&paths.corpus_git),
                    trajectories: opt(&paths.corpus_traj),
                },
            };
            let resp = Backend::call(client, rt, async |c| c.retrieve(&req).await)?;
            (resp.rendered, resp.accumulator)
        }
    };
    if let Some(p) = args.gate_state {
        book.insert(acc);
        write(p, &to_json(&book))?;
    }
    if let Some(p) = args.out {
        write(p, &rendered)?;
    }
    print!("{rendered}");
    Ok(ExitCode::SUCCESS)
}
