//! `engine eval`: scores a chat backend on a requirement corpus.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use drape_core::backend::mock::{MockTransport, Scenario};
use drape_core::backend::{BackendDescriptor, Capability, Gateway, GatewayConfig, HttpTransport};
use drape_core::eval::{
    gold_scenario, score_classification, score_splitting, EvalReport, ModelScorer, RequirementCase, RuleScorer,
};
use drape_core::exec::Exec;
use drape_core::store::BlobStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum EvalTaskArg {
    Split,
    Classify,
    All,
}

/// What `--backend` names.
pub enum EvalBackend {
    /// The rule-based planner paths.
    Rules,
    /// Mock chat server with the given scenario.
    Mock(Box<Scenario>, PathBuf),
    /// Remote chat server base URL.
    Remote(String),
}

/// `rules`, `mock`, `scripted` (answers every corpus prompt with the gold
/// answer), an `http(s)://` chat endpoint, or a mock scenario JSON file.
pub fn parse_backend(spec: &str, cases: &[RequirementCase]) -> Result<EvalBackend, String> {
    match spec {
        "rules" => Ok(EvalBackend::Rules),
        "mock" => Ok(EvalBackend::Mock(Box::new(Scenario::builtin()), PathBuf::from("."))),
        "scripted" => Ok(EvalBackend::Mock(Box::new(gold_scenario(cases)), PathBuf::from("."))),
        s if s.starts_with("http://") || s.starts_with("https://") => Ok(EvalBackend::Remote(s.to_string())),
        path => {
            let path = Path::new(path);
            let src = std::fs::read_to_string(path)
                .map_err(|e| format!("backend `{}` is neither a known name nor a readable scenario: {e}", path.display()))?;
            let base = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
            Ok(EvalBackend::Mock(Box::new(Scenario::from_json(&src)?), base))
        }
    }
}

pub fn run_eval(
    label: &str,
    cases: &[RequirementCase],
    backend: EvalBackend,
    task: EvalTaskArg,
    exec: Exec,
) -> Result<EvalReport, String> {
    let mut report = EvalReport::new(label);
    let split = matches!(task, EvalTaskArg::Split | EvalTaskArg::All);
    let classify = matches!(task, EvalTaskArg::Classify | EvalTaskArg::All);
    if let EvalBackend::Rules = backend {
        if split {
            score_splitting(&mut report, cases, &RuleScorer, exec);
        }
        if classify {
            score_classification(&mut report, cases, &RuleScorer, exec);
        }
        return Ok(report);
    }

    let scratch = tempfile::tempdir().map_err(|e| e.to_string())?;
    let store = Arc::new(BlobStore::open(scratch.path()).map_err(|e| e.to_string())?);
    let mut config = GatewayConfig::all_mock();
    let mock = match backend {
        EvalBackend::Mock(scenario, base) => MockTransport::new(*scenario, base),
        EvalBackend::Remote(url) => {
            for d in &mut config.backends {
                if d.capability == Capability::Chat {
                    *d = BackendDescriptor::remote(Capability::Chat, url.clone());
                }
            }
            MockTransport::builtin()
        }
        EvalBackend::Rules => unreachable!(),
    };
    let gateway = Gateway::with_transports(config, store, Arc::new(HttpTransport::new()), Arc::new(mock))
        .map_err(|e| e.to_string())?;
    let scorer = ModelScorer(&gateway);
    if split {
        score_splitting(&mut report, cases, &scorer, exec);
    }
    if classify {
        score_classification(&mut report, cases, &scorer, exec);
    }
    Ok(report)
}
