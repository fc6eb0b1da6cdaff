//! Wiring: store, gateway, planner tables and the cosegmentation cache.

use std::collections::HashMap;
use std::fs;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::automask::OcclusionRuleTable;
use crate::backend::{BackendError, Backends, Gateway};
use crate::config::EngineConfig;
use crate::coseg::{
    build_cosegmentation, derive_semantics_lenient, load_cosegmentation, store_cosegmentation, CoSegmentation,
    DerivedSemanticRule, FusionRuleTable, SynonymTable,
};
use crate::planner::{CosegSource, Planner, PlannerError, ProgressEvent};
use crate::resources;
use crate::store::{BlobStore, ContentHash, StoreError};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("engine I/O: {0}")]
    Io(#[from] std::io::Error),
}

type Slot = Arc<Mutex<Option<(Arc<CoSegmentation>, ContentHash)>>>;

pub struct Engine {
    config: EngineConfig,
    store: Arc<BlobStore>,
    gateway: Option<Arc<Gateway>>,
    backends: Backends,
    synonyms: SynonymTable,
    occlusion: OcclusionRuleTable,
    fusion: FusionRuleTable,
    derived: Vec<DerivedSemanticRule>,
    cosegs: Mutex<HashMap<ContentHash, Slot>>,
}

impl Engine {
    /// Opens the store under `config.data_dir` and a gateway built from
    /// the config.
    pub fn open(config: EngineConfig) -> Result<Self, EngineError> {
        let store = Arc::new(BlobStore::open(config.store_dir())?);
        let gateway = Arc::new(Gateway::new(config.gateway_config(), store.clone())?);
        let backends = Backends::from_gateway(gateway.clone());
        Self::assemble(config, store, Some(gateway), backends)
    }

    /// Uses the given backends instead of a gateway.
    pub fn with_backends(config: EngineConfig, store: Arc<BlobStore>, backends: Backends) -> Result<Self, EngineError> {
        Self::assemble(config, store, None, backends)
    }

    /// Uses an existing gateway (e.g. one with custom transports).
    pub fn with_gateway(config: EngineConfig, gateway: Arc<Gateway>) -> Result<Self, EngineError> {
        let backends = Backends::from_gateway(gateway.clone());
        Self::assemble(config, gateway.store().clone(), Some(gateway), backends)
    }

    fn assemble(
        config: EngineConfig,
        store: Arc<BlobStore>,
        gateway: Option<Arc<Gateway>>,
        backends: Backends,
    ) -> Result<Self, EngineError> {
        fs::create_dir_all(&config.data_dir)?;
        fs::create_dir_all(config.data_dir.join("coseg"))?;
        Ok(Self {
            config,
            store,
            gateway,
            backends,
            synonyms: resources::synonyms(),
            occlusion: resources::occlusion_rules(),
            fusion: resources::fusion_rules(),
            derived: resources::derived_semantics(),
            cosegs: Mutex::new(HashMap::new()),
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn store(&self) -> &Arc<BlobStore> {
        &self.store
    }

    pub fn gateway(&self) -> Option<&Arc<Gateway>> {
        self.gateway.as_ref()
    }

    pub fn backends(&self) -> &Backends {
        &self.backends
    }

    pub fn planner<'a>(&'a self, observer: Option<&'a (dyn Fn(&ProgressEvent) + Sync)>) -> Planner<'a> {
        Planner {
            backends: &self.backends,
            store: &self.store,
            synonyms: &self.synonyms,
            occlusion: &self.occlusion,
            config: &self.config.planner,
            coseg: self,
            job_log: Some(self.config.job_log()),
            observer,
        }
    }

    fn index_path(&self, image: &ContentHash) -> PathBuf {
        self.config.data_dir.join("coseg").join(image.as_str())
    }

    /// Hash of the stored cosegmentation manifest for `image`, computing
    /// it if needed.
    pub fn coseg_manifest(&self, image: &ContentHash) -> Result<ContentHash, PlannerError> {
        self.cached(image).map(|(_, h)| h)
    }

    fn cached(&self, image: &ContentHash) -> Result<(Arc<CoSegmentation>, ContentHash), PlannerError> {
        let slot = self
            .cosegs
            .lock()
            .expect("coseg cache poisoned")
            .entry(image.clone())
            .or_default()
            .clone();
        let mut guard = slot.lock().expect("coseg slot poisoned");
        if let Some(hit) = guard.as_ref() {
            return Ok(hit.clone());
        }
        let entry = match self.load_persisted(image) {
            Some(hit) => hit,
            None => {
                let coseg = Arc::new(self.compute(image)?);
                let (manifest, _) =
                    store_cosegmentation(&coseg, &self.store).map_err(|e| PlannerError::Pipeline(e.to_string()))?;
                fs::write(self.index_path(image), manifest.as_str())?;
                (coseg, manifest)
            }
        };
        *guard = Some(entry.clone());
        Ok(entry)
    }

    fn load_persisted(&self, image: &ContentHash) -> Option<(Arc<CoSegmentation>, ContentHash)> {
        let hash: ContentHash = fs::read_to_string(self.index_path(image)).ok()?.trim().parse().ok()?;
        match load_cosegmentation(&self.store, &hash) {
            Ok(c) => Some((Arc::new(c), hash)),
            Err(e) => {
                tracing::warn!(error = %e, "stored cosegmentation unreadable, recomputing");
                None
            }
        }
    }

    fn compute(&self, image: &ContentHash) -> Result<CoSegmentation, PlannerError> {
        let parsing = self.backends.parser.parse_human(image)?;
        let pose = self.backends.pose.pose_parts(image)?;
        let base = build_cosegmentation(&parsing, &pose, &self.fusion)
            .map_err(|e| PlannerError::Pipeline(format!("cosegmentation: {e}")))?;
        let (coseg, errors) = derive_semantics_lenient(&base, &self.derived);
        for e in errors {
            tracing::warn!(error = %e, "derived semantic left empty");
        }
        Ok(coseg)
    }
}

impl CosegSource for Engine {
    fn cosegmentation(&self, image: &ContentHash) -> Result<Arc<CoSegmentation>, PlannerError> {
        self.cached(image).map(|(c, _)| c)
    }
}
