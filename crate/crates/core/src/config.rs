//! Backend configuration: which kinds are mocked and which are remote.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::backend::mock::MockConfig;
use crate::backend::remote::RemoteBackend;
use crate::backend::{BackendHandles, BackendKind, BackendSuite, DEFAULT_CONCURRENCY_LIMIT};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendsConfig {
    /// Kind to `"mock"` or a base URL. Missing kinds fall back to `default`.
    pub backends: BTreeMap<BackendKind, String>,
    pub default: String,
    pub mock: MockConfig,
    /// Concurrent calls allowed per backend kind.
    pub concurrency_limit: usize,
    pub timeout_ms: u64,
}

impl Default for BackendsConfig {
    fn default() -> Self {
        Self {
            backends: BTreeMap::new(),
            default: "mock".into(),
            mock: MockConfig::default(),
            concurrency_limit: DEFAULT_CONCURRENCY_LIMIT,
            timeout_ms: 120_000,
        }
    }
}

impl BackendsConfig {
    pub fn mock(mock: MockConfig) -> Self {
        Self {
            mock,
            ..Self::default()
        }
    }

    /// Every kind served by one remote base URL.
    pub fn remote(url: &str) -> Self {
        Self {
            default: url.to_string(),
            ..Self::default()
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn endpoint(&self, kind: BackendKind) -> &str {
        self.backends.get(&kind).unwrap_or(&self.default)
    }

    pub fn check(&self) -> Result<()> {
        if self.concurrency_limit == 0 {
            return Err(Error::InvalidConfig("concurrency_limit must be at least 1".into()));
        }
        for kind in BackendKind::ALL {
            let e = self.endpoint(kind);
            if e != "mock" && !(e.starts_with("http://") || e.starts_with("https://")) {
                return Err(Error::InvalidConfig(format!("{kind}: expected \"mock\" or an http(s) URL, got {e:?}")));
            }
        }
        Ok(())
    }

    pub fn handles(&self) -> Result<BackendHandles> {
        self.check()?;
        let mut h = BackendHandles::mock(self.mock.clone());
        let timeout = Duration::from_millis(self.timeout_ms);
        let mut remotes: BTreeMap<&str, Arc<RemoteBackend>> = BTreeMap::new();
        for kind in BackendKind::ALL {
            let url = self.endpoint(kind);
            if url == "mock" {
                continue;
            }
            let r = remotes
                .entry(url)
                .or_insert_with(|| Arc::new(RemoteBackend::new(url, timeout)))
                .clone();
            match kind {
                BackendKind::Llm => h.llm = r,
                BackendKind::Vlm => h.vlm = r,
                BackendKind::Detector => h.detector = r,
                BackendKind::Segmenter => h.segmenter = r,
                BackendKind::Inpainter => h.inpainter = r,
                BackendKind::Editor => h.editor = r,
                BackendKind::LayoutGenerator => h.layout_generator = r,
                BackendKind::ObjectGenerator => h.object_generator = r,
                BackendKind::Refiner => h.refiner = r,
            }
        }
        Ok(h)
    }

    pub fn suite(&self) -> Result<BackendSuite> {
        Ok(BackendSuite::new(self.handles()?, self.concurrency_limit))
    }
}
