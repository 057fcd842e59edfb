//! Builds live backends from session configs.

use cpe_core::backend::{BackendConfig, BackendError, ChatBackend, ScriptedBackend};

use crate::remote::RemoteBackend;

/// A backend for `cfg`. Scripted backends skip the `consumed` responses
/// already recorded in the session, so a restarted service continues the
/// script where it stopped.
pub fn make_backend(cfg: &BackendConfig, consumed: u64) -> Result<Box<dyn ChatBackend + Send>, BackendError> {
    match cfg {
        BackendConfig::Scripted { .. } => {
            let consumed = usize::try_from(consumed).unwrap_or(usize::MAX);
            Ok(Box::new(ScriptedBackend::from_config(cfg, consumed).expect("scripted config")))
        }
        BackendConfig::Remote { .. } => Ok(Box::new(RemoteBackend::from_config(cfg)?)),
    }
}
