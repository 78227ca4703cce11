//! Encoder backbones and the registry that rebuilds them by name.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::ScorerError;

/// Maps texts to fixed-width pooled vectors.
///
/// Implementations must be deterministic for fixed weights; each backbone
/// picks its own pooling (first position for transformers, mean for the
/// toy embedding).
pub trait Backbone: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;

    fn dim(&self) -> usize;

    fn encode_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, ScorerError>;

    /// Settings needed to rebuild this backbone from a checkpoint.
    fn spec(&self) -> BackboneSpec {
        BackboneSpec {
            name: self.name().to_string(),
            params: BTreeMap::new(),
        }
    }
}

/// Name plus string parameters; stored in checkpoint headers and configs.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, String>,
}

impl Default for BackboneSpec {
    fn default() -> Self {
        Self {
            name: super::toy::TOY_BACKBONE_NAME.to_string(),
            params: BTreeMap::new(),
        }
    }
}

type Factory = Box<dyn Fn(&BackboneSpec) -> Result<Arc<dyn Backbone>, ScorerError> + Send + Sync>;

/// Backbone plug-ins keyed by name.
pub struct BackboneRegistry {
    factories: BTreeMap<String, Factory>,
}

impl fmt::Debug for BackboneRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BackboneRegistry")
            .field("names", &self.factories.keys().collect::<Vec<_>>())
            .finish()
    }
}

impl BackboneRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    pub fn register<F>(&mut self, name: impl Into<String>, factory: F)
    where
        F: Fn(&BackboneSpec) -> Result<Arc<dyn Backbone>, ScorerError> + Send + Sync + 'static,
    {
        self.factories.insert(name.into(), Box::new(factory));
    }

    pub fn build(&self, spec: &BackboneSpec) -> Result<Arc<dyn Backbone>, ScorerError> {
        let factory = self
            .factories
            .get(&spec.name)
            .ok_or_else(|| ScorerError::UnknownBackbone(spec.name.clone()))?;
        factory(spec)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }
}

impl Default for BackboneRegistry {
    /// The toy hashed embedding and the external-command bridge.
    fn default() -> Self {
        let mut reg = Self::empty();
        reg.register(super::toy::TOY_BACKBONE_NAME, |spec| {
            Ok(Arc::new(super::toy::HashedBagBackbone::from_spec(spec)?) as Arc<dyn Backbone>)
        });
        reg.register(super::command::COMMAND_BACKBONE_NAME, |spec| {
            Ok(Arc::new(super::command::CommandBackbone::from_spec(spec)?) as Arc<dyn Backbone>)
        });
        reg
    }
}
