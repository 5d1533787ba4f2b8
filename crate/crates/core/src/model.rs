//! The four networks trained together in an experiment.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, DenseNet, GradientTape};
use crate::scalar::Scalar;

/// Layer widths for the model bundle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Architecture {
    pub input_dim: usize,
    /// Hidden relu widths of the feature extractor.
    pub feature_hidden: Vec<usize>,
    pub repr_dim: usize,
    /// Hidden relu widths of both discriminators.
    pub disc_hidden: Vec<usize>,
    pub classes: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            input_dim: 2,
            feature_hidden: vec![64, 64],
            repr_dim: 16,
            disc_hidden: vec![64],
            classes: 2,
        }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.repr_dim == 0 || self.classes < 2 {
            return Err(Error::contract("architecture needs positive dims and at least two classes"));
        }
        if self.feature_hidden.contains(&0) || self.disc_hidden.contains(&0) {
            return Err(Error::contract("hidden widths must be positive"));
        }
        Ok(())
    }
}

/// Feature extractor, classifier head, class-level discriminator and the
/// binary domain discriminator used by the AADA baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle<T> {
    /// `X → Z`, relu hidden layers and a relu representation.
    pub features: DenseNet<T>,
    /// `Z → Δ^c`, linear + softmax.
    pub classifier: DenseNet<T>,
    /// `Z → [0,1]^c`, independent per-class sigmoids.
    pub class_disc: DenseNet<T>,
    /// `Z → [0,1]`, probability that a representation comes from the target domain.
    pub domain_disc: DenseNet<T>,
}

impl<T: Scalar> ModelBundle<T> {
    pub fn init<R: Rng + ?Sized>(arch: &Architecture, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let mut fdims = vec![arch.input_dim];
        fdims.extend(&arch.feature_hidden);
        fdims.push(arch.repr_dim);
        let features = DenseNet::mlp(&fdims, Activation::Relu, Activation::Relu, rng)?;
        let classifier = DenseNet::mlp(&[arch.repr_dim, arch.classes], Activation::Identity, Activation::Softmax, rng)?;
        let mut ddims = vec![arch.repr_dim];
        ddims.extend(&arch.disc_hidden);
        ddims.push(arch.classes);
        let class_disc = DenseNet::mlp(&ddims, Activation::Relu, Activation::Sigmoid, rng)?;
        *ddims.last_mut().unwrap() = 1;
        let domain_disc = DenseNet::mlp(&ddims, Activation::Relu, Activation::Sigmoid, rng)?;
        Ok(ModelBundle {
            features,
            classifier,
            class_disc,
            domain_disc,
        })
    }

    pub fn classes(&self) -> usize {
        self.classifier.output_dim()
    }

    pub fn repr_dim(&self) -> usize {
        self.features.output_dim()
    }

    pub fn represent(&self, x: &[T]) -> Result<Vec<T>> {
        self.features.forward(x)
    }

    /// `h(x) = f(φ(x))`.
    pub fn predict(&self, x: &[T]) -> Result<Vec<T>> {
        self.classifier.forward(&self.features.forward(x)?)
    }

    pub fn named_nets(&self) -> [(&'static str, &DenseNet<T>); 4] {
        [
            ("features", &self.features),
            ("classifier", &self.classifier),
            ("class_disc", &self.class_disc),
            ("domain_disc", &self.domain_disc),
        ]
    }

    pub fn from_named(nets: Vec<(String, DenseNet<T>)>) -> Result<Self> {
        let take = |name: &str| {
            nets.iter()
                .find(|(n, _)| n == name)
                .map(|(_, net)| net.clone())
                .ok_or_else(|| Error::parse("checkpoint", format!("missing network `{name}`")))
        };
        Ok(ModelBundle {
            features: take("features")?,
            classifier: take("classifier")?,
            class_disc: take("class_disc")?,
            domain_disc: take("domain_disc")?,
        })
    }
}

/// One gradient tape per network of a [`ModelBundle`].
#[derive(Debug, Clone)]
pub struct BundleTapes<T> {
    pub features: GradientTape<T>,
    pub classifier: GradientTape<T>,
    pub class_disc: GradientTape<T>,
    pub domain_disc: GradientTape<T>,
}

impl<T: Scalar> BundleTapes<T> {
    pub fn for_bundle(m: &ModelBundle<T>) -> Self {
        BundleTapes {
            features: GradientTape::for_net(&m.features),
            classifier: GradientTape::for_net(&m.classifier),
            class_disc: GradientTape::for_net(&m.class_disc),
            domain_disc: GradientTape::for_net(&m.domain_disc),
        }
    }

    pub fn clear(&mut self) {
        self.features.clear();
        self.classifier.clear();
        self.class_disc.clear();
        self.domain_disc.clear();
    }
}
