//! End-to-end frame-to-lambda model and its file format.

use std::path::Path;

use crate::ann::{forward, MlpModel, Regressor};
use crate::dataset::Standardizer;
use crate::error::{Error, Result};
use crate::features::Featurizer;
use crate::imaging::RgbImage;
use crate::textfmt::{TextFields, TextWriter};

const FORMAT: &str = "flamesense-predictor";
const VERSION: u32 = 1;

/// Featurizer, training-split standardizer and network in one unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    pub featurizer: Featurizer,
    pub standardizer: Standardizer,
    pub network: MlpModel,
}

impl Predictor {
    pub fn new(featurizer: Featurizer, standardizer: Standardizer, network: MlpModel) -> Result<Self> {
        let d = featurizer.kind.feature_len();
        if standardizer.dim() != d || network.input_dim() != d {
            return Err(Error::DimensionMismatch(format!(
                "features {d}, standardizer {}, network {}",
                standardizer.dim(),
                network.input_dim()
            )));
        }
        Ok(Self {
            featurizer,
            standardizer,
            network,
        })
    }

    pub fn predict_features(&self, features: &[f64]) -> Result<f64> {
        forward(&self.network, &self.standardizer.apply_row(features)?)
    }

    pub fn predict_image(&self, img: &RgbImage) -> Result<f64> {
        self.predict_features(&self.featurizer.extract(img)?)
    }

    pub fn to_text(&self) -> String {
        let mut w = TextWriter::new(FORMAT, VERSION);
        w.field("input_dim", self.network.input_dim())
            .field("hidden", self.network.hidden())
            .f64s("network.w1", &self.network.w1)
            .f64s("network.b1", &self.network.b1)
            .f64s("network.w2", &self.network.w2)
            .f64("network.b2", self.network.b2)
            .f64s("standardizer.mean", &self.standardizer.mean)
            .f64s("standardizer.std", &self.standardizer.std);
        self.featurizer.write_fields(&mut w);
        w.finish()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let f = TextFields::parse(text, FORMAT, VERSION)?;
        let (d, h) = (f.usize("input_dim")?, f.usize("hidden")?);
        let mut params = f.f64s("network.w1")?;
        params.extend(f.f64s("network.b1")?);
        params.extend(f.f64s("network.w2")?);
        params.push(f.f64("network.b2")?);
        let network = MlpModel::from_params(d, h, &params).map_err(|e| Error::CorruptModel(e.to_string()))?;
        let standardizer = Standardizer {
            mean: f.f64s("standardizer.mean")?,
            std: f.f64s("standardizer.std")?,
        };
        if standardizer.std.len() != standardizer.mean.len() || standardizer.std.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::CorruptModel("invalid standardizer".into()));
        }
        Self::new(Featurizer::read_fields(&f)?, standardizer, network).map_err(|e| Error::CorruptModel(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}
