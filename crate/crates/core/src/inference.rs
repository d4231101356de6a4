//! Prediction on images of arbitrary size with one model or a probability-averaging ensemble.

use crate::data::{normalize, resize_bilinear, resize_nearest, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{self, EvalReport, SamplePrediction};
use crate::model::{binarize, MultiTaskModel};
use crate::tensor::Tensor;

/// One or more models sharing an input size. With several models the
/// segmentation map and both probabilities are averaged before thresholding.
#[derive(Clone, Debug)]
pub struct Predictor {
    models: Vec<MultiTaskModel>,
}

impl Predictor {
    pub fn new(models: Vec<MultiTaskModel>) -> Result<Predictor> {
        let first = models.first().ok_or_else(|| Error::Config("no models given".into()))?;
        let size = first.config().input_size;
        if let Some(m) = models.iter().find(|m| m.config().input_size != size) {
            return Err(Error::Config(format!(
                "ensemble members disagree on input size: {:?} vs {:?}",
                size,
                m.config().input_size
            )));
        }
        Ok(Predictor { models })
    }

    pub fn input_size(&self) -> [usize; 2] {
        self.models[0].config().input_size
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    /// Resizes a raw `[3, h, w]` image to the model size, normalizes it, and
    /// returns the mask resized back to `h x w` with nearest-neighbour.
    pub fn predict_image(&self, id: &str, image: &Tensor) -> Result<SamplePrediction> {
        let (c, h, w) = image.dims3()?;
        if c != 3 {
            return Err(Error::Evaluation { id: id.into(), reason: format!("expected an RGB image, got {c} channel(s)") });
        }
        let [mh, mw] = self.input_size();
        let x = normalize(&resize_bilinear(image, mh, mw)?)?;
        let x = Tensor::stack(&[&x])?;
        let k = self.models.len() as f64;
        let mut seg = Tensor::zeros(&[1, 1, mh, mw])?;
        let (mut p_mel, mut p_sk) = (0.0, 0.0);
        for m in &self.models {
            let out = m.infer(&x)?;
            seg.add_assign(&out.seg_prob)?;
            p_mel += out.p_melanoma.data()[0];
            p_sk += out.p_sk.data()[0];
        }
        let seg = seg.map(|v| v / k).reshape(&[1, mh, mw])?;
        let mask = resize_nearest(&binarize(&seg), h, w)?;
        Ok(SamplePrediction { id: id.into(), mask, p_melanoma: p_mel / k, p_sk: p_sk / k })
    }

    /// Predictions at each sample's own resolution.
    pub fn predict_dataset(&self, ds: &Dataset) -> Result<Vec<SamplePrediction>> {
        ds.samples().iter().map(|s| self.predict_image(&s.id, &s.image)).collect()
    }

    pub fn evaluate(&self, ds: &Dataset) -> Result<EvalReport> {
        metrics::evaluate(&self.predict_dataset(ds)?, ds)
    }
}
