//! End-to-end adaptation methods over a feature bundle.
//!
//! | method         | adaptation                                              | inference            |
//! |----------------|---------------------------------------------------------|----------------------|
//! | `source`       | none                                                    | argmax of logits     |
//! | `pda`          | confidence-weighted prototypes from model pseudo-labels | nearest prototype    |
//! | `pda-mcd`      | RoG re-labels the target set, then as `pda`             | nearest prototype    |
//! | `mcd-direct`   | RoG fitted on model pseudo-labels                       | RoG posterior argmax |
//! | `upper`        | prototypes from the true labels                         | nearest prototype    |
//! | `onehot-proto` | unweighted prototypes from model pseudo-labels          | nearest prototype    |

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use ndarray::{ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::bundle_io::FeatureBundle;
use crate::classify::{nearest_prototype, AccuracyReport, Metric};
use crate::error::{PdaError, Result};
use crate::prototypes::{
    build_prototypes, build_prototypes_onehot, build_prototypes_true,
    build_prototypes_true_weighted, PrototypeSet,
};
use crate::pseudo_label::{argmax, pseudo_labels, PseudoLabeling};
use crate::rog::{fit_rog, rog_posterior, RogConfig, RogModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Source,
    Pda,
    PdaMcd,
    McdDirect,
    Upper,
    OnehotProto,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Source,
        Method::Pda,
        Method::PdaMcd,
        Method::McdDirect,
        Method::Upper,
        Method::OnehotProto,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Source => "source",
            Method::Pda => "pda",
            Method::PdaMcd => "pda-mcd",
            Method::McdDirect => "mcd-direct",
            Method::Upper => "upper",
            Method::OnehotProto => "onehot-proto",
        }
    }

    pub fn needs_labels(self) -> bool {
        self == Method::Upper
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Method::ALL.iter().map(|m| m.name()).collect();
                format!("unknown method '{s}' (expected one of {})", names.join(", "))
            })
    }
}

fn default_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Fully resolved settings; echoed into every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub metric: Metric,
    pub rog: RogConfig,
    /// `pda-mcd` builds unweighted prototypes from the RoG labels.
    pub onehot: bool,
    /// `upper` weights each example by the model's probability of its true
    /// class instead of 1.
    pub upper_weighted: bool,
    pub threads: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            metric: Metric::Cosine,
            rog: RogConfig::default(),
            onehot: false,
            upper_weighted: false,
            threads: default_threads(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    pub predictions: Vec<usize>,
    /// Seconds spent building prototypes / fitting RoG.
    pub adapt_time_s: f64,
    /// Seconds spent classifying the target set.
    pub infer_time_s: f64,
    /// Classes the adapted model can never predict.
    pub num_absent_classes: usize,
    pub config_echo: PipelineConfig,
}

impl RunReport {
    pub fn accuracy_report(&self, bundle: &FeatureBundle) -> Option<Result<AccuracyReport>> {
        bundle
            .labels()
            .map(|labels| AccuracyReport::new(&self.predictions, labels, bundle.num_classes()))
    }
}

/// What adaptation produced; applies to any features of the right width.
#[derive(Debug, Clone)]
pub enum AdaptedModel {
    /// The pre-trained classifier, i.e. the bundle logits.
    Source,
    Prototypes { protos: PrototypeSet, metric: Metric },
    Rog(RogModel),
}

impl AdaptedModel {
    pub fn num_absent_classes(&self) -> usize {
        match self {
            AdaptedModel::Source => 0,
            AdaptedModel::Prototypes { protos, .. } => protos.absent_classes().len(),
            AdaptedModel::Rog(model) => model.present().iter().filter(|&&p| !p).count(),
        }
    }

    /// Predicts the bundle's examples.
    pub fn predict(&self, bundle: &FeatureBundle) -> Result<Vec<usize>> {
        match self {
            AdaptedModel::Source => Ok(argmax_rows(bundle.logits().view())),
            AdaptedModel::Prototypes { protos, metric } => {
                Ok(nearest_prototype(bundle.features().view(), protos, *metric)?.labels)
            }
            AdaptedModel::Rog(model) => {
                let post = rog_posterior(model, bundle.features().view())?;
                Ok(argmax_rows(post.view()))
            }
        }
    }

    pub fn prototypes(&self) -> Option<&PrototypeSet> {
        match self {
            AdaptedModel::Prototypes { protos, .. } => Some(protos),
            _ => None,
        }
    }
}

fn argmax_rows(m: ArrayView2<f64>) -> Vec<usize> {
    m.axis_iter(Axis(0)).map(argmax).collect()
}

/// Pseudo-labels re-derived from the RoG posterior over the target set.
pub fn rog_relabel(bundle: &FeatureBundle, model: &RogModel) -> Result<PseudoLabeling> {
    pseudo_labels(rog_posterior(model, bundle.features().view())?)
}

/// Runs the adaptation step of `method` on `bundle` in the current thread pool.
pub fn adapt(bundle: &FeatureBundle, method: Method, cfg: &PipelineConfig) -> Result<AdaptedModel> {
    let prototypes = |protos| AdaptedModel::Prototypes {
        protos,
        metric: cfg.metric,
    };
    let model_labels = || PseudoLabeling::from_logits(bundle.logits().view());
    Ok(match method {
        Method::Source => AdaptedModel::Source,
        Method::Pda => prototypes(build_prototypes(bundle, &model_labels()?)?),
        Method::OnehotProto => prototypes(build_prototypes_onehot(bundle, &model_labels()?)?),
        Method::PdaMcd => {
            let rog = fit_rog(bundle, &model_labels()?, &cfg.rog)?;
            let relabeled = rog_relabel(bundle, &rog)?;
            if cfg.onehot {
                prototypes(build_prototypes_onehot(bundle, &relabeled)?)
            } else {
                prototypes(build_prototypes(bundle, &relabeled)?)
            }
        }
        Method::McdDirect => AdaptedModel::Rog(fit_rog(bundle, &model_labels()?, &cfg.rog)?),
        Method::Upper => {
            if bundle.labels().is_none() {
                return Err(PdaError::Precondition(
                    "method 'upper' needs a bundle with labels".into(),
                ));
            }
            if cfg.upper_weighted {
                prototypes(build_prototypes_true_weighted(bundle, &model_labels()?)?)
            } else {
                prototypes(build_prototypes_true(bundle)?)
            }
        }
    })
}

fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    if threads == 0 {
        return Err(PdaError::Precondition("thread count must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| PdaError::State(format!("cannot start thread pool: {e}")))
}

/// Adapts with `method` and classifies the bundle's own examples.
pub fn run_method(bundle: &FeatureBundle, method: Method, cfg: &PipelineConfig) -> Result<RunReport> {
    let pool = thread_pool(cfg.threads)?;
    pool.install(|| {
        let started = Instant::now();
        let model = adapt(bundle, method, cfg)?;
        let adapt_time_s = started.elapsed().as_secs_f64();

        let started = Instant::now();
        let predictions = model.predict(bundle)?;
        let infer_time_s = started.elapsed().as_secs_f64();

        let accuracy = bundle
            .labels()
            .map(|labels| crate::classify::accuracy(&predictions, labels))
            .transpose()?;
        log::debug!(
            "{method}: adapt {adapt_time_s:.4}s, infer {infer_time_s:.4}s, accuracy {accuracy:?}"
        );
        Ok(RunReport {
            method,
            accuracy,
            predictions,
            adapt_time_s,
            infer_time_s,
            num_absent_classes: model.num_absent_classes(),
            config_echo: cfg.clone(),
        })
    })
}

/// Every method applicable to the bundle, in [`Method::ALL`] order; `upper`
/// is skipped when the bundle has no labels.
pub fn run_all(bundle: &FeatureBundle, cfg: &PipelineConfig) -> Result<Vec<RunReport>> {
    Method::ALL
        .into_iter()
        .filter(|m| !m.needs_labels() || bundle.labels().is_some())
        .map(|m| run_method(bundle, m, cfg))
        .collect()
}
