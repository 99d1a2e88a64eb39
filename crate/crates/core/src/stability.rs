//! Repeated adaptation runs under different initialisations, summarised by
//! the spread of the resulting target-domain scores.

use serde::{Deserialize, Serialize};

use crate::adaptation::{train_adaptation, AdaptationConfig, AdaptationState};
use crate::baselines::{run_setting, Setting, SettingInputs};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::par;
use crate::segmenter::Segmenter;

/// Sample mean and standard deviation (`n - 1` denominator; 0 for `n < 2`).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityRun {
    pub seed: u64,
    pub dice: f64,
    pub asd: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityEntry {
    pub lambda_sem: f64,
    pub runs: Vec<StabilityRun>,
    pub dice_mean: f64,
    pub dice_std: f64,
    /// Over runs with a defined ASD.
    pub asd_mean: Option<f64>,
    pub asd_std: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub epochs: usize,
    pub entries: Vec<StabilityEntry>,
}

impl StabilityReport {
    pub fn entry(&self, lambda_sem: f64) -> Option<&StabilityEntry> {
        self.entries.iter().find(|e| e.lambda_sem == lambda_sem)
    }

    pub fn table(&self) -> String {
        let mut s = String::from("| lambda_sem | runs | Dice mean | Dice std | ASD mean | ASD std |\n|---|---|---|---|---|---|\n");
        for e in &self.entries {
            let f = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.3}"));
            s.push_str(&format!(
                "| {} | {} | {:.3} | {:.3} | {} | {} |\n",
                e.lambda_sem,
                e.runs.len(),
                e.dice_mean,
                e.dice_std,
                f(e.asd_mean),
                f(e.asd_std)
            ));
        }
        s
    }
}

/// Data and model shared by every run of a study.
#[derive(Clone, Copy)]
pub struct StudyData<'a> {
    pub segmenter: &'a Segmenter<f32>,
    pub source_train: &'a Dataset,
    pub target_train: &'a Dataset,
    pub target_test: &'a Dataset,
}

/// Trains one adaptation model per `(lambda, seed)` pair and scores it on
/// the target test set. Runs are independent and execute in parallel.
pub fn run_stability(
    config: &AdaptationConfig,
    lambdas: &[f64],
    seeds: &[u64],
    epochs: usize,
    data: StudyData<'_>,
) -> Result<StabilityReport> {
    if seeds.len() < 2 {
        return Err(Error::Config(format!("a stability study needs at least 2 runs, got {}", seeds.len())));
    }
    if lambdas.is_empty() {
        return Err(Error::Empty("lambda values"));
    }
    let jobs: Vec<(f64, u64)> = lambdas.iter().flat_map(|&l| seeds.iter().map(move |&s| (l, s))).collect();
    let results = par::map(&jobs, |&(lambda, seed)| -> Result<StabilityRun> {
        let mut cfg = config.clone();
        cfg.weights.lambda_sem = lambda;
        let state = AdaptationState::<f32>::build(&cfg, seed)?;
        let (state, _) = train_adaptation(&state, data.segmenter, data.source_train, data.target_train, epochs)?;
        let inputs = SettingInputs {
            segmenter: Some(data.segmenter),
            target_test: Some(data.target_test),
            seuda: Some(&state),
            ..Default::default()
        };
        let report = run_setting(Setting::SeUda, &inputs)?;
        Ok(StabilityRun {
            seed,
            dice: report.mean_dice(),
            asd: report.mean_asd(),
        })
    });
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    let entries = lambdas
        .iter()
        .enumerate()
        .map(|(i, &lambda_sem)| {
            let runs = results[i * seeds.len()..(i + 1) * seeds.len()].to_vec();
            let dice: Vec<f64> = runs.iter().map(|r| r.dice).collect();
            let asd: Vec<f64> = runs.iter().filter_map(|r| r.asd).collect();
            let (dice_mean, dice_std) = mean_std(&dice);
            let (asd_mean, asd_std) = if asd.is_empty() {
                (None, None)
            } else {
                let (m, s) = mean_std(&asd);
                (Some(m), Some(s))
            };
            StabilityEntry {
                lambda_sem,
                runs,
                dice_mean,
                dice_std,
                asd_mean,
                asd_std,
            }
        })
        .collect();
    Ok(StabilityReport { epochs, entries })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_statistics() {
        assert_eq!(mean_std(&[3.0, 3.0]), (3.0, 0.0));
        let (m, s) = mean_std(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!(m, 5.0);
        assert!((s - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
        assert_eq!(mean_std(&[1.5]), (1.5, 0.0));
    }
}
