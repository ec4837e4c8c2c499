//! Classification evaluation metrics (accuracy, NLL, ECE) and post-hoc
//! temperature scaling.

use thiserror::Error;

use crate::numerics::Matrix;

/// Floor applied to probabilities inside the NLL so it stays finite.
pub const PROB_CLIP: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("batch is empty")]
    EmptyBatch,
    #[error("row {row} sums to {sum}, not 1 within 1e-8")]
    RowNotNormalized { row: usize, sum: f64 },
    #[error("probability out of range at ({row}, {col}): {value}")]
    ProbOutOfRange { row: usize, col: usize, value: f64 },
    #[error("label {label} out of range for {classes} classes at row {row}")]
    LabelOutOfRange {
        row: usize,
        label: usize,
        classes: usize,
    },
    #[error("temperature fitting needs at least two distinct labels")]
    DegenerateValidationSet,
    #[error("n_bins must be at least 1")]
    ZeroBins,
}

/// Predicted class probabilities with ground-truth labels.
#[derive(Debug, Clone)]
pub struct PredictionBatch {
    probs: Matrix,
    labels: Vec<usize>,
}

impl PredictionBatch {
    pub fn new(probs: Matrix, labels: Vec<usize>) -> Result<Self, MetricsError> {
        if probs.rows() == 0 {
            return Err(MetricsError::EmptyBatch);
        }
        if labels.len() != probs.rows() {
            return Err(MetricsError::LabelOutOfRange {
                row: labels.len().min(probs.rows()),
                label: 0,
                classes: probs.cols(),
            });
        }
        for i in 0..probs.rows() {
            let mut sum = 0.0;
            for j in 0..probs.cols() {
                let v = probs[(i, j)];
                if !(-1e-9..=1.0 + 1e-9).contains(&v) {
                    return Err(MetricsError::ProbOutOfRange {
                        row: i,
                        col: j,
                        value: v,
                    });
                }
                sum += v;
            }
            if (sum - 1.0).abs() > 1e-8 {
                return Err(MetricsError::RowNotNormalized { row: i, sum });
            }
            if labels[i] >= probs.cols() {
                return Err(MetricsError::LabelOutOfRange {
                    row: i,
                    label: labels[i],
                    classes: probs.cols(),
                });
            }
        }
        Ok(Self { probs, labels })
    }

    pub fn len(&self) -> usize {
        self.probs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_classes(&self) -> usize {
        self.probs.cols()
    }

    /// Argmax with ties broken by the lowest class index.
    fn predicted_class(&self, row: usize) -> usize {
        let mut best = 0;
        let mut best_p = self.probs[(row, 0)];
        for j in 1..self.probs.cols() {
            if self.probs[(row, j)] > best_p {
                best_p = self.probs[(row, j)];
                best = j;
            }
        }
        best
    }

    fn confidence(&self, row: usize) -> f64 {
        self.probs[(row, self.predicted_class(row))]
    }
}

/// Fraction of rows whose argmax matches the label.
pub fn accuracy(batch: &PredictionBatch) -> f64 {
    let correct = (0..batch.len())
        .filter(|&i| batch.predicted_class(i) == batch.labels[i])
        .count();
    correct as f64 / batch.len() as f64
}

/// Average negative log probability of the true label, with probabilities
/// clipped below at 1e-12.
pub fn nll(batch: &PredictionBatch) -> f64 {
    let total: f64 = (0..batch.len())
        .map(|i| -batch.probs[(i, batch.labels[i])].max(PROB_CLIP).ln())
        .sum();
    total / batch.len() as f64
}

/// Expected calibration error with equal-width, right-inclusive confidence
/// bins on [0, 1]: Σ_j b_j |a_j − p̂_j|.
pub fn ece(batch: &PredictionBatch, n_bins: usize) -> Result<f64, MetricsError> {
    if n_bins == 0 {
        return Err(MetricsError::ZeroBins);
    }
    let mut count = vec![0usize; n_bins];
    let mut conf_sum = vec![0.0; n_bins];
    let mut correct = vec![0usize; n_bins];
    for i in 0..batch.len() {
        let c = batch.confidence(i);
        // Right-inclusive bins ((j)/J, (j+1)/J]; confidence 0 joins bin 0.
        let bin = ((c * n_bins as f64).ceil() as usize).clamp(1, n_bins) - 1;
        count[bin] += 1;
        conf_sum[bin] += c;
        if batch.predicted_class(i) == batch.labels[i] {
            correct[bin] += 1;
        }
    }
    let n = batch.len() as f64;
    let mut total = 0.0;
    for j in 0..n_bins {
        if count[j] == 0 {
            continue;
        }
        let weight = count[j] as f64 / n;
        let acc = correct[j] as f64 / count[j] as f64;
        let conf = conf_sum[j] / count[j] as f64;
        total += weight * (acc - conf).abs();
    }
    Ok(total)
}

/// Scalar temperature for logit scaling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Temperature {
    pub value: f64,
}

/// Softmax over each row of `logits` divided by T.
pub fn softmax_with_temperature(logits: &Matrix, t: f64) -> Matrix {
    let mut out = Matrix::zeros(logits.rows(), logits.cols());
    for i in 0..logits.rows() {
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for (j, &v) in row.iter().enumerate() {
            let e = ((v - max) / t).exp();
            out[(i, j)] = e;
            denom += e;
        }
        for j in 0..logits.cols() {
            out[(i, j)] /= denom;
        }
    }
    out
}

fn nll_of_logits(logits: &Matrix, labels: &[usize], t: f64) -> f64 {
    let probs = softmax_with_temperature(logits, t);
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| -probs[(i, l)].max(PROB_CLIP).ln())
        .sum();
    total / labels.len() as f64
}

/// Fits the temperature by golden-section search on log T ∈ [−4, 4],
/// minimizing validation NLL to |Δ log T| < 1e-4.
pub fn fit_temperature(logits: &Matrix, labels: &[usize]) -> Result<Temperature, MetricsError> {
    if labels.is_empty() || logits.rows() != labels.len() {
        return Err(MetricsError::EmptyBatch);
    }
    if labels.iter().all(|&l| l == labels[0]) {
        return Err(MetricsError::DegenerateValidationSet);
    }
    let f = |log_t: f64| nll_of_logits(logits, labels, log_t.exp());
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = -4.0f64;
    let mut b = 4.0f64;
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > 1e-4 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d);
        }
    }
    Ok(Temperature {
        value: (0.5 * (a + b)).exp(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn batch(rows: Vec<Vec<f64>>, labels: Vec<usize>) -> PredictionBatch {
        PredictionBatch::new(Matrix::from_rows(&rows).unwrap(), labels).unwrap()
    }

    #[test]
    fn accuracy_perfect_and_zero() {
        let b = batch(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0, 1]);
        assert_eq!(accuracy(&b), 1.0);
        let b = batch(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![1, 0]);
        assert_eq!(accuracy(&b), 0.0);
    }

    #[test]
    fn accuracy_hand_count() {
        let b = batch(
            vec![
                vec![0.9, 0.1],
                vec![0.2, 0.8],
                vec![0.6, 0.4],
                vec![0.3, 0.7],
            ],
            vec![0, 1, 0, 0],
        );
        assert_eq!(accuracy(&b), 0.75);
    }

    #[test]
    fn accuracy_ties_break_to_lowest_index() {
        let b = batch(vec![vec![0.5, 0.5]], vec![0]);
        assert_eq!(accuracy(&b), 1.0);
        let b = batch(vec![vec![0.5, 0.5]], vec![1]);
        assert_eq!(accuracy(&b), 0.0);
    }

    #[test]
    fn nll_uniform_two_classes_is_log_two() {
        let b = batch(vec![vec![0.5, 0.5]], vec![1]);
        assert!((nll(&b) - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn nll_perfect_one_hot_hits_clip_floor() {
        let b = batch(vec![vec![1.0, 0.0]], vec![0]);
        assert!(nll(&b).abs() < 1e-12);
    }

    #[test]
    fn nll_hand_computation() {
        // p_true = (0.5, 0.25) → (log 2 + log 4) / 2.
        let b = batch(vec![vec![0.5, 0.5], vec![0.25, 0.75]], vec![0, 0]);
        let expected = (2f64.ln() + 4f64.ln()) / 2.0;
        assert!((nll(&b) - expected).abs() < 1e-12);
    }

    #[test]
    fn ece_zero_when_confidence_matches_accuracy() {
        // Confidence 0.8 everywhere, accuracy 0.8.
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..10 {
            rows.push(vec![0.8, 0.2]);
            labels.push(if i < 8 { 0 } else { 1 });
        }
        let b = batch(rows, labels);
        assert!(ece(&b, 10).unwrap().abs() < 1e-12);
    }

    #[test]
    fn ece_overconfident_batch() {
        // Confidence 1.0, accuracy 0.5 → ECE 0.5.
        let b = batch(vec![vec![1.0, 0.0], vec![1.0, 0.0]], vec![0, 1]);
        assert!((ece(&b, 10).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn ece_two_bin_hand_example() {
        // Ten 3-class rows, two bins: confidence 0.4 falls in (0, 0.5] and
        // 0.9 in (0.5, 1]. Low bin: 1 of 5 correct; high bin: 5 of 5.
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..5 {
            rows.push(vec![0.4, 0.3, 0.3]);
            labels.push(if i == 0 { 0 } else { 1 });
        }
        for _ in 0..5 {
            rows.push(vec![0.9, 0.05, 0.05]);
            labels.push(0);
        }
        let b = batch(rows, labels);
        let expected = 0.5 * (0.2f64 - 0.4).abs() + 0.5 * (1.0f64 - 0.9).abs();
        assert!((ece(&b, 2).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn ece_single_bin_identity() {
        let b = batch(
            vec![
                vec![0.7, 0.3],
                vec![0.55, 0.45],
                vec![0.95, 0.05],
                vec![0.6, 0.4],
            ],
            vec![0, 1, 0, 0],
        );
        let mean_conf = (0.7 + 0.55 + 0.95 + 0.6) / 4.0;
        let expected = (accuracy(&b) - mean_conf).abs();
        assert!((ece(&b, 1).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn batch_rejects_unnormalized_rows() {
        assert!(matches!(
            PredictionBatch::new(Matrix::from_rows(&[vec![0.7, 0.2]]).unwrap(), vec![0]),
            Err(MetricsError::RowNotNormalized { .. })
        ));
    }

    /// Symmetric toy logits whose NLL is already minimized at T = 1: for
    /// logits (±a/2) and balanced labels the optimal temperature solves a
    /// smooth 1-D problem; calibrate by construction with a = the logit gap
    /// at which the sigmoid matches the empirical accuracy.
    fn calibrated_logits(n: usize) -> (Matrix, Vec<usize>) {
        // Accuracy 0.75 → gap = logit(0.75).
        let gap = (0.75f64 / 0.25).ln();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            rows.push(vec![gap / 2.0, -gap / 2.0]);
            labels.push(if i % 4 == 3 { 1 } else { 0 });
        }
        (Matrix::from_rows(&rows).unwrap(), labels)
    }

    #[test]
    fn fit_temperature_identity_on_calibrated_set() {
        let (logits, labels) = calibrated_logits(64);
        let t = fit_temperature(&logits, &labels).unwrap();
        assert!(
            (0.99..=1.01).contains(&t.value),
            "expected T near 1, got {}",
            t.value
        );
    }

    #[test]
    fn fit_temperature_recovers_logit_scaling() {
        let (logits, labels) = calibrated_logits(64);
        let scaled = logits.scale(3.0);
        let t = fit_temperature(&scaled, &labels).unwrap();
        assert!(
            (2.9..=3.1).contains(&t.value),
            "expected T near 3, got {}",
            t.value
        );
    }

    #[test]
    fn fit_temperature_invariant_to_per_row_shifts() {
        let (logits, labels) = calibrated_logits(32);
        let t1 = fit_temperature(&logits, &labels).unwrap();
        let mut shifted = logits.clone();
        let shifts = rng::standard_normal(&mut rng::stream(1, &[130]), 32);
        for i in 0..32 {
            for j in 0..2 {
                shifted[(i, j)] += shifts[i];
            }
        }
        let t2 = fit_temperature(&shifted, &labels).unwrap();
        assert!((t1.value - t2.value).abs() < 1e-9);
    }

    #[test]
    fn fit_temperature_rejects_single_class_labels() {
        let (logits, _) = calibrated_logits(8);
        assert!(matches!(
            fit_temperature(&logits, &[0; 8]),
            Err(MetricsError::DegenerateValidationSet)
        ));
    }

    #[test]
    fn temperature_preserves_accuracy() {
        let (logits, labels) = calibrated_logits(16);
        for t in [0.1, 1.0, 7.3] {
            let probs = softmax_with_temperature(&logits, t);
            let b = PredictionBatch::new(probs, labels.clone()).unwrap();
            assert_eq!(accuracy(&b), 0.75);
        }
    }

    #[test]
    fn temperature_never_worsens_validation_nll() {
        let mut stream = rng::stream(5, &[131]);
        let logits = Matrix::new(40, 3, rng::standard_normal(&mut stream, 120)).unwrap();
        let labels: Vec<usize> = (0..40).map(|i| i % 3).collect();
        let t = fit_temperature(&logits, &labels).unwrap();
        let before = nll_of_logits(&logits, &labels, 1.0);
        let after = nll_of_logits(&logits, &labels, t.value);
        assert!(after <= before + 1e-9);
    }
}
