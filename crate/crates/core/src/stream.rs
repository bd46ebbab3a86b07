//! Synthetic per-party streams with declaratively injected shifts.
//!
//! Features come from a class-conditional Gaussian mixture. A covariate shift
//! is a transform applied to features after labels are drawn, so `P(y|x)` of
//! the shifted party follows the transform and labels never change. A label
//! shift replaces the class prior with a Dirichlet draw while the
//! class-conditional generators stay fixed.

use std::f64::consts::PI;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::rng::{rng_for, tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowMode {
    Tumbling,
    Sliding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSpec {
    pub mode: WindowMode,
    pub length: usize,
    /// Ignored for tumbling windows, which always advance by `length`.
    #[serde(default)]
    pub stride: Option<usize>,
}

impl WindowSpec {
    pub fn tumbling(length: usize) -> Result<Self> {
        let spec = Self {
            mode: WindowMode::Tumbling,
            length,
            stride: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn sliding(length: usize, stride: usize) -> Result<Self> {
        let spec = Self {
            mode: WindowMode::Sliding,
            length,
            stride: Some(stride),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.length == 0 {
            return Err(Error::invalid("window length must be at least 1"));
        }
        match (self.mode, self.stride) {
            (WindowMode::Sliding, Some(s)) if s >= 1 && s <= self.length => Ok(()),
            (WindowMode::Sliding, _) => {
                Err(Error::invalid("sliding windows need 1 <= stride <= length"))
            }
            (WindowMode::Tumbling, None) => Ok(()),
            (WindowMode::Tumbling, Some(s)) if s == self.length => Ok(()),
            (WindowMode::Tumbling, Some(_)) => Err(Error::invalid(
                "tumbling windows advance by exactly their length",
            )),
        }
    }

    pub fn step(&self) -> usize {
        match self.mode {
            WindowMode::Tumbling => self.length,
            WindowMode::Sliding => self.stride.unwrap_or(self.length),
        }
    }
}

/// Index ranges `[start, end)` of every complete window over `n_samples`.
pub fn make_windows(n_samples: usize, spec: &WindowSpec) -> Vec<(usize, usize)> {
    let step = spec.step().max(1);
    (0..)
        .map(|i| (i * step, i * step + spec.length))
        .take_while(|&(_, end)| end <= n_samples)
        .collect()
}

/// Stream positions are produced in blocks of `spec.step()` samples; block
/// `b` uses the regime active at window `b`. Window `t` covers positions
/// `[t * step, t * step + length)` and may straddle several blocks.
pub fn assemble_window(
    spec: &WindowSpec,
    window: usize,
    mut block: impl FnMut(usize) -> Result<Dataset>,
) -> Result<Dataset> {
    let step = spec.step();
    let start = window * step;
    let end = start + spec.length;
    let first = start / step;
    let last = (end - 1) / step;
    let mut joined = block(first)?;
    for b in (first + 1)..=last {
        joined.extend(&block(b)?)?;
    }
    let offset = start - first * step;
    let idx: Vec<usize> = (offset..offset + spec.length).collect();
    Ok(joined.subset(&idx))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TransformKind {
    Identity,
    /// Rotates every consecutive coordinate pair `(0,1), (2,3), ...` by `angle`
    /// radians; a trailing odd coordinate is left alone.
    Rotation {
        angle: f64,
    },
    Scale {
        factor: f64,
    },
    Shift {
        offset: Vec<f64>,
    },
    GaussianNoise {
        sigma: f64,
    },
}

/// Ordered composition of feature-space transforms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(transparent)]
pub struct CovariateTransform {
    pub steps: Vec<TransformKind>,
}

impl CovariateTransform {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn new(steps: Vec<TransformKind>) -> Result<Self> {
        let t = Self { steps };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        for step in &self.steps {
            match step {
                TransformKind::Scale { factor } if *factor == 0.0 || !factor.is_finite() => {
                    return Err(Error::invalid("scale factor must be finite and non-zero"))
                }
                TransformKind::GaussianNoise { sigma } if !(*sigma >= 0.0) => {
                    return Err(Error::invalid("noise sigma must be non-negative"))
                }
                TransformKind::Rotation { angle } if !angle.is_finite() => {
                    return Err(Error::invalid("rotation angle must be finite"))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.steps
            .iter()
            .all(|s| matches!(s, TransformKind::Identity))
    }

    pub fn apply<R: Rng + ?Sized>(&self, x: &mut [f64], rng: &mut R) -> Result<()> {
        for step in &self.steps {
            match step {
                TransformKind::Identity => {}
                TransformKind::Rotation { angle } => {
                    let (s, c) = angle.sin_cos();
                    for pair in x.chunks_exact_mut(2) {
                        let (a, b) = (pair[0], pair[1]);
                        pair[0] = c * a - s * b;
                        pair[1] = s * a + c * b;
                    }
                }
                TransformKind::Scale { factor } => x.iter_mut().for_each(|v| *v *= factor),
                TransformKind::Shift { offset } => {
                    check_dim(x.len(), offset.len())?;
                    x.iter_mut().zip(offset).for_each(|(v, o)| *v += o);
                }
                TransformKind::GaussianNoise { sigma } => {
                    for v in x.iter_mut() {
                        let z: f64 = StandardNormal.sample(rng);
                        *v += sigma * z;
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftEvent {
    pub window_index: usize,
    pub affected_fraction: f64,
    #[serde(default)]
    pub covariate: Option<CovariateTransform>,
    #[serde(default)]
    pub label_dirichlet_alpha: Option<f64>,
}

impl ShiftEvent {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.affected_fraction) {
            return Err(Error::invalid("affected_fraction must lie in [0, 1]"));
        }
        if self.covariate.is_none() && self.label_dirichlet_alpha.is_none() {
            return Err(Error::invalid(
                "shift event needs a covariate transform or a label alpha",
            ));
        }
        if let Some(t) = &self.covariate {
            t.validate()?;
        }
        if let Some(a) = self.label_dirichlet_alpha {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::invalid("label_dirichlet_alpha must be positive"));
            }
        }
        Ok(())
    }

    /// Number of parties the event touches: `floor(fraction * n)`.
    pub fn affected_count(&self, n_parties: usize) -> usize {
        ((self.affected_fraction * n_parties as f64) + 1e-9).floor() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftSchedule {
    pub horizon: usize,
    #[serde(default)]
    pub events: Vec<ShiftEvent>,
}

impl ShiftSchedule {
    pub fn new(horizon: usize, events: Vec<ShiftEvent>) -> Result<Self> {
        let s = Self { horizon, events };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::invalid("schedule horizon must be at least 1"));
        }
        for pair in self.events.windows(2) {
            if pair[1].window_index < pair[0].window_index {
                return Err(Error::invalid(
                    "shift events must be sorted by window_index",
                ));
            }
        }
        for e in &self.events {
            if e.window_index >= self.horizon {
                return Err(Error::invalid(format!(
                    "event at window {} is beyond horizon {}",
                    e.window_index, self.horizon
                )));
            }
            e.validate()?;
        }
        Ok(())
    }

    pub fn is_shift_window(&self, window: usize) -> bool {
        self.events
            .iter()
            .any(|e| e.window_index == window && e.affected_fraction > 0.0)
    }
}

/// Class-conditional isotropic Gaussian mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    pub class_means: Vec<Vec<f64>>,
    pub std: f64,
    pub priors: Vec<f64>,
}

impl GaussianMixture {
    pub fn new(class_means: Vec<Vec<f64>>, std: f64, priors: Vec<f64>) -> Result<Self> {
        let m = Self {
            class_means,
            std,
            priors,
        };
        m.validate()?;
        Ok(m)
    }

    /// Class means spread evenly around a circle of `radius` in every
    /// coordinate plane, with a per-plane phase offset. With `C` classes a
    /// rotation by `2*pi/C` maps each class mean onto the next one.
    pub fn ring(dim: usize, classes: usize, radius: f64, std: f64) -> Result<Self> {
        if dim < 2 || classes < 2 {
            return Err(Error::invalid(
                "ring mixture needs dim >= 2 and classes >= 2",
            ));
        }
        let means = (0..classes)
            .map(|k| {
                let mut mean = vec![0.0; dim];
                for plane in 0..dim / 2 {
                    let phase = 2.0 * PI * k as f64 / classes as f64 + plane as f64 * 0.45;
                    mean[2 * plane] = radius * phase.cos();
                    mean[2 * plane + 1] = radius * phase.sin();
                }
                mean
            })
            .collect();
        Self::new(means, std, vec![1.0 / classes as f64; classes])
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self
            .class_means
            .first()
            .map(Vec::len)
            .ok_or(Error::Empty("class means"))?;
        if dim == 0 {
            return Err(Error::invalid("feature dimension must be at least 1"));
        }
        for m in &self.class_means {
            check_dim(dim, m.len())?;
        }
        check_dim(self.class_means.len(), self.priors.len())?;
        crate::numerics::LabelHistogram::new(self.priors.clone())?;
        if !(self.std > 0.0 && self.std.is_finite()) {
            return Err(Error::invalid("mixture std must be positive"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.class_means[0].len()
    }

    pub fn classes(&self) -> usize {
        self.class_means.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartyStream {
    pub party_id: usize,
    pub base: GaussianMixture,
    pub seed: u64,
}

/// The regime a party is currently in. `label_epoch` identifies the event
/// that set the label prior so the Dirichlet draw persists across windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ActiveShift {
    pub transform: CovariateTransform,
    pub label_alpha: Option<f64>,
    pub label_epoch: u64,
}

impl PartyStream {
    /// Class prior in effect under `active`: the base prior, or a Dirichlet
    /// draw keyed by `(seed, party, label_epoch)`.
    pub fn label_prior(&self, active: &ActiveShift) -> Result<Vec<f64>> {
        match active.label_alpha {
            None => Ok(self.base.priors.clone()),
            Some(alpha) => {
                let classes = self.base.classes();
                let mut rng = rng_for(
                    self.seed,
                    &[tag::LABEL_PRIOR, self.party_id as u64, active.label_epoch],
                );
                if classes == 1 {
                    return Ok(vec![1.0]);
                }
                // Dirichlet draw as normalized Gamma(alpha, 1) variates.
                let gamma = Gamma::new(alpha, 1.0)
                    .map_err(|e| Error::invalid(format!("dirichlet alpha: {e}")))?;
                let mut p: Vec<f64> = (0..classes).map(|_| gamma.sample(&mut rng)).collect();
                // Very small alphas can underflow every component.
                let total: f64 = p.iter().sum();
                if !(total > 0.0) || p.iter().any(|v| !v.is_finite()) {
                    p = vec![0.0; classes];
                    p[rng.random_range(0..classes)] = 1.0;
                } else {
                    p.iter_mut().for_each(|v| *v /= total);
                }
                Ok(p)
            }
        }
    }
}

fn draw_class<R: Rng + ?Sized>(prior: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in prior.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    prior.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Draws `n` labeled samples for one party window under the given regime.
/// Labels are drawn first, then class-conditional features, then the
/// covariate transform is applied to features only.
pub fn sample_window<R: Rng + ?Sized>(
    stream: &PartyStream,
    active: &ActiveShift,
    n: usize,
    rng: &mut R,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::invalid("window sample size must be at least 1"));
    }
    let prior = stream.label_prior(active)?;
    let labels: Vec<usize> = (0..n).map(|_| draw_class(&prior, rng)).collect();
    let dim = stream.base.dim();
    let mut features = Vec::with_capacity(n * dim);
    let mut x = vec![0.0; dim];
    for &label in &labels {
        for (v, m) in x.iter_mut().zip(&stream.base.class_means[label]) {
            let z: f64 = StandardNormal.sample(rng);
            *v = m + stream.base.std * z;
        }
        active.transform.apply(&mut x, rng)?;
        features.extend_from_slice(&x);
    }
    Dataset::new(dim, stream.base.classes(), features, labels)
}

/// Advances every party's regime to `window_index`. For each event at that
/// window, `floor(fraction * n)` parties are drawn without replacement and
/// take on the event's transform and/or label alpha; everyone else keeps
/// their previous regime.
pub fn apply_schedule(
    current: &[ActiveShift],
    schedule: &ShiftSchedule,
    window_index: usize,
    seed: u64,
) -> Result<Vec<ActiveShift>> {
    if window_index >= schedule.horizon {
        return Err(Error::invalid(format!(
            "window {window_index} is beyond horizon {}",
            schedule.horizon
        )));
    }
    let mut next = current.to_vec();
    for (event_idx, event) in schedule.events.iter().enumerate() {
        if event.window_index != window_index {
            continue;
        }
        let k = event.affected_count(next.len());
        let mut rng = rng_for(
            seed,
            &[tag::SCHEDULE, window_index as u64, event_idx as u64],
        );
        let mut chosen = index::sample(&mut rng, next.len(), k).into_vec();
        chosen.sort_unstable();
        for party in chosen {
            if let Some(t) = &event.covariate {
                next[party].transform = t.clone();
            }
            if let Some(alpha) = event.label_dirichlet_alpha {
                next[party].label_alpha = Some(alpha);
                next[party].label_epoch = ((window_index as u64) << 16) | event_idx as u64;
            }
        }
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SimRng;
    use rand::SeedableRng;

    fn stream(classes: usize) -> PartyStream {
        PartyStream {
            party_id: 3,
            base: GaussianMixture::ring(8, classes, 2.0, 1.0).unwrap(),
            seed: 11,
        }
    }

    #[test]
    fn windows_examples() {
        assert_eq!(
            make_windows(6, &WindowSpec::tumbling(2).unwrap()),
            vec![(0, 2), (2, 4), (4, 6)]
        );
        assert_eq!(
            make_windows(8, &WindowSpec::sliding(4, 2).unwrap()),
            vec![(0, 4), (2, 6), (4, 8)]
        );
        assert!(make_windows(3, &WindowSpec::tumbling(4).unwrap()).is_empty());
        assert!(WindowSpec::sliding(4, 5).is_err());
        assert!(WindowSpec::tumbling(0).is_err());
    }

    #[test]
    fn tumbling_windows_partition_prefix() {
        for (n, len) in [(10, 3), (12, 4), (7, 7), (100, 9)] {
            let w = make_windows(n, &WindowSpec::tumbling(len).unwrap());
            assert_eq!(w.first().map(|r| r.0), Some(0));
            for pair in w.windows(2) {
                assert_eq!(pair[0].1, pair[1].0);
            }
            assert_eq!(w.len(), n / len);
        }
    }

    #[test]
    fn rotation_quarter_turn() {
        let t = CovariateTransform::new(vec![TransformKind::Rotation { angle: PI / 2.0 }]).unwrap();
        let mut x = [1.0, 0.0];
        t.apply(&mut x, &mut SimRng::seed_from_u64(0)).unwrap();
        assert!(x[0].abs() < 1e-15 && (x[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn identity_label_histogram_converges_to_prior() {
        let s = stream(4);
        let data = sample_window(
            &s,
            &ActiveShift::default(),
            10_000,
            &mut SimRng::seed_from_u64(5),
        )
        .unwrap();
        let h = data.label_histogram().unwrap();
        let l1: f64 = h
            .probs()
            .iter()
            .zip(&s.base.priors)
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(l1 < 0.03, "l1 = {l1}");
    }

    #[test]
    fn dirichlet_label_shift_concentrates() {
        let mut s = stream(10);
        let mut hits = 0;
        for trial in 0..100u64 {
            s.seed = 1000 + trial;
            let active = ActiveShift {
                label_alpha: Some(0.1),
                label_epoch: trial,
                ..Default::default()
            };
            let data = sample_window(&s, &active, 1000, &mut SimRng::seed_from_u64(trial)).unwrap();
            let h = data.label_histogram().unwrap();
            if h.probs().iter().cloned().fold(0.0, f64::max) > 0.3 {
                hits += 1;
            }
        }
        assert!(hits >= 95, "hits = {hits}");
    }

    #[test]
    fn covariate_transform_leaves_labels_untouched() {
        let s = stream(4);
        let shifted = ActiveShift {
            transform: CovariateTransform::new(vec![
                TransformKind::Rotation { angle: 1.0 },
                TransformKind::GaussianNoise { sigma: 2.0 },
            ])
            .unwrap(),
            ..Default::default()
        };
        let a = sample_window(
            &s,
            &ActiveShift::default(),
            300,
            &mut SimRng::seed_from_u64(9),
        )
        .unwrap();
        let b = sample_window(&s, &shifted, 300, &mut SimRng::seed_from_u64(9)).unwrap();
        assert_eq!(a.labels(), b.labels());
        assert_ne!(a.feature(0), b.feature(0));
    }

    #[test]
    fn label_shift_keeps_class_conditionals() {
        // Same class means regardless of prior: per-class feature means agree.
        let s = stream(4);
        let skewed = ActiveShift {
            label_alpha: Some(0.5),
            label_epoch: 1,
            ..Default::default()
        };
        let data = sample_window(&s, &skewed, 20_000, &mut SimRng::seed_from_u64(3)).unwrap();
        for k in 0..4 {
            let idx: Vec<usize> = (0..data.len()).filter(|&i| data.label(i) == k).collect();
            if idx.len() < 500 {
                continue;
            }
            let mean0: f64 =
                idx.iter().map(|&i| data.feature(i)[0]).sum::<f64>() / idx.len() as f64;
            assert!((mean0 - s.base.class_means[k][0]).abs() < 0.15);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let s = stream(4);
        let a = sample_window(&s, &ActiveShift::default(), 50, &mut rng_for(1, &[2, 3])).unwrap();
        let b = sample_window(&s, &ActiveShift::default(), 50, &mut rng_for(1, &[2, 3])).unwrap();
        assert_eq!(a, b);
    }

    fn schedule(fraction: f64) -> ShiftSchedule {
        ShiftSchedule::new(
            3,
            vec![ShiftEvent {
                window_index: 1,
                affected_fraction: fraction,
                covariate: Some(
                    CovariateTransform::new(vec![TransformKind::Scale { factor: 2.0 }]).unwrap(),
                ),
                label_dirichlet_alpha: None,
            }],
        )
        .unwrap()
    }

    fn changed(fraction: f64, n: usize) -> usize {
        let base = vec![ActiveShift::default(); n];
        let next = apply_schedule(&base, &schedule(fraction), 1, 42).unwrap();
        base.iter().zip(&next).filter(|(a, b)| a != b).count()
    }

    #[test]
    fn schedule_fractions() {
        assert_eq!(changed(0.0, 40), 0);
        assert_eq!(changed(1.0, 40), 40);
        assert_eq!(changed(0.5, 40), 20);
        assert_eq!(changed(0.3, 10), 3);
        // enumeration of the floor rule
        for n in 1..60 {
            for f in [0.1, 0.25, 0.5, 0.75] {
                assert_eq!(changed(f, n), (f * n as f64 + 1e-9).floor() as usize);
            }
        }
    }

    #[test]
    fn schedule_persists_and_validates() {
        let s = schedule(0.5);
        let base = vec![ActiveShift::default(); 10];
        let w1 = apply_schedule(&base, &s, 1, 1).unwrap();
        let w2 = apply_schedule(&w1, &s, 2, 1).unwrap();
        assert_eq!(w1, w2);
        assert!(apply_schedule(&base, &s, 3, 1).is_err());
        assert!(ShiftSchedule::new(
            2,
            vec![ShiftEvent {
                window_index: 0,
                affected_fraction: 0.5,
                covariate: None,
                label_dirichlet_alpha: None
            }]
        )
        .is_err());
    }

    #[test]
    fn assemble_sliding_window_spans_blocks() {
        let spec = WindowSpec::sliding(4, 2).unwrap();
        let block = |b: usize| {
            Dataset::new(
                1,
                1,
                vec![b as f64 * 10.0, b as f64 * 10.0 + 1.0],
                vec![0, 0],
            )
        };
        let w = assemble_window(&spec, 1, block).unwrap();
        let xs: Vec<f64> = w.features().map(|f| f[0]).collect();
        assert_eq!(xs, vec![10.0, 11.0, 20.0, 21.0]);
    }
}
