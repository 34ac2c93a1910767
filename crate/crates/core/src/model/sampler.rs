//! Explicit Euler integration of the learned velocity field from noise
//! (`tau = 0`) to data (`tau = 1`).

use std::ops::Range;

use ndarray::Array2;

use super::{AttentionRecord, HeadSelector, ModelAdapter, ModelError, TokenizedPrompt};
use crate::region_binding::AttentionMask;

/// Strictly increasing time grid from 0 to 1; `steps + 1` points.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    taus: Vec<f64>,
}

impl Schedule {
    pub fn uniform(steps: usize) -> Result<Self, ModelError> {
        if steps == 0 {
            return Err(ModelError::InvalidSchedule("need at least one step".into()));
        }
        Ok(Self { taus: (0..=steps).map(|i| i as f64 / steps as f64).collect() })
    }

    pub fn from_taus(taus: Vec<f64>) -> Result<Self, ModelError> {
        if taus.len() < 2 {
            return Err(ModelError::InvalidSchedule("need at least one step".into()));
        }
        if taus[0] != 0.0 || *taus.last().unwrap() != 1.0 {
            return Err(ModelError::InvalidSchedule("must run from 0 to 1".into()));
        }
        if taus.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ModelError::InvalidSchedule("must be strictly increasing".into()));
        }
        Ok(Self { taus })
    }

    pub fn steps(&self) -> usize {
        self.taus.len() - 1
    }

    pub fn tau(&self, step: usize) -> f64 {
        self.taus[step]
    }

    pub fn taus(&self) -> &[f64] {
        &self.taus
    }
}

/// Mask applied to the model evaluation of a given step.
pub trait MaskSchedule: Sync {
    fn mask_at(&self, step: usize) -> Option<&AttentionMask>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Unmasked;

impl MaskSchedule for Unmasked {
    fn mask_at(&self, _: usize) -> Option<&AttentionMask> {
        None
    }
}

/// `mask` on every step before `until`, nothing afterwards.
#[derive(Debug, Clone)]
pub struct MaskedUntil {
    pub mask: AttentionMask,
    pub until: usize,
}

impl MaskSchedule for MaskedUntil {
    fn mask_at(&self, step: usize) -> Option<&AttentionMask> {
        (step < self.until).then_some(&self.mask)
    }
}

/// Heads to record during the evaluation of step `step`.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptureSpec {
    pub step: usize,
    pub heads: Vec<HeadSelector>,
}

/// Latent after `step` Euler updates (counted from the start of the schedule).
#[derive(Debug, Clone, PartialEq)]
pub struct SampleState {
    pub step: usize,
    pub tau: f64,
    pub latent: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// First entry is the starting latent.
    pub states: Vec<SampleState>,
    pub records: Vec<AttentionRecord>,
}

impl Trajectory {
    pub fn last(&self) -> &SampleState {
        self.states.last().expect("trajectory holds its start state")
    }
}

/// Runs the Euler updates `steps.start..steps.end` of `schedule`, starting
/// from `initial` at `tau(steps.start)`.
pub fn sample<M: ModelAdapter + ?Sized>(
    model: &M,
    initial: Array2<f64>,
    prompt: &TokenizedPrompt,
    schedule: &Schedule,
    steps: Range<usize>,
    masks: &dyn MaskSchedule,
    capture: Option<&CaptureSpec>,
) -> Result<Trajectory, ModelError> {
    if steps.start >= steps.end || steps.end > schedule.steps() {
        return Err(ModelError::InvalidSchedule(format!(
            "step range {steps:?} outside a {}-step schedule",
            schedule.steps()
        )));
    }
    let mut states = Vec::with_capacity(steps.len() + 1);
    let mut records = Vec::new();
    let mut x = initial;
    states.push(SampleState { step: steps.start, tau: schedule.tau(steps.start), latent: x.clone() });
    for step in steps {
        let tau = schedule.tau(step);
        let dt = schedule.tau(step + 1) - tau;
        let heads: &[HeadSelector] = match capture {
            Some(c) if c.step == step => &c.heads,
            _ => &[],
        };
        let (velocity, mut recs) = model.predict_velocity(&x, tau, prompt, masks.mask_at(step), heads)?;
        if velocity.dim() != x.dim() {
            return Err(ModelError::ShapeMismatch(format!("velocity {:?} for latent {:?}", velocity.dim(), x.dim())));
        }
        x.scaled_add(dt, &velocity);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite { step });
        }
        for r in &mut recs {
            r.step_index = step;
        }
        records.extend(recs);
        states.push(SampleState { step: step + 1, tau: schedule.tau(step + 1), latent: x.clone() });
    }
    Ok(Trajectory { states, records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{TokenLayout, TokenizedPrompt};

    /// Closed-form fields on a single scalar latent.
    struct Field(fn(f64) -> f64);

    impl ModelAdapter for Field {
        fn token_layout(&self) -> TokenLayout {
            TokenLayout { grid: (1, 1), n_text: 1, latent_channels: 1 }
        }
        fn num_blocks(&self) -> usize {
            1
        }
        fn num_heads(&self) -> usize {
            1
        }
        fn tokenize(&self, _: &str) -> Result<TokenizedPrompt, ModelError> {
            TokenizedPrompt::new(vec![1], vec![false])
        }
        fn predict_velocity(
            &self,
            latent: &Array2<f64>,
            _: f64,
            _: &TokenizedPrompt,
            _: Option<&AttentionMask>,
            _: &[HeadSelector],
        ) -> Result<(Array2<f64>, Vec<AttentionRecord>), ModelError> {
            Ok((latent.mapv(self.0), Vec::new()))
        }
        fn describe(&self) -> String {
            "field".into()
        }
    }

    fn run(field: &Field, x0: f64, steps: usize) -> f64 {
        let prompt = field.tokenize("").unwrap();
        let schedule = Schedule::uniform(steps).unwrap();
        let t = sample(field, Array2::from_elem((1, 1), x0), &prompt, &schedule, 0..steps, &Unmasked, None).unwrap();
        t.last().latent[[0, 0]]
    }

    #[test]
    fn constant_field_is_exact() {
        let field = Field(|_| 1.0);
        for steps in [1, 3, 10, 50] {
            assert_eq!(run(&field, 0.0, steps), 1.0);
        }
    }

    #[test]
    fn linear_field_matches_closed_form() {
        let field = Field(|x| x);
        let got = run(&field, 1.0, 50);
        assert!((got - (1.0f64 + 1.0 / 50.0).powi(50)).abs() < 1e-9);
        assert!((got - 2.691_588).abs() < 1e-6);
    }

    #[test]
    fn single_step_is_one_euler_update() {
        let field = Field(|x| 2.0 * x + 1.0);
        assert_eq!(run(&field, 0.5, 1), 0.5 + 2.0);
    }

    #[test]
    fn error_shrinks_as_steps_double() {
        let field = Field(|x| x);
        let errors: Vec<f64> =
            [10, 20, 40, 80].iter().map(|&t| (run(&field, 1.0, t) - std::f64::consts::E).abs()).collect();
        assert!(errors.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn schedules_validate() {
        assert!(Schedule::uniform(0).is_err());
        assert!(Schedule::from_taus(vec![0.0, 0.5, 0.5, 1.0]).is_err());
        assert!(Schedule::from_taus(vec![0.1, 1.0]).is_err());
        assert_eq!(Schedule::from_taus(vec![0.0, 0.3, 1.0]).unwrap().steps(), 2);
    }

    #[test]
    fn partial_ranges_chain() {
        let field = Field(|x| x);
        let prompt = field.tokenize("").unwrap();
        let schedule = Schedule::uniform(10).unwrap();
        let start = Array2::from_elem((1, 1), 1.0);
        let whole = sample(&field, start.clone(), &prompt, &schedule, 0..10, &Unmasked, None).unwrap();
        let first = sample(&field, start, &prompt, &schedule, 0..4, &Unmasked, None).unwrap();
        assert_eq!(first.last().step, 4);
        let rest = sample(&field, first.last().latent.clone(), &prompt, &schedule, 4..10, &Unmasked, None).unwrap();
        assert_eq!(rest.last().latent, whole.last().latent);
    }
}
