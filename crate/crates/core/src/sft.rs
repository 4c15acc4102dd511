//! Supervised (context, action) pairs and the NLL training loop shared by BC and Entropulse.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::envsim::ContextView;
use crate::policy::{enumerate_candidates, include_action, EncodedExample, Featurizer, LinearPolicy, PolicyError};
use crate::replay::Trajectory;
use crate::rollout::rng_for;
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftExample {
    pub task_id: String,
    pub context: String,
    pub action: String,
    pub candidates: Vec<String>,
    pub chosen: usize,
}

/// Flattens one trajectory, in step order. Steps logged without a candidate set get one rebuilt from the context.
pub fn examples_from(traj: &Trajectory) -> Vec<SftExample> {
    traj.steps
        .iter()
        .map(|s| {
            let (candidates, chosen) = if s.candidates.get(s.chosen) == Some(&s.action) {
                (s.candidates.clone(), s.chosen)
            } else {
                let mut c = ContextView::parse(&s.context).map(|v| enumerate_candidates(&v)).unwrap_or_default();
                let i = include_action(&mut c, &s.action);
                (c, i)
            };
            SftExample { task_id: traj.task_id.clone(), context: s.context.clone(), action: s.action.clone(), candidates, chosen }
        })
        .collect()
}

pub fn encode_examples(f: &Featurizer, data: &[SftExample]) -> Vec<EncodedExample> {
    data.iter().map(|e| EncodedExample { rows: f.encode(&e.context, &e.candidates), chosen: e.chosen }).collect()
}

/// `epochs` passes of per-example NLL descent, reshuffled each epoch from `seed`.
pub fn train<S: Scalar>(
    params: &LinearPolicy<S>,
    data: &[EncodedExample],
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<LinearPolicy<S>, PolicyError> {
    let mut p = params.clone();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = rng_for(seed);
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        let epoch: Vec<EncodedExample> = order.iter().map(|&i| data[i].clone()).collect();
        p = p.sft_update(&epoch, S::of(lr))?;
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::replay::Step;

    #[test]
    fn rebuilds_missing_candidates() {
        let ctx = "goal saved\napp editor\nfocus editor\nstep 0/5\neditor.cursor 0 0\neditor.saved 0\n";
        let mut t = Trajectory::new("t", 0);
        let mut s = Step::bare("KEY(ctrl+s)", true, true);
        s.context = ctx.into();
        t.steps.push(s);
        let ex = examples_from(&t);
        assert_eq!(ex[0].candidates[ex[0].chosen], "KEY(ctrl+s)");
    }

    #[test]
    fn zero_epochs_is_identity() {
        let p = LinearPolicy::<f64>::zeros(16);
        let data = vec![EncodedExample { rows: vec![vec![1], vec![2]], chosen: 0 }];
        assert_eq!(train(&p, &data, 0, 0.5, 1).unwrap(), p);
        assert!(train(&p, &data, 3, 0.5, 1).unwrap().log_prob_at(&data[0].rows, 0).unwrap() > (0.5f64).ln());
    }
}
