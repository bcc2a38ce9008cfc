//! Label-placement episodes.
//!
//! An object starts at the root. Each step either places it on one of the
//! unvisited children of labels it already occupies, or stops. The shaped
//! reward of a step is the change in example-based F1 against the gold set,
//! with the F1 before the first step taken as 0.

use rand::Rng;

use crate::error::ModelError;
use crate::hierarchy::{LabelHierarchy, LabelId, LabelSet};
use crate::metrics::ebf;
use crate::numcore::{ParamStore, Tape, Var};
use crate::policy::{greedy_action, sample_action, Action, ActionDistribution, PolicyNetwork};

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeState {
    placed: Vec<LabelId>,
    placed_mask: Vec<bool>,
    current: LabelId,
    /// Ascending ids; STOP is implied as the final candidate.
    candidates: Vec<LabelId>,
    step: usize,
    stopped: bool,
    max_steps: usize,
    last_f1: f64,
}

impl EpisodeState {
    pub fn reset(hierarchy: &LabelHierarchy, max_steps: usize) -> Self {
        let root = hierarchy.root();
        let candidates = hierarchy.children(root).expect("root is valid").to_vec();
        EpisodeState {
            placed: Vec::new(),
            placed_mask: vec![false; hierarchy.len()],
            current: root,
            candidates,
            step: 0,
            stopped: false,
            max_steps,
            last_f1: 0.0,
        }
    }

    /// Labels in the order they were placed.
    pub fn placed(&self) -> &[LabelId] {
        &self.placed
    }

    pub fn placed_set(&self) -> LabelSet {
        self.placed.iter().copied().collect()
    }

    pub fn current(&self) -> LabelId {
        self.current
    }

    pub fn candidate_labels(&self) -> &[LabelId] {
        &self.candidates
    }

    /// Candidate labels followed by STOP.
    pub fn actions(&self) -> Vec<Action> {
        self.candidates.iter().map(|&l| Action::Label(l)).chain([Action::Stop]).collect()
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn is_stopped(&self) -> bool {
        self.stopped
    }

    /// Stopped, or out of steps. Further steps only loop in place.
    pub fn is_done(&self) -> bool {
        self.stopped || self.step >= self.max_steps
    }

    /// Applies an action and returns the shaped reward.
    pub fn step(
        &mut self,
        hierarchy: &LabelHierarchy,
        action: Action,
        gold: &LabelSet,
    ) -> Result<f64, ModelError> {
        if self.is_done() {
            return Err(ModelError::EpisodeOver);
        }
        match action {
            Action::Stop => self.stopped = true,
            Action::Label(l) => {
                let pos = self
                    .candidates
                    .binary_search(&l)
                    .map_err(|_| ModelError::IllegalAction(action.to_string()))?;
                self.candidates.remove(pos);
                self.placed.push(l);
                self.placed_mask[l.0] = true;
                self.current = l;
                for &c in hierarchy.children(l)? {
                    if !self.placed_mask[c.0] {
                        if let Err(at) = self.candidates.binary_search(&c) {
                            self.candidates.insert(at, c);
                        }
                    }
                }
            }
        }
        self.step += 1;
        let f1 = ebf(&self.placed_set(), gold);
        let reward = f1 - self.last_f1;
        self.last_f1 = f1;
        Ok(reward)
    }

    /// Absorbing step for a finished episode: nothing changes, reward 0.
    pub fn absorb(&self) -> Result<f64, ModelError> {
        if self.is_done() {
            Ok(0.0)
        } else {
            Err(ModelError::IllegalAction("absorbing step on a live episode".into()))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RolloutMode {
    Sampled,
    Greedy,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub candidates: Vec<Action>,
    pub action: Action,
    pub log_prob: f64,
    pub reward: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    pub mode: RolloutMode,
    pub steps: Vec<StepRecord>,
    /// Labels in placement order.
    pub placed: Vec<LabelId>,
}

impl Rollout {
    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }

    pub fn placed_set(&self) -> LabelSet {
        self.placed.iter().copied().collect()
    }

    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }
}

/// Per-step F1 after each placement and the matching reward deltas.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardTrace {
    pub f1: Vec<f64>,
    pub deltas: Vec<f64>,
}

impl RewardTrace {
    /// Trace for a sequence of actions; F1 before the first step is 0.
    pub fn from_actions(actions: &[Action], gold: &LabelSet) -> Self {
        let mut placed = LabelSet::new();
        let mut prev = 0.0;
        let mut f1 = Vec::with_capacity(actions.len());
        let mut deltas = Vec::with_capacity(actions.len());
        for a in actions {
            if let Action::Label(l) = a {
                placed.insert(*l);
            }
            let now = ebf(&placed, gold);
            f1.push(now);
            deltas.push(now - prev);
            prev = now;
        }
        RewardTrace { f1, deltas }
    }
}

/// Runs one episode. With a tape, each step's log-probability is recorded as
/// a differentiable node and returned alongside the rollout.
#[allow(clippy::too_many_arguments)]
pub fn run_episode<R: Rng + ?Sized>(
    net: &PolicyNetwork,
    store: &ParamStore,
    hierarchy: &LabelHierarchy,
    tape: &mut Tape,
    embedding: Var,
    gold: &LabelSet,
    mode: RolloutMode,
    max_steps: usize,
    rng: &mut R,
) -> Result<(Rollout, Vec<Var>), ModelError> {
    let mut state = EpisodeState::reset(hierarchy, max_steps);
    let mut steps = Vec::new();
    let mut log_probs = Vec::new();
    while !state.is_done() {
        let s = net.state_on(store, tape, embedding, state.current())?;
        let z = net.action_logits_on(store, tape, s, state.candidate_labels(), true)?;
        let dist = ActionDistribution::from_logits(state.actions(), tape.value(z))?;
        let (index, log_prob) = match mode {
            RolloutMode::Sampled => sample_action(&dist, rng),
            RolloutMode::Greedy => {
                let i = greedy_action(&dist);
                (i, dist.probs[i].ln())
            }
        };
        log_probs.push(tape.log_softmax_at(z, index)?);
        let action = dist.candidates[index];
        let reward = state.step(hierarchy, action, gold)?;
        steps.push(StepRecord { candidates: dist.candidates, action, log_prob, reward });
    }
    Ok((Rollout { mode, steps, placed: state.placed().to_vec() }, log_probs))
}

/// Runs an episode from a fixed embedding without keeping gradients.
#[allow(clippy::too_many_arguments)]
pub fn rollout<R: Rng + ?Sized>(
    net: &PolicyNetwork,
    store: &ParamStore,
    hierarchy: &LabelHierarchy,
    embedding: &[f64],
    gold: &LabelSet,
    mode: RolloutMode,
    max_steps: usize,
    rng: &mut R,
) -> Result<Rollout, ModelError> {
    let mut tape = Tape::new();
    let e = tape.constant(embedding.to_vec());
    Ok(run_episode(net, store, hierarchy, &mut tape, e, gold, mode, max_steps, rng)?.0)
}

/// `r_sampled - r_greedy` step by step, zero-padding the shorter sequence.
pub fn self_critical_rewards(sampled: &Rollout, greedy: &Rollout) -> Vec<f64> {
    let a = sampled.rewards();
    let b = greedy.rewards();
    let n = a.len().max(b.len());
    (0..n)
        .map(|t| a.get(t).copied().unwrap_or(0.0) - b.get(t).copied().unwrap_or(0.0))
        .collect()
}

/// Discounted suffix sums `v_j = Σ_{t≥j} γ^{t-j} r_t`.
pub fn returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (t, &r) in rewards.iter().enumerate().rev() {
        acc = r + gamma * acc;
        out[t] = acc;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::ModelConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn yelp() -> LabelHierarchy {
        LabelHierarchy::parse(
            "Restaurants\tCaribbean\nRestaurants\tChinese\nRestaurants\tMexican\n\
             Bars\tBeer Bars\nBars\tWine Bars\nCaribbean\tDominican\n",
        )
        .unwrap()
    }

    fn id(h: &LabelHierarchy, n: &str) -> LabelId {
        h.id(n).unwrap()
    }

    #[test]
    fn reset_examples() {
        let h = yelp();
        let s = EpisodeState::reset(&h, 10);
        assert_eq!(s.actions().len(), 3);
        assert_eq!(*s.actions().last().unwrap(), Action::Stop);
        assert_eq!(s.current(), h.root());
        assert!(s.placed().is_empty());

        let chain = LabelHierarchy::parse("root\tA\n").unwrap();
        let s = EpisodeState::reset(&chain, 10);
        assert_eq!(s.actions(), vec![Action::Label(id(&chain, "A")), Action::Stop]);

        let s = EpisodeState::reset(&h, 0);
        assert!(s.is_done());
        assert!(s.placed_set().is_empty());
    }

    #[test]
    fn placing_expands_candidates() {
        let h = yelp();
        let mut s = EpisodeState::reset(&h, 10);
        s.step(&h, Action::Label(id(&h, "Restaurants")), &LabelSet::new()).unwrap();
        let c = s.candidate_labels();
        assert_eq!(c.len(), 4); // Bars plus three children
        assert!(!c.contains(&id(&h, "Restaurants")));
        assert_eq!(s.current(), id(&h, "Restaurants"));
        assert!(matches!(
            s.step(&h, Action::Label(id(&h, "Dominican")), &LabelSet::new()),
            Err(ModelError::IllegalAction(_))
        ));
    }

    #[test]
    fn stop_is_absorbing() {
        let h = yelp();
        let mut s = EpisodeState::reset(&h, 10);
        assert!(s.absorb().is_err());
        s.step(&h, Action::Stop, &LabelSet::new()).unwrap();
        assert!(s.is_done());
        let frozen = s.clone();
        assert_eq!(s.absorb().unwrap(), 0.0);
        assert!(matches!(s.step(&h, Action::Stop, &LabelSet::new()), Err(ModelError::EpisodeOver)));
        assert_eq!(s, frozen);
    }

    #[test]
    fn shaped_rewards() {
        let h = LabelHierarchy::parse("root\tA\nA\tB\n").unwrap();
        let (a, b) = (id(&h, "A"), id(&h, "B"));
        let mut s = EpisodeState::reset(&h, 5);
        let gold: LabelSet = [a].into_iter().collect();
        assert_eq!(s.step(&h, Action::Label(a), &gold).unwrap(), 1.0);

        let gold: LabelSet = [a, b].into_iter().collect();
        let mut s = EpisodeState::reset(&h, 5);
        let r1 = s.step(&h, Action::Label(a), &gold).unwrap();
        let r2 = s.step(&h, Action::Label(b), &gold).unwrap();
        // F1({A}) = 2*1*0.5/1.5
        assert!((r1 - 2.0 / 3.0).abs() < 1e-15);
        assert!((r2 - (1.0 - 2.0 / 3.0)).abs() < 1e-15);
        assert_eq!(s.step(&h, Action::Stop, &gold).unwrap(), 0.0);

        let trace = RewardTrace::from_actions(&[Action::Label(a), Action::Label(b), Action::Stop], &gold);
        assert_eq!(trace.deltas.len(), 3);
        assert!((trace.deltas.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn dag_candidates_deduplicated() {
        let h = LabelHierarchy::parse("r\tA\nr\tB\nA\tC\nB\tC\n").unwrap();
        let mut s = EpisodeState::reset(&h, 10);
        let g = LabelSet::new();
        s.step(&h, Action::Label(id(&h, "A")), &g).unwrap();
        s.step(&h, Action::Label(id(&h, "B")), &g).unwrap();
        let c = id(&h, "C");
        assert_eq!(s.candidate_labels().iter().filter(|&&x| x == c).count(), 1);
        s.step(&h, Action::Label(c), &g).unwrap();
        assert!(s.candidate_labels().is_empty());
        assert!(h.is_consistent(&s.placed_set()));
    }

    #[test]
    fn self_critical_and_returns() {
        let mk = |rs: &[f64]| Rollout {
            mode: RolloutMode::Sampled,
            steps: rs
                .iter()
                .map(|&r| StepRecord { candidates: vec![], action: Action::Stop, log_prob: 0.0, reward: r })
                .collect(),
            placed: vec![],
        };
        let a = mk(&[0.5, 0.25]);
        assert_eq!(self_critical_rewards(&a, &a), vec![0.0, 0.0]);
        assert_eq!(self_critical_rewards(&mk(&[1.0]), &mk(&[0.0])), vec![1.0]);
        assert_eq!(self_critical_rewards(&mk(&[0.1, 0.2, 0.3]), &mk(&[0.1])), vec![0.0, 0.2, 0.3]);
        assert_eq!(self_critical_rewards(&mk(&[0.5]), &mk(&[0.5, -0.25])), vec![0.0, 0.25]);

        assert_eq!(returns(&[1.0, 1.0], 1.0), vec![2.0, 1.0]);
        assert_eq!(returns(&[1.0, 1.0], 0.5), vec![1.5, 1.0]);
        assert!(returns(&[], 0.9).is_empty());
    }

    fn small_net(h: &LabelHierarchy) -> (ParamStore, PolicyNetwork) {
        let mut store = ParamStore::new();
        let cfg = ModelConfig { feature_dim: 2, hidden_dim: 4, embedding_dim: 4, label_dim: 4, state_hidden: 6 };
        let net = PolicyNetwork::init(&mut store, cfg, h.len(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        (store, net)
    }

    #[test]
    fn greedy_rollouts_repeat() {
        let h = yelp();
        let (store, net) = small_net(&h);
        let e = [0.3, 0.9, 0.1, 0.5];
        let gold = LabelSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = rollout(&net, &store, &h, &e, &gold, RolloutMode::Greedy, 8, &mut rng).unwrap();
        let b = rollout(&net, &store, &h, &e, &gold, RolloutMode::Greedy, 8, &mut rng).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn certain_stop_gives_empty_prediction() {
        let h = yelp();
        let (mut store, net) = small_net(&h);
        // positive weights give a positive state, so the STOP logit dominates
        for name in ["policy.w1", "policy.w2"] {
            let p = store.id(name).unwrap();
            store.value_mut(p).data_mut().iter_mut().for_each(|v| *v = 0.1);
        }
        let t = net.table_param();
        store.value_mut(t).data_mut().iter_mut().for_each(|v| *v = 0.0);
        let stop = net.stop_param();
        store.value_mut(stop).data_mut().iter_mut().for_each(|v| *v = 1e3);
        let gold: LabelSet = [id(&h, "Bars")].into_iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = [1.0, 1.0, 1.0, 1.0];
        let r = rollout(&net, &store, &h, &e, &gold, RolloutMode::Sampled, 8, &mut rng).unwrap();
        assert!(r.placed.is_empty());
        assert_eq!(r.total_reward(), 0.0);
    }
}
